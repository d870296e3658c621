"""Static checks on a parsed program.

Diagnostics are returned, not raised, so callers can report all problems at
once.  Grounding re-checks the dynamic variants (labels computed from
arithmetic, guard types) at expansion time.
"""
from __future__ import annotations

from dataclasses import dataclass

from .ast import (
    And, Arith, Atom, Cmp, ConstraintProgram, Count, DomainRef, Formula,
    Guard, GuardAnd, GuardNot, GuardOr, Iff, Implies, IntLit, Name, Not, Or,
    Quant, Span, Term,
)


@dataclass(frozen=True)
class Diagnostic:
    span: Span
    code: str
    message: str

    def render(self, filename="<program>"):
        return f"{filename}:{self.span.line}:{self.span.col}: {self.code} {self.message}"


def validate_program(prog: ConstraintProgram) -> list[Diagnostic]:
    """Return [] iff the program satisfies all declared invariants."""
    out = []

    def report(span, code, message):
        out.append(Diagnostic(span, code, message))

    for pred in prog.preds.values():
        for dom in pred.arg_domains:
            if dom not in prog.domains:
                report(pred.span, "unknown-domain",
                       f"predicate {pred.name!r} references undeclared domain {dom!r}")

    seen = set()
    for c in prog.constraints:
        if c.name in seen:
            report(c.span, "duplicate-constraint", f"constraint {c.name!r} declared twice")
        seen.add(c.name)
        scope = {}
        for var, dom in c.free_vars:
            if dom not in prog.domains:
                report(c.span, "unknown-domain",
                       f"free variable {var!r} uses undeclared domain {dom!r}")
            scope[var] = dom
        _check_formula(prog, c.formula, scope, report)
    return out


def _domain_symbols(prog, dom_name):
    decl = prog.domains.get(dom_name)
    if decl is None or decl.values is None:
        return ()
    return decl.values


def _check_formula(prog, f: Formula, scope, report):
    if isinstance(f, Atom):
        pred = prog.preds.get(f.pred)
        if pred is None:
            report(f.span, "unknown-predicate", f"predicate {f.pred!r} is not declared")
            for a in f.args:
                _check_term(prog, a, scope, None, report)
            return
        if len(f.args) != pred.arity:
            report(f.span, "arity-mismatch",
                   f"predicate {f.pred!r} declared with arity {pred.arity}, used with {len(f.args)}")
        for a, dom in zip(f.args, pred.arg_domains):
            _check_term(prog, a, scope, dom, report)
        for a in f.args[pred.arity:]:
            _check_term(prog, a, scope, None, report)
    elif isinstance(f, Quant):
        if isinstance(f.domain, DomainRef) and f.domain.name not in prog.domains:
            report(f.span, "unknown-domain",
                   f"quantifier over undeclared domain {f.domain.name!r}")
        inner = dict(scope)
        dom = f.domain.name if isinstance(f.domain, DomainRef) else None
        inner[f.var] = dom
        if f.guard is not None:
            _check_guard(prog, f.guard, inner, report)
        _check_formula(prog, f.body, inner, report)
    elif isinstance(f, Count):
        if f.k < 0:
            report(f.span, "negative-count", f"count bound {f.k} is negative")
        elif f.k > len(f.children):
            report(f.span, "K-exceeds-set-size",
                   f"count bound {f.k} exceeds the {len(f.children)} counted formulas")
        for ch in f.children:
            _check_formula(prog, ch, scope, report)
    elif isinstance(f, Not):
        _check_formula(prog, f.child, scope, report)
    elif isinstance(f, (And, Or)):
        for ch in f.children:
            _check_formula(prog, ch, scope, report)
    elif isinstance(f, (Implies, Iff)):
        _check_formula(prog, f.lhs, scope, report)
        _check_formula(prog, f.rhs, scope, report)


def _check_term(prog, t: Term, scope, expected_domain, report):
    if isinstance(t, IntLit):
        values = _domain_symbols(prog, expected_domain) if expected_domain else ()
        if values and t.value not in values:
            report(t.span, "label-out-of-domain",
                   f"value {t.value} is not in domain {expected_domain!r}")
    elif isinstance(t, Name):
        if t.ident in scope:
            bound_dom = scope[t.ident]
            if (expected_domain is not None and bound_dom is not None
                    and bound_dom != expected_domain):
                report(t.span, "domain-mismatch",
                       f"variable {t.ident!r} ranges over {bound_dom!r}, "
                       f"argument expects {expected_domain!r}")
        elif expected_domain and t.ident in _domain_symbols(prog, expected_domain):
            pass  # enumerated symbol literal
        else:
            report(t.span, "unbound-variable",
                   f"{t.ident!r} is not bound by a quantifier, declared free, "
                   f"or a symbol of the expected domain")
    elif isinstance(t, Arith):
        _check_term(prog, t.lhs, scope, None, report)
        _check_term(prog, t.rhs, scope, None, report)


def _check_guard(prog, g: Guard, scope, report):
    if isinstance(g, Cmp):
        for t in (g.lhs, g.rhs):
            _check_guard_term(t, scope, report)
    elif isinstance(g, GuardNot):
        _check_guard(prog, g.child, scope, report)
    elif isinstance(g, (GuardAnd, GuardOr)):
        for c in g.children:
            _check_guard(prog, c, scope, report)


def _check_guard_term(t: Term, scope, report):
    if isinstance(t, Name):
        if t.ident not in scope:
            report(t.span, "guard-unbound",
                   f"guard references {t.ident!r}, which is not a bound variable")
    elif isinstance(t, Arith):
        _check_guard_term(t.lhs, scope, report)
        _check_guard_term(t.rhs, scope, report)
