"""AST for the constraint language.

A program is a list of domain declarations, predicate declarations, and named
constraints.  Constraint bodies are first-order formulas over predicate atoms
with finite-domain quantifiers, guards on integer index terms, and counting
connectives.  All nodes are immutable and carry a source span.
"""
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Span:
    line: int = 0
    col: int = 0

    def __str__(self):
        return f"{self.line}:{self.col}"


NO_SPAN = Span()


# ---------------------------------------------------------------- terms

@dataclass(frozen=True)
class Name:
    """An identifier in term position: a bound/free variable or a domain symbol.

    Which of the two it is gets resolved against the enclosing scope during
    validation/grounding, not at parse time.
    """
    ident: str
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)


@dataclass(frozen=True)
class IntLit:
    value: int
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)


@dataclass(frozen=True)
class Arith:
    """Integer arithmetic on index terms; `/` is floor division."""
    op: str  # + - * / %
    lhs: Term
    rhs: Term
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)


Term = Name | IntLit | Arith


# ---------------------------------------------------------------- guards

@dataclass(frozen=True)
class Cmp:
    op: str  # == != < <= > >=
    lhs: Term
    rhs: Term
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)


@dataclass(frozen=True)
class GuardNot:
    child: Guard
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)


@dataclass(frozen=True)
class GuardAnd:
    children: tuple[Guard, ...]
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)


@dataclass(frozen=True)
class GuardOr:
    children: tuple[Guard, ...]
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)


Guard = Cmp | GuardNot | GuardAnd | GuardOr


# ---------------------------------------------------------------- formulas

@dataclass(frozen=True)
class Atom:
    pred: str
    args: tuple[Term, ...]
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)


@dataclass(frozen=True)
class BoolConst:
    value: bool
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)


@dataclass(frozen=True)
class Not:
    child: Formula
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)


@dataclass(frozen=True)
class And:
    children: tuple[Formula, ...]
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)


@dataclass(frozen=True)
class Or:
    children: tuple[Formula, ...]
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)


@dataclass(frozen=True)
class Implies:
    lhs: Formula
    rhs: Formula
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)


@dataclass(frozen=True)
class Iff:
    lhs: Formula
    rhs: Formula
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)


@dataclass(frozen=True)
class DomainRef:
    name: str
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)


@dataclass(frozen=True)
class InlineSet:
    """Anonymous domain written inline, e.g. `{0, 1}` or `{a, b}`."""
    values: tuple[int | str, ...]
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)


@dataclass(frozen=True)
class InlineRange:
    lo: int
    hi: int  # inclusive
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)


DomainExpr = DomainRef | InlineSet | InlineRange


@dataclass(frozen=True)
class Quant:
    kind: str  # forall | exists
    var: str
    domain: DomainExpr
    guard: Guard | None
    body: Formula
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)


@dataclass(frozen=True)
class Count:
    """exactly/atmost/atleast k of the listed subformulas hold."""
    kind: str  # exactly | atmost | atleast
    k: int
    children: tuple[Formula, ...]
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)


Formula = Atom | BoolConst | Not | And | Or | Implies | Iff | Quant | Count


# ---------------------------------------------------------------- declarations

@dataclass(frozen=True)
class DomainDecl:
    name: str
    values: tuple[int | str, ...] | None  # None: size supplied by the instance
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)


@dataclass(frozen=True)
class PredDecl:
    """Predicate over named domains.

    Categorical predicates read their last argument as the label of one
    categorical decision variable identified by the leading arguments; boolean
    predicates identify a true/false decision variable by all arguments.
    """
    name: str
    arg_domains: tuple[str, ...]
    categorical: bool
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)

    @property
    def arity(self):
        return len(self.arg_domains)


@dataclass(frozen=True)
class ConstraintDecl:
    name: str
    free_vars: tuple[tuple[str, str], ...]  # (variable, domain name)
    weight: float | None  # None = hard
    formula: Formula
    span: Span = field(default_factory=lambda: NO_SPAN, compare=False)


@dataclass
class ConstraintProgram:
    domains: dict[str, DomainDecl] = field(default_factory=dict)
    preds: dict[str, PredDecl] = field(default_factory=dict)
    constraints: list[ConstraintDecl] = field(default_factory=list)

    def constraint(self, name):
        for c in self.constraints:
            if c.name == name:
                return c
        raise KeyError(name)


def walk(f: Formula):
    """Yield f and all formula descendants, pre-order."""
    yield f
    if isinstance(f, Not):
        yield from walk(f.child)
    elif isinstance(f, (And, Or, Count)):
        for c in f.children:
            yield from walk(c)
    elif isinstance(f, (Implies, Iff)):
        yield from walk(f.lhs)
        yield from walk(f.rhs)
    elif isinstance(f, Quant):
        yield from walk(f.body)


def term_names(t: Term):
    if isinstance(t, Name):
        yield t
    elif isinstance(t, Arith):
        yield from term_names(t.lhs)
        yield from term_names(t.rhs)


def guard_terms(g: Guard):
    if isinstance(g, Cmp):
        yield g.lhs
        yield g.rhs
    elif isinstance(g, GuardNot):
        yield from guard_terms(g.child)
    else:
        for c in g.children:
            yield from guard_terms(c)
