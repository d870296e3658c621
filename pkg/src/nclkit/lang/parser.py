"""Tokenizer, recursive-descent parser, and unparser for `.ncl` text.

Grammar (connectives from tightest to loosest: ! & | -> <->; quantifier
bodies are delimited by `:` and extend as far right as possible):

    program     := (domain_decl | pred_decl | constraint_decl)*
    domain_decl := "domain" NAME ("=" (INT ".." INT | "{" value ("," value)* "}"))?
    pred_decl   := "pred" NAME "(" NAME ("," NAME)* ")" ("categorical" | "boolean")?
    constraint_decl := "constraint" NAME ("(" NAME "in" NAME ("," ...)* ")")?
                       ("weight" NUMBER)? ":" formula
    formula     := implies ("<->" implies)*
    implies     := or ("->" implies)?
    or          := and ("|" and)*
    and         := unary ("&" unary)*
    unary       := "!" unary | quantifier | counting | "(" formula ")"
                 | "true" | "false" | atom
    quantifier  := ("forall" | "exists") NAME "in" domain_expr
                   ("where" guard)? ":" formula
    counting    := ("exactly" | "atmost" | "atleast") "(" INT ")"
                   "{" formula ("," formula)* "}"
    atom        := NAME "(" term ("," term)* ")"
    domain_expr := NAME | INT ".." INT | "{" value ("," value)* "}"
    guard       := gand ("|" gand)* ; gand := gunary ("&" gunary)*
    gunary      := "!" gunary | "(" guard ")" | term CMP term
    term        := mul (("+" | "-") mul)* ; mul := factor (("*" | "/" | "%") factor)*
    factor      := INT | NAME | "-" factor | "(" term ")"

`#` starts a line comment.  `/` on terms is floor division.
"""
from __future__ import annotations

import re

from ..errors import NclSyntaxError
from .ast import (
    And, Arith, Atom, BoolConst, Cmp, ConstraintDecl, ConstraintProgram, Count,
    DomainDecl, DomainExpr, DomainRef, Formula, Guard, GuardAnd, GuardNot,
    GuardOr, Iff, Implies, InlineRange, InlineSet, IntLit, Name, Not, Or,
    PredDecl, Quant, Span, Term,
)

KEYWORDS = {
    "domain", "pred", "constraint", "categorical", "boolean", "weight",
    "forall", "exists", "in", "where", "exactly", "atmost", "atleast",
    "true", "false",
}

_TOKEN_RE = re.compile(
    r"""(?P<ws>[ \t\r]+)
      | (?P<comment>\#[^\n]*)
      | (?P<nl>\n)
      | (?P<number>\d+\.\d+|\d+)
      | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
      | (?P<op><->|->|<=|>=|==|!=|\.\.|[(){},:=<>+\-*/%&|!])
    """,
    re.VERBOSE,
)


class Token:
    __slots__ = ("kind", "text", "line", "col")

    def __init__(self, kind, text, line, col):
        self.kind = kind
        self.text = text
        self.line = line
        self.col = col

    def __repr__(self):
        return f"Token({self.kind!r}, {self.text!r}, {self.line}:{self.col})"


def tokenize(text):
    tokens = []
    line, col, pos = 1, 1, 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise NclSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        tok = m.group()
        if kind == "nl":
            line += 1
            col = 1
        elif kind in ("ws", "comment"):
            col += len(tok)
        elif kind == "number":
            tokens.append(Token("number", tok, line, col))
            col += len(tok)
        elif kind == "name":
            tokens.append(Token("kw" if tok in KEYWORDS else "name", tok, line, col))
            col += len(tok)
        else:
            tokens.append(Token(tok, tok, line, col))
            col += len(tok)
        pos = m.end()
    tokens.append(Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text):
        self.toks = tokenize(text)
        self.i = 0

    # ---- token helpers

    @property
    def cur(self):
        return self.toks[self.i]

    def span(self):
        return Span(self.cur.line, self.cur.col)

    def advance(self):
        tok = self.cur
        self.i += 1
        return tok

    def at(self, kind, text=None):
        return self.cur.kind == kind and (text is None or self.cur.text == text)

    def accept(self, kind, text=None):
        if self.at(kind, text):
            return self.advance()
        return None

    def expect(self, kind, text=None):
        if not self.at(kind, text):
            want = text or kind
            raise NclSyntaxError(
                f"expected {want!r}, found {self.cur.text or 'end of input'!r}",
                self.cur.line, self.cur.col)
        return self.advance()

    def fail(self, message):
        raise NclSyntaxError(message, self.cur.line, self.cur.col)

    # ---- program level

    def program(self):
        prog = ConstraintProgram()
        while not self.at("eof"):
            if self.at("kw", "domain"):
                self.domain_decl(prog)
            elif self.at("kw", "pred"):
                self.pred_decl(prog)
            elif self.at("kw", "constraint"):
                self.constraint_decl(prog)
            else:
                self.fail(f"expected a declaration, found {self.cur.text!r}")
        return prog

    def domain_decl(self, prog):
        sp = self.span()
        self.expect("kw", "domain")
        name = self.expect("name").text
        if name in prog.domains:
            self.fail(f"duplicate domain declaration {name!r}")
        values = None
        if self.accept("="):
            if self.at("number"):
                lo = self.int_lit()
                self.expect("..")
                hi = self.int_lit()
                if hi < lo:
                    self.fail(f"empty range {lo}..{hi}")
                values = tuple(range(lo, hi + 1))
            else:
                self.expect("{")
                vals = [self.domain_value()]
                while self.accept(","):
                    vals.append(self.domain_value())
                self.expect("}")
                values = tuple(vals)
        prog.domains[name] = DomainDecl(name, values, sp)

    def domain_value(self):
        if self.at("number"):
            return self.int_lit()
        return self.expect("name").text

    def int_lit(self):
        tok = self.expect("number")
        if "." in tok.text:
            raise NclSyntaxError("expected an integer", tok.line, tok.col)
        return int(tok.text)

    def pred_decl(self, prog):
        sp = self.span()
        self.expect("kw", "pred")
        name = self.expect("name").text
        if name in prog.preds:
            self.fail(f"duplicate predicate declaration {name!r}")
        self.expect("(")
        domains = []
        if not self.at(")"):
            domains.append(self.expect("name").text)
            while self.accept(","):
                domains.append(self.expect("name").text)
        self.expect(")")
        categorical = False
        if self.accept("kw", "categorical"):
            categorical = True
            if not domains:
                self.fail(f"categorical predicate {name!r} needs a label domain")
        else:
            self.accept("kw", "boolean")
        prog.preds[name] = PredDecl(name, tuple(domains), categorical, sp)

    def constraint_decl(self, prog):
        sp = self.span()
        self.expect("kw", "constraint")
        name = self.expect("name").text
        free = []
        if self.accept("("):
            while True:
                v = self.expect("name").text
                self.expect("kw", "in")
                d = self.expect("name").text
                free.append((v, d))
                if not self.accept(","):
                    break
            self.expect(")")
        weight = None
        if self.accept("kw", "weight"):
            weight = float(self.expect("number").text)
        self.expect(":")
        formula = self.formula()
        prog.constraints.append(ConstraintDecl(name, tuple(free), weight, formula, sp))

    # ---- formulas

    def formula(self):
        sp = self.span()
        f = self.implies()
        while self.accept("<->"):
            f = Iff(f, self.implies(), sp)
        return f

    def implies(self):
        sp = self.span()
        f = self.or_()
        if self.accept("->"):
            return Implies(f, self.implies(), sp)
        return f

    def or_(self):
        sp = self.span()
        parts = [self.and_()]
        while self.accept("|"):
            parts.append(self.and_())
        return parts[0] if len(parts) == 1 else Or(tuple(parts), sp)

    def and_(self):
        sp = self.span()
        parts = [self.unary()]
        while self.accept("&"):
            parts.append(self.unary())
        return parts[0] if len(parts) == 1 else And(tuple(parts), sp)

    def unary(self):
        sp = self.span()
        if self.accept("!"):
            return Not(self.unary(), sp)
        if self.at("kw", "forall") or self.at("kw", "exists"):
            return self.quantifier()
        if self.cur.kind == "kw" and self.cur.text in ("exactly", "atmost", "atleast"):
            return self.counting()
        if self.accept("kw", "true"):
            return BoolConst(True, sp)
        if self.accept("kw", "false"):
            return BoolConst(False, sp)
        if self.accept("("):
            f = self.formula()
            self.expect(")")
            return f
        if self.at("name"):
            return self.atom()
        self.fail(f"expected a formula, found {self.cur.text or 'end of input'!r}")

    def quantifier(self):
        sp = self.span()
        kind = self.advance().text
        var = self.expect("name").text
        self.expect("kw", "in")
        domain = self.domain_expr()
        guard = None
        if self.accept("kw", "where"):
            guard = self.guard()
        self.expect(":")
        return Quant(kind, var, domain, guard, self.formula(), sp)

    def counting(self):
        sp = self.span()
        kind = self.advance().text
        self.expect("(")
        k = self.int_lit()
        self.expect(")")
        self.expect("{")
        children = [self.formula()]
        while self.accept(","):
            children.append(self.formula())
        self.expect("}")
        return Count(kind, k, tuple(children), sp)

    def atom(self):
        sp = self.span()
        pred = self.expect("name").text
        self.expect("(")
        args = []
        if not self.at(")"):
            args.append(self.term())
            while self.accept(","):
                args.append(self.term())
        self.expect(")")
        return Atom(pred, tuple(args), sp)

    def domain_expr(self):
        sp = self.span()
        if self.at("name"):
            return DomainRef(self.advance().text, sp)
        if self.at("number"):
            lo = self.int_lit()
            self.expect("..")
            hi = self.int_lit()
            return InlineRange(lo, hi, sp)
        self.expect("{")
        vals = [self.domain_value()]
        while self.accept(","):
            vals.append(self.domain_value())
        self.expect("}")
        return InlineSet(tuple(vals), sp)

    # ---- guards

    def guard(self):
        sp = self.span()
        parts = [self.guard_and()]
        while self.accept("|"):
            parts.append(self.guard_and())
        return parts[0] if len(parts) == 1 else GuardOr(tuple(parts), sp)

    def guard_and(self):
        sp = self.span()
        parts = [self.guard_unary()]
        while self.accept("&"):
            parts.append(self.guard_unary())
        return parts[0] if len(parts) == 1 else GuardAnd(tuple(parts), sp)

    def guard_unary(self):
        sp = self.span()
        if self.accept("!"):
            return GuardNot(self.guard_unary(), sp)
        if self.accept("("):
            g = self.guard()
            self.expect(")")
            return g
        lhs = self.term()
        tok = self.cur
        if tok.kind not in ("==", "!=", "<", "<=", ">", ">="):
            self.fail(f"expected a comparison operator, found {tok.text!r}")
        self.advance()
        return Cmp(tok.kind, lhs, self.term(), sp)

    # ---- integer terms

    def term(self):
        sp = self.span()
        t = self.mul_term()
        while self.cur.kind in ("+", "-"):
            op = self.advance().text
            t = Arith(op, t, self.mul_term(), sp)
        return t

    def mul_term(self):
        sp = self.span()
        t = self.factor()
        while self.cur.kind in ("*", "/", "%"):
            op = self.advance().text
            t = Arith(op, t, self.factor(), sp)
        return t

    def factor(self):
        sp = self.span()
        if self.at("number"):
            return IntLit(self.int_lit(), sp)
        if self.accept("-"):
            inner = self.factor()
            if isinstance(inner, IntLit):
                return IntLit(-inner.value, sp)
            return Arith("-", IntLit(0, sp), inner, sp)
        if self.accept("("):
            t = self.term()
            self.expect(")")
            return t
        name = self.expect("name")
        return Name(name.text, sp)


def parse_program(text: str) -> ConstraintProgram:
    """Parse `.ncl` source into a ConstraintProgram.

    Raises NclSyntaxError with a 1-based line:col position on malformed input,
    duplicate declarations, or a misspelled keyword.
    """
    return _Parser(text).program()


def parse_formula(text: str) -> Formula:
    """Parse a single bare formula (test/tool helper)."""
    p = _Parser(text)
    f = p.formula()
    p.expect("eof")
    return f


# ---------------------------------------------------------------- unparse

def _fmt_value(v):
    return str(v)


def unparse_term(t: Term, parent_prec=0):
    if isinstance(t, Name):
        return t.ident
    if isinstance(t, IntLit):
        s = str(t.value)
        return f"({s})" if t.value < 0 and parent_prec >= 2 else s
    prec = 1 if t.op in ("+", "-") else 2
    lhs = unparse_term(t.lhs, prec)
    rhs = unparse_term(t.rhs, prec + 1)  # left-assoc: parenthesize right at ties
    s = f"{lhs} {t.op} {rhs}"
    return f"({s})" if prec < parent_prec else s


def unparse_guard(g: Guard, parent_prec=0):
    if isinstance(g, Cmp):
        return f"{unparse_term(g.lhs)} {g.op} {unparse_term(g.rhs)}"
    if isinstance(g, GuardNot):
        return "!" + _guard_wrap(g.child, 3)
    prec = 2 if isinstance(g, GuardAnd) else 1
    sep = " & " if isinstance(g, GuardAnd) else " | "
    s = sep.join(_guard_wrap(c, prec + 1) for c in g.children)
    return f"({s})" if prec < parent_prec else s


def _guard_wrap(g, parent_prec):
    if isinstance(g, Cmp):
        return unparse_guard(g)
    return unparse_guard(g, parent_prec)


def unparse_domain(d: DomainExpr):
    if isinstance(d, DomainRef):
        return d.name
    if isinstance(d, InlineRange):
        return f"{d.lo} .. {d.hi}"
    return "{" + ", ".join(_fmt_value(v) for v in d.values) + "}"


# precedence levels: iff 1, implies 2, or 3, and 4, unary 5
def unparse_formula(f: Formula, parent_prec=0):
    if isinstance(f, Atom):
        return f"{f.pred}({', '.join(unparse_term(a) for a in f.args)})"
    if isinstance(f, BoolConst):
        return "true" if f.value else "false"
    if isinstance(f, Not):
        return "!" + unparse_formula(f.child, 5)
    if isinstance(f, Count):
        body = ", ".join(unparse_formula(c) for c in f.children)
        return f"{f.kind}({f.k}){{{body}}}"
    if isinstance(f, Quant):
        head = f"{f.kind} {f.var} in {unparse_domain(f.domain)}"
        if f.guard is not None:
            head += f" where {unparse_guard(f.guard)}"
        s = f"{head}: {unparse_formula(f.body)}"
        # a quantifier body is greedy, so anything but top level gets parens
        return f"({s})" if parent_prec > 0 else s
    if isinstance(f, Iff):
        s = f"{unparse_formula(f.lhs, 2)} <-> {unparse_formula(f.rhs, 2)}"
        return f"({s})" if parent_prec > 1 else s
    if isinstance(f, Implies):
        s = f"{unparse_formula(f.lhs, 3)} -> {unparse_formula(f.rhs, 2)}"
        return f"({s})" if parent_prec > 2 else s
    if isinstance(f, Or):
        s = " | ".join(unparse_formula(c, 4) for c in f.children)
        return f"({s})" if parent_prec > 3 else s
    if isinstance(f, And):
        s = " & ".join(unparse_formula(c, 5) for c in f.children)
        return f"({s})" if parent_prec > 4 else s
    raise TypeError(f"not a formula: {f!r}")


def unparse(prog: ConstraintProgram) -> str:
    """Render a program as `.ncl` text; parse(unparse(p)) is structurally p."""
    lines = []
    for d in prog.domains.values():
        if d.values is None:
            lines.append(f"domain {d.name}")
        elif (all(isinstance(v, int) for v in d.values) and d.values
              and d.values == tuple(range(d.values[0], d.values[-1] + 1))):
            lines.append(f"domain {d.name} = {d.values[0]} .. {d.values[-1]}")
        else:
            body = ", ".join(_fmt_value(v) for v in d.values)
            lines.append(f"domain {d.name} = {{{body}}}")
    for p in prog.preds.values():
        kind = "categorical" if p.categorical else "boolean"
        lines.append(f"pred {p.name}({', '.join(p.arg_domains)}) {kind}")
    for c in prog.constraints:
        head = f"constraint {c.name}"
        if c.free_vars:
            head += "(" + ", ".join(f"{v} in {d}" for v, d in c.free_vars) + ")"
        if c.weight is not None:
            head += f" weight {c.weight}"
        lines.append(f"{head}: {unparse_formula(c.formula)}")
    return "\n".join(lines) + ("\n" if lines else "")
