"""Lowering of ground constraints to 0-1 linear rows.

Every decision variable contributes an exactly-one row over its label
indicators.  Clause-shaped constraints and counting over literals become
single rows; nested subformulas are reified through auxiliary 0-1 columns
with indicator rows tight enough for branch-and-bound (no big-M):

    y <=> AND(l1..ln):   y <= li,  y >= sum(li) - (n - 1)
    y <=> OR(l1..ln):    y >= li,  y <= sum(li)
    y <=> sum(li) >= k:  sum(li) - k*y >= 0,  sum(li) - (n-k+1)*y <= k - 1

Feasible 0-1 points project onto exactly the satisfying assignments.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from ..errors import UnsupportedConstraintError
from ..lang.ground import (
    GAnd, GAtom, GCallback, GConst, GCount, GF, GIff, GImplies, GNot, GOr,
    GroundProgram,
)


# ---------------------------------------------------------------- simplify

def gf_negate(f: GF) -> GF:
    if isinstance(f, GConst):
        return GConst(not f.value)
    if isinstance(f, GAtom):
        return GNot(f)
    if isinstance(f, GNot):
        return f.child
    if isinstance(f, GAnd):
        return GOr(tuple(gf_negate(c) for c in f.children))
    if isinstance(f, GOr):
        return GAnd(tuple(gf_negate(c) for c in f.children))
    if isinstance(f, GImplies):
        return GAnd((f.lhs, gf_negate(f.rhs)))
    if isinstance(f, GIff):
        return GIff(f.lhs, gf_negate(f.rhs))
    if isinstance(f, GCount):
        n = len(f.children)
        if f.kind == "atleast":
            return GCount("atmost", f.k - 1, f.children) if f.k >= 1 else GConst(False)
        if f.kind == "atmost":
            return GCount("atleast", f.k + 1, f.children) if f.k < n else GConst(False)
        parts = []
        if f.k >= 1:
            parts.append(GCount("atmost", f.k - 1, f.children))
        if f.k < n:
            parts.append(GCount("atleast", f.k + 1, f.children))
        if not parts:
            return GConst(False)  # exactly k of n with 0 <= k <= n always negatable
        return parts[0] if len(parts) == 1 else GOr(tuple(parts))
    raise UnsupportedConstraintError(f"cannot negate {type(f).__name__}")


def gf_simplify(f: GF) -> GF:
    """Fold boolean constants; afterwards GConst only appears at top level."""
    if isinstance(f, (GAtom, GConst, GCallback)):
        return f
    if isinstance(f, GNot):
        c = gf_simplify(f.child)
        if isinstance(c, GConst):
            return GConst(not c.value)
        if isinstance(c, GNot):
            return c.child
        return GNot(c)
    if isinstance(f, (GAnd, GOr)):
        absorbing = isinstance(f, GOr)  # true absorbs or, false absorbs and
        parts = []
        for c in f.children:
            c = gf_simplify(c)
            if isinstance(c, GConst):
                if c.value == absorbing:
                    return GConst(absorbing)
                continue
            parts.append(c)
        if not parts:
            return GConst(not absorbing)
        if len(parts) == 1:
            return parts[0]
        return GOr(tuple(parts)) if absorbing else GAnd(tuple(parts))
    if isinstance(f, GImplies):
        lhs, rhs = gf_simplify(f.lhs), gf_simplify(f.rhs)
        if isinstance(lhs, GConst):
            return rhs if lhs.value else GConst(True)
        if isinstance(rhs, GConst):
            return GConst(True) if rhs.value else gf_simplify(gf_negate(lhs))
        return GImplies(lhs, rhs)
    if isinstance(f, GIff):
        lhs, rhs = gf_simplify(f.lhs), gf_simplify(f.rhs)
        if isinstance(lhs, GConst):
            return rhs if lhs.value else gf_simplify(gf_negate(rhs))
        if isinstance(rhs, GConst):
            return lhs if rhs.value else gf_simplify(gf_negate(lhs))
        return GIff(lhs, rhs)
    if isinstance(f, GCount):
        k, parts = f.k, []
        for c in f.children:
            c = gf_simplify(c)
            if isinstance(c, GConst):
                k -= int(c.value)
                continue
            parts.append(c)
        n = len(parts)
        if f.kind == "atleast":
            if k <= 0:
                return GConst(True)
            if k > n:
                return GConst(False)
        elif f.kind == "atmost":
            if k < 0:
                return GConst(False)
            if k >= n:
                return GConst(True)
        else:
            if k < 0 or k > n:
                return GConst(False)
            if n == 0:
                return GConst(True)
        return GCount(f.kind, k, tuple(parts))
    raise TypeError(f"not a ground formula: {f!r}")


# ---------------------------------------------------------------- system

@dataclass
class Row:
    name: str
    cols: np.ndarray
    coefs: np.ndarray
    cmp: str  # <= | = | >=
    rhs: float

    def render(self, col_names):
        terms = []
        for c, a in zip(self.cols, self.coefs):
            sign = "-" if a < 0 else "+"
            mag = abs(a)
            coef = "" if mag == 1 else f"{mag:g} "
            terms.append(f"{sign} {coef}{col_names[c]}")
        body = " ".join(terms) if terms else "0 x_0_0"
        if body.startswith("+ "):
            body = body[2:]
        return f"{self.name}: {body} {self.cmp} {self.rhs:g}"


@dataclass
class LinearSystem:
    var_names: list[str]
    var_labels: list[tuple]
    indicator_cols: list[np.ndarray]          # per variable: label -> column
    col_names: list[str] = field(default_factory=list)
    rows: list[Row] = field(default_factory=list)
    aux_def: dict[int, GF] = field(default_factory=dict)
    objective: np.ndarray | None = None       # per column; indicators only

    @property
    def n_cols(self):
        return len(self.col_names)

    @property
    def n_aux(self):
        return len(self.aux_def)

    def indicator(self, var, label):
        return int(self.indicator_cols[var][label])


_Lit = tuple[int, bool]  # (column, positive)


class _Lowerer:
    def __init__(self, g: GroundProgram):
        self.g = g
        names, labels, ind_cols, col_names = [], [], [], []
        for v in g.variables:
            names.append(v.name)
            labels.append(v.labels)
            cols = []
            for j in range(len(v.labels)):
                cols.append(len(col_names))
                col_names.append(f"x_{v.index}_{j}")
            ind_cols.append(np.asarray(cols, dtype=np.int64))
        self.ls = LinearSystem(names, labels, ind_cols, col_names)
        self._memo: dict[GF, _Lit] = {}
        self._row_n = 0

    def run(self):
        for v in self.g.variables:
            self.add_row([(c, True) for c in self.ls.indicator_cols[v.index]],
                         "=", 1, name=f"one_{v.index}")
        for c in self.g.constraints:
            if c.weight is not None:
                continue  # soft constraints live in the training losses
            if isinstance(c.formula, GCallback) or any(
                    isinstance(s, GCallback) for s in _subformulas(c.formula)):
                raise UnsupportedConstraintError(
                    f"constraint {c.name!r} is an opaque program constraint; "
                    f"only sampling-based methods support it")
            self.assert_true(gf_simplify(c.formula))
        self.ls.objective = np.zeros(self.ls.n_cols)
        return self.ls

    # ---- rows

    def add_row(self, lits, cmp, rhs, name=None):
        """Row over literals: a negative literal contributes (1 - x)."""
        cols, coefs = [], []
        for col, positive in lits:
            cols.append(col)
            coefs.append(1.0 if positive else -1.0)
            if not positive:
                rhs -= 1.0
        if name is None:
            name = f"r{self._row_n}"
        self._row_n += 1
        self.ls.rows.append(Row(name, np.asarray(cols, dtype=np.int64),
                                np.asarray(coefs), cmp, float(rhs)))

    def add_weighted_row(self, pairs, cmp, rhs, name=None):
        cols = np.asarray([c for c, _ in pairs], dtype=np.int64)
        coefs = np.asarray([a for _, a in pairs], dtype=float)
        if name is None:
            name = f"r{self._row_n}"
        self._row_n += 1
        self.ls.rows.append(Row(name, cols, coefs, cmp, float(rhs)))

    # ---- assertion at the top level (row-economical forms)

    def assert_true(self, f: GF):
        if isinstance(f, GConst):
            if not f.value:
                self.add_weighted_row([], "=", 1, name="infeasible")
            return
        if isinstance(f, GAtom):
            self.add_row([self.literal(f)], "=", 1)
            return
        if isinstance(f, GNot):
            if isinstance(f.child, GAtom):
                self.add_row([self.literal(f.child)], "=", 0)
                return
            self.assert_true(gf_simplify(gf_negate(f.child)))
            return
        if isinstance(f, GAnd):
            for c in f.children:
                self.assert_true(c)
            return
        if isinstance(f, GOr):
            self.add_row([self.literal(c) for c in f.children], ">=", 1)
            return
        if isinstance(f, GImplies):
            if _is_literal(f.lhs) and _is_literal(f.rhs):
                a, b = self.literal(f.lhs), self.literal(f.rhs)
                # value(a) - value(b) <= 0
                pairs, rhs = _lit_diff(a, b)
                self.add_weighted_row(pairs, "<=", rhs)
                return
            self.assert_true(gf_simplify(GOr((gf_negate(f.lhs), f.rhs))))
            return
        if isinstance(f, GIff):
            self.assert_true(gf_simplify(GImplies(f.lhs, f.rhs)))
            self.assert_true(gf_simplify(GImplies(f.rhs, f.lhs)))
            return
        if isinstance(f, GCount):
            lits = [self.literal(c) for c in f.children]
            cmp = {"exactly": "=", "atmost": "<=", "atleast": ">="}[f.kind]
            self.add_row(lits, cmp, f.k)
            return
        raise TypeError(f"not a ground formula: {f!r}")

    # ---- reification

    def literal(self, f: GF) -> _Lit:
        if isinstance(f, GAtom):
            return self.ls.indicator(f.var, f.label), True
        if isinstance(f, GNot):
            col, pos = self.literal(f.child)
            return col, not pos
        cached = self._memo.get(f)
        if cached is not None:
            return cached
        lit = self._reify(f)
        self._memo[f] = lit
        return lit

    def new_aux(self, f: GF) -> int:
        col = self.ls.n_cols
        self.ls.col_names.append(f"aux_{col}")
        self.ls.aux_def[col] = f
        return col

    def _reify(self, f: GF) -> _Lit:
        if isinstance(f, GAnd):
            lits = [self.literal(c) for c in f.children]
            y = self.new_aux(f)
            n = len(lits)
            for lit in lits:
                pairs, rhs = _lit_diff((y, True), lit)
                self.add_weighted_row(pairs, "<=", rhs)           # y <= li
            pairs = [(y, -1.0)]
            rhs = n - 1
            for col, pos in lits:
                pairs.append((col, 1.0 if pos else -1.0))
                if not pos:
                    rhs -= 1
            self.add_weighted_row(pairs, "<=", rhs)               # sum - y <= n-1
            return y, True
        if isinstance(f, GOr):
            lits = [self.literal(c) for c in f.children]
            y = self.new_aux(f)
            for lit in lits:
                pairs, rhs = _lit_diff(lit, (y, True))
                self.add_weighted_row(pairs, "<=", rhs)           # li <= y
            pairs = [(y, 1.0)]
            rhs = 0.0
            for col, pos in lits:
                pairs.append((col, -1.0 if pos else 1.0))
                if not pos:
                    rhs += 1
            self.add_weighted_row(pairs, "<=", rhs)               # y <= sum(li)
            return y, True
        if isinstance(f, GImplies):
            return self.literal(gf_simplify(GOr((gf_negate(f.lhs), f.rhs))))
        if isinstance(f, GIff):
            both = GAnd((GOr((gf_negate(f.lhs), f.rhs)), GOr((gf_negate(f.rhs), f.lhs))))
            return self.literal(gf_simplify(both))
        if isinstance(f, GCount):
            if f.kind == "atleast":
                return self._reify_atleast(f, [self.literal(c) for c in f.children])
            if f.kind == "atmost":
                flipped = GCount("atleast", len(f.children) - f.k,
                                 tuple(gf_negate(c) for c in f.children))
                return self.literal(gf_simplify(flipped))
            both = GAnd((GCount("atleast", f.k, f.children),
                         GCount("atmost", f.k, f.children)))
            return self.literal(gf_simplify(both))
        raise TypeError(f"cannot reify {type(f).__name__}")

    def _reify_atleast(self, f, lits) -> _Lit:
        n, k = len(lits), f.k
        y = self.new_aux(f)
        base_pairs, const = [], 0.0
        for col, pos in lits:
            base_pairs.append((col, 1.0 if pos else -1.0))
            if not pos:
                const += 1.0  # each negative literal adds a constant 1
        # y=1 -> sum >= k
        self.add_weighted_row(base_pairs + [(y, -float(k))], ">=", -const)
        # y=0 -> sum <= k-1
        self.add_weighted_row(base_pairs + [(y, -float(n - k + 1))], "<=",
                              k - 1 - const)
        return y, True


def _is_literal(f: GF) -> bool:
    return isinstance(f, GAtom) or (isinstance(f, GNot) and isinstance(f.child, GAtom))


def _lit_diff(a: _Lit, b: _Lit):
    """Pairs and rhs encoding value(a) <= value(b) as `pairs <= rhs`."""
    const = 0.0
    pairs = []
    col, pos = a
    pairs.append((col, 1.0 if pos else -1.0))
    if not pos:
        const += 1.0
    col, pos = b
    pairs.append((col, -1.0 if pos else 1.0))
    if not pos:
        const -= 1.0
    return pairs, -const


def _subformulas(f: GF):
    yield f
    if isinstance(f, GNot):
        yield from _subformulas(f.child)
    elif isinstance(f, (GAnd, GOr, GCount)):
        for c in f.children:
            yield from _subformulas(c)
    elif isinstance(f, (GImplies, GIff)):
        yield from _subformulas(f.lhs)
        yield from _subformulas(f.rhs)


def linearize(g: GroundProgram) -> LinearSystem:
    """0-1 system whose feasible points (projected over the auxiliaries)
    are exactly the satisfying assignments of g's hard constraints."""
    return _Lowerer(g).run()


def feasible_point(ls: LinearSystem, cols: np.ndarray) -> bool:
    """Check a full 0-1 column vector against every row."""
    for row in ls.rows:
        lhs = float(cols[row.cols] @ row.coefs) if len(row.cols) else 0.0
        if row.cmp == "<=" and lhs > row.rhs + 1e-9:
            return False
        if row.cmp == ">=" and lhs < row.rhs - 1e-9:
            return False
        if row.cmp == "=" and abs(lhs - row.rhs) > 1e-9:
            return False
    return True


# ---------------------------------------------------------------- LP text

def to_lp_text(ls: LinearSystem, objective: np.ndarray | None = None) -> str:
    """CPLEX-LP rendering, with a comment header mapping columns back to
    decision variables so the file is self-contained for `solve`."""
    obj = ls.objective if objective is None else objective
    lines = ["\\ nclkit 0-1 linear system"]
    for i, (name, labels) in enumerate(zip(ls.var_names, ls.var_labels)):
        lab = ",".join(str(x) for x in labels)
        lines.append(f"\\ var {i} {name} labels {lab}")
    lines.append("Maximize")
    terms = []
    for c in range(ls.n_cols):
        a = 0.0 if obj is None else float(obj[c])
        if a != 0.0:
            sign = "-" if a < 0 else "+"
            terms.append(f"{sign} {abs(a):.12g} {ls.col_names[c]}")
    body = " ".join(terms) or "0 " + (ls.col_names[0] if ls.col_names else "x")
    if body.startswith("+ "):
        body = body[2:]
    lines.append(" obj: " + body)
    lines.append("Subject To")
    for row in ls.rows:
        lines.append(" " + row.render(ls.col_names))
    lines.append("Binary")
    lines.append(" " + " ".join(ls.col_names))
    lines.append("End")
    return "\n".join(lines) + "\n"


_LP_TERM = re.compile(r"([+-])?\s*(\d+(?:\.\d+)?(?:e[+-]?\d+)?)?\s*([A-Za-z_][\w]*)")


def _parse_terms(body):
    out = []
    for sign, coef, name in _LP_TERM.findall(body):
        a = float(coef) if coef else 1.0
        if sign == "-":
            a = -a
        out.append((name, a))
    return out


def parse_lp_text(text: str) -> LinearSystem:
    """Read back the subset of LP format emitted by to_lp_text."""
    var_names, var_labels = [], []
    obj_terms, rows, binaries = [], [], []
    section = None
    pending = ""
    for raw in text.splitlines():
        line = raw.strip()
        if line.startswith("\\"):
            m = re.match(r"\\ var (\d+) (\S+) labels (\S+)", line)
            if m:
                var_names.append(m.group(2))
                values = tuple(
                    int(v) if re.fullmatch(r"-?\d+", v) else v
                    for v in m.group(3).split(","))
                var_labels.append(values)
            continue
        if line in ("Maximize", "Minimize", "Subject To", "Binary", "End"):
            section = line
            continue
        if not line:
            continue
        if section in ("Maximize", "Minimize"):
            body = line.split(":", 1)[1] if ":" in line else line
            obj_terms += _parse_terms(body)
        elif section == "Subject To":
            pending += " " + line
            m = re.search(r"(<=|>=|=)\s*(-?\d+(?:\.\d+)?(?:e[+-]?\d+)?)\s*$", pending)
            if m:
                colon = pending.index(":")
                name = pending[:colon].strip()
                body = pending[colon + 1:m.start()]
                rows.append((name, _parse_terms(body), m.group(1),
                             float(m.group(2))))
                pending = ""
        elif section == "Binary":
            binaries += line.split()

    col_index = {name: i for i, name in enumerate(binaries)}
    ind_cols = []
    for i, labels in enumerate(var_labels):
        ind_cols.append(np.asarray(
            [col_index[f"x_{i}_{j}"] for j in range(len(labels))], dtype=np.int64))
    ls = LinearSystem(var_names, var_labels, ind_cols, list(binaries))
    for name, terms, cmp, rhs in rows:
        cols = np.asarray([col_index[n] for n, _ in terms], dtype=np.int64)
        coefs = np.asarray([a for _, a in terms])
        ls.rows.append(Row(name, cols, coefs, cmp, rhs))
    obj = np.zeros(len(binaries))
    for name, a in obj_terms:
        if name in col_index:
            obj[col_index[name]] = a
    ls.objective = obj
    for name in binaries:
        if name.startswith("aux_"):
            ls.aux_def[col_index[name]] = GConst(True)  # definition not serialized
    return ls
