"""Which integration method can express which constraint shape.

Constraints are bucketed into six shape categories; each method either
supports a category directly, supports it after this package's
grounding/linearization (or soft lowering) converts it, or cannot express it
at all.  Search-based decoding only generalizes to per-variable label
restrictions and adjacent-position structure; opaque program constraints are
only usable by methods that merely test satisfaction of full assignments.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..lang.ast import Atom, Quant, walk
from ..lang.ground import GCallback, GroundProgram, gf_atoms

CATEGORIES = (
    "mutual-exclusivity",
    "sequential",
    "linear",
    "logical",
    "logical-quantifier",
    "program",
)

SUPPORTED = "supported"
CONVERTED = "supported-after-conversion"
NEEDS_CONVERSION = "needs-conversion"
UNSUPPORTED = "unsupported"

# base expressiveness before this module's conversions
_BASE = {
    "softmax": {"mutual-exclusivity": SUPPORTED},
    "pd": {"mutual-exclusivity": SUPPORTED, "sequential": SUPPORTED,
           "linear": SUPPORTED, "logical": NEEDS_CONVERSION,
           "logical-quantifier": NEEDS_CONVERSION},
    "sampl": {c: SUPPORTED for c in CATEGORIES},
    "seml": {c: SUPPORTED for c in CATEGORIES},
    "ilp": {"mutual-exclusivity": SUPPORTED, "sequential": SUPPORTED,
            "linear": SUPPORTED, "logical": NEEDS_CONVERSION,
            "logical-quantifier": NEEDS_CONVERSION},
    "astar": {"mutual-exclusivity": SUPPORTED, "sequential": SUPPORTED},
    "viterbi": {"mutual-exclusivity": SUPPORTED, "sequential": SUPPORTED},
}

# which conversions this package actually performs
_CONVERSIONS = {
    ("pd", "logical"), ("pd", "logical-quantifier"),
    ("ilp", "logical"), ("ilp", "logical-quantifier"),
}

_NOTES = {
    "astar": "no decomposable heuristic registered",
    "viterbi": "no decomposable heuristic registered",
    "softmax": "not expressible through an output normalizer",
    "pd": "no differentiable surrogate for an opaque program",
    "ilp": "no linear form for an opaque program",
}


@dataclass(frozen=True)
class Cell:
    status: str
    note: str = ""


@dataclass
class CapabilityReport:
    methods: tuple[str, ...]
    present: dict[str, list[str]]          # category -> template names
    table: dict[str, dict[str, Cell]]      # method -> category -> cell

    def supports(self, method):
        """Can `method` handle every constraint category present?"""
        for cat, names in self.present.items():
            if not names:
                continue
            if self.table[method][cat].status not in (SUPPORTED, CONVERTED):
                return False, cat
        return True, None

    def render(self):
        width = max(len(c) for c in CATEGORIES) + 2
        head = "method".ljust(10) + "".join(c.ljust(width) for c in CATEGORIES)
        lines = [head]
        for m in self.methods:
            row = m.ljust(10)
            for c in CATEGORIES:
                mark = {SUPPORTED: "yes", CONVERTED: "converted",
                        NEEDS_CONVERSION: "needs-conv", UNSUPPORTED: "no"}
                row += mark[self.table[m][c].status].ljust(width)
            lines.append(row)
        return "\n".join(lines)


def _label_only_quantifiers(formula, preds):
    """True if every quantified variable only occurs in label positions."""
    def check(f, label_vars):
        if isinstance(f, Quant):
            return check(f.body, label_vars | {f.var})
        if isinstance(f, Atom):
            pred = preds.get(f.pred)
            if pred is None:
                return True
            identity = f.args[:-1] if f.args else f.args
            from ..lang.ast import term_names
            for arg in identity:
                for name in term_names(arg):
                    if name.ident in label_vars:
                        return False
            return True
        from ..lang.ast import And, Count, Iff, Implies, Not, Or
        if isinstance(f, Not):
            return check(f.child, label_vars)
        if isinstance(f, (And, Or, Count)):
            return all(check(c, label_vars) for c in f.children)
        if isinstance(f, (Implies, Iff)):
            return check(f.lhs, label_vars) and check(f.rhs, label_vars)
        return True

    return check(formula, set())


def _single_atom_family(formula):
    """All atoms name one predicate and agree on every argument but the last,
    i.e. the constraint restricts the label choices of a single unit."""
    atoms = [n for n in walk(formula) if isinstance(n, Atom)]
    if not atoms:
        return False
    first = atoms[0]
    return all(a.pred == first.pred and a.args[:-1] == first.args[:-1]
               for a in atoms)


def _single_row_shape(gf):
    """Clause, literal implication, or counting over literals: one row each."""
    from ..lang.ground import GAnd, GAtom, GCount, GImplies, GNot, GOr

    def literal(f):
        return isinstance(f, GAtom) or (isinstance(f, GNot) and isinstance(f.child, GAtom))

    if literal(gf):
        return True
    if isinstance(gf, GOr):
        return all(literal(c) for c in gf.children)
    if isinstance(gf, GImplies):
        return literal(gf.lhs) and literal(gf.rhs)
    if isinstance(gf, GCount):
        return all(literal(c) for c in gf.children)
    if isinstance(gf, GAnd):
        return all(_single_row_shape(c) for c in gf.children)
    return False


def classify_constraint(g: GroundProgram, template_name, source_formula=None,
                        preds=None) -> str:
    """Shape category of one constraint template within a ground program."""
    ground = [c for c in g.constraints if c.source[0] == template_name]
    if not ground:
        return "logical"
    if any(isinstance(c.formula, GCallback) for c in ground):
        return "program"

    touched = []
    for c in ground:
        touched.append(sorted({a.var for a in gf_atoms(c.formula)}))
    if all(len(vars_) <= 1 for vars_ in touched):
        return "mutual-exclusivity"

    if source_formula is not None and preds is not None:
        has_quant = any(isinstance(n, Quant) for n in walk(source_formula))
        if (has_quant and _label_only_quantifiers(source_formula, preds)
                and _single_atom_family(source_formula)):
            return "mutual-exclusivity"
    else:
        has_quant = False

    if _adjacent_structure(g, touched):
        return "sequential"
    if all(_single_row_shape(c.formula) for c in ground):
        return "linear"
    if has_quant:
        return "logical-quantifier"
    return "logical"


def _adjacent_structure(g, touched):
    """Variables of each constraint sit at adjacent integer positions of one
    predicate, e.g. token i and token i-1."""
    for vars_ in touched:
        if len(vars_) != 2:
            return False
        a, b = g.variables[vars_[0]], g.variables[vars_[1]]
        if a.pred != b.pred or len(a.key) != len(b.key):
            return False
        diffs = [(x, y) for x, y in zip(a.key[1:], b.key[1:]) if x != y]
        if len(diffs) != 1:
            return False
        x, y = diffs[0]
        if not (isinstance(x, int) and isinstance(y, int) and abs(x - y) == 1):
            return False
    return True


def categorize(g: GroundProgram, program=None) -> dict[str, str]:
    """Category per constraint template appearing in g."""
    out = {}
    for c in g.constraints:
        name = c.source[0]
        if name in out:
            continue
        source, preds = None, None
        if program is not None:
            try:
                source = program.constraint(name).formula
                preds = program.preds
            except KeyError:
                pass
        out[name] = classify_constraint(g, name, source, preds)
    return out


def capability_matrix(methods, g: GroundProgram, program=None) -> CapabilityReport:
    """Support table for the given methods against the categories in g."""
    methods = tuple(m.lower() for m in methods)
    for m in methods:
        if m not in _BASE:
            raise ValueError(f"unknown method {m!r}")
    by_template = categorize(g, program)
    present = {c: [] for c in CATEGORIES}
    for name, cat in by_template.items():
        present[cat].append(name)

    table = {}
    for m in methods:
        row = {}
        for cat in CATEGORIES:
            status = _BASE[m].get(cat, UNSUPPORTED)
            note = ""
            if status == NEEDS_CONVERSION and (m, cat) in _CONVERSIONS:
                status = CONVERTED
                note = "grounded and relinearized by this package"
            elif status == UNSUPPORTED:
                note = _NOTES.get(m, "")
            row[cat] = Cell(status, note)
        table[m] = row
    return CapabilityReport(methods, present, table)
