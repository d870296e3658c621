"""Quantifier expansion into propositional constraints over decision variables.

A categorical predicate `p(A, B, L)` contributes one decision variable per
grounding of `(A, B)`, whose label set is the `L` domain; a boolean predicate
contributes one 0/1 variable per grounding of all its arguments.  Grounding a
program expands every quantifier over its (finite) domain, evaluates guards to
prune bindings, and rewrites atoms to (variable, label) pairs.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..errors import GroundingError, ResourceLimitError
from .ast import (
    And, Arith, Atom, BoolConst, Cmp, ConstraintProgram, Count, DomainRef,
    Formula, Guard, GuardAnd, GuardNot, GuardOr, Iff, Implies, InlineRange,
    InlineSet, IntLit, Name, Not, Or, Quant, Term,
)

DEFAULT_ATOM_CAP = 10**6
BOOL_LABELS = (0, 1)  # 1 = true


# ---------------------------------------------------------------- ground IR

@dataclass(frozen=True)
class GAtom:
    var: int    # index into GroundProgram.variables
    label: int  # index into that variable's label tuple


@dataclass(frozen=True)
class GConst:
    value: bool


@dataclass(frozen=True)
class GNot:
    child: "GF"


@dataclass(frozen=True)
class GAnd:
    children: tuple["GF", ...]


@dataclass(frozen=True)
class GOr:
    children: tuple["GF", ...]


@dataclass(frozen=True)
class GImplies:
    lhs: "GF"
    rhs: "GF"


@dataclass(frozen=True)
class GIff:
    lhs: "GF"
    rhs: "GF"


@dataclass(frozen=True)
class GCount:
    kind: str  # exactly | atmost | atleast
    k: int
    children: tuple["GF", ...]


@dataclass(frozen=True)
class GCallback:
    """Opaque program constraint: a predicate over complete assignments.

    Only sample-based methods can train against it; exact lowerings report it
    as unsupported.
    """
    name: str
    fn: object = field(compare=False, hash=False)


GF = GAtom | GConst | GNot | GAnd | GOr | GImplies | GIff | GCount | GCallback


def gf_atoms(f: GF):
    if isinstance(f, GAtom):
        yield f
    elif isinstance(f, GNot):
        yield from gf_atoms(f.child)
    elif isinstance(f, (GAnd, GOr, GCount)):
        for c in f.children:
            yield from gf_atoms(c)
    elif isinstance(f, (GImplies, GIff)):
        yield from gf_atoms(f.lhs)
        yield from gf_atoms(f.rhs)


# ---------------------------------------------------------------- program

@dataclass
class GroundVar:
    key: tuple          # (pred, *identity args)
    pred: str
    labels: tuple       # label values: domain values, or (0, 1) for booleans
    index: int

    @property
    def name(self):
        args = ",".join(str(a) for a in self.key[1:])
        return f"{self.pred}[{args}]" if args else self.pred

    def label_index(self, value):
        try:
            return self.labels.index(value)
        except ValueError:
            raise GroundingError(
                f"label {value!r} outside label set of {self.name}") from None


@dataclass
class GroundConstraint:
    name: str
    formula: GF
    source: tuple       # (template name, free-variable binding)
    weight: float | None = None


class GroundProgram:
    def __init__(self):
        self.variables: list[GroundVar] = []
        self.var_index: dict[tuple, int] = {}
        self.constraints: list[GroundConstraint] = []
        self.atom_count = 0
        self._groups = None

    # ---- variables

    def add_variable(self, key, labels):
        idx = self.var_index.get(key)
        if idx is not None:
            return self.variables[idx]
        v = GroundVar(key, key[0], tuple(labels), len(self.variables))
        self.variables.append(v)
        self.var_index[key] = v.index
        self._groups = None
        return v

    def variable(self, key):
        return self.variables[self.var_index[key]]

    def add_constraint(self, constraint):
        self.constraints.append(constraint)
        self._groups = None

    @property
    def n_labels_max(self):
        return max((len(v.labels) for v in self.variables), default=0)

    def assignment_space(self):
        total = 1
        for v in self.variables:
            total *= len(v.labels)
        return total

    # ---- evaluation

    def assignment_vector(self, assignment: dict) -> np.ndarray:
        """Label-index vector for a complete {key or name: label value} dict."""
        by_name = None
        vec = np.empty(len(self.variables), dtype=np.int64)
        for v in self.variables:
            if v.key in assignment:
                val = assignment[v.key]
            else:
                if by_name is None:
                    by_name = {u.name: u for u in self.variables}
                if v.name not in assignment:
                    raise GroundingError(f"assignment is missing variable {v.name}")
                val = assignment[v.name]
            vec[v.index] = v.label_index(val)
        return vec

    def groups(self):
        if self._groups is None:
            self._groups = _compile_groups(self.constraints)
        return self._groups

    def eval_matrix(self, assignments: np.ndarray) -> np.ndarray:
        """Satisfaction of every constraint under each assignment row.

        assignments: (n_samples, n_variables) label indices.
        Returns (n_constraints, n_samples) booleans.
        """
        assignments = np.atleast_2d(np.asarray(assignments, dtype=np.int64))
        n = assignments.shape[0]
        out = np.empty((len(self.constraints), n), dtype=bool)
        for group in self.groups():
            group.eval_into(self, assignments, out)
        return out


def eval_ground(g: GroundProgram, assignment) -> np.ndarray:
    """Classical truth of each ground constraint under a complete assignment.

    `assignment` maps every decision variable (by key or name) to a label
    value; a partial assignment or an out-of-set label raises GroundingError.
    """
    if isinstance(assignment, dict):
        vec = g.assignment_vector(assignment)
    else:
        vec = np.asarray(assignment, dtype=np.int64)
        if vec.shape != (len(g.variables),):
            raise GroundingError(
                f"assignment has {vec.shape} entries, expected {len(g.variables)}")
        for v in g.variables:
            if not 0 <= vec[v.index] < len(v.labels):
                raise GroundingError(f"label index out of range for {v.name}")
    return g.eval_matrix(vec[None, :])[:, 0]


# ---------------------------------------------------------------- grouping

class _Group:
    """Constraints sharing one formula skeleton, evaluated in a batch."""

    def __init__(self, skeleton, indices, slots):
        self.skeleton = skeleton          # GF with slot numbers in GAtom.var
        self.indices = np.asarray(indices)
        self.var_mat = np.asarray([[s[0] for s in row] for row in slots], dtype=np.int64)
        self.label_mat = np.asarray([[s[1] for s in row] for row in slots], dtype=np.int64)
        if self.var_mat.size == 0:
            self.var_mat = self.var_mat.reshape(len(indices), 0)
            self.label_mat = self.label_mat.reshape(len(indices), 0)

    def eval_into(self, g, assignments, out):
        # truth[s, c, k]: does sample s satisfy slot k of constraint c
        truth = assignments[:, self.var_mat] == self.label_mat[None, :, :]
        res = _eval_skeleton(self.skeleton, truth, g, assignments, self.indices)
        out[self.indices, :] = res.T


def _skeleton_and_slots(f: GF, slots: list):
    """Replace atoms with numbered slots; collect (var, label) per slot."""
    if isinstance(f, GAtom):
        slots.append((f.var, f.label))
        return GAtom(len(slots) - 1, -1)
    if isinstance(f, (GConst, GCallback)):
        return f
    if isinstance(f, GNot):
        return GNot(_skeleton_and_slots(f.child, slots))
    if isinstance(f, GAnd):
        return GAnd(tuple(_skeleton_and_slots(c, slots) for c in f.children))
    if isinstance(f, GOr):
        return GOr(tuple(_skeleton_and_slots(c, slots) for c in f.children))
    if isinstance(f, GImplies):
        return GImplies(_skeleton_and_slots(f.lhs, slots), _skeleton_and_slots(f.rhs, slots))
    if isinstance(f, GIff):
        return GIff(_skeleton_and_slots(f.lhs, slots), _skeleton_and_slots(f.rhs, slots))
    if isinstance(f, GCount):
        return GCount(f.kind, f.k, tuple(_skeleton_and_slots(c, slots) for c in f.children))
    raise TypeError(f"not a ground formula: {f!r}")


def _compile_groups(constraints):
    by_skeleton = {}
    for i, c in enumerate(constraints):
        slots = []
        skel = _skeleton_and_slots(c.formula, slots)
        entry = by_skeleton.setdefault(skel, ([], []))
        entry[0].append(i)
        entry[1].append(slots)
    return [_Group(skel, idx, slots) for skel, (idx, slots) in by_skeleton.items()]


def _eval_skeleton(f: GF, truth, g, assignments, indices):
    """Evaluate a slot skeleton; returns (n_samples, n_in_group) booleans."""
    if isinstance(f, GAtom):
        return truth[:, :, f.var]
    if isinstance(f, GConst):
        return np.full(truth.shape[:2], f.value, dtype=bool)
    if isinstance(f, GCallback):
        res = np.empty(truth.shape[:2], dtype=bool)
        for s in range(assignments.shape[0]):
            a = {v.key: v.labels[assignments[s, v.index]] for v in g.variables}
            res[s, :] = bool(f.fn(a))
        return res
    if isinstance(f, GNot):
        return ~_eval_skeleton(f.child, truth, g, assignments, indices)
    if isinstance(f, GAnd):
        acc = _eval_skeleton(f.children[0], truth, g, assignments, indices)
        for c in f.children[1:]:
            acc = acc & _eval_skeleton(c, truth, g, assignments, indices)
        return acc
    if isinstance(f, GOr):
        acc = _eval_skeleton(f.children[0], truth, g, assignments, indices)
        for c in f.children[1:]:
            acc = acc | _eval_skeleton(c, truth, g, assignments, indices)
        return acc
    if isinstance(f, GImplies):
        return (~_eval_skeleton(f.lhs, truth, g, assignments, indices)
                | _eval_skeleton(f.rhs, truth, g, assignments, indices))
    if isinstance(f, GIff):
        return (_eval_skeleton(f.lhs, truth, g, assignments, indices)
                == _eval_skeleton(f.rhs, truth, g, assignments, indices))
    if isinstance(f, GCount):
        total = sum(_eval_skeleton(c, truth, g, assignments, indices).astype(np.int32)
                    for c in f.children)
        if f.kind == "exactly":
            return total == f.k
        if f.kind == "atmost":
            return total <= f.k
        return total >= f.k
    raise TypeError(f"not a ground formula: {f!r}")


def structure_signature(g: "GroundProgram"):
    """Hashable identity of a ground program up to variable naming: label
    sets in order plus each constraint's formula skeleton and slot matrix.
    Two programs with equal signatures linearize to identical systems."""
    parts = [tuple(v.labels for v in g.variables)]
    for c in g.constraints:
        slots: list = []
        skel = _skeleton_and_slots(c.formula, slots)
        parts.append((skel, tuple(slots)))
    return tuple(parts)


def gf_render(f: GF, g: "GroundProgram") -> str:
    """Readable rendering of a ground formula, e.g. `cellv[3]=2 -> !cellv[4]=2`."""
    def atom(a):
        v = g.variables[a.var]
        return f"{v.name}={v.labels[a.label]}"

    def rec(f, prec):
        if isinstance(f, GAtom):
            return atom(f)
        if isinstance(f, GConst):
            return "true" if f.value else "false"
        if isinstance(f, GCallback):
            return f"<program {f.name}>"
        if isinstance(f, GNot):
            return "!" + rec(f.child, 5)
        if isinstance(f, GCount):
            body = ", ".join(rec(c, 0) for c in f.children)
            return f"{f.kind}({f.k}){{{body}}}"
        if isinstance(f, GAnd):
            s = " & ".join(rec(c, 5) for c in f.children)
            return f"({s})" if prec > 4 else s
        if isinstance(f, GOr):
            s = " | ".join(rec(c, 4) for c in f.children)
            return f"({s})" if prec > 3 else s
        if isinstance(f, GImplies):
            s = f"{rec(f.lhs, 3)} -> {rec(f.rhs, 2)}"
            return f"({s})" if prec > 2 else s
        if isinstance(f, GIff):
            s = f"{rec(f.lhs, 2)} <-> {rec(f.rhs, 2)}"
            return f"({s})" if prec > 1 else s
        raise TypeError(f"not a ground formula: {f!r}")

    return rec(f, 0)


# ---------------------------------------------------------------- instance

@dataclass
class Instance:
    """Per-dataset sizes and bindings that a program text cannot fix.

    domains: values (or just a size) for externally sized domains.
    bindings: per-constraint tuples binding its free variables; a constraint
        with free variables but no entry is expanded over the cross product.
    variables: optional explicit decision-variable universe (and ordering),
        as (pred, *identity) keys; variables referenced by ground atoms are
        added on demand either way.
    """
    domains: dict = field(default_factory=dict)
    bindings: dict = field(default_factory=dict)
    variables: list | None = None
    atom_cap: int = DEFAULT_ATOM_CAP


class _Grounder:
    def __init__(self, prog: ConstraintProgram, inst: Instance):
        self.prog = prog
        self.inst = inst
        self.g = GroundProgram()
        self.domain_values = {}
        for name, decl in prog.domains.items():
            if decl.values is not None:
                self.domain_values[name] = decl.values
        for name, spec in inst.domains.items():
            if isinstance(spec, int):
                self.domain_values[name] = tuple(range(spec))
            else:
                self.domain_values[name] = tuple(spec)

    def domain(self, name, span=None):
        values = self.domain_values.get(name)
        if values is None:
            where = f" at {span}" if span else ""
            raise GroundingError(f"domain {name!r} has no finite size{where}")
        return values

    def labels_for(self, pred):
        if pred.categorical:
            return self.domain(pred.arg_domains[-1])
        return BOOL_LABELS

    def run(self):
        if self.inst.variables:
            for key in self.inst.variables:
                pred = self.prog.preds.get(key[0])
                if pred is None:
                    raise GroundingError(f"unknown predicate {key[0]!r} in variable list")
                self.g.add_variable(tuple(key), self.labels_for(pred))
        for c in self.prog.constraints:
            bindings = self.inst.bindings.get(c.name)
            if bindings is None:
                pools = [self.domain(d) for _, d in c.free_vars]
                bindings = itertools.product(*pools)
            names = [v for v, _ in c.free_vars]
            for binding in bindings:
                binding = tuple(binding)
                if len(binding) != len(names):
                    raise GroundingError(
                        f"binding {binding!r} for {c.name!r} expects {len(names)} values")
                env = dict(zip(names, binding))
                self.emit(c, env, binding, c.formula)
        return self.g

    def emit(self, c, env, binding, f):
        """One ground constraint per top-level forall binding: the count of
        ground constraints from `forall x where G` equals the number of
        domain elements satisfying G."""
        if isinstance(f, Quant) and f.kind == "forall":
            for value in self.domain_expr_values(f.domain):
                inner = dict(env)
                inner[f.var] = value
                if f.guard is not None and not eval_guard(f.guard, inner):
                    continue
                self.emit(c, inner, binding + (value,), f.body)
            return
        gf = self.expand(f, env)
        suffix = "[" + ",".join(str(b) for b in binding) + "]" if binding else ""
        self.g.add_constraint(
            GroundConstraint(c.name + suffix, gf, (c.name, binding), c.weight))

    # ---- formula expansion

    def expand(self, f: Formula, env) -> GF:
        if isinstance(f, Atom):
            return self.expand_atom(f, env)
        if isinstance(f, BoolConst):
            return GConst(f.value)
        if isinstance(f, Not):
            return GNot(self.expand(f.child, env))
        if isinstance(f, And):
            return GAnd(tuple(self.expand(c, env) for c in f.children))
        if isinstance(f, Or):
            return GOr(tuple(self.expand(c, env) for c in f.children))
        if isinstance(f, Implies):
            return GImplies(self.expand(f.lhs, env), self.expand(f.rhs, env))
        if isinstance(f, Iff):
            return GIff(self.expand(f.lhs, env), self.expand(f.rhs, env))
        if isinstance(f, Count):
            children = tuple(self.expand(c, env) for c in f.children)
            if not 0 <= f.k <= len(children):
                raise GroundingError(
                    f"count bound {f.k} out of range for {len(children)} formulas")
            return GCount(f.kind, f.k, children)
        if isinstance(f, Quant):
            return self.expand_quant(f, env)
        raise TypeError(f"not a formula: {f!r}")

    def expand_quant(self, f: Quant, env) -> GF:
        values = self.domain_expr_values(f.domain)
        parts = []
        for value in values:
            inner = dict(env)
            inner[f.var] = value
            if f.guard is not None and not eval_guard(f.guard, inner):
                continue
            parts.append(self.expand(f.body, inner))
        if not parts:
            return GConst(f.kind == "forall")
        if len(parts) == 1:
            return parts[0]
        return GAnd(tuple(parts)) if f.kind == "forall" else GOr(tuple(parts))

    def domain_expr_values(self, d):
        if isinstance(d, DomainRef):
            return self.domain(d.name, d.span)
        if isinstance(d, InlineRange):
            return tuple(range(d.lo, d.hi + 1))
        if isinstance(d, InlineSet):
            return d.values
        raise TypeError(f"not a domain expression: {d!r}")

    def expand_atom(self, f: Atom, env) -> GAtom:
        pred = self.prog.preds.get(f.pred)
        if pred is None:
            raise GroundingError(f"unknown predicate {f.pred!r}")
        if len(f.args) != pred.arity:
            raise GroundingError(
                f"predicate {f.pred!r} expects {pred.arity} arguments, got {len(f.args)}")
        args = [eval_term(a, env) for a in f.args]
        if pred.categorical:
            identity, label_value = tuple(args[:-1]), args[-1]
        else:
            identity, label_value = tuple(args), 1
        var = self.g.add_variable((pred.name, *identity), self.labels_for(pred))
        self.g.atom_count += 1
        if self.g.atom_count > self.inst.atom_cap:
            raise ResourceLimitError(
                f"grounding exceeded the cap of {self.inst.atom_cap} atoms; "
                f"raise Instance.atom_cap if this is intended")
        return GAtom(var.index, var.label_index(label_value))


def ground_program(prog: ConstraintProgram, inst: Instance | None = None) -> GroundProgram:
    """Expand all quantifiers of `prog` over the finite domains of `inst`."""
    return _Grounder(prog, inst or Instance()).run()


# ---------------------------------------------------------------- terms/guards

def eval_term(t: Term, env):
    if isinstance(t, IntLit):
        return t.value
    if isinstance(t, Name):
        if t.ident in env:
            return env[t.ident]
        return t.ident  # enumerated symbol literal
    if isinstance(t, Arith):
        lhs = eval_term(t.lhs, env)
        rhs = eval_term(t.rhs, env)
        if not isinstance(lhs, int) or not isinstance(rhs, int):
            raise GroundingError(
                f"arithmetic on non-integer term at {t.span}: {lhs!r} {t.op} {rhs!r}")
        if t.op == "+":
            return lhs + rhs
        if t.op == "-":
            return lhs - rhs
        if t.op == "*":
            return lhs * rhs
        if rhs == 0:
            raise GroundingError(f"division by zero at {t.span}")
        return lhs // rhs if t.op == "/" else lhs % rhs
    raise TypeError(f"not a term: {t!r}")


def eval_guard(g: Guard, env) -> bool:
    if isinstance(g, Cmp):
        lhs = eval_term(g.lhs, env)
        rhs = eval_term(g.rhs, env)
        if g.op == "==":
            return lhs == rhs
        if g.op == "!=":
            return lhs != rhs
        if not isinstance(lhs, int) or not isinstance(rhs, int):
            raise GroundingError(
                f"ordered comparison on non-integer term at {g.span}")
        return {"<": lhs < rhs, "<=": lhs <= rhs,
                ">": lhs > rhs, ">=": lhs >= rhs}[g.op]
    if isinstance(g, GuardNot):
        return not eval_guard(g.child, env)
    if isinstance(g, GuardAnd):
        return all(eval_guard(c, env) for c in g.children)
    if isinstance(g, GuardOr):
        return any(eval_guard(c, env) for c in g.children)
    raise TypeError(f"not a guard: {g!r}")


# ---------------------------------------------------------------- oracle

def eval_formula(prog: ConstraintProgram, f: Formula, env, assignment,
                 domain_values) -> bool:
    """Direct semantic recursion on the source AST (grounding-free oracle).

    `assignment` maps (pred, *identity) keys to label values; `domain_values`
    maps every domain name to its value tuple.  Used to cross-check that
    grounding preserves semantics.
    """
    def dom(d):
        if isinstance(d, DomainRef):
            return domain_values[d.name]
        if isinstance(d, InlineRange):
            return tuple(range(d.lo, d.hi + 1))
        return d.values

    def rec(f, env):
        if isinstance(f, Atom):
            pred = prog.preds[f.pred]
            args = [eval_term(a, env) for a in f.args]
            if pred.categorical:
                return assignment[(f.pred, *args[:-1])] == args[-1]
            return bool(assignment[(f.pred, *args)])
        if isinstance(f, BoolConst):
            return f.value
        if isinstance(f, Not):
            return not rec(f.child, env)
        if isinstance(f, And):
            return all(rec(c, env) for c in f.children)
        if isinstance(f, Or):
            return any(rec(c, env) for c in f.children)
        if isinstance(f, Implies):
            return (not rec(f.lhs, env)) or rec(f.rhs, env)
        if isinstance(f, Iff):
            return rec(f.lhs, env) == rec(f.rhs, env)
        if isinstance(f, Count):
            total = sum(1 for c in f.children if rec(c, env))
            if f.kind == "exactly":
                return total == f.k
            return total <= f.k if f.kind == "atmost" else total >= f.k
        if isinstance(f, Quant):
            picks = []
            for value in dom(f.domain):
                inner = dict(env)
                inner[f.var] = value
                if f.guard is not None and not eval_guard(f.guard, inner):
                    continue
                picks.append(rec(f.body, inner))
            return all(picks) if f.kind == "forall" else any(picks)
        raise TypeError(f"not a formula: {f!r}")

    return rec(f, env)
