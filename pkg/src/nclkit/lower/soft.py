"""Differentiable relaxation of ground constraints.

Each constraint lowers to violation = 1 - sat, where sat maps [0,1] inputs to
[0,1] and coincides with classical truth on 0/1 inputs:

    product:      sat(a & b) = sat(a) * sat(b)
                  sat(a | b) = 1 - (1 - sat(a)) * (1 - sat(b))
    godel:        min / max
    lukasiewicz:  sat(a & b) = max(0, a + b - 1), sat(a | b) = min(1, a + b)

Negation is 1 - x everywhere; implication is not-lhs or rhs; iff is the
conjunction of both implications.  Counting under product/Gödel expands to an
equivalent boolean form first (subset expansion with a size cap); Łukasiewicz
handles counting natively through clamped sums.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from ..errors import ResourceLimitError, UnsupportedConstraintError
from ..lang.ground import (
    GAnd, GAtom, GCallback, GConst, GCount, GF, GIff, GImplies, GNot, GOr,
    GroundProgram,
)
from .linear import gf_negate, gf_simplify

TNORMS = ("product", "godel", "lukasiewicz")
DEFAULT_EXPANSION_CAP = 20000


# ---------------------------------------------------------------- expression

@dataclass(frozen=True)
class SConst:
    value: float


@dataclass(frozen=True)
class SInput:
    var: int
    label: int


@dataclass(frozen=True)
class SCompl:
    child: "SoftExpr"


@dataclass(frozen=True)
class SProd:
    children: tuple["SoftExpr", ...]


@dataclass(frozen=True)
class SMin:
    children: tuple["SoftExpr", ...]


@dataclass(frozen=True)
class SMax:
    children: tuple["SoftExpr", ...]


@dataclass(frozen=True)
class SClampSum:
    """clamp(sum(children) + shift, 0, 1)"""
    children: tuple["SoftExpr", ...]
    shift: float


SoftExpr = SConst | SInput | SCompl | SProd | SMin | SMax | SClampSum


# ---------------------------------------------------------------- lowering

def _expand_count_bool(f: GCount, cap) -> GF:
    """Boolean form of a counting node; blows up combinatorially, hence cap."""
    n = len(f.children)

    def atleast(k):
        if k <= 0:
            return GConst(True)
        if k > n:
            return GConst(False)
        n_terms = 1
        for i in range(k):
            n_terms = n_terms * (n - i) // (i + 1)
        if n_terms * k > cap:
            raise ResourceLimitError(
                f"boolean expansion of {f.kind}({f.k}) over {n} formulas needs "
                f"{n_terms} terms, above the cap of {cap}")
        terms = []
        for subset in itertools.combinations(range(n), k):
            parts = tuple(f.children[i] for i in subset)
            terms.append(parts[0] if k == 1 else GAnd(parts))
        return terms[0] if len(terms) == 1 else GOr(tuple(terms))

    if f.kind == "atleast":
        return atleast(f.k)
    if f.kind == "atmost":
        return gf_simplify(gf_negate(atleast(f.k + 1)))
    low = atleast(f.k)
    high = gf_simplify(gf_negate(atleast(f.k + 1)))
    return gf_simplify(GAnd((low, high)))


def _sat(f: GF, tnorm, cap) -> SoftExpr:
    if isinstance(f, GConst):
        return SConst(1.0 if f.value else 0.0)
    if isinstance(f, GAtom):
        return SInput(f.var, f.label)
    if isinstance(f, GNot):
        return SCompl(_sat(f.child, tnorm, cap))
    if isinstance(f, GImplies):
        return _sat(GOr((gf_negate(f.lhs), f.rhs)), tnorm, cap)
    if isinstance(f, GIff):
        return _sat(GAnd((GOr((gf_negate(f.lhs), f.rhs)),
                          GOr((gf_negate(f.rhs), f.lhs)))), tnorm, cap)
    if isinstance(f, GAnd):
        kids = tuple(_sat(c, tnorm, cap) for c in f.children)
        if tnorm == "product":
            return SProd(kids)
        if tnorm == "godel":
            return SMin(kids)
        return SClampSum(kids, -(len(kids) - 1))
    if isinstance(f, GOr):
        kids = tuple(_sat(c, tnorm, cap) for c in f.children)
        if tnorm == "product":
            return SCompl(SProd(tuple(SCompl(k) for k in kids)))
        if tnorm == "godel":
            return SMax(kids)
        return SClampSum(kids, 0.0)
    if isinstance(f, GCount):
        if tnorm == "lukasiewicz":
            return _luk_count(f, cap)
        return _sat(_expand_count_bool(f, cap), tnorm, cap)
    if isinstance(f, GCallback):
        raise UnsupportedConstraintError(
            "opaque program constraints have no differentiable form")
    raise TypeError(f"not a ground formula: {f!r}")


def _luk_count(f: GCount, cap) -> SoftExpr:
    n = len(f.children)
    kids = tuple(_sat(c, "lukasiewicz", cap) for c in f.children)

    def atleast(k):
        if k <= 0:
            return SConst(1.0)
        if k > n:
            return SConst(0.0)
        return SClampSum(kids, float(-(k - 1)))

    def atmost(k):
        if k >= n:
            return SConst(1.0)
        if k < 0:
            return SConst(0.0)
        return SClampSum(tuple(SCompl(c) for c in kids), float(-(n - k - 1)))

    if f.kind == "atleast":
        return atleast(f.k)
    if f.kind == "atmost":
        return atmost(f.k)
    return SClampSum((atleast(f.k), atmost(f.k)), -1.0)


def to_soft_violation(g: GroundProgram, tnorm="product",
                      expansion_cap=DEFAULT_EXPANSION_CAP):
    """Per-constraint violation expressions: violation = 1 - sat."""
    if tnorm not in TNORMS:
        raise ValueError(f"unknown t-norm {tnorm!r}; choose from {TNORMS}")
    out = []
    for c in g.constraints:
        sat = _sat(gf_simplify(c.formula), tnorm, expansion_cap)
        out.append(SCompl(sat))
    return out


# ---------------------------------------------------------------- evaluation

def eval_soft(expr: SoftExpr, probs) -> float:
    """Reference evaluator; `probs` maps (var, label) or is a 2-D array."""
    def value(var, label):
        if isinstance(probs, dict):
            return probs[(var, label)]
        return probs[var][label]

    def rec(e):
        if isinstance(e, SConst):
            return e.value
        if isinstance(e, SInput):
            return float(value(e.var, e.label))
        if isinstance(e, SCompl):
            return 1.0 - rec(e.child)
        if isinstance(e, SProd):
            out = 1.0
            for c in e.children:
                out *= rec(c)
            return out
        if isinstance(e, SMin):
            return min(rec(c) for c in e.children)
        if isinstance(e, SMax):
            return max(rec(c) for c in e.children)
        if isinstance(e, SClampSum):
            return min(1.0, max(0.0, sum(rec(c) for c in e.children) + e.shift))
        raise TypeError(f"not a soft expression: {e!r}")

    return rec(expr)


# ---------------------------------------------------------------- graph emit

def _skeletonize(e: SoftExpr, slots: list):
    """Number SInput leaves in traversal order so equal shapes batch together."""
    if isinstance(e, SInput):
        slots.append((e.var, e.label))
        return SInput(len(slots) - 1, -1)
    if isinstance(e, SConst):
        return e
    if isinstance(e, SCompl):
        return SCompl(_skeletonize(e.child, slots))
    if isinstance(e, SProd):
        return SProd(tuple(_skeletonize(c, slots) for c in e.children))
    if isinstance(e, SMin):
        return SMin(tuple(_skeletonize(c, slots) for c in e.children))
    if isinstance(e, SMax):
        return SMax(tuple(_skeletonize(c, slots) for c in e.children))
    if isinstance(e, SClampSum):
        return SClampSum(tuple(_skeletonize(c, slots) for c in e.children), e.shift)
    raise TypeError(f"not a soft expression: {e!r}")


def soft_violation_tensor(graph, flat_probs, exprs, offsets):
    """Evaluate violation expressions inside an autodiff graph, batched.

    flat_probs: 1-D tensor of concatenated per-variable probability rows.
    offsets: per ground variable, its starting index in flat_probs.
    Returns a 1-D tensor of violations aligned with `exprs`.
    """
    groups = {}
    for i, e in enumerate(exprs):
        slots = []
        skel = _skeletonize(e, slots)
        groups.setdefault(skel, ([], []))[0].append(i)
        groups[skel][1].append(slots)

    parts, order = [], []
    for skel, (indices, slot_rows) in groups.items():
        idx = np.asarray(
            [[offsets[v] + l for v, l in row] for row in slot_rows],
            dtype=np.int64)

        def emit(e):
            if isinstance(e, SConst):
                return graph.const(np.full(len(indices), e.value))
            if isinstance(e, SInput):
                return graph.take(flat_probs, idx[:, e.var])
            if isinstance(e, SCompl):
                return graph.const(np.ones(len(indices))) - emit(e.child)
            if isinstance(e, SProd):
                out = emit(e.children[0])
                for c in e.children[1:]:
                    out = out * emit(c)
                return out
            if isinstance(e, SMin):
                out = emit(e.children[0])
                for c in e.children[1:]:
                    out = graph.minimum(out, emit(c))
                return out
            if isinstance(e, SMax):
                out = emit(e.children[0])
                for c in e.children[1:]:
                    out = graph.maximum(out, emit(c))
                return out
            if isinstance(e, SClampSum):
                out = emit(e.children[0])
                for c in e.children[1:]:
                    out = out + emit(c)
                if e.shift:
                    out = out + graph.const(np.full(len(indices), e.shift))
                return graph.clamp(out, 0.0, 1.0)
            raise TypeError(f"not a soft expression: {e!r}")

        parts.append(emit(skel))
        order.extend(indices)

    stacked = parts[0] if len(parts) == 1 else graph.concat(parts)
    inverse = np.empty(len(order), dtype=np.int64)
    inverse[np.asarray(order)] = np.arange(len(order))
    return graph.take(stacked, inverse)


# ---------------------------------------------------------------- DAG JSON

def soft_to_json(expr: SoftExpr) -> str:
    def enc(e):
        if isinstance(e, SConst):
            return {"op": "const", "value": e.value}
        if isinstance(e, SInput):
            return {"op": "input", "var": e.var, "label": e.label}
        if isinstance(e, SCompl):
            return {"op": "complement", "child": enc(e.child)}
        if isinstance(e, SProd):
            return {"op": "product", "children": [enc(c) for c in e.children]}
        if isinstance(e, SMin):
            return {"op": "min", "children": [enc(c) for c in e.children]}
        if isinstance(e, SMax):
            return {"op": "max", "children": [enc(c) for c in e.children]}
        if isinstance(e, SClampSum):
            return {"op": "clamp-sum", "shift": e.shift,
                    "children": [enc(c) for c in e.children]}
        raise TypeError(f"not a soft expression: {e!r}")

    return json.dumps(enc(expr), indent=2)


def soft_from_json(text: str) -> SoftExpr:
    def dec(d):
        op = d["op"]
        if op == "const":
            return SConst(d["value"])
        if op == "input":
            return SInput(d["var"], d["label"])
        if op == "complement":
            return SCompl(dec(d["child"]))
        children = tuple(dec(c) for c in d.get("children", ()))
        if op == "product":
            return SProd(children)
        if op == "min":
            return SMin(children)
        if op == "max":
            return SMax(children)
        if op == "clamp-sum":
            return SClampSum(children, d["shift"])
        raise ValueError(f"unknown op {op!r}")

    return dec(json.loads(text))
