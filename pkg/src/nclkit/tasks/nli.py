"""Pairwise inference labels with cross-pair consistency rules.

Items carry latent intervals on a line; the gold label of an ordered pair is
entailment (contained), contradiction (disjoint), or neutral (overlap).  That
latent structure makes the four consistency rules and entailment transitivity
hold by construction.  Pairs and triples that instantiate the rules are
listed explicitly per example set and grounded only within a batch.
"""
from __future__ import annotations

import numpy as np

from ..autodiff import Params
from ..lang import Instance, ground_program, parse_program
from ..nn import build_mlp
from .base import Batch, Split, TaskInstance, TaskModel, gold_picks_for, offsets_for

ENT, CON, NEU = "ent", "con", "neu"

FEAT_DIM = 12

PROGRAM = """\
domain Pair
domain L = {ent, con, neu}
pred nli(Pair, L) categorical
constraint refl(p in Pair): nli(p, ent)
constraint sym(a in Pair, b in Pair): nli(a, con) -> nli(b, con)
constraint ent_not_con(a in Pair, b in Pair): nli(a, ent) -> !nli(b, con)
constraint neu_not_con(a in Pair, b in Pair): nli(a, neu) -> !nli(b, con)
constraint trans(a in Pair, b in Pair, c in Pair): nli(a, ent) & nli(b, ent) -> nli(c, ent)
"""

VARIANTS = {"simple": {"hidden": (12,)}, "strong": {"hidden": (48,)}}


class NliModel(TaskModel):
    def __init__(self, variant, seed):
        super().__init__(Params())
        rng = np.random.default_rng(seed)
        hidden = VARIANTS[variant]["hidden"]
        self.head = build_mlp(self.params, [FEAT_DIM, *hidden, 3], rng, prefix="nli")


def _label(iv_a, iv_b):
    lo_a, hi_a = iv_a
    lo_b, hi_b = iv_b
    if lo_b <= lo_a and hi_a <= hi_b:
        return ENT
    if hi_a < lo_b or hi_b < lo_a:
        return CON
    return NEU


def _make_split(n_pairs, rng, noise):
    n_items = max(n_pairs // 3, 4)
    centers = rng.uniform(0, 10, size=n_items)
    widths = rng.uniform(0.3, 3.0, size=n_items)
    intervals = np.stack([centers - widths, centers + widths], axis=1)

    def encode(i):
        return np.array([centers[i], widths[i],
                         centers[i] * 0.5 + widths[i], centers[i] - widths[i],
                         widths[i] * widths[i] * 0.1, 1.0])

    pairs = []
    pair_id = {}

    def add_pair(i, j):
        if (i, j) not in pair_id:
            pair_id[(i, j)] = len(pairs)
            pairs.append((i, j))
        return pair_id[(i, j)]

    # reflexive pairs, plus both orders of sampled pairs
    diag_ids = [add_pair(i, i) for i in range(min(n_items, n_pairs // 4 + 1))]
    while len(pairs) < n_pairs:
        i, j = rng.integers(n_items), rng.integers(n_items)
        if i == j:
            continue
        add_pair(int(i), int(j))
        add_pair(int(j), int(i))

    feats = np.zeros((len(pairs), FEAT_DIM))
    gold = {}
    for pid, (i, j) in enumerate(pairs):
        feats[pid] = np.concatenate([encode(i), encode(j)])
        gold[("nli", pid)] = _label(intervals[i], intervals[j])
    feats += rng.normal(0, noise, size=feats.shape)

    sym_ids = []
    for (i, j), pid in pair_id.items():
        if i < j and (j, i) in pair_id:
            sym_ids.append((pid, pair_id[(j, i)]))
            sym_ids.append((pair_id[(j, i)], pid))
    trans_ids = []
    for (i, j), pij in pair_id.items():
        if i == j:
            continue
        for k in range(n_items):
            if k in (i, j):
                continue
            if (j, k) in pair_id and (i, k) in pair_id:
                trans_ids.append((pij, pair_id[(j, k)], pair_id[(i, k)]))
    strat = np.asarray([("ent", "con", "neu").index(gold[("nli", p)])
                        for p in range(len(pairs))])
    meta = {"refl_ids": [(p,) for p in diag_ids],
            "sym_ids": sym_ids,
            "trans_ids": trans_ids[:4 * len(pairs)]}
    return Split(feats, gold, strat=strat, meta=meta)


def gen_consistency_pairs(n, seed, noise=0.25) -> TaskInstance:
    if n < 10:
        raise ValueError("need at least ten pairs")
    rng = np.random.default_rng(seed)
    program = parse_program(PROGRAM)
    train = _make_split(n, rng, noise)
    dev = _make_split(max(n // 5, 10), rng, noise)
    test = _make_split(max(n // 2, 10), rng, noise)

    def build_model(variant, seed):
        return NliModel(variant, seed)

    def make_batch(model, split, idx, supervised):
        idx = np.asarray(idx)
        present = set(int(i) for i in idx)

        def inside(ids):
            return [t for t in ids if all(int(x) in present for x in t)]

        bindings = {
            "refl": inside(split.meta["refl_ids"]),
            "sym": inside(split.meta["sym_ids"]),
            "ent_not_con": inside(split.meta["sym_ids"]),
            "neu_not_con": inside(split.meta["sym_ids"]),
            "trans": inside(split.meta["trans_ids"]),
        }
        keys = [("nli", int(i)) for i in idx]
        g = ground_program(program, Instance(
            domains={"Pair": [int(i) for i in idx]},
            bindings=bindings, variables=keys))
        offsets = offsets_for(g)
        feats = split.features[idx]

        def forward(graph):
            p = graph.softmax(model.head.apply(graph, graph.const(feats)), axis=1)
            return graph.reshape(p, (-1,))

        picks = gold_picks_for(g, offsets, split.gold,
                               {"nli"} if supervised else set())
        return Batch(g, offsets, forward, picks, len(idx))

    def score(split, results):
        gold, pred = [], []
        for idx, assignment, _table in results:
            for i in idx:
                gold.append(split.gold[("nli", int(i))])
                pred.append(assignment[f"nli[{int(i)}]"])
        return float(np.mean(np.asarray(gold) == np.asarray(pred)))

    return TaskInstance(
        name="consistency_pairs", program_text=PROGRAM, program=program,
        train=train, dev=dev, test=test, metric="accuracy",
        variants=VARIANTS, build_model=build_model, make_batch=make_batch,
        supervised_preds=("nli",), score=score)
