"""Fact consistency over an implication graph.

Facts form a random DAG with positive implications (holding f1 forces f2) and
negative implications (f1 excludes f2).  Each entity's gold fact set is the
closure of random seed facts, so gold always satisfies the graph; negative
edges are only added between facts never jointly held.
"""
from __future__ import annotations

import numpy as np

from ..autodiff import Params
from ..lang import Instance, ground_program, parse_program
from ..nn import build_mlp
from .base import Batch, Split, TaskInstance, TaskModel, gold_picks_for, offsets_for

FEAT_DIM = 24

VARIANTS = {"simple": {"hidden": ()}, "strong": {"hidden": (32,)}}


def beliefs_program_text(pos_edges, neg_edges, n_facts):
    lines = [
        "domain Entity",
        f"domain Fact = 0 .. {n_facts - 1}",
        "pred holds(Entity, Fact) boolean",
    ]
    for k, (f1, f2) in enumerate(pos_edges):
        lines.append(f"constraint pos{k}(e in Entity): "
                     f"!holds(e, {f1}) | holds(e, {f2})")
    for k, (f1, f2) in enumerate(neg_edges):
        lines.append(f"constraint neg{k}(e in Entity): "
                     f"!holds(e, {f1}) | !holds(e, {f2})")
    return "\n".join(lines) + "\n"


class BeliefModel(TaskModel):
    def __init__(self, variant, seed, n_facts):
        super().__init__(Params())
        rng = np.random.default_rng(seed)
        hidden = VARIANTS[variant]["hidden"]
        self.n_facts = n_facts
        self.head = build_mlp(self.params, [FEAT_DIM, *hidden, 2 * n_facts], rng,
                              prefix="facts")


def _closure(seeds, succ, n_facts):
    out = np.zeros(n_facts, dtype=bool)
    stack = list(seeds)
    while stack:
        f = stack.pop()
        if out[f]:
            continue
        out[f] = True
        stack.extend(succ[f])
    return out


def _make_split(n_entities, rng, pos_edges, succ, n_facts, proj, noise):
    gold_matrix = np.zeros((n_entities, n_facts), dtype=bool)
    for e in range(n_entities):
        k = rng.integers(1, max(2, n_facts // 4))
        seeds = rng.choice(n_facts, size=k, replace=False)
        gold_matrix[e] = _closure(seeds, succ, n_facts)
    feats = gold_matrix.astype(np.float64) @ proj
    feats += rng.normal(0, noise, size=feats.shape)
    gold = {}
    for e in range(n_entities):
        for f in range(n_facts):
            gold[("holds", e, f)] = int(gold_matrix[e, f])
    strat = gold_matrix.sum(axis=1)
    return Split(feats, gold, strat=strat, meta={"gold_matrix": gold_matrix})


def gen_implication_graph(n_facts, seed, n_entities=120, noise=0.8,
                          edge_prob=0.15) -> TaskInstance:
    if n_facts < 10:
        raise ValueError("need at least ten facts")
    rng = np.random.default_rng(seed)
    pos_edges = []
    succ = [[] for _ in range(n_facts)]
    for f1 in range(n_facts):
        for f2 in range(f1 + 1, n_facts):  # edges respect fact order: acyclic
            if rng.random() < edge_prob:
                pos_edges.append((f1, f2))
                succ[f1].append(f2)

    proj = rng.normal(0, 1.0, size=(n_facts, FEAT_DIM))
    train = _make_split(n_entities, rng, pos_edges, succ, n_facts, proj, noise)
    dev = _make_split(max(n_entities // 5, 10), rng, pos_edges, succ, n_facts,
                      proj, noise)
    test = _make_split(max(n_entities // 2, 10), rng, pos_edges, succ, n_facts,
                       proj, noise)

    # negative edges only between facts never co-held anywhere
    co = (train.meta["gold_matrix"].T @ train.meta["gold_matrix"]
          + dev.meta["gold_matrix"].T @ dev.meta["gold_matrix"]
          + test.meta["gold_matrix"].T @ test.meta["gold_matrix"])
    neg_edges = []
    for f1 in range(n_facts):
        for f2 in range(f1 + 1, n_facts):
            if co[f1, f2] == 0 and rng.random() < 2 * edge_prob:
                neg_edges.append((f1, f2))

    text = beliefs_program_text(pos_edges, neg_edges, n_facts)
    program = parse_program(text)

    def build_model(variant, seed):
        return BeliefModel(variant, seed, n_facts)

    def make_batch(model, split, idx, supervised):
        idx = np.asarray(idx)
        keys = [("holds", int(e), f) for e in idx for f in range(n_facts)]
        bindings = {}
        for k in range(len(pos_edges)):
            bindings[f"pos{k}"] = [(int(e),) for e in idx]
        for k in range(len(neg_edges)):
            bindings[f"neg{k}"] = [(int(e),) for e in idx]
        g = ground_program(program, Instance(
            domains={"Entity": [int(e) for e in idx]},
            bindings=bindings, variables=keys))
        offsets = offsets_for(g)
        feats = split.features[idx]

        def forward(graph):
            logits = model.head.apply(graph, graph.const(feats))
            shaped = graph.reshape(logits, (len(idx) * n_facts, 2))
            return graph.reshape(graph.softmax(shaped, axis=1), (-1,))

        picks = gold_picks_for(g, offsets, split.gold,
                               {"holds"} if supervised else set())
        return Batch(g, offsets, forward, picks, len(idx))

    def score(split, results):
        gold, pred = [], []
        for idx, assignment, _table in results:
            for e in idx:
                for f in range(n_facts):
                    gold.append(split.gold[("holds", int(e), f)])
                    pred.append(assignment[f"holds[{int(e)},{f}]"])
        from ..evaluate import macro_f1
        return macro_f1(np.asarray(gold), np.asarray(pred), classes=(0, 1))

    return TaskInstance(
        name="implication_graph", program_text=text, program=program,
        train=train, dev=dev, test=test, metric="macro-f1",
        variants=VARIANTS, build_model=build_model, make_batch=make_batch,
        supervised_preds=("holds",), score=score)
