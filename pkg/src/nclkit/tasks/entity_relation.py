"""Typed entity mentions and relations with the classic typing table.

Each example is a mention pair plus a relation between them.  Entities and
relations are predicted by independent boolean classifiers, so exclusivity is
an explicit constraint, and the typing table links relation choices to the
argument entity types.  There is no "none" relation class.
"""
from __future__ import annotations

import numpy as np

from ..autodiff import Params
from ..lang import Instance, ground_program, parse_program
from ..nn import build_mlp
from .base import Batch, Split, TaskInstance, TaskModel, gold_picks_for, offsets_for

ENTITY_TYPES = ("person", "org", "location", "other")
RELATIONS = ("live_in", "org_base", "work_for", "kill", "located_in")
# relation -> (argument-1 type, argument-2 type)
TYPING = {
    "live_in": ("person", "location"),
    "org_base": ("org", "location"),
    "work_for": ("person", "org"),
    "kill": ("person", "person"),
    "located_in": ("location", "location"),
}
MENTION_DIM = 12
REL_DIM = 10

VARIANTS = {"simple": {"hidden": ()}, "strong": {"hidden": (32,)}}


def er_program_text():
    n_e, n_r = len(ENTITY_TYPES), len(RELATIONS)
    lines = [
        "domain Example",
        "domain Slot = 0 .. 1",
        f"domain EType = 0 .. {n_e - 1}",
        f"domain RType = 0 .. {n_r - 1}",
        "pred etype(Example, Slot, EType) boolean",
        "pred rel(Example, RType) boolean",
    ]
    for s in (0, 1):
        atoms = ", ".join(f"etype(x, {s}, {t})" for t in range(n_e))
        lines.append(f"constraint excl_e{s}(x in Example): exactly(1){{{atoms}}}")
    atoms = ", ".join(f"rel(x, {r})" for r in range(n_r))
    lines.append(f"constraint excl_r(x in Example): exactly(1){{{atoms}}}")
    for r, name in enumerate(RELATIONS):
        t1 = ENTITY_TYPES.index(TYPING[name][0])
        t2 = ENTITY_TYPES.index(TYPING[name][1])
        lines.append(f"constraint typing_{name}(x in Example): "
                     f"rel(x, {r}) -> etype(x, 0, {t1}) & etype(x, 1, {t2})")
    return "\n".join(lines) + "\n"


class ErModel(TaskModel):
    def __init__(self, variant, seed):
        super().__init__(Params())
        rng = np.random.default_rng(seed)
        hidden = VARIANTS[variant]["hidden"]
        self.etype = build_mlp(self.params,
                               [MENTION_DIM, *hidden, 2 * len(ENTITY_TYPES)],
                               rng, prefix="etype")
        self.rel = build_mlp(self.params, [REL_DIM, *hidden, 2 * len(RELATIONS)],
                             rng, prefix="rel")


def _make_split(n, rng, ent_templates, rel_templates, ent_noise, rel_noise):
    rel_gold = rng.integers(0, len(RELATIONS), size=n)
    t1 = np.asarray([ENTITY_TYPES.index(TYPING[RELATIONS[r]][0]) for r in rel_gold])
    t2 = np.asarray([ENTITY_TYPES.index(TYPING[RELATIONS[r]][1]) for r in rel_gold])
    m1 = ent_templates[t1] + rng.normal(0, ent_noise, size=(n, MENTION_DIM))
    m2 = ent_templates[t2] + rng.normal(0, ent_noise, size=(n, MENTION_DIM))
    rf = rel_templates[rel_gold] + rng.normal(0, rel_noise, size=(n, REL_DIM))
    feats = np.concatenate([m1, m2, rf], axis=1)
    gold = {}
    for i in range(n):
        for t in range(len(ENTITY_TYPES)):
            gold[("etype", i, 0, t)] = int(t == t1[i])
            gold[("etype", i, 1, t)] = int(t == t2[i])
        for r in range(len(RELATIONS)):
            gold[("rel", i, r)] = int(r == rel_gold[i])
    meta = {"rel_gold": rel_gold, "t1": t1, "t2": t2}
    return Split(feats, gold, strat=rel_gold, meta=meta)


def gen_entity_relation(n, seed, ent_noise=1.6, rel_noise=0.35) -> TaskInstance:
    """Entity features are much noisier than relation features, so a typed
    relation prediction carries real information about the entities."""
    if n < 10:
        raise ValueError("need at least ten sentences")
    rng = np.random.default_rng(seed)
    ent_templates = rng.normal(0, 1.0, size=(len(ENTITY_TYPES), MENTION_DIM))
    rel_templates = rng.normal(0, 1.0, size=(len(RELATIONS), REL_DIM))
    text = er_program_text()
    program = parse_program(text)
    args = (rng, ent_templates, rel_templates, ent_noise, rel_noise)
    train = _make_split(n, *args)
    dev = _make_split(max(n // 5, 10), *args)
    test = _make_split(max(n // 2, 10), *args)

    def build_model(variant, seed):
        return ErModel(variant, seed)

    def make_batch(model, split, idx, supervised):
        idx = np.asarray(idx)
        keys = []
        for i in idx:
            for s in (0, 1):
                for t in range(len(ENTITY_TYPES)):
                    keys.append(("etype", int(i), s, t))
            for r in range(len(RELATIONS)):
                keys.append(("rel", int(i), r))
        bindings = {name: [(int(i),) for i in idx] for name in
                    ["excl_e0", "excl_e1", "excl_r"]
                    + [f"typing_{r}" for r in RELATIONS]}
        g = ground_program(program, Instance(
            domains={"Example": [int(i) for i in idx]},
            bindings=bindings, variables=keys))
        offsets = offsets_for(g)
        b = len(idx)
        m1 = split.features[idx, :MENTION_DIM]
        m2 = split.features[idx, MENTION_DIM:2 * MENTION_DIM]
        rf = split.features[idx, 2 * MENTION_DIM:]

        def forward(graph):
            e1 = model.etype.apply(graph, graph.const(m1))   # (B, 8)
            e2 = model.etype.apply(graph, graph.const(m2))
            rl = model.rel.apply(graph, graph.const(rf))     # (B, 10)
            cat = graph.concat([e1, e2, rl], axis=1)         # (B, 26)
            pairs = graph.reshape(cat, (b * 13, 2))
            return graph.reshape(graph.softmax(pairs, axis=1), (-1,))

        preds = {"etype", "rel"} if supervised else set()
        picks = gold_picks_for(g, offsets, split.gold, preds)
        return Batch(g, offsets, forward, picks, len(idx))

    def score(split, results):
        # accuracy over (arg-1 type, arg-2 type, relation) decisions; boolean
        # families decode to the single asserted member, falling back to the
        # most probable one when the baseline asserts none or several
        hits = []
        for idx, assignment, table in results:
            for i in idx:
                i = int(i)
                for slot, gold_t in (((0), split.meta["t1"][i]),
                                     ((1), split.meta["t2"][i])):
                    chosen = [t for t in range(len(ENTITY_TYPES))
                              if assignment[f"etype[{i},{slot},{t}]"] == 1]
                    if len(chosen) != 1:
                        probs = [table.probs[table.index[f"etype[{i},{slot},{t}]"]][1]
                                 for t in range(len(ENTITY_TYPES))]
                        chosen = [int(np.argmax(probs))]
                    hits.append(chosen[0] == gold_t)
                chosen = [r for r in range(len(RELATIONS))
                          if assignment[f"rel[{i},{r}]"] == 1]
                if len(chosen) != 1:
                    probs = [table.probs[table.index[f"rel[{i},{r}]"]][1]
                             for r in range(len(RELATIONS))]
                    chosen = [int(np.argmax(probs))]
                hits.append(chosen[0] == split.meta["rel_gold"][i])
        return float(np.mean(hits))

    return TaskInstance(
        name="entity_relation", program_text=text, program=program,
        train=train, dev=dev, test=test, metric="accuracy",
        variants=VARIANTS, build_model=build_model, make_batch=make_batch,
        supervised_preds=("etype", "rel"), score=score)
