"""Two-level classification: 20 child classes under 5 parents, with the
child-implies-parent rule as the constraint."""
from __future__ import annotations

import numpy as np

from ..autodiff import Params
from ..lang import Instance, ground_program, parse_program
from ..nn import build_mlp
from .base import Batch, Split, TaskInstance, TaskModel, gold_picks_for, offsets_for

N_CHILD = 20
N_PARENT = 5
FEAT_DIM = 16

VARIANTS = {"simple": {"hidden": ()}, "strong": {"hidden": (48,)}}


def parent_of(child):
    return child // (N_CHILD // N_PARENT)


def hierarchy_program_text():
    lines = [
        "domain Example",
        f"domain Child = 0 .. {N_CHILD - 1}",
        f"domain Parent = 0 .. {N_PARENT - 1}",
        "pred child(Example, Child) categorical",
        "pred parent(Example, Parent) categorical",
    ]
    for c in range(N_CHILD):
        lines.append(f"constraint sub{c}(x in Example): "
                     f"child(x, {c}) -> parent(x, {parent_of(c)})")
    return "\n".join(lines) + "\n"


class HierarchyModel(TaskModel):
    def __init__(self, variant, seed):
        super().__init__(Params())
        rng = np.random.default_rng(seed)
        hidden = VARIANTS[variant]["hidden"]
        self.child = build_mlp(self.params, [FEAT_DIM, *hidden, N_CHILD], rng,
                               prefix="child")
        self.parent = build_mlp(self.params, [FEAT_DIM, *hidden, N_PARENT], rng,
                                prefix="parent")


def _make_split(n, rng, parent_centroids, child_offsets, noise):
    classes = np.arange(n) % N_CHILD
    classes = classes[rng.permutation(n)]
    feats = (parent_centroids[parent_of(classes)] + child_offsets[classes]
             + rng.normal(0, noise, size=(n, FEAT_DIM)))
    gold = {}
    for i, c in enumerate(classes):
        gold[("child", i)] = int(c)
        gold[("parent", i)] = int(parent_of(int(c)))
    return Split(feats, gold, strat=classes)


def gen_hierarchy(n, seed, noise=0.6) -> TaskInstance:
    if n < 2 * N_CHILD:
        raise ValueError("need at least two examples per child class")
    rng = np.random.default_rng(seed)
    parent_centroids = rng.normal(0, 1.0, size=(N_PARENT, FEAT_DIM))
    child_offsets = rng.normal(0, 0.5, size=(N_CHILD, FEAT_DIM))
    text = hierarchy_program_text()
    program = parse_program(text)
    train = _make_split(n, rng, parent_centroids, child_offsets, noise)
    dev = _make_split(max(n // 5, N_CHILD), rng, parent_centroids, child_offsets, noise)
    test = _make_split(max(n // 2, N_CHILD), rng, parent_centroids, child_offsets, noise)

    def build_model(variant, seed):
        return HierarchyModel(variant, seed)

    def make_batch(model, split, idx, supervised):
        idx = np.asarray(idx)
        keys = []
        for i in idx:
            keys.append(("child", int(i)))
            keys.append(("parent", int(i)))
        bindings = {f"sub{c}": [(int(i),) for i in idx] for c in range(N_CHILD)}
        g = ground_program(program, Instance(
            domains={"Example": [int(i) for i in idx]},
            bindings=bindings, variables=keys))
        offsets = offsets_for(g)
        feats = split.features[idx]

        def forward(graph):
            x = graph.const(feats)
            pc = graph.softmax(model.child.apply(graph, x), axis=1)
            pp = graph.softmax(model.parent.apply(graph, x), axis=1)
            return graph.reshape(graph.concat([pc, pp], axis=1), (-1,))

        preds = {"child", "parent"} if supervised else set()
        picks = gold_picks_for(g, offsets, split.gold, preds)
        return Batch(g, offsets, forward, picks, len(idx))

    def score(split, results):
        # average of child and parent accuracy
        hits = {"child": [], "parent": []}
        for idx, assignment, _table in results:
            for i in idx:
                for pred in ("child", "parent"):
                    hits[pred].append(
                        assignment[f"{pred}[{int(i)}]"] == split.gold[(pred, int(i))])
        return float((np.mean(hits["child"]) + np.mean(hits["parent"])) / 2.0)

    return TaskInstance(
        name="hierarchy", program_text=text, program=program,
        train=train, dev=dev, test=test, metric="accuracy",
        variants=VARIANTS, build_model=build_model, make_batch=make_batch,
        supervised_preds=("child", "parent"), score=score)
