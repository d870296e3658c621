"""Digit recognition with one independent boolean classifier per class.

Nothing ties the ten classifiers together except the mutual-exclusivity
constraint, which is the whole point: the baseline can answer "this is a 3
and also an 8", and constrained inference cannot.
"""
from __future__ import annotations

import numpy as np

from ..autodiff import Graph, Params
from ..lang import Instance, ground_program, parse_program
from ..nn import build_mlp
from .base import Batch, Split, TaskInstance, TaskModel, gold_picks_for, offsets_for
from .glyphs import balanced_classes, render

PROGRAM = """\
domain Digit = 0 .. 9
domain Image
pred digit(Image, Digit) boolean
constraint excl(img in Image): forall x in Digit: digit(img, x) -> !exists y in Digit where y != x: digit(img, y)
"""

VARIANTS = {"simple": {"hidden": ()}, "strong": {"hidden": (48,)}}


class DigitModel(TaskModel):
    """Ten separate binary MLPs, one per digit class."""

    def __init__(self, variant, seed):
        super().__init__(Params())
        rng = np.random.default_rng(seed)
        hidden = VARIANTS[variant]["hidden"]
        widths = [64, *hidden, 2]
        self.heads = [build_mlp(self.params, widths, rng, prefix=f"digit{d}")
                      for d in range(10)]

    def head_probs(self, graph: Graph, features):
        x = graph.const(features)
        outs = []
        for head in self.heads:
            logits = head.apply(graph, x)              # (B, 2)
            outs.append(graph.softmax(logits, axis=1))
        return outs


def _make_split(n, rng, noise):
    classes = balanced_classes(n, rng)
    feats = render(classes, rng, noise)
    gold = {}
    for i, c in enumerate(classes):
        for d in range(10):
            gold[("digit", i, d)] = 1 if d == int(c) else 0
    return Split(feats, gold, strat=classes)


def gen_digit_exclusive(n, seed, noise=0.2) -> TaskInstance:
    if n < 10:
        raise ValueError("need at least one example per class")
    rng = np.random.default_rng(seed)
    program = parse_program(PROGRAM)
    train = _make_split(n, rng, noise)
    dev = _make_split(max(n // 5, 10), rng, noise)
    test = _make_split(max(n // 2, 10), rng, noise)

    def build_model(variant, seed):
        return DigitModel(variant, seed)

    def make_batch(model, split, idx, supervised):
        idx = np.asarray(idx)
        keys = [("digit", int(i), d) for i in idx for d in range(10)]
        g = ground_program(program, Instance(
            domains={"Image": [int(i) for i in idx]},
            bindings={"excl": [(int(i),) for i in idx]},
            variables=keys))
        offsets = offsets_for(g)
        feats = split.features[idx]

        def forward(graph):
            outs = model.head_probs(graph, feats)       # 10 x (B, 2)
            shaped = [graph.reshape(o, (len(idx), 1, 2)) for o in outs]
            cube = graph.concat(shaped, axis=1)         # (B, 10, 2)
            return graph.reshape(cube, (-1,))

        picks = gold_picks_for(g, offsets, split.gold, {"digit"}) \
            if supervised else np.zeros(0, dtype=np.int64)
        return Batch(g, offsets, forward, picks, len(idx))

    def score(split, results):
        # averaged per-class F1 over the ten binary classifiers
        scores = []
        for d in range(10):
            gold, pred = [], []
            for idx, assignment, _table in results:
                for i in idx:
                    gold.append(split.gold[("digit", int(i), d)])
                    pred.append(assignment[f"digit[{int(i)},{d}]"])
            tp = sum(1 for g_, p in zip(gold, pred) if g_ == 1 and p == 1)
            fp = sum(1 for g_, p in zip(gold, pred) if g_ == 0 and p == 1)
            fn = sum(1 for g_, p in zip(gold, pred) if g_ == 1 and p == 0)
            if tp == 0:
                scores.append(0.0)
            else:
                prec = tp / (tp + fp)
                rec = tp / (tp + fn)
                scores.append(2 * prec * rec / (prec + rec))
        return float(np.mean(scores))

    return TaskInstance(
        name="digit_exclusive", program_text=PROGRAM, program=program,
        train=train, dev=dev, test=test, metric="macro-f1",
        variants=VARIANTS, build_model=build_model, make_batch=make_batch,
        supervised_preds=("digit",), score=score)
