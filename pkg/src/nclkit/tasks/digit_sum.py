"""Digit classification supervised only through pair sums.

Each training example is a pair of glyphs whose digit labels are hidden; the
only signal is that the two digits add up to a given S, expressed as a
disjunction over the feasible (m, S-m) splits.  The digit labels stay in the
splits for evaluation and for the direct-label reference run.
"""
from __future__ import annotations

import struct

import numpy as np

from ..autodiff import Params
from ..lang import Instance, ground_program, parse_program
from ..nn import build_mlp, cross_entropy
from .base import Batch, Split, TaskInstance, TaskModel, gold_picks_for, offsets_for
from .glyphs import render

PROGRAM = """\
domain Digit = 0 .. 9
domain Pair
domain Sum = 0 .. 18
pred d1(Pair, Digit) categorical
pred d2(Pair, Digit) categorical
constraint sum_match(p in Pair, s in Sum): exists m in Digit where m >= s - 9 & m <= s: d1(p, m) & d2(p, s - m)
"""

VARIANTS = {
    "simple": {"hidden": (24,), "mode": "digits"},
    "strong": {"hidden": (64,), "mode": "digits"},
    "baseline_sum": {"hidden": (64,), "mode": "baseline"},
    "explicit_sum": {"hidden": (64,), "mode": "explicit"},
}

# scatter matrix folding an outer product of two digit distributions into the
# 19-way sum distribution: P(S=s) = sum_k P(D1=k) P(D2=s-k)
_SUM_FOLD = np.zeros((100, 19))
for _k in range(10):
    for _j in range(10):
        _SUM_FOLD[_k * 10 + _j, _k + _j] = 1.0


class PairDigitModel(TaskModel):
    """One shared digit classifier applied to both images of a pair."""

    def __init__(self, variant, seed):
        super().__init__(Params())
        rng = np.random.default_rng(seed)
        spec = VARIANTS[variant]
        self.mode = spec["mode"]
        self.digit = build_mlp(self.params, [64, *spec["hidden"], 10], rng,
                               prefix="digit")
        if self.mode == "baseline":
            self.sum_head = build_mlp(self.params, [20, 64, 19], rng,
                                      prefix="sumhead")

    def pair_probs(self, graph, feats):
        x1 = graph.const(feats[:, :64])
        x2 = graph.const(feats[:, 64:])
        l1 = self.digit.apply(graph, x1)
        l2 = self.digit.apply(graph, x2)
        p1 = graph.softmax(l1, axis=1)
        p2 = graph.softmax(l2, axis=1)
        return l1, l2, p1, p2


def _make_split(n_pairs, rng, noise):
    d1 = rng.integers(0, 10, size=n_pairs)
    d2 = rng.integers(0, 10, size=n_pairs)
    feats = np.concatenate([render(d1, rng, noise), render(d2, rng, noise)], axis=1)
    gold = {}
    for i in range(n_pairs):
        gold[("d1", i)] = int(d1[i])
        gold[("d2", i)] = int(d2[i])
    sums = (d1 + d2).astype(np.int64)
    return Split(feats, gold, strat=sums, meta={"sums": sums})


def gen_digit_sum(n_pairs, seed, noise=0.2) -> TaskInstance:
    rng = np.random.default_rng(seed)
    program = parse_program(PROGRAM)
    train = _make_split(n_pairs, rng, noise)
    dev = _make_split(max(n_pairs // 5, 20), rng, noise)
    test = _make_split(max(n_pairs // 2, 20), rng, noise)

    def build_model(variant, seed):
        return PairDigitModel(variant, seed)

    def make_batch(model, split, idx, supervised):
        idx = np.asarray(idx)
        sums = split.meta["sums"]
        keys = []
        for i in idx:
            keys.append(("d1", int(i)))
            keys.append(("d2", int(i)))
        g = ground_program(program, Instance(
            domains={"Pair": [int(i) for i in idx]},
            bindings={"sum_match": [(int(i), int(sums[i])) for i in idx]},
            variables=keys))
        offsets = offsets_for(g)
        feats = split.features[idx]
        gold_sums = sums[idx]

        def forward(graph):
            _, _, p1, p2 = model.pair_probs(graph, feats)
            b = len(idx)
            cube = graph.concat([graph.reshape(p1, (b, 1, 10)),
                                 graph.reshape(p2, (b, 1, 10))], axis=1)
            return graph.reshape(cube, (-1,))

        extra = None
        if model.mode == "baseline":
            def extra(graph):
                l1, l2, _, _ = model.pair_probs(graph, feats)
                both = graph.concat([l1, l2], axis=1)
                logits = model.sum_head.apply(graph, both)
                return cross_entropy(graph, logits, gold_sums)
        elif model.mode == "explicit":
            def extra(graph):
                _, _, p1, p2 = model.pair_probs(graph, feats)
                b = len(idx)
                outer = graph.reshape(p1, (b, 10, 1)) * graph.reshape(p2, (b, 1, 10))
                sum_probs = graph.matmul(graph.reshape(outer, (b, 100)),
                                         graph.const(_SUM_FOLD))
                picked = graph.take(graph.clamp(sum_probs, 1e-12, 1.0),
                                    np.arange(b) * 19 + gold_sums)
                return graph.neg(graph.reduce_mean(graph.log(picked)))

        supervised_set = {"d1", "d2"} if (supervised and model.mode == "digits") \
            else set()
        picks = gold_picks_for(g, offsets, split.gold, supervised_set)
        return Batch(g, offsets, forward, picks, len(idx), extra_loss=extra)

    def score(split, results):
        gold, pred = [], []
        for idx, assignment, _table in results:
            for i in idx:
                gold.append(split.gold[("d1", int(i))])
                pred.append(assignment[f"d1[{int(i)}]"])
                gold.append(split.gold[("d2", int(i))])
                pred.append(assignment[f"d2[{int(i)}]"])
        return float(np.mean(np.asarray(gold) == np.asarray(pred)))

    return TaskInstance(
        name="digit_sum", program_text=PROGRAM, program=program,
        train=train, dev=dev, test=test, metric="accuracy",
        variants=VARIANTS, build_model=build_model, make_batch=make_batch,
        supervised_preds=("d1", "d2"), score=score)


# ---------------------------------------------------------------- IDX files

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_idx_images(path):
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise ValueError(f"{path}: truncated IDX header")
        magic, n, rows, cols = struct.unpack(">IIII", head)
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError(f"{path}: bad magic 0x{magic:08x} for an image file")
        payload = fh.read(n * rows * cols)
        if len(payload) < n * rows * cols:
            raise ValueError(f"{path}: truncated pixel payload "
                             f"({len(payload)} of {n * rows * cols} bytes)")
        return np.frombuffer(payload, dtype=np.uint8).reshape(n, rows * cols)


def _read_idx_labels(path):
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise ValueError(f"{path}: truncated IDX header")
        magic, n = struct.unpack(">II", head)
        if magic != IDX_LABELS_MAGIC:
            raise ValueError(f"{path}: bad magic 0x{magic:08x} for a label file")
        payload = fh.read(n)
        if len(payload) < n:
            raise ValueError(f"{path}: truncated label payload")
        return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def load_mnist_idx(images_path, labels_path, n_pairs=None, seed=0,
                   downsample_to=8) -> TaskInstance:
    """Real-MNIST variant of the digit-sum task from IDX files.

    Images are average-pooled to 8x8 so the same models apply.
    """
    images = _read_idx_images(images_path)
    labels = _read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise ValueError("image and label counts differ")
    side = int(np.sqrt(images.shape[1]))
    k = side // downsample_to
    imgs = images.reshape(-1, side, side).astype(np.float64) / 255.0
    if k > 1:
        imgs = imgs[:, :k * downsample_to, :k * downsample_to]
        imgs = imgs.reshape(-1, downsample_to, k, downsample_to, k).mean(axis=(2, 4))
    flat = imgs.reshape(len(images), -1)

    rng = np.random.default_rng(seed)
    n_pairs = n_pairs or len(images) // 2
    order = rng.permutation(len(images))[:2 * n_pairs]
    a, b = order[:n_pairs], order[n_pairs:]

    synthetic = gen_digit_sum(10, seed)  # reuse program/model/batch plumbing

    def split_from(a_idx, b_idx):
        feats = np.concatenate([flat[a_idx], flat[b_idx]], axis=1)
        gold = {}
        for i in range(len(a_idx)):
            gold[("d1", i)] = int(labels[a_idx[i]])
            gold[("d2", i)] = int(labels[b_idx[i]])
        sums = labels[a_idx] + labels[b_idx]
        return Split(feats, gold, strat=sums, meta={"sums": sums.astype(np.int64)})

    cut = max(n_pairs * 4 // 5, 1)
    train = split_from(a[:cut], b[:cut])
    test = split_from(a[cut:], b[cut:]) if cut < n_pairs else train
    return TaskInstance(
        name="digit_sum_mnist", program_text=synthetic.program_text,
        program=synthetic.program, train=train, dev=test, test=test,
        metric="accuracy", variants=VARIANTS,
        build_model=synthetic.build_model, make_batch=synthetic.make_batch,
        supervised_preds=("d1", "d2"), score=synthetic.score)
