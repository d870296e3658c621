"""BIO tagging with valid-transition structure.

Tag encoding: O = 0, then (B-T, I-T) pairs per entity type T, so B of type k
is 1 + 2k and I of type k is 2 + 2k.  An I tag must extend a same-type B or I
tag, and a sequence cannot open with an I tag.  The same structure is exposed
twice: as logical constraints on adjacent positions and as a transition mask
for the sequence decoders.
"""
from __future__ import annotations

import numpy as np

from ..autodiff import Params
from ..evaluate import macro_f1
from ..lang import Instance, ground_program, parse_program
from ..nn import build_mlp
from .base import Batch, Split, TaskInstance, TaskModel, gold_picks_for, offsets_for

TOKEN_DIM = 10

VARIANTS = {"simple": {"hidden": ()}, "strong": {"hidden": (32,)}}


def tag_names(types):
    names = ["O"]
    for t in types:
        names += [f"B-{t}", f"I-{t}"]
    return names


def b_tag(k):
    return 1 + 2 * k


def i_tag(k):
    return 2 + 2 * k


def bio_program_text(types):
    n = len(types)
    lines = [
        "domain Seq",
        "domain Pos",
        f"domain Tag = 0 .. {2 * n}",
        "pred tag(Seq, Pos, Tag) categorical",
    ]
    for k, t in enumerate(types):
        name = t.lower()
        lines.append(
            f"constraint before_{name}(s in Seq, i in Pos): "
            f"tag(s, i, {i_tag(k)}) -> tag(s, i - 1, {b_tag(k)}) | "
            f"tag(s, i - 1, {i_tag(k)})")
        lines.append(f"constraint start_{name}(s in Seq): !tag(s, 0, {i_tag(k)})")
    return "\n".join(lines) + "\n"


def transition_masks(n_types):
    """(start_allowed, pair_allowed) boolean masks matching the program."""
    n_tags = 1 + 2 * n_types
    start = np.ones(n_tags, dtype=bool)
    pair = np.ones((n_tags, n_tags), dtype=bool)
    for k in range(n_types):
        i = i_tag(k)
        start[i] = False
        pair[:, i] = False
        pair[b_tag(k), i] = True
        pair[i, i] = True
    return start, pair


def valid_sequence(tags, n_types):
    start, pair = transition_masks(n_types)
    tags = list(tags)
    if not tags:
        return True
    if not start[tags[0]]:
        return False
    return all(pair[a, b] for a, b in zip(tags, tags[1:]))


class BioModel(TaskModel):
    """Shared per-token classifier; structure comes only from constraints."""

    def __init__(self, variant, seed, n_tags):
        super().__init__(Params())
        rng = np.random.default_rng(seed)
        hidden = VARIANTS[variant]["hidden"]
        self.n_tags = n_tags
        self.head = build_mlp(self.params, [TOKEN_DIM, *hidden, n_tags], rng,
                              prefix="tagger")


def _sample_tags(length, n_types, rng):
    tags = []
    while len(tags) < length:
        if rng.random() < 0.5:
            tags.append(0)
            continue
        k = int(rng.integers(n_types))
        span = min(int(rng.integers(1, 4)), length - len(tags))
        tags.append(b_tag(k))
        tags.extend([i_tag(k)] * (span - 1))
    return tags[:length]


def _make_split(n_seqs, rng, types, tag_templates, noise, min_len=4, max_len=12):
    n_tags = 1 + 2 * len(types)
    lengths = rng.integers(min_len, max_len + 1, size=n_seqs)
    feats = np.zeros((n_seqs, max_len, TOKEN_DIM))
    gold = {}
    gold_tags = np.full((n_seqs, max_len), -1, dtype=np.int64)
    for s in range(n_seqs):
        tags = _sample_tags(int(lengths[s]), len(types), rng)
        for i, t in enumerate(tags):
            feats[s, i] = tag_templates[t] + rng.normal(0, noise, TOKEN_DIM)
            gold[("tag", s, i)] = int(t)
            gold_tags[s, i] = t
    strat = np.asarray([gold_tags[s, 0] for s in range(n_seqs)])
    return Split(feats, gold, strat=strat,
                 meta={"lengths": lengths.astype(np.int64), "gold_tags": gold_tags})


def _bio_task(program, text, types, train, dev, test, name) -> TaskInstance:
    n_tags = 1 + 2 * len(types)
    max_len = train.features.shape[1]

    def build_model(variant, seed):
        return BioModel(variant, seed, n_tags)

    def make_batch(model, split, idx, supervised):
        idx = np.asarray(idx)
        lengths = split.meta["lengths"]
        keys, token_rows = [], []
        for s in idx:
            for i in range(int(lengths[s])):
                keys.append(("tag", int(s), i))
                token_rows.append(split.features[s, i])
        tokens = np.asarray(token_rows).reshape(len(keys), TOKEN_DIM)
        bindings = {}
        for t in types:
            nm = t.lower()
            bindings[f"before_{nm}"] = [
                (int(s), i) for s in idx for i in range(1, int(lengths[s]))]
            bindings[f"start_{nm}"] = [(int(s),) for s in idx]
        g = ground_program(program, Instance(
            domains={"Seq": [int(s) for s in idx], "Pos": int(max_len)},
            bindings=bindings, variables=keys))
        offsets = offsets_for(g)

        def forward(graph):
            logits = model.head.apply(graph, graph.const(tokens))
            return graph.reshape(graph.softmax(logits, axis=1), (-1,))

        picks = gold_picks_for(g, offsets, split.gold,
                               {"tag"} if supervised else set())
        return Batch(g, offsets, forward, picks, len(idx))

    def score(split, results):
        lengths = split.meta["lengths"]
        gold, pred = [], []
        for idx, assignment, _table in results:
            for s in idx:
                for i in range(int(lengths[s])):
                    gold.append(split.gold[("tag", int(s), i)])
                    pred.append(assignment[f"tag[{int(s)},{i}]"])
        return macro_f1(np.asarray(gold), np.asarray(pred),
                        classes=range(1, n_tags))  # entity tags only

    return TaskInstance(
        name=name, program_text=text, program=program,
        train=train, dev=dev, test=test, metric="macro-f1",
        variants=VARIANTS, build_model=build_model, make_batch=make_batch,
        supervised_preds=("tag",), sequence=transition_masks(len(types)),
        score=score)


def gen_bio(n, seed, types=("PER", "ORG", "LOC", "MISC"), noise=0.9,
            ) -> TaskInstance:
    rng = np.random.default_rng(seed)
    n_tags = 1 + 2 * len(types)
    tag_templates = rng.normal(0, 1.0, size=(n_tags, TOKEN_DIM))
    text = bio_program_text(types)
    program = parse_program(text)
    train = _make_split(n, rng, types, tag_templates, noise)
    dev = _make_split(max(n // 5, 10), rng, types, tag_templates, noise)
    test = _make_split(max(n // 2, 10), rng, types, tag_templates, noise)
    return _bio_task(program, text, types, train, dev, test, "bio")


# ---------------------------------------------------------------- CoNLL

def _parse_conll(path):
    """Column text, one token per line, blank line between sentences; the tag
    is the last column."""
    sentences, current = [], []
    n_cols = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                if current:
                    sentences.append(current)
                    current = []
                continue
            parts = line.split()
            if n_cols is None:
                n_cols = len(parts)
            elif len(parts) != n_cols:
                raise ValueError(
                    f"{path}:{lineno}: expected {n_cols} columns, found {len(parts)}")
            current.append((parts[0], parts[-1]))
    if current:
        sentences.append(current)
    return sentences


def load_conll(path, seed=0, max_len=12, noise=0.9) -> TaskInstance:
    """CoNLL-format file to a TaskInstance; tokens are embedded by hashed
    template + noise so the synthetic models apply unchanged."""
    sentences = _parse_conll(path)
    types = []
    for sent in sentences:
        for _, tag in sent:
            if tag != "O":
                t = tag.split("-", 1)[1]
                if t not in types:
                    types.append(t)
    types = sorted(types)
    names = tag_names(types)
    tag_index = {n: i for i, n in enumerate(names)}

    rng = np.random.default_rng(seed)
    tag_templates = rng.normal(0, 1.0, size=(len(names), TOKEN_DIM))

    sentences = [s[:max_len] for s in sentences if len(s) >= 1]
    n = len(sentences)
    feats = np.zeros((n, max_len, TOKEN_DIM))
    gold = {}
    lengths = np.zeros(n, dtype=np.int64)
    for s, sent in enumerate(sentences):
        lengths[s] = len(sent)
        for i, (_token, tag) in enumerate(sent):
            t = tag_index[tag]
            feats[s, i] = tag_templates[t] + rng.normal(0, noise, TOKEN_DIM)
            gold[("tag", s, i)] = t
    strat = np.asarray([gold[("tag", s, 0)] for s in range(n)])
    split = Split(feats, gold, strat=strat,
                  meta={"lengths": lengths,
                        "gold_tags": np.full((n, max_len), -1)})
    text = bio_program_text(types)
    program = parse_program(text)
    cut = max(n * 4 // 5, 1)
    train = _subset_split(split, np.arange(cut))
    test = _subset_split(split, np.arange(cut, n)) if cut < n else train
    return _bio_task(program, text, types, train, test, test, "bio_conll")


def _subset_split(split, rows):
    gold = {}
    pos = {int(r): i for i, r in enumerate(rows)}
    for key, val in split.gold.items():
        if int(key[1]) in pos:
            gold[(key[0], pos[int(key[1])]) + key[2:]] = val
    return Split(split.features[rows], gold, split.strat[rows],
                 {"lengths": split.meta["lengths"][rows],
                  "gold_tags": split.meta["gold_tags"][rows]})
