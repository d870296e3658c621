"""Shared task plumbing.

A TaskInstance owns the data splits, the constraint program, and the model
builders.  Training and evaluation only ever see Batches: a ground program
over the batch's decision variables plus a forward closure producing one flat
probability vector aligned with those variables.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Params
from ..lang.ast import ConstraintProgram
from ..lang.ground import GroundProgram


@dataclass
class Split:
    features: np.ndarray                  # (n, d)
    gold: dict                            # decision-variable key -> label index
    strat: np.ndarray | None = None       # stratification key per example
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.features)


@dataclass
class Batch:
    g: GroundProgram
    offsets: np.ndarray                   # per variable: start in the flat vector
    forward: object                       # callable(graph) -> flat probs Tensor
    gold_picks: np.ndarray                # flat indices for supervised CE
    n_examples: int
    extra_loss: object = None             # callable(graph) -> Tensor, or None

    @property
    def flat_size(self):
        last = self.g.variables[-1]
        return int(self.offsets[-1]) + len(last.labels) if self.g.variables else 0


def offsets_for(g: GroundProgram) -> np.ndarray:
    sizes = [len(v.labels) for v in g.variables]
    return np.concatenate(([0], np.cumsum(sizes)[:-1])).astype(np.int64) \
        if sizes else np.zeros(0, dtype=np.int64)


def gold_picks_for(g, offsets, gold, preds) -> np.ndarray:
    picks = []
    for v in g.variables:
        if v.pred not in preds:
            continue
        label = gold.get(v.key)
        if label is not None:
            picks.append(int(offsets[v.index]) + v.label_index(label))
    return np.asarray(picks, dtype=np.int64)


class TaskModel:
    """Base for per-task models: owns Params and produces the flat vector."""

    def __init__(self, params: Params):
        self.params = params


@dataclass
class TaskInstance:
    name: str
    program_text: str
    program: ConstraintProgram
    train: Split
    dev: Split
    test: Split
    metric: str                           # accuracy | macro-f1 | constraint-satisfaction
    variants: dict                        # "simple"/"strong" -> model settings
    build_model: object                   # callable(variant, seed) -> TaskModel
    make_batch: object                    # callable(model, split, idx, supervised) -> Batch
    supervised_preds: tuple = ()          # preds trained with CE under method=none
    sequence: object = None               # (start_mask, pair_mask) for decoders
    eval_group_size: int = 1              # examples per inference unit
    score: object = None                  # callable(split, results) -> metric value
    make_infer_batch: object = None       # grounding with instance-level givens

    def split(self, name):
        return {"train": self.train, "dev": self.dev, "test": self.test}[name]

    def eval_groups(self, split: Split):
        n = len(split)
        size = self.eval_group_size
        return [np.arange(i, min(i + size, n)) for i in range(0, n, size)]


def export_csv(split: Split, path, bindings_path=None):
    """Dump features/labels as `id,feature...,label`, bindings as JSON."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        n_feat = split.features.shape[1] if split.features.ndim == 2 else 0
        w.writerow(["id"] + [f"f{j}" for j in range(n_feat)] + ["label"])
        for i in range(len(split)):
            label = split.strat[i] if split.strat is not None else ""
            row = [i] + [f"{x:.10g}" for x in np.ravel(split.features[i])] + [label]
            w.writerow(row)
    if bindings_path is not None:
        payload = {}
        for key, val in split.meta.items():
            if isinstance(val, np.ndarray):
                payload[key] = val.tolist()
            else:
                payload[key] = val
        with open(bindings_path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
