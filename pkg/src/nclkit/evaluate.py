"""The extended evaluation criteria: task metric, constraint violation,
wall-clock per example, low-data splits, and the comparison report.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass

import numpy as np

from .lang.ground import GroundProgram, eval_ground

log = logging.getLogger("nclkit.eval")


# ---------------------------------------------------------------- metrics

def violation_rate(predictions, g: GroundProgram) -> float:
    """Fraction of ground constraints falsified by a complete assignment;
    an empty constraint set counts as zero violation."""
    if not g.constraints:
        return 0.0
    sat = eval_ground(g, predictions)
    return float(1.0 - sat.mean())


def accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        return 0.0
    return float((y_true == y_pred).mean())


def macro_f1(y_true, y_pred, classes=None) -> float:
    """Unweighted mean of per-class F1; a class absent from both gold and
    predictions scores 0 and is logged."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    if classes is None:
        classes = sorted(set(y_true.tolist()) | set(y_pred.tolist()))
    scores = []
    for c in classes:
        tp = float(((y_pred == c) & (y_true == c)).sum())
        fp = float(((y_pred == c) & (y_true != c)).sum())
        fn = float(((y_pred != c) & (y_true == c)).sum())
        if tp == 0.0 and (fp > 0 or fn > 0):
            scores.append(0.0)
            continue
        if tp == 0.0:
            log.info("macro-F1: class %r absent from gold and predictions", c)
            scores.append(0.0)
            continue
        precision = tp / (tp + fp)
        recall = tp / (tp + fn)
        scores.append(2 * precision * recall / (precision + recall))
    return float(np.mean(scores)) if scores else 0.0


def task_metrics(predictions, gold, kind, g: GroundProgram | None = None,
                 classes=None) -> float:
    """kind: accuracy | macro-f1 | constraint-satisfaction."""
    if kind == "accuracy":
        return accuracy(gold, predictions)
    if kind == "macro-f1":
        return macro_f1(gold, predictions, classes)
    if kind == "constraint-satisfaction":
        if g is None:
            raise ValueError("constraint-satisfaction needs the ground program")
        return 1.0 - violation_rate(predictions, g)
    raise ValueError(f"unknown metric kind {kind!r}")


# ---------------------------------------------------------------- timing

def time_block(phase, f, n_examples, repeats=3):
    """Median wall-clock per example over `repeats` runs of f(), in ms.

    Returns (ms_per_example, stats); the spread across repetitions is logged
    and reported in stats.
    """
    if phase not in ("train", "infer"):
        raise ValueError(f"unknown phase {phase!r}")
    if n_examples <= 0:
        raise ValueError("example count must be known and positive")
    times = []
    result = None
    for _ in range(repeats):
        t0 = time.monotonic()
        result = f()
        times.append((time.monotonic() - t0) * 1000.0 / n_examples)
    times.sort()
    median = times[len(times) // 2]
    stats = {"phase": phase, "repeats": repeats, "ms_min": times[0],
             "ms_median": median, "ms_max": times[-1]}
    log.info("%s timing: median %.3f ms/example (min %.3f, max %.3f)",
             phase, median, times[0], times[-1])
    return median, stats, result


# ---------------------------------------------------------------- low data

def split_low_data(split, fraction, seed):
    """Deterministic stratified subset with round(fraction * n) examples.

    Stratifies by the split's label key when present; per-class counts are
    apportioned by largest remainder so the total is exact.
    """
    from .tasks.base import Split

    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    n = len(split)
    if fraction == 1.0:
        return split
    target = int(round(fraction * n))
    rng = np.random.default_rng(seed)
    if split.strat is None:
        chosen = np.sort(rng.permutation(n)[:target])
    else:
        strat = np.asarray(split.strat)
        classes, counts = np.unique(strat, return_counts=True)
        quotas = counts * target / n
        base = np.floor(quotas).astype(int)
        rest = target - int(base.sum())
        order = np.argsort(-(quotas - base), kind="stable")
        base[order[:rest]] += 1
        if (base == 0).any():
            log.warning("low-data split at %.3g leaves %d classes empty",
                        fraction, int((base == 0).sum()))
        picks = []
        for c, k in zip(classes, base):
            members = np.nonzero(strat == c)[0]
            picks.append(rng.permutation(members)[:k])
        chosen = np.sort(np.concatenate(picks))
    gold = {}
    index_of = {int(g): i for i, g in enumerate(chosen)}
    for key, label in split.gold.items():
        if int(key[1]) in index_of:
            gold[(key[0], index_of[int(key[1])]) + key[2:]] = label
    meta = _remap_meta(split.meta, index_of, n)
    strat = split.strat[chosen] if split.strat is not None else None
    return Split(split.features[chosen], gold, strat, meta)


def _remap_meta(meta, index_of, n_original):
    """Arrays of length n shrink with the subset; keys ending `_ids` hold
    tuples of example ids and are filtered to surviving examples."""
    out = {}
    keep = np.asarray(sorted(index_of, key=index_of.get))
    for key, val in meta.items():
        if key.endswith("_ids"):
            rows = []
            for tup in np.asarray(val).reshape(len(val), -1) if len(val) else []:
                if all(int(x) in index_of for x in tup):
                    rows.append(tuple(index_of[int(x)] for x in tup))
            out[key] = rows
        elif isinstance(val, np.ndarray) and val.ndim >= 1 and len(val) == n_original:
            out[key] = val[keep]
        else:
            out[key] = val
    return out


# ---------------------------------------------------------------- report

@dataclass
class EvalReport:
    task: str
    train_method: str
    infer_method: str
    variant: str
    fraction: float
    seed: int
    metric_name: str
    metric_value: float
    violation: float
    train_ms_per_example: float
    infer_ms_per_example: float
    fingerprint: str

    @property
    def method_id(self):
        return f"{self.train_method}+{self.infer_method}"

    def row_key(self):
        return (self.task, self.variant, self.fraction,
                self.train_method, self.infer_method)


def config_fingerprint(train_cfg_dict, program_text) -> str:
    payload = json.dumps(train_cfg_dict, sort_keys=True) + "\n" + program_text
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _median(xs):
    xs = sorted(xs)
    return xs[len(xs) // 2]


def make_report(runs: list[EvalReport], out_dir=None):
    """Aggregate runs into report.json (deterministic), timings.json
    (wall-clock, excluded from the determinism contract), and report.txt."""
    if not runs:
        raise ValueError("no runs to report")
    rows = {}
    for r in runs:
        rows.setdefault(r.row_key(), []).append(r)

    baselines = {}
    for key, group in rows.items():
        task, variant, fraction, train_method, infer_method = key
        if train_method == "none" and infer_method == "argmax":
            baselines[(task, variant, fraction)] = _median(
                [g.metric_value for g in group])

    report_rows = []
    timing_rows = []
    for key in sorted(rows):
        group = sorted(rows[key], key=lambda r: r.seed)
        task, variant, fraction, train_method, infer_method = key
        metric = _median([g.metric_value for g in group])
        base = baselines.get((task, variant, fraction))
        delta = None if base is None else metric - base
        report_rows.append({
            "task": task,
            "variant": variant,
            "fraction": fraction,
            "train_method": train_method,
            "infer_method": infer_method,
            "metric_name": group[0].metric_name,
            "metric_median": metric,
            "delta_vs_baseline": delta,
            "violation_median": _median([g.violation for g in group]),
            "seeds": [g.seed for g in group],
            "per_seed_metric": [g.metric_value for g in group],
            "per_seed_violation": [g.violation for g in group],
            "fingerprint": group[0].fingerprint,
        })
        timing_rows.append({
            "task": task, "variant": variant, "fraction": fraction,
            "train_method": train_method, "infer_method": infer_method,
            "train_ms_per_example": [g.train_ms_per_example for g in group],
            "infer_ms_per_example": [g.infer_ms_per_example for g in group],
        })

    report = {"rows": report_rows}
    text = _render_table(report_rows, timing_rows)
    if out_dir is not None:
        import os
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out_dir, "timings.json"), "w") as fh:
            json.dump({"rows": timing_rows}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out_dir, "report.txt"), "w") as fh:
            fh.write(text)
    return report, timing_rows, text


def _render_table(report_rows, timing_rows):
    header = ["task", "variant", "frac", "method", "metric", "value",
              "delta", "violation", "train ms/ex", "infer ms/ex"]
    lines = []
    for row, timing in zip(report_rows, timing_rows):
        delta = row["delta_vs_baseline"]
        lines.append([
            row["task"], row["variant"], f"{row['fraction']:g}",
            f"{row['train_method']}+{row['infer_method']}",
            row["metric_name"], f"{row['metric_median']:.4f}",
            "n/a" if delta is None else f"{delta:+.4f}",
            f"{row['violation_median']:.4f}",
            f"{_median(timing['train_ms_per_example']):.3f}",
            f"{_median(timing['infer_ms_per_example']):.3f}",
        ])
    widths = [max(len(header[i]), *(len(l[i]) for l in lines)) if lines
              else len(header[i]) for i in range(len(header))]
    out = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for l in lines:
        out.append("  ".join(c.ljust(w) for c, w in zip(l, widths)))
    return "\n".join(out) + "\n"
