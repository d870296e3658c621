"""Training-time constraint integration.

Three ways to fold a ground program into the loss:

  * primal-dual: loss = task + sum_k lambda_k * violation_k with nonnegative
    multipliers climbing on the violations they penalize (one per template by
    default, optionally one per ground constraint);
  * sampling loss: draw assignments from the model, weight each by its model
    probability, and pay -log of the satisfying weight fraction;
  * exact semantic loss: -log of the total probability mass on satisfying
    assignments, enumerated per connected component of the constraint graph.

All three are built as autodiff graph expressions so gradients reach the
model parameters; float reference versions (used as test oracles) mirror the
same arithmetic in plain numpy.
"""
from __future__ import annotations

import itertools
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, Params
from .errors import ResourceLimitError
from .infer import PredictionTable
from .lang.ground import GroundProgram, gf_atoms
from .lower.soft import soft_violation_tensor, to_soft_violation
from .nn import make_optimizer

log = logging.getLogger("nclkit.train")

EPS_FLOOR = 1e-8


@dataclass
class TrainConfig:
    optimizer: str = "sgd"
    lr: float = 0.1
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    method: str = "none"               # none | pd | sampl | seml
    n_samples: int = 100
    tnorm: str = "product"
    lambda_lr: float = 0.01
    lambda_mode: str = "template"      # template | ground
    eps_floor: float = EPS_FLOOR
    stop_at_full_satisfaction: bool = False
    supervised: bool = True            # cross-entropy on the task's labeled preds
    space_cap: int = 10**6
    constraint_scale: str = "mean"     # mean | sum over the batch's constraints

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("sample count must be at least 1")
        if self.lr <= 0 or self.lambda_lr < 0:
            raise ValueError("learning rates must be positive")
        if self.method not in ("none", "pd", "sampl", "seml"):
            raise ValueError(f"unknown integration method {self.method!r}")
        if self.constraint_scale not in ("mean", "sum"):
            raise ValueError("constraint_scale must be 'mean' or 'sum'")

    def fingerprint_dict(self):
        return {k: getattr(self, k) for k in (
            "optimizer", "lr", "batch_size", "epochs", "seed", "method",
            "n_samples", "tnorm", "lambda_lr", "lambda_mode", "eps_floor",
            "stop_at_full_satisfaction", "supervised")}


class Multipliers:
    """Nonnegative Lagrange multiplier per constraint (or template)."""

    def __init__(self, lr, mode="template"):
        self.lr = lr
        self.mode = mode
        self.values: dict = {}

    def key_of(self, constraint):
        return constraint.source[0] if self.mode == "template" else constraint.name

    def get(self, keys):
        return np.asarray([self.values.get(k, 0.0) for k in keys])

    def ascend(self, violations: dict):
        """lambda <- max(0, lambda + lr * violation)."""
        for key, viol in violations.items():
            new = self.values.get(key, 0.0) + self.lr * float(viol)
            self.values[key] = max(0.0, new)

    def max_value(self):
        return max(self.values.values(), default=0.0)


# ---------------------------------------------------------------- samples

def _draw_samples(rows, n_samples, rng):
    """(n_samples, n_vars) label indices, each column iid from its row."""
    out = np.empty((n_samples, len(rows)), dtype=np.int64)
    for j, p in enumerate(rows):
        out[:, j] = rng.choice(len(p), size=n_samples, p=p / p.sum())
    return out


def _all_assignments(sizes):
    return np.asarray(list(itertools.product(*(range(s) for s in sizes))),
                      dtype=np.int64)


def _log_weights(rows, samples):
    logs = [np.log(np.clip(p, 1e-300, 1.0)) for p in rows]
    out = np.zeros(len(samples))
    for j in range(samples.shape[1]):
        out += logs[j][samples[:, j]]
    return out


def sampling_loss(probs: PredictionTable, g: GroundProgram, n_samples, seed,
                  mode="per-constraint", exhaustive=False,
                  eps_floor=EPS_FLOOR) -> float:
    """Monte-Carlo constraint loss: each constraint pays -log of the
    probability-weighted fraction of drawn assignments that satisfy it.

    The weight of a sample for a constraint is the model probability of the
    sample restricted to the constraint's own variables; the other factors
    cancel between numerator and denominator in the exact ratio, and keeping
    them in the estimate would let irrelevant variables drown the signal.
    With exhaustive=True the "samples" are all assignments, each once, so the
    ratios are exact masses; in joint mode that equals the semantic loss.
    """
    if exhaustive:
        samples = _all_assignments([len(l) for l in probs.labels])
    else:
        rng = np.random.default_rng(seed)
        samples = _draw_samples(probs.probs, n_samples, rng)
    sat = g.eval_matrix(samples)  # (n_constraints, n_samples)
    loss = 0.0
    floored = 0
    if mode == "joint":
        logw = _log_weights(probs.probs, samples)
        w = np.exp(logw - logw.max())
        w /= w.sum()
        ratio = float(w[sat.all(axis=0)].sum())
        if ratio <= 0.0:
            floored += 1
        loss = -np.log(ratio + eps_floor)
    else:
        for i, c in enumerate(g.constraints):
            vs = sorted({a.var for a in gf_atoms(c.formula)})
            if vs:
                logw = np.zeros(len(samples))
                for v in vs:
                    logw += np.log(np.clip(probs.probs[v], 1e-300, 1.0)
                                   )[samples[:, v]]
                w = np.exp(logw - logw.max())
                w /= w.sum()
            else:
                w = np.full(len(samples), 1.0 / len(samples))
            ratio = float(w[sat[i]].sum())
            if ratio <= 0.0:
                floored += 1
            weight = c.weight if c.weight is not None else 1.0
            loss += -np.log(ratio + eps_floor) * weight
    if floored:
        log.warning("sampling loss: %d constraints had no satisfying samples "
                    "(ratio floored at %g)", floored, eps_floor)
    return float(loss)


def sampling_loss_graph(graph: Graph, flat, offsets, g: GroundProgram, cfg,
                        rng) -> tuple:
    """Graph version; gradients flow through the per-constraint sample
    weights.  Constraints sharing a formula skeleton are batched.

    Returns (loss tensor, floored-constraint count).
    """
    rows = [np.asarray(flat.value[offsets[v.index]:offsets[v.index] + len(v.labels)])
            for v in g.variables]
    samples = _draw_samples(rows, cfg.n_samples, rng)
    sat_all = g.eval_matrix(samples)                      # (C, S)
    floored = int((~sat_all.any(axis=1)).sum())
    if floored:
        log.warning("sampling loss: %d constraints had no satisfying samples",
                    floored)
    logp = graph.log(graph.clamp(flat, 1e-12, 1.0))

    # group by variable-count so index matrices stack rectangularly
    by_k: dict = {}
    for i, c in enumerate(g.constraints):
        vs = tuple(sorted({a.var for a in gf_atoms(c.formula)}))
        by_k.setdefault(len(vs), []).append((i, vs))

    terms = []
    for k, members in sorted(by_k.items()):
        idx_c = np.asarray([i for i, _ in members])
        weights = np.asarray([
            g.constraints[i].weight if g.constraints[i].weight is not None
            else 1.0 for i in idx_c])
        if k == 0:
            ratios = graph.const(sat_all[idx_c].mean(axis=1))
        else:
            var_mat = np.asarray([vs for _, vs in members])   # (C_k, k)
            # flat prob indices per (constraint, sample, variable)
            lab = samples[:, var_mat]                         # (S, C_k, k)
            flat_idx = offsets[var_mat][None] + lab
            flat_idx = np.transpose(flat_idx, (1, 0, 2))      # (C_k, S, k)
            logw = graph.reduce_sum(graph.take(logp, flat_idx), axis=2)
            w = graph.softmax(logw, axis=1)                   # (C_k, S)
            sat = sat_all[idx_c].astype(np.float64)
            ratios = graph.reduce_sum(w * graph.const(sat), axis=1)
        term = graph.log(ratios + cfg.eps_floor) * graph.const(weights)
        terms.append(graph.reduce_sum(term))
    if not terms:
        return graph.const(0.0), floored
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return graph.neg(acc), floored


# ---------------------------------------------------------------- semantic

def _components(g: GroundProgram):
    parent = list(range(len(g.variables)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb

    cons_vars = []
    for c in g.constraints:
        vs = sorted({a.var for a in gf_atoms(c.formula)})
        cons_vars.append(vs)
        for a, b in zip(vs, vs[1:]):
            union(a, b)
    comp_vars: dict[int, list] = {}
    for v in range(len(g.variables)):
        comp_vars.setdefault(find(v), []).append(v)
    comp_cons: dict[int, list] = {r: [] for r in comp_vars}
    for ci, vs in enumerate(cons_vars):
        if vs:
            comp_cons[find(vs[0])].append(ci)
    # only components that actually carry constraints matter: the rest
    # contribute probability mass one
    return [(vars_, comp_cons[root]) for root, vars_ in comp_vars.items()
            if comp_cons[root]]


_ROWS_CACHE: dict = {}


def _remap_gf(f, local):
    from .lang.ground import (GAnd, GAtom, GCallback, GConst, GCount, GIff,
                              GImplies, GNot, GOr)
    if isinstance(f, GAtom):
        return GAtom(local[f.var], f.label)
    if isinstance(f, (GConst, GCallback)):
        return f
    if isinstance(f, GNot):
        return GNot(_remap_gf(f.child, local))
    if isinstance(f, GAnd):
        return GAnd(tuple(_remap_gf(c, local) for c in f.children))
    if isinstance(f, GOr):
        return GOr(tuple(_remap_gf(c, local) for c in f.children))
    if isinstance(f, GImplies):
        return GImplies(_remap_gf(f.lhs, local), _remap_gf(f.rhs, local))
    if isinstance(f, GIff):
        return GIff(_remap_gf(f.lhs, local), _remap_gf(f.rhs, local))
    if isinstance(f, GCount):
        return GCount(f.kind, f.k, tuple(_remap_gf(c, local) for c in f.children))
    raise TypeError(f"not a ground formula: {f!r}")


def _satisfying_rows(g, comp_vars, comp_cons, space_cap):
    """Label rows over comp_vars satisfying every comp_cons constraint.

    Enumeration is chunked and filtered constraint-vectorized; structurally
    identical components (common when one template grounds over a batch)
    share one cached answer.
    """
    from .lang.ground import GroundConstraint, GroundProgram

    local = {v: i for i, v in enumerate(comp_vars)}
    sizes = tuple(len(g.variables[v].labels) for v in comp_vars)
    remapped = tuple(_remap_gf(g.constraints[ci].formula, local)
                     for ci in comp_cons)
    key = (remapped, sizes)
    hit = _ROWS_CACHE.get(key)
    if hit is not None:
        return hit

    space = 1
    for s in sizes:
        space *= s
        if space > space_cap:
            raise ResourceLimitError(
                f"assignment space exceeds {space_cap}; use the sampling loss")
    mini = GroundProgram()
    for i, s in enumerate(sizes):
        mini.add_variable(("c", i), tuple(range(s)))
    for i, f in enumerate(remapped):
        mini.add_constraint(GroundConstraint(f"k{i}", f, (f"k{i}", ())))

    keep = []
    chunk = []
    for combo in itertools.product(*(range(s) for s in sizes)):
        chunk.append(combo)
        if len(chunk) >= 65536:
            mat = np.asarray(chunk, dtype=np.int64)
            keep.append(mat[mini.eval_matrix(mat).all(axis=0)])
            chunk = []
    if chunk:
        mat = np.asarray(chunk, dtype=np.int64)
        keep.append(mat[mini.eval_matrix(mat).all(axis=0)])
    rows = np.concatenate(keep) if keep else \
        np.zeros((0, len(sizes)), dtype=np.int64)
    if len(_ROWS_CACHE) > 1024:
        _ROWS_CACHE.clear()
    _ROWS_CACHE[key] = rows
    return rows


def semantic_loss_exact(probs: PredictionTable, g: GroundProgram,
                        space_cap=10**6, eps_floor=EPS_FLOOR) -> float:
    """-log(mass + eps) where mass is the probability of satisfying every
    constraint, enumerated exactly per connected component (the component
    masses multiply, so decomposition loses nothing)."""
    total_log = 0.0
    for comp_vars, comp_cons in _components(g):
        rows = _satisfying_rows(g, comp_vars, comp_cons, space_cap)
        if len(rows) == 0:
            log.warning("semantic loss: unsatisfiable component, mass floored")
            total_log = -np.inf
            break
        logw = np.zeros(len(rows))
        for j, v in enumerate(comp_vars):
            logw += np.log(probs.probs[v])[rows[:, j]]
        shift = logw.max()
        total_log += shift + np.log(np.exp(logw - shift).sum())
    return float(-np.logaddexp(total_log, np.log(eps_floor)))


def semantic_loss_graph(graph: Graph, flat, offsets, g: GroundProgram,
                        cfg) -> object:
    """Training version of the semantic loss: -log(mass + eps) is applied per
    connected component.  The joint mass of a whole batch underflows any
    fixed floor (it is a product over examples), which would flatten every
    gradient; per-component flooring keeps them alive and sums to the same
    -log of the product when no component is near zero."""
    from .nn import logsumexp
    terms = []
    logp = graph.log(graph.clamp(flat, 1e-12, 1.0))
    for comp_vars, comp_cons in _components(g):
        rows = _satisfying_rows(g, comp_vars, comp_cons, cfg.space_cap)
        if len(rows) == 0:
            log.warning("semantic loss: unsatisfiable component, mass floored")
            terms.append(graph.const(-np.log(cfg.eps_floor)))
            continue
        idx = offsets[np.asarray(comp_vars)][None, :] + rows
        logw = graph.reduce_sum(graph.take(logp, idx), axis=1)
        mass = graph.exp(logsumexp(graph, logw))
        terms.append(graph.neg(graph.log(mass + cfg.eps_floor)))
    if not terms:
        return graph.const(0.0)
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return acc


# ---------------------------------------------------------------- pd step

def _violation_tensor(graph, flat, offsets, batch_g, tnorm):
    exprs = to_soft_violation(batch_g, tnorm)
    return soft_violation_tensor(graph, flat, exprs, offsets)


def _aggregate_keys(g: GroundProgram, m: Multipliers, scale="mean"):
    """(keys, loss matrix, ascent matrix) for the batch's constraints.

    The ascent always uses each multiplier's own mean violation.  The loss
    term sums lambda_t * mean-violation(t) per template; in per-ground mode
    scale="mean" additionally averages over the batch's constraints so the
    penalty stays commensurate with a mean cross-entropy.
    """
    keys = [m.key_of(c) for c in g.constraints]
    uniq = sorted(set(keys))
    pos = {k: i for i, k in enumerate(uniq)}
    mat = np.zeros((len(uniq), len(keys)))
    for j, k in enumerate(keys):
        mat[pos[k], j] = 1.0
    ascent = mat / np.maximum(mat.sum(axis=1, keepdims=True), 1.0)
    if m.mode == "ground" and scale == "mean":
        loss = mat / max(len(keys), 1)
    else:
        loss = ascent  # standard Lagrangian: sum over multiplier keys
    return uniq, loss, ascent


def violation_values(params, batch, tnorm):
    """Per-ground-constraint soft violations at the current parameters."""
    graph = Graph(params)
    flat = batch.forward(graph)
    viol = _violation_tensor(graph, flat, batch.offsets, batch.g, tnorm)
    return viol.value


def primal_dual_step(batch, params: Params, opt, m: Multipliers,
                     cfg: TrainConfig):
    """One descent step on task loss + sum_k lambda_k violation_k, then one
    ascent step on the multipliers using violations at the new parameters."""
    uniq, loss_mat, ascent_mat = _aggregate_keys(batch.g, m, cfg.constraint_scale)
    lam = m.get(uniq)

    params.zero_grad()
    graph = Graph(params)
    flat = batch.forward(graph)
    loss = _task_loss(graph, batch, flat, cfg)
    task_loss = float(loss.value)
    constraint_loss = 0.0
    if batch.g.constraints:
        viol = _violation_tensor(graph, flat, batch.offsets, batch.g, cfg.tnorm)
        per_key = graph.matmul(graph.const(loss_mat), graph.reshape(viol, (-1, 1)))
        weighted = graph.const(lam.reshape(-1, 1)) * per_key
        constraint_term = graph.reduce_sum(weighted)
        constraint_loss = float(constraint_term.value)
        loss = loss + constraint_term
    graph.backward(loss)
    opt.step()

    if batch.g.constraints and cfg.lambda_lr > 0:
        new_viol = violation_values(params, batch, cfg.tnorm)
        per_key_now = ascent_mat @ new_viol
        m.ascend(dict(zip(uniq, per_key_now)))
    return task_loss + constraint_loss, task_loss, constraint_loss, m


def _task_loss(graph, batch, flat, cfg):
    zero = graph.const(0.0)
    loss = zero
    if cfg.supervised and len(batch.gold_picks):
        logp = graph.log(graph.clamp(flat, 1e-12, 1.0))
        picked = graph.take(logp, batch.gold_picks)
        loss = loss + graph.neg(graph.reduce_mean(picked))
    if batch.extra_loss is not None:
        loss = loss + batch.extra_loss(graph)
    return loss


# ---------------------------------------------------------------- loop

@dataclass
class TrainResult:
    params: Params
    model: object = None
    trace: list = field(default_factory=list)
    aborted: bool = False
    multipliers: Multipliers | None = None
    ms_per_example: float = 0.0


def _monitor_violation(batch, params):
    """Violation rate of argmax predictions on a batch."""
    graph = Graph(params)
    flat = batch.forward(graph).value
    labels = np.empty(len(batch.g.variables), dtype=np.int64)
    for v in batch.g.variables:
        o = batch.offsets[v.index]
        labels[v.index] = int(np.argmax(flat[o:o + len(v.labels)]))
    if not batch.g.constraints:
        return 0.0
    sat = batch.g.eval_matrix(labels[None, :])[:, 0]
    return float(1.0 - sat.mean())


def train(task, variant, cfg: TrainConfig, split_name="train",
          trace_path=None, model=None):
    """Train a task model under the configured integration method.

    Returns the trained parameters plus a per-epoch trace; on NaN loss the
    last epoch's parameters are restored and the run marked aborted.
    """
    split = task.split(split_name)
    n = len(split)
    if n == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = task.build_model(variant, int(rng.integers(2**31)))
    params = model.params
    opt = make_optimizer(cfg.optimizer, params, cfg.lr)
    m = Multipliers(cfg.lambda_lr, cfg.lambda_mode)
    sample_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(1,)))

    batch_cache: dict = {}

    def get_batch(idx):
        key = (id(split), idx.tobytes())
        if key not in batch_cache:
            if len(batch_cache) > 64:
                batch_cache.clear()
            batch_cache[key] = task.make_batch(model, split, idx,
                                               cfg.supervised)
        return batch_cache[key]

    monitor_idx = np.arange(min(n, 256))
    trace = []
    fh = open(trace_path, "w") if trace_path else None
    aborted = False
    checkpoint = params.copy_values()
    t_start = time.monotonic()
    examples_seen = 0

    for epoch in range(cfg.epochs):
        t0 = time.monotonic()
        order = rng.permutation(n)
        epoch_task, epoch_cons, n_batches = 0.0, 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            batch = get_batch(idx)
            examples_seen += batch.n_examples
            if cfg.method == "pd":
                _, tl, cl, m = primal_dual_step(batch, params, opt, m, cfg)
            else:
                params.zero_grad()
                graph = Graph(params)
                flat = batch.forward(graph)
                loss = _task_loss(graph, batch, flat, cfg)
                tl = float(loss.value)
                cl = 0.0
                if cfg.method == "sampl" and batch.g.constraints:
                    extra, _ = sampling_loss_graph(
                        graph, flat, batch.offsets, batch.g, cfg, sample_rng)
                    if cfg.constraint_scale == "mean":
                        # mirror the primal-dual aggregation so labels and
                        # constraints coexist at any batch size
                        extra = extra * (1.0 / len(batch.g.constraints))
                    cl = float(extra.value)
                    loss = loss + extra
                elif cfg.method == "seml" and batch.g.constraints:
                    extra = semantic_loss_graph(
                        graph, flat, batch.offsets, batch.g, cfg)
                    cl = float(extra.value)
                    loss = loss + extra
                graph.backward(loss)
                opt.step()
            epoch_task += tl
            epoch_cons += cl
            n_batches += 1
            if not np.isfinite(epoch_task + epoch_cons):
                params.load_values(checkpoint)
                aborted = True
                log.warning("loss diverged at epoch %d; restoring checkpoint",
                            epoch)
                break
        if aborted:
            break
        monitor = get_batch(monitor_idx)
        vrate = _monitor_violation(monitor, params)
        rec = {"epoch": epoch,
               "task_loss": epoch_task / max(n_batches, 1),
               "constraint_loss": epoch_cons / max(n_batches, 1),
               "violation_rate": vrate,
               "ms": (time.monotonic() - t0) * 1000.0}
        trace.append(rec)
        if fh:
            fh.write(json.dumps(rec) + "\n")
        checkpoint = params.copy_values()
        if cfg.stop_at_full_satisfaction and vrate == 0.0:
            break
    if fh:
        fh.close()
    total_ms = (time.monotonic() - t_start) * 1000.0
    return TrainResult(params, model, trace, aborted, m,
                       total_ms / max(examples_seen, 1))
