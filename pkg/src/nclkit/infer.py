"""Constrained MAP inference.

`ilp_map` maximizes the summed log-probability of chosen labels over the
feasible 0-1 points of a LinearSystem by depth-first branch and bound: unit
propagation over the rows prunes label candidates, and the bound at a node is
the sum over variables of their best still-feasible label log-probability.
`viterbi_decode`/`astar_decode` solve the sequential special case exactly;
`exhaustive_map` enumerates everything and is the test oracle.
"""
from __future__ import annotations

import csv
import heapq
import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import GroundingError
from .lang.ground import GroundProgram
from .lower.linear import LinearSystem, parse_lp_text

PROB_FLOOR = 1e-12
SUM_TOL = 1e-9


class PredictionTable:
    """Per decision variable: label set and a categorical distribution."""

    def __init__(self, names, labels, probs):
        if not (len(names) == len(labels) == len(probs)):
            raise ValueError("names, labels, probs must align")
        self.names = list(names)
        self.labels = [tuple(l) for l in labels]
        self.probs = []
        for name, lab, row in zip(self.names, self.labels, probs):
            row = np.asarray(row, dtype=np.float64)
            if row.shape != (len(lab),):
                raise ValueError(f"{name}: {len(lab)} labels, {row.shape} probs")
            if abs(float(row.sum()) - 1.0) > SUM_TOL:
                raise ValueError(f"{name}: probabilities sum to {row.sum():.12f}")
            self.probs.append(np.clip(row, PROB_FLOOR, 1.0))
        self.index = {n: i for i, n in enumerate(self.names)}
        self._logs = None

    def __len__(self):
        return len(self.names)

    @classmethod
    def from_ground(cls, g: GroundProgram, rows):
        """rows: per variable of g (same order), a probability vector."""
        return cls([v.name for v in g.variables],
                   [v.labels for v in g.variables], rows)

    @classmethod
    def from_flat(cls, g: GroundProgram, flat, offsets):
        rows = []
        flat = np.asarray(flat, dtype=np.float64)
        for v in g.variables:
            o = offsets[v.index]
            rows.append(flat[o:o + len(v.labels)])
        return cls.from_ground(g, rows)

    def log_probs(self):
        if self._logs is None:
            self._logs = [np.log(p) for p in self.probs]
        return self._logs

    def objective(self, labels) -> float:
        """Canonical objective: sum of chosen log-probs in variable order."""
        logs = self.log_probs()
        total = np.float64(0.0)
        for i, lab in enumerate(labels):
            total += logs[i][lab]
        return float(total)

    def argmax_labels(self):
        return np.asarray([int(np.argmax(p)) for p in self.probs], dtype=np.int64)

    def assignment(self, labels):
        return {name: self.labels[i][int(labels[i])]
                for i, name in enumerate(self.names)}


@dataclass
class MapSolution:
    labels: np.ndarray | None          # label index per variable, None if infeasible
    assignment: dict | None            # variable name -> label value
    objective: float
    feasible: bool
    optimal: bool
    nodes: int = 0
    ms: float = 0.0
    timed_out: bool = False

    @property
    def status(self):
        if not self.feasible:
            return "timeout" if self.timed_out else "infeasible"
        return "optimal" if self.optimal else "feasible"


def _solution(table, labels, optimal, nodes, t0, timed_out=False):
    labels = np.asarray(labels, dtype=np.int64)
    return MapSolution(labels, table.assignment(labels), table.objective(labels),
                       True, optimal, nodes, (time.monotonic() - t0) * 1000.0,
                       timed_out)


def _infeasible(nodes, t0, timed_out=False):
    return MapSolution(None, None, float("-inf"), False, False, nodes,
                       (time.monotonic() - t0) * 1000.0, timed_out)


# ---------------------------------------------------------------- exhaustive

def exhaustive_map(table: PredictionTable, g: GroundProgram,
                   space_cap=10**6) -> MapSolution:
    """Enumerate all assignments; ties resolve to the lexicographically first
    (variable order, then lowest label index)."""
    t0 = time.monotonic()
    if len(table) != len(g.variables):
        raise GroundingError("prediction table does not cover the ground program")
    space = g.assignment_space()
    if space > space_cap:
        raise GroundingError(
            f"assignment space {space} exceeds cap {space_cap}; use ilp_map")
    sizes = [len(v.labels) for v in g.variables]
    logs = table.log_probs()

    best_vec, best_score = None, float("-inf")

    def flush(buf, best_vec, best_score):
        mat = np.asarray(buf, dtype=np.int64)
        ok = g.eval_matrix(mat).all(axis=0)
        if ok.any():
            feas = mat[ok]
            scores = np.zeros(len(feas))
            for i in range(len(sizes)):
                scores += logs[i][feas[:, i]]
            j = int(np.argmax(scores))  # first max: lexicographically first
            if scores[j] > best_score:  # strict: earlier assignment wins ties
                return feas[j].copy(), float(scores[j])
        return best_vec, best_score

    buf = []
    for combo in itertools.product(*(range(s) for s in sizes)):
        buf.append(combo)
        if len(buf) >= 4096:
            best_vec, best_score = flush(buf, best_vec, best_score)
            buf = []
    if buf:
        best_vec, best_score = flush(buf, best_vec, best_score)
    if best_vec is None:
        return _infeasible(space, t0)
    return _solution(table, best_vec, True, space, t0)


# ---------------------------------------------------------------- ilp / bnb

class _RowView:
    """Propagation-friendly row: plain lists beat numpy at this size."""

    __slots__ = ("cols", "coefs", "le", "ge", "rhs")

    def __init__(self, row):
        self.cols = [int(c) for c in row.cols]
        self.coefs = [float(a) for a in row.coefs]
        self.le = row.cmp in ("<=", "=")
        self.ge = row.cmp in (">=", "=")
        self.rhs = float(row.rhs)


class IlpSolver:
    """Reusable branch-and-bound state for one LinearSystem structure.

    Building the solver does the structure work (incidence lists, activity
    bounds, the padded indicator layout); `solve` then runs any number of
    objectives against it, which is how per-example decoding stays cheap.
    """

    EPS = 1e-9

    def __init__(self, ls: LinearSystem):
        self.ls = ls
        self.n_cols = ls.n_cols
        self.n_vars = len(ls.var_names)
        self.rows = [_RowView(r) for r in ls.rows]
        self.col_rows = [[] for _ in range(self.n_cols)]
        for ri, row in enumerate(self.rows):
            for c, a in zip(row.cols, row.coefs):
                self.col_rows[int(c)].append((ri, float(a)))

        # padded (n_vars, max_labels) layout for vectorized bounds/branching
        lmax = max(len(l) for l in ls.var_labels)
        self.ind_mat = np.zeros((self.n_vars, lmax), dtype=np.int64)
        self.pad = np.zeros((self.n_vars, lmax), dtype=bool)
        for v in range(self.n_vars):
            cols = ls.indicator_cols[v]
            self.ind_mat[v, :len(cols)] = cols
            self.pad[v, len(cols):] = True

        self.base_lo = np.zeros(len(self.rows))
        self.base_hi = np.zeros(len(self.rows))
        for ri, row in enumerate(self.rows):
            self.base_lo[ri] = np.minimum(row.coefs, 0.0).sum()
            self.base_hi[ri] = np.maximum(row.coefs, 0.0).sum()

    def solve(self, table: PredictionTable, timeout_s=30.0) -> MapSolution:
        self.table = table
        self.obj = np.zeros(self.n_cols)
        logs = table.log_probs()
        for v in range(self.n_vars):
            self.obj[self.ls.indicator_cols[v]] = logs[v]
        self.obj_mat = np.where(self.pad, -np.inf, self.obj[self.ind_mat])

        self.val = np.full(self.n_cols, -1, dtype=np.int8)
        self.row_lo = self.base_lo.tolist()
        self.row_hi = self.base_hi.tolist()
        self.nodes = 0
        self.best_val = float("-inf")
        self.best_labels = None
        self.t0 = time.monotonic()
        self.deadline = self.t0 + timeout_s
        self.timed_out = False
        return self.run()

    # ---- state

    def snapshot(self):
        return self.val.copy(), self.row_lo[:], self.row_hi[:]

    def restore(self, snap):
        # snapshots are taken fresh per branch, so plain reassignment is safe
        self.val, self.row_lo, self.row_hi = snap

    def fix(self, col, v, queue):
        cur = self.val[col]
        if cur != -1:
            return cur == v
        self.val[col] = v
        row_lo, row_hi = self.row_lo, self.row_hi
        for ri, a in self.col_rows[col]:
            if a > 0.0:
                if v:
                    row_lo[ri] += a
                else:
                    row_hi[ri] -= a
            else:
                if v:
                    row_hi[ri] += a
                else:
                    row_lo[ri] -= a
        queue.append(col)
        return True

    def propagate(self, queue):
        """Fixpoint of row-based forcings; False when some row is violated."""
        while queue:
            col = queue.pop()
            for ri, _ in self.col_rows[col]:
                if not self._scan_row(ri, queue):
                    return False
        return True

    def _row_ok(self, ri):
        row = self.rows[ri]
        if row.le and self.row_lo[ri] > row.rhs + self.EPS:
            return False
        if row.ge and self.row_hi[ri] < row.rhs - self.EPS:
            return False
        return True

    def _scan_row(self, ri, queue):
        row = self.rows[ri]
        lo = self.row_lo[ri]
        hi = self.row_hi[ri]
        rhs = row.rhs
        if row.le and lo > rhs + self.EPS:
            return False
        if row.ge and hi < rhs - self.EPS:
            return False
        # a row that holds under every completion cannot force anything
        check_le = row.le and hi > rhs + self.EPS
        check_ge = row.ge and lo < rhs - self.EPS
        if not check_le and not check_ge:
            return True
        val = self.val
        slack_le = rhs + self.EPS - lo
        slack_ge = hi - (rhs - self.EPS)
        for c, a in zip(row.cols, row.coefs):
            if val[c] != -1:
                continue
            # value v is impossible if it alone pushes past the bound
            if a > 0.0:
                bad0 = check_ge and a > slack_ge
                bad1 = check_le and a > slack_le
            else:
                bad0 = check_le and -a > slack_le
                bad1 = check_ge and -a > slack_ge
            if bad0:
                if bad1 or not self.fix(c, 1, queue):
                    return False
            elif bad1:
                if not self.fix(c, 0, queue):
                    return False
            else:
                continue
            lo = self.row_lo[ri]
            hi = self.row_hi[ri]
            if (row.le and lo > rhs + self.EPS) or \
               (row.ge and hi < rhs - self.EPS):
                return False
            slack_le = rhs + self.EPS - lo
            slack_ge = hi - (rhs - self.EPS)
        return True

    # ---- variables

    def allowed_logp(self, v):
        cols = self.ls.indicator_cols[v]
        vals = self.val[cols]
        out = np.where(vals != 0, self.obj[cols], -np.inf)
        return out

    def decided_label(self, v):
        cols = self.ls.indicator_cols[v]
        ones = np.nonzero(self.val[cols] == 1)[0]
        return int(ones[0]) if len(ones) else -1

    def search(self):
        self.nodes += 1
        if time.monotonic() > self.deadline:
            self.timed_out = True
            return
        vals = self.val[self.ind_mat]
        chosen = (vals == 1) & ~self.pad
        decided = chosen.any(axis=1)
        if decided.all():
            labels = chosen.argmax(axis=1).astype(np.int64)
            val = self.table.objective(labels)
            if val > self.best_val:
                self.best_val = val
                self.best_labels = labels
            return
        allowed = np.where(vals != 0, self.obj_mat, -np.inf)
        best_lp = allowed.max(axis=1)
        if float(best_lp.sum()) <= self.best_val + 1e-12:
            return

        # branch on the largest best/second-best gap, best label first
        if allowed.shape[1] >= 2:
            two = -np.partition(-allowed, 1, axis=1)[:, :2]
            gaps = np.where(np.isfinite(two[:, 1]), two[:, 0] - two[:, 1], np.inf)
        else:
            gaps = np.full(self.n_vars, np.inf)
        gaps[decided] = -np.inf
        pick = int(np.argmax(gaps))
        lp = allowed[pick]
        order = np.argsort(-lp, kind="stable")
        order = order[np.isfinite(lp[order])]
        cols = self.ls.indicator_cols[pick]
        for label in order:
            snap = self.snapshot()
            queue = []
            if self.fix(int(cols[label]), 1, queue) and self.propagate(queue):
                self.search()
            self.restore(snap)
            if self.timed_out:
                return

    def run(self):
        queue = []
        for ri in range(len(self.rows)):
            if not self._scan_row(ri, queue):
                return _infeasible(self.nodes, self.t0)
        if not self.propagate(queue):
            return _infeasible(self.nodes, self.t0)
        self.search()
        if self.best_labels is None:
            return _infeasible(self.nodes, self.t0, self.timed_out)
        return _solution(self.table, self.best_labels, not self.timed_out,
                         self.nodes, self.t0, self.timed_out)


def ilp_map(table: PredictionTable, ls: LinearSystem, timeout_s=30.0,
            solver: IlpSolver | None = None) -> MapSolution:
    """Most probable feasible assignment under the 0-1 system.

    Returns a proven optimum, or the best incumbent with optimal=False when
    the timeout hits, or an infeasibility result (distinct from timeout).
    Pass a prebuilt IlpSolver to amortize structure setup over many solves.
    """
    if len(table) != len(ls.var_names):
        raise ValueError("prediction table does not match the linear system")
    for i, (name, labels) in enumerate(zip(ls.var_names, ls.var_labels)):
        if table.names[i] != name or table.labels[i] != tuple(labels):
            raise ValueError(f"variable {i}: table has {table.names[i]!r}, "
                             f"system has {name!r}")
    if solver is None:
        solver = IlpSolver(ls)
    return solver.solve(table, timeout_s)


# ---------------------------------------------------------------- sequences

def _sequence_logp(table: PredictionTable):
    n_labels = len(table.labels[0])
    if any(len(l) != n_labels for l in table.labels):
        raise ValueError("sequence decoding needs a shared label set")
    return np.stack([np.log(p) for p in table.probs])


def viterbi_decode(table: PredictionTable, transitions, start_allowed=None,
                   ) -> MapSolution:
    """Exact max-sum decoding under an allowed-transition mask."""
    t0 = time.monotonic()
    logp = _sequence_logp(table)
    T, L = logp.shape
    mask = np.asarray(transitions, dtype=bool)
    start = np.ones(L, dtype=bool) if start_allowed is None else \
        np.asarray(start_allowed, dtype=bool)

    neg = float("-inf")
    dp = np.where(start, logp[0], neg)
    back = np.zeros((T, L), dtype=np.int64)
    for t in range(1, T):
        scores = dp[:, None] + np.where(mask, 0.0, neg)
        back[t] = scores.argmax(axis=0)
        dp = scores.max(axis=0) + logp[t]
    if not np.isfinite(dp.max()):
        return _infeasible(T * L, t0)
    labels = np.zeros(T, dtype=np.int64)
    labels[-1] = int(dp.argmax())
    for t in range(T - 1, 0, -1):
        labels[t - 1] = back[t, labels[t]]
    return _solution(table, labels, True, T * L, t0)


def astar_decode(table: PredictionTable, transitions, start_allowed=None,
                 ) -> MapSolution:
    """Best-first search over tag prefixes with the admissible heuristic
    h(prefix) = sum of per-position max log-probabilities still to come."""
    t0 = time.monotonic()
    logp = _sequence_logp(table)
    T, L = logp.shape
    mask = np.asarray(transitions, dtype=bool)
    start = np.ones(L, dtype=bool) if start_allowed is None else \
        np.asarray(start_allowed, dtype=bool)

    suffix = np.zeros(T + 1)
    for t in range(T - 1, -1, -1):
        suffix[t] = suffix[t + 1] + logp[t].max()

    counter = 0
    heap = [(-suffix[0], counter, 0, -1, ())]  # (-f, tiebreak, t, last, prefix)
    nodes = 0
    while heap:
        nf, _, t, last, prefix = heapq.heappop(heap)
        nodes += 1
        if t == T:
            labels = np.asarray(prefix, dtype=np.int64)
            return MapSolution(labels, table.assignment(labels),
                               table.objective(labels), True, True, nodes,
                               (time.monotonic() - t0) * 1000.0)
        g_score = -nf - suffix[t]
        allowed = start if t == 0 else mask[last]
        for lab in range(L):
            if not allowed[lab]:
                continue
            g2 = g_score + logp[t, lab]
            counter += 1
            heapq.heappush(heap, (-(g2 + suffix[t + 1]), counter, t + 1, lab,
                                  prefix + (lab,)))
    return _infeasible(nodes, t0)


# ---------------------------------------------------------------- file-driven

def write_probs_csv(table: PredictionTable, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variable", "label", "prob"])
        for name, labels, probs in zip(table.names, table.labels, table.probs):
            for lab, p in zip(labels, probs):
                w.writerow([name, lab, f"{p:.17g}"])


def read_probs_csv(path) -> PredictionTable:
    rows: dict[str, list] = {}
    order = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            name = rec["variable"]
            if name not in rows:
                rows[name] = []
                order.append(name)
            rows[name].append((rec["label"], float(rec["prob"])))
    names, labels, probs = [], [], []
    for name in order:
        names.append(name)
        labs, ps = zip(*rows[name])
        labels.append(tuple(int(l) if l.lstrip("-").isdigit() else l for l in labs))
        probs.append(np.asarray(ps))
    return PredictionTable(names, labels, probs)


def solve_lp_file(lp_path, csv_path, timeout_s=30.0) -> MapSolution:
    """Cross-check entry point: LP text from `compile` + probabilities CSV."""
    with open(lp_path) as fh:
        ls = parse_lp_text(fh.read())
    table = read_probs_csv(csv_path)
    if set(table.names) != set(ls.var_names):
        raise ValueError("CSV variables do not match the LP system")
    reorder = [table.names.index(n) for n in ls.var_names]
    table = PredictionTable([table.names[i] for i in reorder],
                            [table.labels[i] for i in reorder],
                            [table.probs[i] for i in reorder])
    return ilp_map(table, ls, timeout_s)
