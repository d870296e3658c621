"""Acceptance gate: one test per criterion, each printing a PASS line.

These run real training loops and solvers; the whole module takes tens of
minutes on a desktop CPU. Medians are over the seed counts the criteria
state. Run with `-s` to watch the per-criterion lines.
"""
import json
import time

import numpy as np
import pytest

from nclkit.autodiff import Graph, Params, grad_check
from nclkit.cli import ExperimentConfig, run_single
from nclkit.evaluate import violation_rate
from nclkit.infer import PredictionTable, astar_decode, exhaustive_map, \
    ilp_map, viterbi_decode
from nclkit.lang import (GAtom, GroundConstraint, eval_ground, ground_program,
                         parse_program)
from nclkit.lower import eval_soft, linearize, to_soft_violation
from nclkit.tasks import make_task
from nclkit.tasks.bio import transition_masks
from nclkit.train import (TrainConfig, sampling_loss, sampling_loss_graph,
                          semantic_loss_exact, semantic_loss_graph, train)

from genutil import random_ground_program, random_table_probs

SEEDS5 = (0, 1, 2, 3, 4)


def median(xs):
    return sorted(xs)[len(xs) // 2]


def announce(n, message):
    print(f"\nACCEPTANCE {n}: PASS - {message}")


def exp(task, train_m, infer_m, seed, variant="simple", frac=1.0, data=None,
        timeout_ms=60000.0, **train_kw):
    tcfg = {k: str(v) for k, v in train_kw.items()}
    cfg = ExperimentConfig(
        task=task, variant=variant, train_method=train_m, infer_method=infer_m,
        seeds=[seed], fraction=frac, out=f"/tmp/acc_{task}_{train_m}_{infer_m}",
        data={k: str(v) for k, v in (data or {}).items()},
        train_cfg=tcfg, timeout_ms=timeout_ms)
    report, result = run_single(cfg, seed)
    return report


def sudoku_run(size, givens, method, seed, **kw):
    task = make_task(f"sudoku{size}", n_givens=givens, seed=seed)
    cfg = TrainConfig(optimizer="sgd", epochs=250, batch_size=1, seed=seed,
                      method=method, supervised=True,
                      stop_at_full_satisfaction=True, **kw)
    res = train(task, "simple", cfg)
    return 1.0 - res.trace[-1]["violation_rate"], len(res.trace)


def digit_sum_accuracy(task, model, split):
    idx = np.arange(len(split))
    batch = task.make_batch(model, split, idx, supervised=False)
    flat = batch.forward(Graph(model.params)).value
    hits = []
    for v in batch.g.variables:
        o = batch.offsets[v.index]
        hits.append(int(np.argmax(flat[o:o + 10])) == split.gold[v.key])
    return float(np.mean(hits))


class TestCriterion01SudokuExactInference:
    def test_ilp_completes_9x9(self):
        task = make_task("sudoku9", n_givens=40, seed=0)
        model = task.build_model("simple", 0)
        batch = task.make_infer_batch(model, task.train, np.array([0]), False)
        rng = np.random.default_rng(1)
        rows = [rng.dirichlet(np.ones(9) * 50) for _ in batch.g.variables]
        table = PredictionTable.from_ground(batch.g, rows)
        t0 = time.monotonic()
        sol = ilp_map(table, linearize(batch.g), timeout_s=60.0)
        elapsed = time.monotonic() - t0
        assert elapsed < 60.0
        assert sol.feasible and sol.optimal
        assert violation_rate(sol.labels, batch.g) == 0.0
        announce(1, f"9x9 Sudoku ILP proven optimal in {elapsed:.2f}s, "
                    f"100% constraint satisfaction")


class TestCriterion02SudokuConstraintTraining:
    PD = dict(lr=0.1, lambda_lr=1.0, tnorm="product", lambda_mode="template")
    SAMPL6 = dict(lr=0.2, n_samples=2000, constraint_scale="sum")
    SAMPL9 = dict(lr=0.2, n_samples=1500, constraint_scale="sum")

    def test_pd_and_sampl(self):
        sat6_pd = [sudoku_run(6, 22, "pd", s, **self.PD)[0] for s in SEEDS5]
        sat6_sl = [sudoku_run(6, 22, "sampl", s, **self.SAMPL6)[0] for s in SEEDS5]
        assert median(sat6_pd) == 1.0, sat6_pd
        assert median(sat6_sl) == 1.0, sat6_sl
        sat9_pd = [sudoku_run(9, 40, "pd", s, **self.PD)[0] for s in SEEDS5]
        sat9_sl = [sudoku_run(9, 40, "sampl", s, **self.SAMPL9)[0] for s in SEEDS5]
        assert median(sat9_pd) >= 0.91, sat9_pd
        assert median(sat9_sl) >= 0.82, sat9_sl
        announce(2, f"constraint-only Sudoku: 6x6 median satisfaction "
                    f"PD {median(sat6_pd):.2f}, SampL {median(sat6_sl):.2f}; "
                    f"9x9 PD {median(sat9_pd):.3f} (>=0.91), "
                    f"SampL {median(sat9_sl):.3f} (>=0.82)")


class TestCriterion03DigitSumParity:
    N = 600
    DIRECT = dict(optimizer="adam", lr=0.005, epochs=25, batch_size=64)
    SAMPL = dict(optimizer="adam", lr=0.01, epochs=60, batch_size=64,
                 n_samples=100)
    SEML = dict(optimizer="adam", lr=0.005, epochs=25, batch_size=64)
    PD = dict(optimizer="adam", lr=0.005, epochs=250, batch_size=8,
              lambda_lr=0.5, tnorm="product", lambda_mode="ground")

    def _train_acc(self, method, supervised, cfg_kw):
        task = make_task("digit_sum", n=self.N, seed=0)
        cfg = TrainConfig(seed=1, method=method, supervised=supervised,
                          **cfg_kw)
        res = train(task, "simple", cfg)
        return digit_sum_accuracy(task, res.model, task.test)

    def test_parity_and_baseline(self):
        direct = self._train_acc("none", True, self.DIRECT)
        sampl = self._train_acc("sampl", False, self.SAMPL)
        seml = self._train_acc("seml", False, self.SEML)
        pd = self._train_acc("pd", False, self.PD)
        assert sampl >= direct - 0.02, (direct, sampl)
        assert seml >= direct - 0.02, (direct, seml)
        assert pd >= direct - 0.02, (direct, pd)

        base_cfg = dict(optimizer="adam", lr="0.005", epochs="15",
                        batch_size="64")
        base = exp("digit_sum", "none", "argmax", 0, variant="baseline_sum",
                   data={"n": self.N}, **base_cfg)
        base_ilp = exp("digit_sum", "none", "ilp", 0, variant="baseline_sum",
                       data={"n": self.N}, **base_cfg)
        assert base.metric_value < 0.20, base.metric_value
        floor = max(direct, sampl, seml, pd)
        assert base_ilp.metric_value < 0.50 <= floor - 0.40
        announce(3, f"digit-sum accuracy: direct {direct:.3f}, PD {pd:.3f}, "
                    f"SampL {sampl:.3f}, SemL {seml:.3f} (within 2 points); "
                    f"baseline {base.metric_value:.3f} < 20%, "
                    f"baseline+ILP {base_ilp.metric_value:.3f} unrecovered")


class TestCriterion04OracleEquivalence:
    def test_thousand_instances(self):
        rng = np.random.default_rng(2024)
        checked = 0
        while checked < 1000:
            g = random_ground_program(
                rng, n_vars=int(rng.integers(2, 6)), n_labels=3,
                n_constraints=int(rng.integers(1, 4)), max_depth=2)
            table = PredictionTable.from_ground(g, random_table_probs(rng, g))
            brute = exhaustive_map(table, g)
            sol = ilp_map(table, linearize(g))
            assert sol.feasible == brute.feasible
            if sol.feasible:
                assert sol.objective == brute.objective
                assert sol.optimal
            checked += 1
        announce(4, "ilp_map matches exhaustive_map exactly on 1000 random "
                    "instances (feasibility + objective)")


class TestCriterion05DecoderEquivalence:
    def test_decoders(self):
        rng = np.random.default_rng(11)
        compared = 0
        trials = 0
        while compared < 500 and trials < 2000:
            trials += 1
            T = int(rng.integers(2, 9))
            L = int(rng.integers(2, 6))
            mask = rng.random((L, L)) < 0.7
            start = rng.random(L) < 0.9
            if not start.any():
                start[0] = True
            g = random_ground_program(rng, n_vars=1, n_labels=2,
                                      n_constraints=0)
            rows = [rng.dirichlet(np.ones(L)) for _ in range(T)]
            names = [f"t{i}" for i in range(T)]
            table = PredictionTable(names, [tuple(range(L))] * T, rows)
            v = viterbi_decode(table, mask, start)
            a = astar_decode(table, mask, start)
            assert v.feasible == a.feasible
            if not v.feasible:
                continue
            assert v.objective == a.objective
            brute = self._brute(table, mask, start)
            assert v.objective == brute
            compared += 1
        assert compared == 500

        start, pair = transition_masks(4)
        invalid = 0
        for _ in range(100):
            T = int(rng.integers(2, 13))
            rows = [rng.dirichlet(np.ones(9)) for _ in range(T)]
            table = PredictionTable([f"t{i}" for i in range(T)],
                                    [tuple(range(9))] * T, rows)
            for decode in (viterbi_decode, astar_decode):
                sol = decode(table, pair, start)
                assert sol.feasible
                if not start[sol.labels[0]]:
                    invalid += 1
                invalid += sum(1 for x, y in zip(sol.labels, sol.labels[1:])
                               if not pair[x, y])
        assert invalid == 0
        announce(5, "viterbi == A* == exhaustive on 500 masked sequences; "
                    "0 invalid BIO transitions in 200 decoded sequences")

    def _brute(self, table, mask, start):
        import itertools
        T, L = len(table), len(table.labels[0])
        best = None
        for seq in itertools.product(range(L), repeat=T):
            if not start[seq[0]]:
                continue
            if any(not mask[a, b] for a, b in zip(seq, seq[1:])):
                continue
            val = table.objective(np.asarray(seq))
            best = val if best is None or val > best else best
        return best


class TestCriterion06ZeroViolationGuarantee:
    RUNS = [
        ("digit_exclusive", "ilp", {"n": 120}, {}),
        ("hierarchy", "ilp", {"n": 100}, {}),
        ("entity_relation", "ilp", {"n": 80}, {}),
        ("digit_sum", "ilp", {"n": 80}, {}),
        ("bio", "viterbi", {"n": 40}, {}),
        ("bio", "astar", {"n": 40}, {}),
        ("bio", "ilp", {"n": 40}, {}),
        ("consistency_pairs", "ilp", {"n": 60}, {}),
        ("implication_graph", "ilp", {"n_facts": 10, "n_entities": 40}, {}),
        ("sudoku6", "ilp", {"n_givens": 16}, dict(epochs=3, lr=0.1)),
    ]

    def test_all_tasks_and_seeds(self):
        total = 0
        for task, infer_m, data, extra in self.RUNS:
            for seed in (0, 1):
                kw = dict(optimizer="adam", lr=0.01, epochs=2, batch_size=32)
                kw.update(extra)
                rep = exp(task, "none", infer_m, seed, data=data, **kw)
                assert rep.violation == 0.0, (task, infer_m, seed, rep.violation)
                total += 1
        announce(6, f"feasible inference-time solutions had exactly 0 "
                    f"violation across {total} task/seed/method runs")


class TestCriterion07ViolationReduction:
    BIO_T = dict(optimizer="adam", lr=0.01, epochs=25, batch_size=32)
    ER_T = dict(optimizer="adam", lr=0.01, epochs=15, batch_size=32)

    def _runs(self, task, data, base_kw, pd_kw, sampl_kw):
        out = {"none": [], "pd": [], "sampl": []}
        for seed in SEEDS5:
            out["none"].append(exp(task, "none", "argmax", seed, data=data,
                                   **base_kw).violation)
            out["pd"].append(exp(task, "pd", "argmax", seed, data=data,
                                 supervised="true", **pd_kw).violation)
            out["sampl"].append(exp(task, "sampl", "argmax", seed, data=data,
                                    supervised="true", **sampl_kw).violation)
        return out

    def test_bio_and_entity_relation(self):
        bio = self._runs(
            "bio", {"n": 120}, self.BIO_T,
            dict(self.BIO_T, lambda_lr=0.5, lambda_mode="ground"),
            dict(self.BIO_T, n_samples=200))
        er = self._runs(
            "entity_relation", {"n": 300, "ent_noise": 1.2}, self.ER_T,
            dict(self.ER_T, lambda_lr=1.0, lambda_mode="ground", tnorm="godel"),
            dict(self.ER_T, n_samples=300))
        for name, runs in (("bio", bio), ("entity_relation", er)):
            base = median(runs["none"])
            assert base > 0.0, (name, runs["none"])
            assert median(runs["pd"]) < base, (name, runs)
            assert median(runs["sampl"]) < base, (name, runs)
        announce(7, "PD and SampL strictly reduce median violation at equal "
                    f"epochs: bio {median(bio['none']):.4f} -> "
                    f"{median(bio['pd']):.4f}/{median(bio['sampl']):.4f}; "
                    f"entity-relation {median(er['none']):.4f} -> "
                    f"{median(er['pd']):.4f}/{median(er['sampl']):.4f}")


class TestCriterion08LossConsistency:
    def test_exhaustive_sampling_equals_semantic(self):
        rng = np.random.default_rng(31)
        checked = 0
        while checked < 60:
            n_vars = int(rng.integers(2, 7))
            g = random_ground_program(rng, n_vars=n_vars, n_labels=3,
                                      n_constraints=int(rng.integers(1, 4)),
                                      max_depth=2)
            if g.assignment_space() > 3 ** 6:
                continue
            table = PredictionTable.from_ground(g, random_table_probs(rng, g))
            sem = semantic_loss_exact(table, g)
            samp = sampling_loss(table, g, 1, seed=0, mode="joint",
                                 exhaustive=True)
            assert abs(samp - sem) <= 1e-9
            checked += 1

    def test_all_losses_pass_grad_check(self):
        rng = np.random.default_rng(32)
        worst = 0.0
        for _ in range(6):
            g = random_ground_program(rng, n_vars=3, n_labels=3,
                                      n_constraints=2, max_depth=2)
            params, flat_probs = _softmax_probs(g, rng)
            cfg = TrainConfig(method="sampl", n_samples=32)

            def build_sampl(graph):
                flat, offsets = flat_probs(graph)
                loss, _ = sampling_loss_graph(graph, flat, offsets, g, cfg,
                                              np.random.default_rng(5))
                return loss

            def build_seml(graph):
                flat, offsets = flat_probs(graph)
                return semantic_loss_graph(graph, flat, offsets, g, cfg)

            worst = max(worst, grad_check(build_sampl, params))
            params.zero_grad()
            worst = max(worst, grad_check(build_seml, params))
            for tnorm in ("product", "godel", "lukasiewicz"):
                from nclkit.lower import soft_violation_tensor
                exprs = to_soft_violation(g, tnorm)

                def build_pd(graph):
                    flat, offsets = flat_probs(graph)
                    viol = soft_violation_tensor(graph, flat, exprs, offsets)
                    lam = graph.const(np.linspace(0.5, 1.5, len(exprs)))
                    return graph.reduce_sum(viol * lam)

                worst = max(worst, grad_check(build_pd, params))
        assert worst <= 1e-4
        announce(8, f"exhaustive sampling == semantic loss to 1e-9 on 60 "
                    f"programs; all loss gradients within {worst:.2e} of "
                    f"finite differences")


def _softmax_probs(g, rng):
    params = Params()
    sizes = [len(v.labels) for v in g.variables]
    params.add("logits", rng.normal(0, 0.5, size=sum(sizes)))
    offsets = np.concatenate(([0], np.cumsum(sizes)[:-1])).astype(np.int64)

    def flat_probs(graph):
        t = graph.param("logits")
        parts = []
        for i, size in enumerate(sizes):
            o = int(offsets[i])
            row = graph.reshape(graph.take(t, np.arange(o, o + size)), (1, size))
            parts.append(graph.reshape(graph.softmax(row, axis=1), (-1,)))
        return graph.concat(parts), offsets

    return params, flat_probs


class TestCriterion09VertexAgreement:
    def test_ten_thousand_formulas(self):
        rng = np.random.default_rng(41)
        count = 0
        while count < 10000:
            g = random_ground_program(rng, n_vars=4, n_labels=2,
                                      n_constraints=1, max_depth=5)
            viols = {t: to_soft_violation(g, t) for t in
                     ("product", "godel", "lukasiewicz")}
            vec = rng.integers(0, 2, size=len(g.variables))
            truth = bool(eval_ground(g, vec)[0])
            probs = {(v.index, j): float(vec[v.index] == j)
                     for v in g.variables for j in range(2)}
            for t, (viol,) in viols.items():
                assert 1.0 - eval_soft(viol, probs) == float(truth), t
            count += 1
        announce(9, "1 - violation equals classical truth on 10000 random "
                    "formulas x 3 t-norms at boolean inputs, exactly")


class TestCriterion10LinearizationBijection:
    def test_exhaustive_bijection(self):
        import itertools
        from nclkit.lower import feasible_point
        rng = np.random.default_rng(51)
        checked = 0
        while checked < 120:
            g = random_ground_program(
                rng, n_vars=int(rng.integers(2, 5)), n_labels=2,
                n_constraints=int(rng.integers(1, 4)), max_depth=2)
            if sum(len(v.labels) for v in g.variables) > 12:
                continue
            ls = linearize(g)
            if ls.n_aux > 10:
                continue
            aux_cols = sorted(ls.aux_def)
            sizes = [len(v.labels) for v in g.variables]
            for combo in itertools.product(*(range(s) for s in sizes)):
                vec = np.asarray(combo, dtype=np.int64)
                want = bool(eval_ground(g, vec).all())
                base = np.zeros(ls.n_cols)
                for v in g.variables:
                    base[ls.indicator(v.index, int(vec[v.index]))] = 1.0
                got = False
                for aux in itertools.product((0.0, 1.0), repeat=len(aux_cols)):
                    point = base.copy()
                    point[aux_cols] = aux
                    if feasible_point(ls, point):
                        got = True
                        break
                assert want == got
            checked += 1
        announce(10, "feasible 0-1 points correspond exactly to satisfying "
                     "assignments on 120 random programs (<= 12 atoms), "
                     "exhaustively")


class TestCriterion11RuntimeReporting:
    def test_timings_reported_and_ilp_overhead(self):
        kw = dict(optimizer="adam", lr=0.01, epochs=20, batch_size=50)
        base = exp("digit_exclusive", "none", "argmax", 0, data={"n": 200}, **kw)
        with_ilp = exp("digit_exclusive", "none", "ilp", 0, data={"n": 200}, **kw)
        for rep in (base, with_ilp):
            assert rep.train_ms_per_example > 0.0
            assert rep.infer_ms_per_example > 0.0
        ratio = with_ilp.infer_ms_per_example / base.infer_ms_per_example
        assert ratio < 10.0, ratio
        announce(11, f"train/infer ms per example reported for every run; "
                     f"ILP inference overhead on digit exclusivity is "
                     f"{ratio:.1f}x the unconstrained pass (< 10x)")


class TestCriterion12LowDataBehavior:
    def test_entity_relation_20pct(self):
        kw = dict(optimizer="adam", lr=0.01, epochs=12, batch_size=32)
        deltas = []
        for seed in SEEDS5:
            base = exp("entity_relation", "none", "argmax", seed, frac=0.2,
                       data={"n": 300}, **kw)
            ilp = exp("entity_relation", "none", "ilp", seed, frac=0.2,
                      data={"n": 300}, **kw)
            deltas.append(ilp.metric_value - base.metric_value)
        assert median(deltas) > 0.0, deltas
        announce(12, f"entity-relation at a 20% split: ILP inference improves "
                     f"the metric by median {median(deltas):+.4f} over the "
                     f"unconstrained baseline (5 seeds)")


class TestCriterion13Determinism:
    def test_byte_identical_report(self, tmp_path):
        from nclkit.cli import main
        cfg = tmp_path / "exp.ini"
        cfg.write_text(
            "[experiment]\ntask = hierarchy\nvariant = simple\ntrain = pd\n"
            f"infer = ilp\nseeds = 0, 1\nout = {tmp_path/'out'}\n"
            "[data]\nn = 100\nseed = 0\n"
            "[train]\noptimizer = adam\nlr = 0.01\nepochs = 3\n"
            "batch_size = 50\nlambda_lr = 0.1\n")
        assert main(["run", "--config", str(cfg)]) == 0
        first = (tmp_path / "out" / "report.json").read_bytes()
        assert main(["run", "--config", str(cfg)]) == 0
        second = (tmp_path / "out" / "report.json").read_bytes()
        assert first == second
        announce(13, "re-running the experiment produced a byte-identical "
                     "report.json")
