import json

import numpy as np
import pytest

from nclkit.evaluate import (
    EvalReport, accuracy, config_fingerprint, macro_f1, make_report,
    split_low_data, task_metrics, time_block, violation_rate,
)
from nclkit.lang import GAtom, GroundConstraint, GroundProgram
from nclkit.tasks import make_task


def program_with(n_true_required):
    g = GroundProgram()
    for i in range(12):
        g.add_variable(("b", i), (0, 1))
    for i in range(12):
        g.add_constraint(GroundConstraint(f"c{i}", GAtom(i, 1), (f"c{i}", ())))
    return g


class TestViolationRate:
    def test_three_of_twelve(self):
        g = program_with(12)
        labels = np.ones(12, dtype=np.int64)
        labels[[0, 5, 7]] = 0
        assert violation_rate(labels, g) == pytest.approx(0.25)

    def test_empty_constraint_set_is_zero(self):
        g = GroundProgram()
        g.add_variable(("b", 0), (0, 1))
        assert violation_rate(np.array([0]), g) == 0.0

    def test_ilp_output_is_feasible(self):
        from nclkit.infer import PredictionTable, ilp_map
        from nclkit.lower import linearize
        g = program_with(12)
        rng = np.random.default_rng(0)
        rows = [rng.dirichlet(np.ones(2)) for _ in range(12)]
        sol = ilp_map(PredictionTable.from_ground(g, rows), linearize(g))
        assert violation_rate(sol.labels, g) == 0.0


class TestTaskMetrics:
    def test_accuracy_all_correct(self):
        assert task_metrics([1, 2, 3], [1, 2, 3], "accuracy") == 1.0

    def test_macro_f1_hand_computed(self):
        # all-positive predictions vs half-positive gold:
        # F1(pos) = 2/3, F1(neg) = 0 -> macro 1/3
        gold = [1, 1, 0, 0]
        pred = [1, 1, 1, 1]
        assert macro_f1(gold, pred) == pytest.approx(1 / 3)

    def test_constraint_satisfaction_kind(self):
        g = program_with(12)
        labels = np.ones(12, dtype=np.int64)
        labels[0] = 0
        val = task_metrics(labels, None, "constraint-satisfaction", g=g)
        assert val == pytest.approx(1 - 1 / 12)

    def test_bounds(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            gold = rng.integers(0, 3, size=20)
            pred = rng.integers(0, 3, size=20)
            assert 0.0 <= accuracy(gold, pred) <= 1.0
            assert 0.0 <= macro_f1(gold, pred) <= 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            accuracy([1, 2], [1])


class TestTimeBlock:
    def test_noop_is_fast(self):
        ms, stats, _ = time_block("infer", lambda: None, n_examples=1000)
        assert ms < 1.0
        assert stats["repeats"] == 3

    def test_phase_validated(self):
        with pytest.raises(ValueError):
            time_block("reticulate", lambda: None, 10)


class TestSplitLowData:
    def test_identity_at_one(self):
        task = make_task("digit_exclusive", n=100, seed=0)
        assert split_low_data(task.train, 1.0, 0) is task.train

    def test_five_percent_of_1000(self):
        task = make_task("digit_exclusive", n=1000, seed=0)
        sub = split_low_data(task.train, 0.05, 7)
        assert len(sub) == 50
        # stratified: balanced classes stay balanced
        _, counts = np.unique(sub.strat, return_counts=True)
        assert counts.min() >= 4 and counts.max() <= 6

    def test_deterministic(self):
        task = make_task("digit_exclusive", n=200, seed=0)
        a = split_low_data(task.train, 0.2, 3)
        b = split_low_data(task.train, 0.2, 3)
        np.testing.assert_array_equal(a.features, b.features)
        assert a.gold == b.gold

    def test_gold_keys_renumbered(self):
        task = make_task("digit_sum", n=100, seed=0)
        sub = split_low_data(task.train, 0.1, 1)
        assert len(sub) == 10
        ids = {k[1] for k in sub.gold}
        assert ids == set(range(10))
        assert len(sub.meta["sums"]) == 10


def _report(task="t", train="none", infer="argmax", seed=0, metric=0.5,
            violation=0.1):
    return EvalReport(task=task, train_method=train, infer_method=infer,
                      variant="simple", fraction=1.0, seed=seed,
                      metric_name="accuracy", metric_value=metric,
                      violation=violation, train_ms_per_example=1.0,
                      infer_ms_per_example=2.0, fingerprint="abc")


class TestMakeReport:
    def test_single_baseline_delta_zero(self, tmp_path):
        report, _, text = make_report([_report()], tmp_path)
        row = report["rows"][0]
        assert row["delta_vs_baseline"] == 0.0
        assert "accuracy" in text

    def test_delta_vs_baseline(self, tmp_path):
        runs = [_report(metric=0.5), _report(train="pd", metric=0.62)]
        report, _, _ = make_report(runs, tmp_path)
        by_method = {(r["train_method"], r["infer_method"]): r
                     for r in report["rows"]}
        assert by_method[("pd", "argmax")]["delta_vs_baseline"] == \
            pytest.approx(0.12)

    def test_missing_baseline_is_na(self, tmp_path):
        report, _, text = make_report([_report(train="pd")], tmp_path)
        assert report["rows"][0]["delta_vs_baseline"] is None
        assert "n/a" in text

    def test_byte_stable(self, tmp_path):
        runs = [_report(seed=s, metric=0.5 + 0.01 * s) for s in range(3)]
        make_report(runs, tmp_path / "a")
        make_report(runs, tmp_path / "b")
        a = (tmp_path / "a" / "report.json").read_bytes()
        b = (tmp_path / "b" / "report.json").read_bytes()
        assert a == b

    def test_timings_in_sidecar(self, tmp_path):
        make_report([_report()], tmp_path)
        timings = json.loads((tmp_path / "timings.json").read_text())
        row = timings["rows"][0]
        assert row["train_ms_per_example"] == [1.0]
        assert row["infer_ms_per_example"] == [2.0]
        report = json.loads((tmp_path / "report.json").read_text())
        assert "ms" not in json.dumps(report["rows"][0])


class TestFingerprint:
    def test_sensitive_to_config_and_program(self):
        a = config_fingerprint({"lr": 0.1}, "p")
        b = config_fingerprint({"lr": 0.2}, "p")
        c = config_fingerprint({"lr": 0.1}, "q")
        assert a != b and a != c
        assert a == config_fingerprint({"lr": 0.1}, "p")
