import struct

import numpy as np
import pytest

from nclkit.lang import eval_ground, ground_program, validate_program
from nclkit.tasks import make_task
from nclkit.tasks.bio import i_tag, transition_masks, valid_sequence
from nclkit.tasks.digit_sum import load_mnist_idx
from nclkit.tasks.glyphs import render, templates
from nclkit.tasks.hierarchy import parent_of
from nclkit.tasks.sudoku import complete_grid


def gold_assignment(batch, split):
    return {v.key: split.gold[v.key] for v in batch.g.variables}


def gold_vector(batch, split):
    return np.asarray([v.label_index(split.gold[v.key])
                       for v in batch.g.variables])


ALL_TASKS = ["digit_exclusive", "digit_sum", "hierarchy", "consistency_pairs",
             "implication_graph", "entity_relation", "bio", "sudoku6"]


class TestCommonInvariants:
    @pytest.mark.parametrize("name", ALL_TASKS)
    def test_programs_validate(self, name):
        task = make_task(name, seed=3)
        assert validate_program(task.program) == []

    @pytest.mark.parametrize("name", ALL_TASKS)
    def test_gold_satisfies_constraints(self, name):
        task = make_task(name, seed=3)
        model = task.build_model("simple", 0)
        for split in (task.train, task.test):
            idx = np.arange(min(len(split), 24))
            batch = task.make_batch(model, split, idx, False)
            vec = gold_vector(batch, split)
            assert eval_ground(batch.g, vec).all(), name

    @pytest.mark.parametrize("name", ALL_TASKS)
    def test_seed_determinism(self, name):
        a = make_task(name, seed=11)
        b = make_task(name, seed=11)
        np.testing.assert_array_equal(a.train.features, b.train.features)
        assert a.train.gold == b.train.gold
        assert a.program_text == b.program_text

    @pytest.mark.parametrize("name", ALL_TASKS)
    def test_simple_smaller_than_strong(self, name):
        task = make_task(name, seed=0)
        if "strong" not in task.variants:
            pytest.skip("single-variant task")
        simple = task.build_model("simple", 0).params.count()
        strong = task.build_model("strong", 0).params.count()
        assert simple < strong


class TestDigitExclusive:
    def test_balance_within_five_percent(self):
        task = make_task("digit_exclusive", n=1000, seed=7)
        _, counts = np.unique(task.train.strat, return_counts=True)
        assert counts.min() >= 95 and counts.max() <= 105

    def test_noiseless_templates_recoverable(self):
        task = make_task("digit_exclusive", n=100, seed=0, noise=0.0)
        base = templates()
        for i in range(100):
            d = int(np.argmin(((base - task.train.features[i]) ** 2).sum(axis=1)))
            assert d == task.train.strat[i]

    def test_low_data_split_five_percent(self):
        from nclkit.evaluate import split_low_data
        task = make_task("digit_exclusive", n=1000, seed=0)
        assert len(split_low_data(task.train, 0.05, 0)) == 50


class TestHierarchy:
    def test_child_parent_map_is_function(self):
        assert all(0 <= parent_of(c) < 5 for c in range(20))

    def test_correct_pair_satisfies(self):
        task = make_task("hierarchy", n=60, seed=0)
        model = task.build_model("simple", 0)
        batch = task.make_batch(model, task.train, np.array([0]), False)
        child = task.train.gold[("child", 0)]
        good = {("child", 0): child, ("parent", 0): parent_of(child)}
        assert eval_ground(batch.g, good).all()

    def test_wrong_parent_violates_exactly_one(self):
        task = make_task("hierarchy", n=60, seed=0)
        model = task.build_model("simple", 0)
        batch = task.make_batch(model, task.train, np.array([0]), False)
        child = task.train.gold[("child", 0)]
        bad = {("child", 0): child,
               ("parent", 0): (parent_of(child) + 1) % 5}
        sat = eval_ground(batch.g, bad)
        assert (~sat).sum() == 1


class TestConsistencyPairs:
    def test_contradiction_symmetry_violated(self):
        task = make_task("consistency_pairs", n=60, seed=1)
        split = task.train
        model = task.build_model("simple", 0)
        sym = split.meta["sym_ids"]
        assert sym, "generator must emit symmetric pairs"
        a, b = sym[0]
        idx = np.asarray(sorted({a, b}))
        batch = task.make_batch(model, split, idx, False)
        pred = dict(gold_assignment(batch, split))
        pred[("nli", a)] = "con"
        pred[("nli", b)] = "ent"
        assert not eval_ground(batch.g, pred).all()

    def test_all_neutral_vacuous_for_sym_and_trans(self):
        task = make_task("consistency_pairs", n=60, seed=1)
        split = task.train
        model = task.build_model("simple", 0)
        idx = np.arange(min(len(split), 30))
        batch = task.make_batch(model, split, idx, False)
        pred = {v.key: "neu" for v in batch.g.variables}
        sat = eval_ground(batch.g, pred)
        for gc, ok in zip(batch.g.constraints, sat):
            if gc.source[0] in ("sym", "trans"):
                assert ok

    def test_reflexivity_grounds_per_diagonal_pair(self):
        task = make_task("consistency_pairs", n=60, seed=1)
        split = task.train
        model = task.build_model("simple", 0)
        idx = np.arange(len(split))
        batch = task.make_batch(model, split, idx, False)
        n_refl = sum(1 for c in batch.g.constraints if c.source[0] == "refl")
        assert n_refl == len(split.meta["refl_ids"])


class TestImplicationGraph:
    def test_edge_semantics(self):
        task = make_task("implication_graph", n_facts=12, seed=2)
        model = task.build_model("simple", 0)
        split = task.train
        batch = task.make_batch(model, split, np.array([0]), False)
        pos = [c for c in batch.g.constraints if c.source[0].startswith("pos")]
        assert pos
        # find the edge (f1, f2) behind the first positive constraint
        import re
        k = int(re.match(r"pos(\d+)", pos[0].source[0]).group(1))
        text_line = [l for l in task.program_text.splitlines()
                     if l.startswith(f"constraint pos{k}(")][0]
        f1, f2 = map(int, re.findall(r"holds\(e, (\d+)\)", text_line))
        base = {v.key: 0 for v in batch.g.variables}
        broken = dict(base)
        broken[("holds", 0, f1)] = 1
        broken[("holds", 0, f2)] = 0
        sat = dict(zip([c.name for c in batch.g.constraints],
                       eval_ground(batch.g, broken)))
        assert not sat[pos[0].name]
        vacuous = dict(base)
        vacuous[("holds", 0, f1)] = 0
        assert eval_ground(batch.g, vacuous)[
            [c.name for c in batch.g.constraints].index(pos[0].name)]

    def test_all_false_satisfies(self):
        task = make_task("implication_graph", n_facts=10, seed=4)
        model = task.build_model("simple", 0)
        batch = task.make_batch(model, task.train, np.arange(4), False)
        allf = {v.key: 0 for v in batch.g.variables}
        assert eval_ground(batch.g, allf).all()


class TestEntityRelation:
    def test_kill_person_person_satisfied(self):
        from nclkit.tasks.entity_relation import ENTITY_TYPES, RELATIONS
        task = make_task("entity_relation", n=40, seed=0)
        model = task.build_model("simple", 0)
        batch = task.make_batch(model, task.train, np.array([0]), False)
        person = ENTITY_TYPES.index("person")
        kill = RELATIONS.index("kill")
        pred = {}
        for v in batch.g.variables:
            pred[v.key] = 0
        pred[("etype", 0, 0, person)] = 1
        pred[("etype", 0, 1, person)] = 1
        pred[("rel", 0, kill)] = 1
        assert eval_ground(batch.g, pred).all()

    def test_work_for_location_violates(self):
        from nclkit.tasks.entity_relation import ENTITY_TYPES, RELATIONS
        task = make_task("entity_relation", n=40, seed=0)
        model = task.build_model("simple", 0)
        batch = task.make_batch(model, task.train, np.array([0]), False)
        pred = {v.key: 0 for v in batch.g.variables}
        pred[("etype", 0, 0, ENTITY_TYPES.index("person"))] = 1
        pred[("etype", 0, 1, ENTITY_TYPES.index("location"))] = 1
        pred[("rel", 0, RELATIONS.index("work_for"))] = 1
        assert not eval_ground(batch.g, pred).all()

    def test_two_types_violates_exclusivity(self):
        task = make_task("entity_relation", n=40, seed=0)
        model = task.build_model("simple", 0)
        batch = task.make_batch(model, task.train, np.array([0]), False)
        pred = gold_assignment(batch, task.train)
        for t in range(4):
            pred[("etype", 0, 0, t)] = 1  # every type asserted
        assert not eval_ground(batch.g, pred).all()


class TestBio:
    def test_valid_and_invalid_sequences(self):
        assert valid_sequence([1, 2, 0], 2)        # B-PER I-PER O
        assert not valid_sequence([0, 2], 2)       # O I-PER
        assert not valid_sequence([1, 4], 2)       # B-X I-Y
        assert not valid_sequence([2], 2)          # opens inside

    def test_masks_match_program(self):
        task = make_task("bio", n=30, seed=0)
        start, pair = task.sequence
        model = task.build_model("simple", 0)
        split = task.train
        batch = task.make_batch(model, split, np.array([0]), False)
        L = int(split.meta["lengths"][0])
        rng = np.random.default_rng(0)
        n_tags = pair.shape[0]
        for _ in range(200):
            seq = rng.integers(0, n_tags, size=L)
            by_mask = bool(start[seq[0]]) and all(
                pair[a, b] for a, b in zip(seq, seq[1:]))
            assignment = {("tag", 0, i): int(seq[i]) for i in range(L)}
            by_program = bool(eval_ground(batch.g, assignment).all())
            assert by_mask == by_program

    def test_conll_loader(self, tmp_path):
        text = ("EU NNP B-ORG\nrejects VBZ O\nGerman JJ B-MISC\n\n"
                "Peter NNP B-PER\nBlackburn NNP I-PER\n")
        path = tmp_path / "sample.conll"
        path.write_text(text)
        from nclkit.tasks.bio import load_conll
        task = load_conll(path)
        assert task.name == "bio_conll"
        gold = task.train.gold
        assert gold[("tag", 0, 1)] == 0  # 'rejects' is O

    def test_conll_malformed_column_count(self, tmp_path):
        path = tmp_path / "bad.conll"
        path.write_text("a x B-PER\nb O\n")
        from nclkit.tasks.bio import load_conll
        with pytest.raises(ValueError, match="bad.conll:2"):
            load_conll(path)


class TestDigitSum:
    def test_disjunct_counts(self):
        task = make_task("digit_sum", n=50, seed=0)
        model = task.build_model("simple", 0)
        split = task.train
        from nclkit.lang import GAnd, GOr

        def disjuncts(s):
            rows = np.nonzero(split.meta["sums"] == s)[0]
            if len(rows) == 0:
                return None
            batch = task.make_batch(model, split, rows[:1], False)
            f = batch.g.constraints[0].formula
            if isinstance(f, GAnd):
                return 1
            assert isinstance(f, GOr)
            return len(f.children)

        n18 = disjuncts(18)
        if n18 is not None:
            assert n18 == 1
        n5 = disjuncts(5)
        if n5 is not None:
            assert n5 == 6

    def test_uniform_mass_at_sum_one(self):
        # matches the exact semantic loss example: mass 0.02
        from nclkit.infer import PredictionTable
        from nclkit.train import semantic_loss_exact
        task = make_task("digit_sum", n=300, seed=1)
        split = task.train
        model = task.build_model("simple", 0)
        rows = np.nonzero(split.meta["sums"] == 1)[0]
        assert len(rows) > 0
        batch = task.make_batch(model, split, rows[:1], False)
        table = PredictionTable.from_ground(batch.g, [np.full(10, 0.1)] * 2)
        loss = semantic_loss_exact(table, batch.g)
        assert loss == pytest.approx(-np.log(0.02 + 1e-8), rel=1e-9)


class TestIdxLoader:
    def _write_idx(self, tmp_path, n=12, side=28):
        rng = np.random.default_rng(0)
        imgs = tmp_path / "imgs.idx"
        labs = tmp_path / "labs.idx"
        pixels = rng.integers(0, 256, size=(n, side * side), dtype=np.uint8)
        with open(imgs, "wb") as fh:
            fh.write(struct.pack(">IIII", 0x00000803, n, side, side))
            fh.write(pixels.tobytes())
        with open(labs, "wb") as fh:
            fh.write(struct.pack(">II", 0x00000801, n))
            fh.write(rng.integers(0, 10, size=n, dtype=np.uint8).tobytes())
        return imgs, labs

    def test_round_trip(self, tmp_path):
        imgs, labs = self._write_idx(tmp_path)
        task = load_mnist_idx(imgs, labs, n_pairs=6, seed=0)
        assert task.train.features.shape[1] == 128
        assert len(task.train) + len(task.test) == 6

    def test_bad_magic(self, tmp_path):
        imgs, labs = self._write_idx(tmp_path)
        data = bytearray(imgs.read_bytes())
        data[3] = 0x99
        imgs.write_bytes(bytes(data))
        with pytest.raises(ValueError, match="bad magic"):
            load_mnist_idx(imgs, labs)

    def test_truncated_payload(self, tmp_path):
        imgs, labs = self._write_idx(tmp_path)
        imgs.write_bytes(imgs.read_bytes()[:-100])
        with pytest.raises(ValueError, match="truncated pixel payload"):
            load_mnist_idx(imgs, labs)


class TestSudoku:
    def test_complete_grid_valid(self):
        for size in (4, 6, 9):
            grid = complete_grid(size, np.random.default_rng(1))
            task_text_check(grid, size)

    def test_given_count_and_solvability(self):
        task = make_task("sudoku6", n_givens=18, seed=5)
        puzzle = task.train.meta["puzzle"]
        assert (puzzle >= 0).sum() == 18
        # gold grid completes the puzzle
        grid = task.train.meta["grid"]
        mask = puzzle >= 0
        assert np.array_equal(puzzle[mask], grid[mask])

    def test_two_equal_in_row_violates(self):
        task = make_task("sudoku6", n_givens=12, seed=0)
        model = task.build_model("simple", 0)
        batch = task.make_batch(model, task.train, np.array([0]), False)
        grid = task.train.meta["grid"].copy().reshape(-1)
        grid[1] = grid[0]  # duplicate in row 0
        pred = {("cellv", c): int(grid[c]) for c in range(36)}
        assert not eval_ground(batch.g, pred).all()

    def test_infer_batch_pins_givens(self):
        task = make_task("sudoku6", n_givens=12, seed=0)
        model = task.build_model("simple", 0)
        batch = task.make_infer_batch(model, task.train, np.array([0]), False)
        given = [c for c in batch.g.constraints if c.source[0] == "given"]
        assert len(given) == 12


def task_text_check(grid, size):
    from nclkit.lang import Instance, parse_program
    from nclkit.tasks.sudoku import sudoku_program_text
    prog = parse_program(sudoku_program_text(size))
    g = ground_program(prog)
    a = {("cellv", r * size + c): int(grid[r, c])
         for r in range(size) for c in range(size)}
    assert eval_ground(g, a).all()


class TestExport:
    def test_csv_and_bindings(self, tmp_path):
        from nclkit.tasks import export_csv
        task = make_task("digit_sum", n=20, seed=0)
        csv_path = tmp_path / "train.csv"
        bind_path = tmp_path / "bindings.json"
        export_csv(task.train, csv_path, bind_path)
        lines = csv_path.read_text().splitlines()
        assert lines[0].startswith("id,f0,")
        assert len(lines) == 21
        import json
        payload = json.loads(bind_path.read_text())
        assert "sums" in payload and len(payload["sums"]) == 20
