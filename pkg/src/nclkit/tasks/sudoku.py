"""Sudoku as a constraint-only learning/inference problem.

The board is one decision variable per cell with `size` labels.  The program
asserts exactly-one of each value per row, column, and block; together with
the per-cell exactly-one that categorical variables carry implicitly, these
characterise valid complete grids.
"""
from __future__ import annotations

import numpy as np

BLOCK_DIMS = {4: (2, 2), 6: (2, 3), 9: (3, 3)}


def _units(size):
    bh, bw = BLOCK_DIMS[size]
    rows = [[r * size + c for c in range(size)] for r in range(size)]
    cols = [[r * size + c for r in range(size)] for c in range(size)]
    blocks = []
    for br in range(0, size, bh):
        for bc in range(0, size, bw):
            blocks.append([(br + r) * size + (bc + c)
                           for r in range(bh) for c in range(bw)])
    return rows, cols, blocks


def sudoku_program_text(size):
    """Constraint program for a size x size grid (size in {4, 6, 9})."""
    rows, cols, blocks = _units(size)
    lines = [
        f"domain Cell = 0 .. {size * size - 1}",
        f"domain Val = 0 .. {size - 1}",
        "pred cellv(Cell, Val) categorical",
    ]
    for tag, units in (("row", rows), ("col", cols), ("block", blocks)):
        for i, unit in enumerate(units):
            for v in range(size):
                atoms = ", ".join(f"cellv({c}, {v})" for c in unit)
                lines.append(f"constraint {tag}{i}_v{v}: exactly(1){{{atoms}}}")
    return "\n".join(lines) + "\n"


def _peers(size):
    rows, cols, blocks = _units(size)
    peer = [set() for _ in range(size * size)]
    for unit in rows + cols + blocks:
        for c in unit:
            peer[c].update(u for u in unit if u != c)
    return peer


def complete_grid(size, rng) -> np.ndarray:
    """A random valid grid, by randomized backtracking."""
    peers = _peers(size)
    values = [-1] * (size * size)

    def fill(cell):
        if cell == size * size:
            return True
        order = rng.permutation(size)
        used = {values[p] for p in peers[cell]}
        for v in order:
            if int(v) not in used:
                values[cell] = int(v)
                if fill(cell + 1):
                    return True
        values[cell] = -1
        return False

    if not fill(0):
        raise RuntimeError(f"backtracking failed for size {size}")
    return np.asarray(values).reshape(size, size)


def mask_grid(grid, n_givens, rng):
    """Keep n_givens cells of a complete grid; -1 marks hidden cells."""
    size = grid.shape[0]
    puzzle = np.full(size * size, -1, dtype=np.int64)
    keep = rng.choice(size * size, size=n_givens, replace=False)
    flat = grid.reshape(-1)
    puzzle[keep] = flat[keep]
    return puzzle.reshape(size, size)


# ---------------------------------------------------------------- task

def gen_sudoku(size, n_givens, seed) -> "TaskInstance":
    """One puzzle; the model is a raw (cells x values) logits table.

    Given cells are supervised with cross-entropy during training, everything
    else only through the row/column/block constraints.  For inference the
    givens become hard assertion constraints.
    """
    from ..autodiff import Params
    from ..lang import GAtom, GroundConstraint, Instance, ground_program, parse_program
    from .base import Batch, Split, TaskInstance, TaskModel, offsets_for

    if size not in BLOCK_DIMS:
        raise ValueError(f"unsupported size {size}; choose from {sorted(BLOCK_DIMS)}")
    if not 0 < n_givens <= size * size:
        raise ValueError("given count out of range")
    rng = np.random.default_rng(seed)
    grid = complete_grid(size, rng)
    puzzle = mask_grid(grid, n_givens, rng)
    text = sudoku_program_text(size)
    program = parse_program(text)

    gold = {("cellv", c): int(grid.reshape(-1)[c]) for c in range(size * size)}
    split = Split(np.zeros((1, 1)), gold,
                  meta={"puzzle": puzzle, "grid": grid, "size": size})

    class TableModel(TaskModel):
        def __init__(self, seed):
            super().__init__(Params())
            init_rng = np.random.default_rng(seed)
            self.params.add("table",
                            init_rng.normal(0, 0.01, size=(size * size, size)))

    def build_model(variant, seed):
        return TableModel(seed)

    def base_ground():
        keys = [("cellv", c) for c in range(size * size)]
        return ground_program(program, Instance(variables=keys)), keys

    def make_batch(model, split, idx, supervised, with_givens=False):
        g, keys = base_ground()
        if with_givens:
            flat = split.meta["puzzle"].reshape(-1)
            for c in range(size * size):
                if flat[c] >= 0:
                    g.add_constraint(GroundConstraint(
                        f"given[{c}]", GAtom(g.var_index[("cellv", c)], int(flat[c])),
                        ("given", (c,))))
        offsets = offsets_for(g)

        def forward(graph):
            probs = graph.softmax(graph.param("table"), axis=1)
            return graph.reshape(probs, (-1,))

        flat_puzzle = split.meta["puzzle"].reshape(-1)
        picks = []
        if supervised:
            for c in range(size * size):
                if flat_puzzle[c] >= 0:
                    picks.append(int(offsets[g.var_index[("cellv", c)]])
                                 + int(flat_puzzle[c]))
        return Batch(g, offsets, forward, np.asarray(picks, dtype=np.int64), 1)

    def make_infer_batch(model, split, idx, supervised):
        return make_batch(model, split, idx, supervised, with_givens=True)

    def score(split, results):
        # constraint satisfaction on the pure rule program, givens excluded
        g, _ = base_ground()
        total, sat = 0, 0
        for _idx, assignment, _table in results:
            vec = np.asarray([assignment[f"cellv[{c}]"]
                              for c in range(size * size)])
            from ..lang import eval_ground
            ok = eval_ground(g, vec)
            total += len(ok)
            sat += int(ok.sum())
        return sat / total if total else 1.0

    return TaskInstance(
        name=f"sudoku{size}", program_text=text, program=program,
        train=split, dev=split, test=split, metric="constraint-satisfaction",
        variants={"simple": {}}, build_model=build_model,
        make_batch=make_batch, make_infer_batch=make_infer_batch,
        supervised_preds=("cellv",), score=score)
