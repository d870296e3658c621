from .base import Batch, Split, TaskInstance, TaskModel, export_csv
from .beliefs import gen_implication_graph
from .bio import gen_bio, load_conll, transition_masks
from .digit_exclusive import gen_digit_exclusive
from .digit_sum import gen_digit_sum, load_mnist_idx
from .entity_relation import gen_entity_relation
from .hierarchy import gen_hierarchy
from .nli import gen_consistency_pairs
from .sudoku import gen_sudoku

_GENERATORS = {
    "digit_exclusive": lambda n=1000, seed=0, noise=0.2, **_:
        gen_digit_exclusive(int(n), int(seed), float(noise)),
    "digit_sum": lambda n=1000, seed=0, noise=0.2, **_:
        gen_digit_sum(int(n), int(seed), float(noise)),
    "hierarchy": lambda n=400, seed=0, noise=0.6, **_:
        gen_hierarchy(int(n), int(seed), float(noise)),
    "consistency_pairs": lambda n=300, seed=0, noise=0.25, **_:
        gen_consistency_pairs(int(n), int(seed), float(noise)),
    "implication_graph": lambda n_facts=12, seed=0, n_entities=120, noise=0.8, **_:
        gen_implication_graph(int(n_facts), int(seed), int(n_entities), float(noise)),
    "entity_relation": lambda n=300, seed=0, ent_noise=1.6, rel_noise=0.35, **_:
        gen_entity_relation(int(n), int(seed), float(ent_noise), float(rel_noise)),
    "bio": lambda n=200, seed=0, noise=0.9, **_:
        gen_bio(int(n), int(seed), noise=float(noise)),
    "sudoku6": lambda n_givens=20, seed=0, **_:
        gen_sudoku(6, int(n_givens), int(seed)),
    "sudoku9": lambda n_givens=40, seed=0, **_:
        gen_sudoku(9, int(n_givens), int(seed)),
}


def make_task(name, **kwargs) -> TaskInstance:
    """Build a task by registry name; unknown keys are ignored by generators."""
    if name == "digit_sum_mnist":
        return load_mnist_idx(kwargs["images"], kwargs["labels"],
                              n_pairs=int(kwargs.get("n", 0)) or None,
                              seed=int(kwargs.get("seed", 0)))
    if name == "bio_conll":
        return load_conll(kwargs["path"], seed=int(kwargs.get("seed", 0)))
    if name not in _GENERATORS:
        raise KeyError(f"unknown task {name!r}; known: {sorted(_GENERATORS)}")
    return _GENERATORS[name](**kwargs)


TASK_NAMES = tuple(sorted(_GENERATORS)) + ("digit_sum_mnist", "bio_conll")
