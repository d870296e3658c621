"""Constraint integration for neural models: a first-order constraint
language, compilation to exact 0-1 inference and differentiable losses, and
the evaluation harness around them."""

from . import autodiff, evaluate, infer, lang, lower, nn, tasks, train
from .autodiff import Graph, Params, grad_check
from .infer import (MapSolution, PredictionTable, astar_decode, exhaustive_map,
                    ilp_map, viterbi_decode)
from .lang import (ConstraintProgram, GroundProgram, Instance, eval_ground,
                   ground_program, parse_program, unparse, validate_program)
from .lower import (capability_matrix, linearize, to_lp_text,
                    to_soft_violation)
from .train import (Multipliers, TrainConfig, primal_dual_step, sampling_loss,
                    semantic_loss_exact, train)

__version__ = "0.1.0"
