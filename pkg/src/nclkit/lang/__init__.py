from .ast import (
    And, Arith, Atom, BoolConst, Cmp, ConstraintDecl, ConstraintProgram,
    Count, DomainDecl, DomainRef, Formula, GuardAnd, GuardNot, GuardOr, Iff,
    Implies, InlineRange, InlineSet, IntLit, Name, Not, Or, PredDecl, Quant,
    Span, Term,
)
from .ground import (
    BOOL_LABELS, GAnd, GAtom, GCallback, GConst, GCount, GF, GIff, GImplies,
    GNot, GOr, GroundConstraint, GroundProgram, GroundVar, Instance,
    eval_formula, eval_ground, eval_guard, eval_term, gf_atoms, gf_render,
    ground_program, structure_signature,
)
from .parser import parse_formula, parse_program, unparse, unparse_formula
from .validate import Diagnostic, validate_program
