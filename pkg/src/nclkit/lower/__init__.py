from .capability import (
    CATEGORIES, CapabilityReport, capability_matrix, categorize,
    classify_constraint,
)
from .linear import (
    LinearSystem, Row, feasible_point, gf_negate, gf_simplify, linearize,
    parse_lp_text, to_lp_text,
)
from .soft import (
    SClampSum, SCompl, SConst, SInput, SMax, SMin, SProd, SoftExpr, TNORMS,
    eval_soft, soft_from_json, soft_to_json, soft_violation_tensor,
    to_soft_violation,
)
