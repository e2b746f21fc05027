"""Sparse domination of martingale transforms and discretized singular
integrals, with numerical certification of the weighted bounds."""

from .tree import (
    TreeSpec,
    MeasureTree,
    CellFunction,
    build_tree,
    random_tree,
    average,
    conditional_expectation,
    martingale_difference,
)
from .operators import (
    SignSequence,
    SparseCollection,
    SparseReport,
    CarlesonFamily,
    LinearOperatorHandle,
    transform,
    maximal_truncation,
    dyadic_maximal,
    sparse_apply,
    check_sparse,
    paraproduct,
    paraproduct_truncation,
    carleson_norm,
    transform_operator,
    sparse_operator,
    paraproduct_operator,
    weak_l1_ratio,
)
from .domination import (
    DominationResult,
    VerifyReport,
    dominate,
    dominate_truncation,
    dominate_paraproduct,
    verify_domination,
    local_transform,
    local_truncation,
    local_paraproduct,
)
from .weights import (
    Weight,
    ApReport,
    SweepResult,
    dual_weight,
    ap_characteristic,
    weighted_norm_l2,
    weighted_norm_lp,
    power_weight_family,
    sharpness_sweep,
)
from .euclid import (
    GridCube,
    ShiftedGridFamily,
    cover_cube,
    Lattice,
    CutoffPsi,
    DiniKernel,
    DiniReport,
    dini_check,
    hilbert_kernel,
    lipschitz_kernel,
    truncated_apply,
    adapted_maximal,
    adapted_truncation,
    dominate_euclid,
    EuclidDominationResult,
    check_sparse_cubes,
)
from .suites import ExperimentConfig, SuiteSummary, run_suite

__version__ = "0.1.0"
