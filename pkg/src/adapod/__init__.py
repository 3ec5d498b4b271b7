"""Adaptive POD reduction coupled with semi-Lagrangian dynamic programming
for feedback control of 1D advection-diffusion equations."""

from adapod.pde_lab import (
    ControlSignal,
    Grid1D,
    PdeParams,
    SnapshotMatrix,
    commensurate_dt,
    fd_operator,
    fd_step,
    initial_hat,
    initial_parabola,
    make_grid,
    simulate,
)
from adapod.pod_reduce import (
    PodBasis,
    SubIntervalPlan,
    SvdResult,
    adaptive_split,
    compute_svd,
    energy_ratio,
    calibrate_threshold,
    pod_basis,
    single_window_plan,
    truncation_error,
)
from adapod.galerkin_rom import (
    BoxDomain,
    ReducedModel,
    assemble_reduced,
    compute_box,
    lift,
    project,
    reduced_flow,
    reduced_rhs,
)
from adapod.hjb_solver import (
    CostSpec,
    ReducedCost,
    ValueGrid,
    ValueStack,
    chain_subintervals,
    interpolate,
    sl_backward_solve,
    synthesize_feedback,
)
from adapod.control_bench import (
    Diagnostics,
    brute_force_dp,
    error_norms,
    evaluate_cost,
    make_reference,
    residual,
    riccati_lqr,
)

from adapod.config import PipelineConfig, load_config, load_preset
from adapod.pipeline import PipelineError, compare, run_nonadaptive, run_pipeline

__version__ = "0.1.0"
