"""End-to-end orchestration: snapshots, split, reduction, box, value functions,
synthesis and diagnostics, with every intermediate result written to disk."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from adapod.config import PipelineConfig
from adapod.control_bench import (
    RESIDUAL_NORM,
    Diagnostics,
    error_norms,
    evaluate_cost,
    make_reference,
    reference_control,
    residual,
    riccati_lqr,
)
from adapod.galerkin_rom import BoxDomain, ReducedModel, assemble_reduced, compute_box
from adapod.hjb_solver import ChainResult, CostSpec, ValueStack, chain_subintervals, window_steps
from adapod.pde_lab import (
    Grid1D,
    PdeParams,
    SnapshotMatrix,
    check_stability,
    commensurate_dt,
    fd_operator,
    initial_hat,
    initial_parabola,
    interior_indicator,
    make_grid,
    simulate,
)
from adapod.pod_reduce import SubIntervalPlan, adaptive_split, single_window_plan

logger = logging.getLogger(__name__)

STAGES = ("simulate", "split", "reduce", "hjb", "synthesize", "diagnostics")


class PipelineError(RuntimeError):
    """A stage failed; ``stage`` names it and ``__cause__`` holds the original error."""

    def __init__(self, stage: str, error: BaseException):
        super().__init__(f"[{stage}] {type(error).__name__}: {error}")
        self.stage = stage


@dataclass
class PipelineResult:
    config: PipelineConfig
    out: Path
    grid: Grid1D | None = None
    params: PdeParams | None = None
    y0: np.ndarray | None = None
    snapshots: SnapshotMatrix | None = None
    reference: np.ndarray | None = None
    plan: SubIntervalPlan | None = None
    models: list[ReducedModel] = field(default_factory=list)
    boxes: list[BoxDomain] = field(default_factory=list)
    stacks: list[ValueStack] = field(default_factory=list)
    chain: ChainResult | None = None
    diagnostics: Diagnostics | None = None
    manifest: list[str] = field(default_factory=list)
    runtimes: dict[str, float] = field(default_factory=dict)

    @property
    def residual(self) -> float:
        return self.diagnostics.residual


def _write_matrix(path: Path, data, header: str | None = None) -> None:
    np.savetxt(path, np.atleast_2d(data), delimiter=",", fmt="%.17g",
               header=header or "", comments="")


def _write_manifest(res: PipelineResult) -> None:
    lines = list(res.manifest)
    lines += [f"runtime.{k}={v:.3f}" for k, v in res.runtimes.items()]
    (res.out / "manifest.txt").write_text("\n".join(lines) + "\n")


def build_grid(cfg: PipelineConfig) -> tuple[Grid1D, list[str]]:
    p = cfg.pde
    dt, notes = p.dt, []
    if p.adjust_dt:
        dt, _ = commensurate_dt(p.T, p.dt)
        if abs(dt - p.dt) > 1e-15:
            notes.append(f"pde.dt_adjusted={dt!r}")
    return make_grid(p.a, p.b, p.dx, p.T, dt), notes


def _stage_simulate(res: PipelineResult) -> None:
    cfg = res.config
    grid, notes = build_grid(cfg)
    params = PdeParams(cfg.pde.epsilon, cfg.pde.c)
    check_stability(params, grid)
    y0 = initial_parabola(grid) if cfg.pde.initial == "parabola" else initial_hat(grid)
    u = reference_control(cfg.snapshot_control, grid)
    Y = simulate(y0, u, params, grid)
    if cfg.cost.reference == "zero":
        ref = make_reference("zero", params, grid)
    elif cfg.cost.reference == f"from_control:{cfg.snapshot_control}":
        ref = Y.data
    else:
        ref = make_reference(cfg.cost.reference, params, grid, y0)
    res.grid, res.params, res.y0, res.snapshots, res.reference = grid, params, y0, Y, ref
    Y.to_csv(res.out / "snapshots.csv")
    SnapshotMatrix(ref, grid.times).to_csv(res.out / "reference.csv")
    res.manifest += [
        f"grid.nodes={grid.nodes}",
        f"grid.steps={grid.steps}",
        f"grid.dt={grid.dt!r}",
        f"snapshots.control={cfg.snapshot_control}",
        *notes,
    ]


def _stage_split(res: PipelineResult, adaptive: bool) -> None:
    r = res.config.reduction
    squared = r.energy_variant == "squared"
    if adaptive:
        plan = adaptive_split(res.snapshots, r.ell, r.tau, squared)
    else:
        plan = single_window_plan(res.snapshots, r.ell, r.tau, squared)
    res.plan = plan
    res.manifest.append(f"split.mode={'adaptive' if adaptive else 'single'}")
    res.manifest += plan.manifest_lines()


def _stage_reduce(res: PipelineResult) -> None:
    cfg, plan = res.config, res.plan
    res.models, res.boxes = [], []
    U = np.asarray(cfg.hjb.controls, dtype=float)
    for k, (basis, i0) in enumerate(zip(plan.bases, plan.indices)):
        model = assemble_reduced(basis, res.params, res.grid, res.snapshots.data[:, i0])
        if not np.allclose(model.M, np.eye(model.dim), atol=1e-10):
            raise ValueError(f"window {k}: basis Gramian deviates from the identity")
        t0, t1 = plan.boundaries[k], plan.boundaries[k + 1]
        _, dt_w = window_steps(t1 - t0, cfg.hjb.dt)
        box = compute_box(model, U, t1 - t0, dt_w, cfg.hjb.box_margin)
        res.models.append(model)
        res.boxes.append(box)
        wdir = res.out / f"window{k}"
        wdir.mkdir(exist_ok=True)
        basis.to_csv(wdir / "basis.csv")
        _write_matrix(wdir / "singular_values.csv", basis.singular_values[:, None])
        _write_matrix(wdir / "reduced_A.csv", model.A)
        _write_matrix(wdir / "reduced_b.csv", model.b[:, None])
        _write_matrix(wdir / "w0.csv", model.w0[:, None])
        _write_matrix(wdir / "box.csv", np.column_stack([box.lower, box.upper]), "lower,upper")
        res.manifest += [
            f"window{k}.interval={t0!r},{t1!r}",
            "window{0}.box={1}".format(k, ";".join(f"[{a!r},{b!r}]" for a, b in zip(box.lower, box.upper))),
            f"window{k}.box_widths=" + ",".join(repr(float(w)) for w in box.widths),
        ]


def _cost_spec(res: PipelineResult) -> CostSpec:
    c = res.config.cost
    return CostSpec(c.R, res.reference, res.grid.times, res.grid.dx, c.discount, c.terminal)


def _stage_hjb(res: PipelineResult) -> None:
    cfg = res.config
    h = cfg.hjb
    npd = h.nodes_per_dim * cfg.reduction.ell if len(h.nodes_per_dim) == 1 else h.nodes_per_dim
    res.chain = chain_subintervals(
        res.plan, res.models, _cost_spec(res), h.controls, h.dt,
        nodes_per_dim=npd, y_start=res.y0, boxes=res.boxes, coupling=h.coupling,
        refine=h.refine, synthesize=False,
    )
    res.stacks = res.chain.stacks
    for k, stack in enumerate(res.stacks):
        wdir = res.out / f"window{k}"
        if cfg.run.save_value_levels:
            stack.write(wdir / "value")
        else:
            stack.write_level(wdir / "value", 0)
        res.manifest += [
            f"window{k}.hjb.N={stack.N}",
            f"window{k}.hjb.dt={stack.dt!r}",
            f"window{k}.hjb.value_at_start={stack.value(0, res.models[k].w0)!r}",
        ]
    res.manifest += [
        "hjb.nodes_per_dim=" + ",".join(str(n) for n in npd),
        f"hjb.coupling={h.coupling}",
        f"hjb.refine={h.refine}",
        "hjb.controls=" + ",".join(repr(float(u)) for u in h.controls),
    ]


def _stage_synthesize(res: PipelineResult) -> None:
    h = res.config.hjb
    npd = h.nodes_per_dim * res.config.reduction.ell if len(h.nodes_per_dim) == 1 else h.nodes_per_dim
    chain = chain_subintervals(
        res.plan, res.models, _cost_spec(res), h.controls, h.dt,
        nodes_per_dim=npd, y_start=res.y0, boxes=res.boxes, stacks=res.stacks,
        coupling=h.coupling, refine=h.refine,
    )
    res.chain = chain
    grid = res.grid
    SnapshotMatrix(chain.trajectory, grid.times).to_csv(res.out / "trajectory.csv")
    _write_matrix(res.out / "control.csv", np.column_stack([grid.times[:-1], chain.control.values]), "t,u")
    for k, syn in enumerate(chain.reduced):
        acc = np.concatenate([[0.0], np.cumsum(syn.step_costs)])
        us = np.append(syn.controls, np.nan)
        header = ",".join(["t", *(f"w{i + 1}" for i in range(syn.states.shape[1])), "u", "cost"])
        _write_matrix(res.out / f"window{k}" / "trajectory.csv",
                      np.column_stack([syn.times, syn.states, us, acc]), header)
    res.manifest += [f"chain.jump{k + 1}={j!r}" for k, j in enumerate(chain.jumps)]
    res.manifest += [f"chain.warning={w}" for w in chain.warnings[:20]]
    res.manifest.append(f"chain.reduced_cost={chain.cost!r}")


def lqr_baseline(params: PdeParams, grid: Grid1D, y0, R: float) -> np.ndarray:
    """Full-order discrete Riccati regulator toward zero; returns the controls."""
    full = ReducedModel(fd_operator(params, grid), interior_indicator(grid))
    return riccati_lqr(full, grid.dx * np.eye(grid.nodes), R, grid.dt, grid.steps, y0).controls


def _stage_diagnostics(res: PipelineResult) -> None:
    cfg, grid, chain = res.config, res.grid, res.chain
    u = chain.control
    replay = simulate(res.y0, u, res.params, grid).data
    l1, l2 = error_norms(chain.trajectory[:, -1], replay[:, -1], grid.dx)
    meta = {
        "K": res.plan.K,
        "tau": res.plan.threshold,
        "replay_cost": evaluate_cost(replay, u, res.reference, cfg.cost.R, grid.dt, grid.dx),
        "residual_replay": residual(replay, u, res.params, grid),
    }
    if cfg.cost.reference == "zero":
        u_lqr = lqr_baseline(res.params, grid, res.y0, cfg.cost.R)
        y_lqr = simulate(res.y0, u_lqr, res.params, grid).data
        meta["lqr_l1"], meta["lqr_l2"] = error_norms(y_lqr[:, -1], replay[:, -1], grid.dx)
    diag = Diagnostics(
        cost=evaluate_cost(chain.trajectory, u, res.reference, cfg.cost.R, grid.dt, grid.dx),
        residual=residual(chain.trajectory, u, res.params, grid),
        l1_error=l1,
        l2_error=l2,
        metadata=meta,
    )
    res.diagnostics = diag
    (res.out / "diagnostics.txt").write_text(diag.report())
    (res.out / "diagnostics.csv").write_text(diag.csv_header() + "\n" + diag.csv_row() + "\n")
    res.manifest.append(f"diagnostics.residual_norm={RESIDUAL_NORM}")


def run_pipeline(
    config: PipelineConfig,
    out=None,
    stop_after: str = "diagnostics",
    adaptive: bool = True,
) -> PipelineResult:
    """Run the stages in order up to ``stop_after``, writing artifacts to ``out``.

    Errors are re-raised as :class:`PipelineError` tagged with the stage;
    whatever was written before the failure stays on disk.
    """
    if stop_after not in STAGES:
        raise ValueError(f"unknown stage {stop_after!r}; choose from {', '.join(STAGES)}")
    try:
        config.validate()
    except ValueError as exc:
        raise PipelineError("config", exc) from exc
    out = Path(config.run.output if out is None else out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.to_text())
    res = PipelineResult(config=config, out=out)
    np.random.seed(config.run.seed)
    steps = {
        "simulate": _stage_simulate,
        "split": lambda r: _stage_split(r, adaptive),
        "reduce": _stage_reduce,
        "hjb": _stage_hjb,
        "synthesize": _stage_synthesize,
        "diagnostics": _stage_diagnostics,
    }
    for stage in STAGES:
        start = time.perf_counter()
        try:
            steps[stage](res)
        except Exception as exc:
            _write_manifest(res)
            raise PipelineError(stage, exc) from exc
        res.runtimes[stage] = time.perf_counter() - start
        logger.info("stage %s done in %.2fs", stage, res.runtimes[stage])
        if stage == stop_after:
            break
    _write_manifest(res)
    return res


def run_nonadaptive(config: PipelineConfig, out=None, stop_after: str = "diagnostics") -> PipelineResult:
    """Same pipeline with one global basis over all snapshots."""
    return run_pipeline(config, out, stop_after, adaptive=False)


def compare(config: PipelineConfig, out=None) -> tuple[PipelineResult, PipelineResult, float]:
    """Adaptive and single-window runs side by side; returns the residual ratio."""
    out = Path(config.run.output if out is None else out)
    adaptive = run_pipeline(config, out / "adaptive")
    single = run_nonadaptive(config, out / "single")
    ratio = single.residual / adaptive.residual if adaptive.residual > 0 else float("inf")
    lines = [
        f"adaptive.K={adaptive.plan.K}",
        f"adaptive.residual={adaptive.residual!r}",
        f"single.residual={single.residual!r}",
        f"residual_ratio={ratio!r}",
        f"residual_norm={RESIDUAL_NORM}",
    ]
    (out / "comparison.txt").write_text("\n".join(lines) + "\n")
    return adaptive, single, ratio


def with_output(config: PipelineConfig, out) -> PipelineConfig:
    return replace(config, run=replace(config.run, output=str(out)))
