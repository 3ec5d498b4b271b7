"""Flat ``block.key=value`` pipeline configuration and the bundled presets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

PRESETS = ("test1", "test2", "test3", "test4")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PdeBlock:
    a: float = 0.0
    b: float = 1.0
    epsilon: float = 1.0 / 60.0
    c: float = 0.0
    T: float = 5.0
    dx: float = 0.02
    dt: float = 0.012
    # shrink dt to the nearest divisor of T instead of rejecting it
    adjust_dt: bool = True
    initial: str = "parabola"


@dataclass(frozen=True)
class CostBlock:
    R: float = 0.01
    discount: float = 0.0
    reference: str = "zero"
    terminal: str = "zero"


@dataclass(frozen=True)
class ReductionBlock:
    ell: int = 3
    tau: float = 0.99
    energy_variant: str = "linear"
    # control used to generate the snapshots; "reference" reuses the one behind yhat
    snapshot_control: str = "reference"


@dataclass(frozen=True)
class HjbBlock:
    dt: float = 0.1
    nodes_per_dim: tuple[int, ...] = (21,)
    controls: tuple[float, ...] = (-1.0, 0.0, 1.0)
    box_margin: float = 0.1
    coupling: str = "zero"
    refine: bool = False


@dataclass(frozen=True)
class RunBlock:
    output: str = "out"
    seed: int = 0
    preset: str = ""
    save_value_levels: bool = False


_BLOCKS = {
    "pde": PdeBlock,
    "cost": CostBlock,
    "reduction": ReductionBlock,
    "hjb": HjbBlock,
    "run": RunBlock,
}


@dataclass(frozen=True)
class PipelineConfig:
    pde: PdeBlock = field(default_factory=PdeBlock)
    cost: CostBlock = field(default_factory=CostBlock)
    reduction: ReductionBlock = field(default_factory=ReductionBlock)
    hjb: HjbBlock = field(default_factory=HjbBlock)
    run: RunBlock = field(default_factory=RunBlock)

    def validate(self) -> "PipelineConfig":
        """Check every key against the preconditions of the stage that consumes it."""
        p, c, r, h = self.pde, self.cost, self.reduction, self.hjb
        _require(p.a < p.b, "pde.a must be below pde.b")
        for name in ("dx", "dt", "T"):
            _require(getattr(p, name) > 0, f"pde.{name} must be positive")
        _require(p.epsilon >= 0, "pde.epsilon must be >= 0")
        _require(p.initial in ("parabola", "hat"), f"pde.initial={p.initial!r} is not parabola or hat")
        _require(c.R > 0, "cost.R must be positive")
        _require(c.discount >= 0, "cost.lambda must be >= 0")
        _require(c.terminal in ("zero", "tracking"), f"cost.terminal={c.terminal!r} is not zero or tracking")
        _require(_reference_ok(c.reference), f"cost.reference={c.reference!r} is not a known preset")
        _require(r.ell >= 1, "reduction.ell must be >= 1")
        _require(0 < r.tau < 1, "reduction.tau must lie in (0, 1)")
        _require(r.energy_variant in ("linear", "squared"), "reduction.energy_variant must be linear or squared")
        _require(r.snapshot_control in ("reference", "zero", "test4"),
                 f"reduction.snapshot_control={r.snapshot_control!r} is not reference, zero or test4")
        _require(h.dt > 0, "hjb.dt must be positive")
        _require(len(h.controls) > 0, "hjb.controls must not be empty")
        _require(all(math.isfinite(u) for u in h.controls), "hjb.controls must be finite")
        _require(len(h.nodes_per_dim) in (1, r.ell), f"hjb.nodes_per_dim needs 1 or {r.ell} entries")
        _require(min(h.nodes_per_dim) >= 2, "hjb.nodes_per_dim entries must be >= 2")
        _require(h.box_margin >= 0, "hjb.box_margin must be >= 0")
        _require(h.coupling in ("zero", "value"), f"hjb.coupling={h.coupling!r} is not zero or value")
        return self

    @property
    def snapshot_control(self) -> str:
        if self.reduction.snapshot_control != "reference":
            return self.reduction.snapshot_control
        ref = self.cost.reference
        return ref.split(":", 1)[1] if ref.startswith("from_control:") else "zero"

    def with_overrides(self, pairs: dict[str, str]) -> "PipelineConfig":
        cfg = self
        for key, raw in pairs.items():
            cfg = _set(cfg, key, raw)
        return cfg

    def to_text(self) -> str:
        lines = []
        for block in _BLOCKS:
            obj = getattr(self, block)
            for f in fields(obj):
                key = "lambda" if (block, f.name) == ("cost", "discount") else f.name
                lines.append(f"{block}.{key}={_format(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"


def _require(ok: bool, message: str) -> None:
    if not ok:
        raise ConfigError(message)


def _reference_ok(ref: str) -> bool:
    return ref == "zero" or ref in ("from_control:zero", "from_control:test4")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(raw: str, example, key: str):
    raw = raw.strip()
    try:
        if isinstance(example, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(example, int):
            return int(raw)
        if isinstance(example, float):
            if "/" in raw:
                num, den = raw.split("/", 1)
                return float(num) / float(den)
            return float(raw)
        if isinstance(example, tuple):
            item = type(example[0]) if example else float
            return tuple(_coerce(part, item(0), key) for part in raw.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"cannot parse {key}={raw!r}") from None
    return raw


def _set(cfg: PipelineConfig, key: str, raw: str) -> PipelineConfig:
    block, _, name = key.strip().partition(".")
    if block not in _BLOCKS or not name:
        raise ConfigError(f"unknown key {key!r}")
    if (block, name) == ("cost", "lambda"):
        name = "discount"
    obj = getattr(cfg, block)
    known = {f.name for f in fields(obj)}
    if name not in known:
        raise ConfigError(f"unknown key {key!r}")
    value = _coerce(raw, getattr(obj, name), key)
    return replace(cfg, **{block: replace(obj, **{name: value})})


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Parse ``block.key=value`` lines; ``#`` starts a comment.

    A ``run.preset`` line loads that preset first, so later lines override it.
    """
    pairs: list[tuple[str, str]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        pairs.append((key.strip(), raw.strip()))
    cfg = base or PipelineConfig()
    for key, raw in pairs:
        if key == "run.preset" and raw:
            cfg = load_preset(raw)
    for key, raw in pairs:
        cfg = _set(cfg, key, raw)
    return cfg


def load_config(path) -> PipelineConfig:
    return parse_config(Path(path).read_text()).validate()


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("adapod.presets").joinpath(f"{name}.cfg").read_text()


def load_preset(name: str) -> PipelineConfig:
    lines = [ln for ln in preset_text(name).splitlines() if not ln.strip().startswith("run.preset")]
    cfg = parse_config("\n".join(lines))
    return replace(cfg, run=replace(cfg.run, preset=name)).validate()
