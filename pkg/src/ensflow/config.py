"""Experiment configuration: typed sections, flat key=value files, echoes.

The on-disk format is flat UTF-8 ``section.field=value`` lines (``#`` starts
a comment). Keys are exactly the model field paths, e.g. ``grid.nx=64``,
``ensf.M=300``, ``obs.fraction=0.5``. Point lists (bump centers, fracture
segments, noise regions) are encoded as semicolon-separated comma tuples.
Every seed is explicit; re-running from a config echo reproduces a run
byte for byte.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator


class GridSection(BaseModel):
    nx: int = Field(default=32, ge=2)
    ny: int = Field(default=32, ge=2)


class TimeSection(BaseModel):
    dt: float = Field(default=0.001, gt=0)
    T: float = Field(default=0.1, gt=0)

    @property
    def n_steps(self) -> int:
        steps = self.T / self.dt
        return int(round(steps))

    @model_validator(mode="after")
    def _integral_steps(self):
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(f"T/dt = {steps} is not an integer step count")
        return self


class SolverSection(BaseModel):
    mu: float = Field(default=0.2, gt=0)
    linear_tol: float = Field(default=1e-10, gt=0)
    clamp_saturation: bool = True
    cfl_check: bool = True


class PermeabilitySection(BaseModel):
    kind: Literal["bumps", "bumps_noisy", "fracture", "fracture_noisy"] = "bumps"
    n_centers: int = Field(default=40, ge=0)
    centers: Optional[list[list[float]]] = None
    segments: Optional[list[list[float]]] = None  # x1,y1,x2,y2 per segment
    fracture_set: Literal["full", "partial"] = "full"
    regions: Optional[list[list[float]]] = None  # fraction,mean,variance triples
    noise_is_std: bool = False
    seed: int = 0

    @field_validator("centers")
    @classmethod
    def _centers_shape(cls, v):
        if v is not None and any(len(p) != 2 for p in v):
            raise ValueError("centers must be x,y pairs")
        return v

    @field_validator("segments")
    @classmethod
    def _segments_shape(cls, v):
        if v is not None and any(len(s) != 4 for s in v):
            raise ValueError("segments must be x1,y1,x2,y2 quadruples")
        return v

    @field_validator("regions")
    @classmethod
    def _regions_shape(cls, v):
        if v is not None and any(len(r) != 3 for r in v):
            raise ValueError("regions must be fraction,mean,variance triples")
        return v


class InitialConditionSection(BaseModel):
    mode: Literal["half_normal", "gaussian", "zero"] = "half_normal"
    variance: float = Field(default=1.0 / 300.0, ge=0)


class ObservationSection(BaseModel):
    variables: str = "saturation"  # comma-joined subset of the state blocks
    fraction: float = Field(default=0.5, ge=0.0, le=1.0)
    nonlinearity: Literal["arctan", "identity"] = "arctan"
    noise_variance: float = Field(default=0.07, ge=0)
    resample_mask_each_step: bool = False  # ablation: detectors move every step

    def variable_tuple(self) -> tuple[str, ...]:
        return tuple(v.strip() for v in self.variables.split(",") if v.strip())


class EnsfSection(BaseModel):
    M: int = Field(default=100, ge=2)
    L: int = Field(default=200, ge=2)
    J: Optional[int] = None
    eps: float = Field(default=1e-3, gt=0, lt=0.5)
    damping: str = "one_minus_tau"
    likelihood_integration: Literal["semi_implicit", "explicit"] = "semi_implicit"
    dtype: Literal["float32", "float64"] = "float32"  # sampler precision


class LetkfSection(BaseModel):
    M: int = Field(default=100, ge=2)
    localization_radius: Optional[float] = 8.0
    inflation: float = Field(default=1.05, ge=1.0)
    dtype: Literal["float32", "float64"] = "float32"  # analysis precision


class SeedsSection(BaseModel):
    reference: int = 101
    model_ic: int = 202
    mask: int = 303
    noise: int = 404
    filter: int = 505


class ExperimentConfig(BaseModel):
    name: str = "experiment"
    grid: GridSection = GridSection()
    time: TimeSection = TimeSection()
    solver: SolverSection = SolverSection()
    ref_perm: PermeabilitySection = PermeabilitySection(kind="bumps_noisy")
    model_perm: PermeabilitySection = PermeabilitySection(kind="bumps")
    ic: InitialConditionSection = InitialConditionSection()
    obs: ObservationSection = ObservationSection()
    filter: Literal["ensf", "letkf", "none"] = "ensf"
    ensf: EnsfSection = EnsfSection()
    letkf: LetkfSection = LetkfSection()
    seeds: SeedsSection = SeedsSection()
    stride: int = Field(default=1, ge=1)


# -- flat key=value round trip ---------------------------------------------------


def _encode_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):  # list of numeric tuples
        return ";".join(",".join(repr(float(x)) for x in item) for item in value)
    return str(value)


def _decode_value(raw: str):
    raw = raw.strip()
    if raw == "":
        return None
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    if ";" in raw or ("," in raw and any(c.isdigit() for c in raw) and not raw.replace(",", "").replace(".", "").replace("-", "").replace("e", "").replace("+", "").isalpha()):
        # numeric tuple list unless it is a plain word list like variables
        try:
            return [[float(x) for x in item.split(",")] for item in raw.split(";") if item]
        except ValueError:
            return raw
    return raw


def flatten_config(cfg: ExperimentConfig) -> dict[str, str]:
    flat: dict[str, str] = {}

    def walk(prefix: str, obj):
        if isinstance(obj, BaseModel):
            for name in obj.__class__.model_fields:
                key = f"{prefix}.{name}" if prefix else name
                walk(key, getattr(obj, name))
        else:
            flat[prefix] = _encode_value(obj)

    walk("", cfg)
    return flat


def config_to_text(cfg: ExperimentConfig, header: Optional[str] = None) -> str:
    flat = flatten_config(cfg)
    lines = [f"# {header}"] if header else []
    lines.extend(f"{key}={flat[key]}" for key in sorted(flat))
    return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> ExperimentConfig:
    data: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        node = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = _decode_value(raw)
    return ExperimentConfig.model_validate(data)


def apply_overrides(cfg: ExperimentConfig, overrides: dict[str, str]) -> ExperimentConfig:
    """Apply dotted key=value overrides on top of an existing config."""
    flat = flatten_config(cfg)
    for key, value in overrides.items():
        if key not in flat:
            raise KeyError(f"unknown config key {key!r}")
        flat[key] = value
    text = "\n".join(f"{k}={v}" for k, v in flat.items())
    return parse_config_text(text)


# -- presets ---------------------------------------------------------------------


def desk_example1() -> ExperimentConfig:
    """Uncertain-permeability study, saturation-only observations, desk scale."""
    return ExperimentConfig(name="ex1-saturation-only")


def desk_multivar() -> ExperimentConfig:
    """All three state blocks observed through arctan detectors."""
    cfg = ExperimentConfig(name="ex-multivar")
    return cfg.model_copy(
        update={"obs": cfg.obs.model_copy(update={"variables": "saturation,velocity,pressure"})}
    )


def desk_fracture() -> ExperimentConfig:
    """Fracture-network study: the model knows only the main channel."""
    cfg = ExperimentConfig(name="ex3-fracture")
    return cfg.model_copy(
        update={
            "time": TimeSection(dt=0.0025, T=0.25),
            "ref_perm": PermeabilitySection(kind="fracture_noisy", fracture_set="full"),
            "model_perm": PermeabilitySection(kind="fracture", fracture_set="partial"),
            "obs": cfg.obs.model_copy(
                update={"variables": "saturation,velocity,pressure", "fraction": 0.4}
            ),
        }
    )


PRESETS = {
    "ex1-saturation-only": desk_example1,
    "ex-multivar": desk_multivar,
    "ex3-fracture": desk_fracture,
}


def paper_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    """Switch a desk config to the published scale: 64 x 64 mesh, 300 members,
    1000 pseudo-steps, full horizon."""
    horizon = 1.0 if cfg.ref_perm.kind.startswith("fracture") else 0.4
    return cfg.model_copy(
        update={
            "grid": GridSection(nx=64, ny=64),
            "time": TimeSection(dt=cfg.time.dt, T=horizon),
            "ensf": cfg.ensf.model_copy(update={"M": 300, "L": 1000}),
            "letkf": cfg.letkf.model_copy(update={"M": 300}),
        }
    )
