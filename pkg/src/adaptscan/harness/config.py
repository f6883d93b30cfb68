"""Experiment configuration: a JSON tree validated against a shipped schema."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import jsonschema

from adaptscan.common import PhantomKind
from adaptscan.controller import PipelineSettings, StoppingPolicy, WidthMode
from adaptscan.phantom import PhantomSpec
from adaptscan.recon import PosteriorSamplerConfig
from adaptscan.sampling import DEFAULT_FACTORS, MaskKind


class ConfigError(ValueError):
    """Invalid configuration; ``path`` locates the offending key."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class ExperimentKind(str, enum.Enum):
    CALIBRATE = "Calibrate"
    RUN_ADAPTIVE = "RunAdaptive"
    SWEEP_QUALITY = "SweepQuality"
    COVERAGE_SIM = "CoverageSim"


@dataclass
class PhantomConfig:
    kind: str = PhantomKind.KNEE_STATIC.value
    grid_size: int = 64
    voxel_spacing: list[float] = field(default_factory=lambda: [2.5, 2.5, 5.0])
    n_coils: int = 4
    shape_params: dict = field(default_factory=dict)


@dataclass
class ScheduleConfig:
    pattern: str = MaskKind.POISSON_DISC.value
    factors: list[float] = field(default_factory=lambda: list(DEFAULT_FACTORS))
    center_radius: int = 4
    max_overlap: float = 0.5
    seed: int | None = None


@dataclass
class SamplerSection:
    kind: str = "posterior"
    prior_precision: float = 4.0
    noise_precision: float | None = None
    solver: str = "ConjugateGradient"
    cg_tol: float = 1e-6
    cg_max_iter: int = 1000
    cg_precision: str = "single"
    overconfidence_shrink: float = 1.0


@dataclass
class PipelineSection:
    M: int = 20
    noise_fraction: float = 0.01
    blur_sigma: float = 0.7
    lvef_pairing: str = "cross"


@dataclass
class CoverageSection:
    n_calib_values: list[int] = field(default_factory=lambda: [5, 10, 50])
    alphas: list[float] = field(default_factory=lambda: [0.1])
    trials: int = 1000
    n_test: int = 100
    overconfidence_shrink: float = 0.3


@dataclass
class ExperimentConfig:
    experiment: str = ExperimentKind.RUN_ADAPTIVE.value
    seed: int = 0
    output_dir: str = "out"
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    pipeline: PipelineSection = field(default_factory=PipelineSection)
    alpha: float = 0.1
    sigma_floor: float = 1e-6
    epsilon: float = 0.5
    width_mode: str = WidthMode.FULL_WIDTH.value
    n_calib: int = 10
    n_test: int = 20
    sweep_include_full: bool = True
    coverage: CoverageSection = field(default_factory=CoverageSection)

    # -- derived objects ---------------------------------------------------

    def phantom_spec(self) -> PhantomSpec:
        p = self.phantom
        params = {k: (tuple(v) if isinstance(v, list) else v) for k, v in p.shape_params.items()}
        return PhantomSpec(PhantomKind(p.kind), p.grid_size, tuple(p.voxel_spacing), p.n_coils, params)

    def sampler_config(self) -> PosteriorSamplerConfig:
        s = self.sampler
        return PosteriorSamplerConfig(
            s.prior_precision, s.noise_precision, s.solver, s.cg_tol, s.cg_max_iter,
            s.overconfidence_shrink, s.cg_precision,
        )

    def pipeline_settings(self) -> PipelineSettings:
        p = self.pipeline
        return PipelineSettings(M=p.M, noise_fraction=p.noise_fraction, blur_sigma=p.blur_sigma,
                                lvef_pairing=p.lvef_pairing, sampler=self.sampler.kind)

    def policy(self, use_calibration: bool) -> StoppingPolicy:
        return StoppingPolicy(self.epsilon, use_calibration, WidthMode(self.width_mode))

    def schedule_shape(self) -> tuple[int, int]:
        g = self.phantom.grid_size
        if self.schedule.pattern == MaskKind.VISTA_LIKE.value:
            n_frames = 2 if self.phantom.kind == PhantomKind.CARDIAC_TWO_PHASE.value else 1
            return (g, n_frames)
        return (g, g)

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        return self if seed is None else replace(self, seed=int(seed))

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_SECTIONS = {
    "phantom": PhantomConfig,
    "schedule": ScheduleConfig,
    "sampler": SamplerSection,
    "pipeline": PipelineSection,
    "coverage": CoverageSection,
}


def schema() -> dict:
    text = resources.files("adaptscan.harness").joinpath("config_schema.json").read_text()
    return json.loads(text)


def _error_path(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def from_dict(d: dict) -> ExperimentConfig:
    """Validate ``d`` and build a config; missing keys take defaults."""
    validator = jsonschema.Draft7Validator(schema())
    errors = sorted(validator.iter_errors(d), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, _error_path(err))
    kwargs = {}
    for f in fields(ExperimentConfig):
        if f.name not in d:
            continue
        if f.name in _SECTIONS:
            kwargs[f.name] = _SECTIONS[f.name](**d[f.name])
        else:
            kwargs[f.name] = d[f.name]
    cfg = ExperimentConfig(**kwargs)
    _semantic_checks(cfg)
    return cfg


def _semantic_checks(cfg: ExperimentConfig) -> None:
    try:
        cfg.phantom_spec()
    except ValueError as exc:
        raise ConfigError(str(exc), "phantom") from None
    try:
        cfg.sampler_config()
    except ValueError as exc:
        raise ConfigError(str(exc), "sampler") from None
    f = cfg.schedule.factors
    if any(b >= a for a, b in zip(f, f[1:])):
        raise ConfigError(f"factors must be strictly decreasing, got {f}", "schedule.factors")
    if cfg.schedule.center_radius >= cfg.phantom.grid_size / 2:
        raise ConfigError("center_radius must be < grid_size / 2", "schedule.center_radius")
    if cfg.schedule.pattern == MaskKind.VISTA_LIKE.value and cfg.phantom.kind != PhantomKind.CARDIAC_TWO_PHASE.value:
        raise ConfigError("VistaLike schedules need a CardiacTwoPhase phantom", "schedule.pattern")


def load(path) -> ExperimentConfig:
    try:
        d = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"no such config file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    return from_dict(d)


def parse(text: str) -> ExperimentConfig:
    try:
        return from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
