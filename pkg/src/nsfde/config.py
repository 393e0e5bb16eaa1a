"""JSON experiment configuration: schema, hashing and construction of domain objects."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Annotated, Literal, NamedTuple, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .coefficients import CoefficientSet, Delay, validate_hypotheses
from .errors import ConfigError, DomainError, HypothesisError
from .hilbert_spectral import QCovariance, SpectralModel
from .jump_noise import MarkSpaceSpec, mark_sampler_from_dict
from .mild_solver import InitialDatum, SolverConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Strict):
    eigenvalues: list[float] = Field(min_length=1)
    q_eigenvalues: list[float] = Field(min_length=1)
    hurst: float
    q_discarded_trace: float = 0.0


class DegenerateMarks(_Strict):
    kind: Literal["degenerate"]
    z0: float


class UniformMarks(_Strict):
    kind: Literal["uniform"]
    a: float
    b: float


class GaussianMarks(_Strict):
    kind: Literal["gaussian"]
    mean: float = 0.0
    sd: float = 1.0


class TwoPointMarks(_Strict):
    kind: Literal["two_point"]
    z1: float
    p1: float
    z2: float


MarkSection = Annotated[
    Union[DegenerateMarks, UniformMarks, GaussianMarks, TwoPointMarks], Field(discriminator="kind")
]


class JumpSection(_Strict):
    jump_intensity: float = 0.0
    mark_sampler: MarkSection = Field(default_factory=lambda: DegenerateMarks(kind="degenerate", z0=1.0))


class ConstantDelay(_Strict):
    kind: Literal["constant"] = "constant"
    value: float


class SinusoidalDelay(_Strict):
    kind: Literal["sinusoidal"]
    d0: float
    d1: float
    omega: float


DelaySection = Annotated[Union[ConstantDelay, SinusoidalDelay], Field(discriminator="kind")]


class DelaysSection(_Strict):
    r: DelaySection = ConstantDelay(value=0.0)
    rho: DelaySection = ConstantDelay(value=0.0)
    theta: DelaySection = ConstantDelay(value=0.0)


class CoefficientSection(_Strict):
    drift_gains: list[float]
    neutral_gain: float = 0.0
    beta: float = 0.5
    sigma0: float = 0.0
    sigma_decay: float = 0.0
    sigma_diag: Optional[list[float]] = None
    jump_gain: float = 0.0
    delays: DelaysSection = DelaysSection()
    tau: float = 0.0


class InitialSection(_Strict):
    vector: list[float]
    kappa: float = 0.0
    M0: Optional[float] = None
    a: Optional[float] = None


class SolverSection(_Strict):
    step: float
    horizon: float
    scheme: Literal["stepper", "picard"] = "stepper"
    neutral_tol: float = 1e-12
    neutral_max_iter: int = 50
    picard_max_iter: int = 50
    picard_tol: float = 1e-10


class MonteCarloSection(_Strict):
    n_paths: int = Field(ge=2)
    seed: int = Field(ge=0)


class OutputSection(_Strict):
    directory: str = "results"


class OracleSection(_Strict):
    description: str
    times: list[float]
    mean_sq: list[float]
    rel_tol: float
    n_se: float = 5.0


class ExperimentConfig(_Strict):
    name: str = "experiment"
    model: ModelSection
    jumps: JumpSection = JumpSection()
    coefficients: CoefficientSection
    initial: InitialSection
    solver: SolverSection
    monte_carlo: MonteCarloSection
    outputs: OutputSection = OutputSection()
    oracle: Optional[OracleSection] = None

    def digest(self) -> str:
        canon = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


class Experiment(NamedTuple):
    config: ExperimentConfig
    model: SpectralModel
    Q: QCovariance
    hurst: float
    cset: CoefficientSet
    marks: MarkSpaceSpec
    phi: InitialDatum
    solver: SolverConfig
    hypotheses: dict


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(raw)


def parse_config(raw: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = ".".join(str(p) for p in err["loc"])
        raise ConfigError(f"{loc}: {err['msg']}") from exc


def build_experiment(cfg: ExperimentConfig) -> Experiment:
    """Construct domain objects, then validate (H.1)-(H.6) before any computation."""
    m, c = cfg.model, cfg.coefficients
    try:
        model = SpectralModel(tuple(m.eigenvalues))
    except DomainError as exc:
        raise HypothesisError("H.1", str(exc)) from exc
    try:
        Q = QCovariance(tuple(m.q_eigenvalues), m.q_discarded_trace)
    except DomainError as exc:
        raise HypothesisError("H.5", f"Q must be trace class with nonnegative eigenvalues: {exc}") from exc
    if not 0.5 < m.hurst < 1.0:
        raise HypothesisError("hurst", f"Hurst parameter must lie in (1/2, 1), got {m.hurst}")
    try:
        marks = MarkSpaceSpec(cfg.jumps.jump_intensity, mark_sampler_from_dict(cfg.jumps.mark_sampler.model_dump()))
    except DomainError as exc:
        raise HypothesisError("H.6", str(exc)) from exc
    try:
        delays = {k: Delay.from_dict(getattr(c.delays, k).model_dump()) for k in ("r", "rho", "theta")}
        cset = CoefficientSet(
            tuple(c.drift_gains),
            neutral_gain=c.neutral_gain,
            beta=c.beta,
            sigma0=c.sigma0,
            sigma_decay=c.sigma_decay,
            jump_gain=c.jump_gain,
            delays=delays,
            tau=c.tau,
            sigma_diag=tuple(c.sigma_diag) if c.sigma_diag is not None else None,
        )
        phi = InitialDatum(tuple(cfg.initial.vector), cfg.initial.kappa)
        s = cfg.solver
        solver = SolverConfig(
            s.step, s.horizon, s.neutral_tol, s.neutral_max_iter, s.scheme, s.picard_max_iter, s.picard_tol
        )
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    if len(phi.vector) != model.dimension:
        raise ConfigError(f"initial.vector: expected {model.dimension} entries, got {len(phi.vector)}")
    try:
        report = validate_hypotheses(model, Q, cset, marks, solver.horizon)
    except DomainError as exc:
        raise HypothesisError("H.5", str(exc)) from exc
    return Experiment(cfg, model, Q, m.hurst, cset, marks, phi, solver, report)
