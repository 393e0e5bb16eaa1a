"""Poisson point process with finite characteristic measure on real marks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import DomainError
from .fractional_noise import TimeGrid, stream_rng

__all__ = [
    "Degenerate",
    "Gaussian",
    "JumpTrain",
    "MarkSpaceSpec",
    "TwoPoint",
    "Uniform",
    "compensated_sum",
    "mark_sampler_from_dict",
    "merge_trains",
    "sample_jump_train",
]

# stream tag for jump trains; fBm modes use tags 1..n_Q
JUMP_STREAM = 0


@dataclass(frozen=True)
class Degenerate:
    z0: float
    kind = "degenerate"

    def sample(self, rng, n):
        return np.full(n, float(self.z0))

    @property
    def mean(self):
        return float(self.z0)

    @property
    def second_moment(self):
        return float(self.z0) ** 2


@dataclass(frozen=True)
class Uniform:
    a: float
    b: float
    kind = "uniform"

    def __post_init__(self):
        if not self.a < self.b:
            raise DomainError(f"uniform marks need a < b, got ({self.a}, {self.b})")

    def sample(self, rng, n):
        return rng.uniform(self.a, self.b, n)

    @property
    def mean(self):
        return 0.5 * (self.a + self.b)

    @property
    def second_moment(self):
        return (self.a**2 + self.a * self.b + self.b**2) / 3.0


@dataclass(frozen=True)
class Gaussian:
    mean_: float = 0.0
    sd: float = 1.0
    kind = "gaussian"

    def __post_init__(self):
        if self.sd < 0:
            raise DomainError("gaussian mark sd must be nonnegative")

    def sample(self, rng, n):
        return self.mean_ + self.sd * rng.standard_normal(n)

    @property
    def mean(self):
        return float(self.mean_)

    @property
    def second_moment(self):
        return self.mean_**2 + self.sd**2


@dataclass(frozen=True)
class TwoPoint:
    z1: float
    p1: float
    z2: float
    kind = "two_point"

    def __post_init__(self):
        if not 0.0 <= self.p1 <= 1.0:
            raise DomainError(f"two-point probability must lie in [0, 1], got {self.p1}")

    def sample(self, rng, n):
        return np.where(rng.random(n) < self.p1, self.z1, self.z2)

    @property
    def mean(self):
        return self.p1 * self.z1 + (1 - self.p1) * self.z2

    @property
    def second_moment(self):
        return self.p1 * self.z1**2 + (1 - self.p1) * self.z2**2


MarkSampler = Union[Degenerate, Uniform, Gaussian, TwoPoint]


def mark_sampler_from_dict(d: dict) -> MarkSampler:
    kind = d.get("kind")
    if kind == "degenerate":
        return Degenerate(d["z0"])
    if kind == "uniform":
        return Uniform(d["a"], d["b"])
    if kind == "gaussian":
        return Gaussian(d.get("mean", 0.0), d.get("sd", 1.0))
    if kind == "two_point":
        return TwoPoint(d["z1"], d["p1"], d["z2"])
    raise DomainError(f"unknown mark sampler kind {kind!r}")


@dataclass(frozen=True)
class MarkSpaceSpec:
    """nu = total_intensity * law(mark); the jump shape is zeta(z) = z."""

    total_intensity: float
    mark_sampler: MarkSampler = field(default_factory=lambda: Degenerate(1.0))

    def __post_init__(self):
        if not (self.total_intensity >= 0 and math.isfinite(self.total_intensity)):
            raise DomainError(f"total intensity must be finite and nonnegative, got {self.total_intensity}")

    @property
    def first_moment_weight(self) -> float:
        """Integral of zeta against nu; the compensator rate per unit state."""
        return self.total_intensity * self.mark_sampler.mean

    @property
    def second_moment_weight(self) -> float:
        """Integral of zeta^2 against nu."""
        return self.total_intensity * self.mark_sampler.second_moment


@dataclass
class JumpTrain:
    times: np.ndarray
    marks: np.ndarray
    seed: int = 0
    horizon: float = math.inf

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.marks = np.asarray(self.marks, dtype=float)
        if self.times.shape != self.marks.shape:
            raise DomainError("jump times and marks differ in length")
        if self.times.size and (self.times[0] <= 0 or np.any(np.diff(self.times) <= 0)):
            raise DomainError("jump times must be positive and strictly increasing")

    def __len__(self):
        return self.times.size


def sample_jump_train(spec: MarkSpaceSpec, T: float, seed: int, path_index: int = 0) -> JumpTrain:
    """Poisson(nu(U) T) many events, uniform order statistics on (0, T]."""
    if not T > 0:
        raise DomainError(f"horizon must be positive, got {T}")
    rng = stream_rng(seed, JUMP_STREAM, path_index)
    count = rng.poisson(spec.total_intensity * T) if spec.total_intensity > 0 else 0
    # T * (1 - U) maps [0, 1) onto (0, T]
    times = np.sort(T * (1.0 - rng.random(count)))
    marks = spec.mark_sampler.sample(rng, count)
    return JumpTrain(times, marks, seed, T)


def merge_trains(a: JumpTrain, b: JumpTrain) -> JumpTrain:
    times = np.concatenate([a.times, b.times])
    marks = np.concatenate([a.marks, b.marks])
    order = np.argsort(times, kind="stable")
    return JumpTrain(times[order], marks[order], a.seed, min(a.horizon, b.horizon))


def compensated_sum(
    train: JumpTrain,
    weight: Callable[[np.ndarray], np.ndarray],
    jump_coeff,
    compensator_rate: Callable[[np.ndarray], np.ndarray],
    grid: TimeGrid,
) -> float:
    """sum_i weight(t_i) c_i - int_0^T weight(s) rate(s) ds, compensator by left-point rule."""
    coeff = np.broadcast_to(np.asarray(jump_coeff, dtype=float), train.times.shape)
    jumps = math.fsum(np.asarray(weight(train.times), dtype=float) * coeff) if len(train) else 0.0
    left = grid.times[:-1]
    comp = np.broadcast_to(np.asarray(weight(left) * compensator_rate(left), dtype=float), left.shape)
    return jumps - math.fsum(comp * grid.step)
