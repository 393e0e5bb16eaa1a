"""Catalog of linear diagonal coefficients with analytic Lipschitz constants.

    f(t, x)    = C_f x                        (C_f diagonal, per-mode gains)
    g(t, x)    = c_g(t) (-A)^{-beta} x
    sigma(t)   = sigma0 exp(-gamma_sigma t) D (D diagonal, Y -> X)
    h(t, x, z) = c_h z x

All of them vanish at x = 0, so f(t,0) = g(t,0) = h(t,0,z) = 0 holds by
construction. A callable neutral gain is accepted for experiments but has no
analytic K2 and is rejected by :func:`derive_constants`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Union

import numpy as np

from .errors import DomainError, HypothesisError
from .fractional_noise import TimeGrid
from .hilbert_spectral import QCovariance, SpectralModel
from .jump_noise import MarkSpaceSpec

__all__ = [
    "CoefficientSet",
    "Delay",
    "HypothesisConstants",
    "check_h4_continuity",
    "check_h5",
    "derive_constants",
    "evaluate_delay",
    "validate_hypotheses",
]

DELAY_NAMES = ("r", "rho", "theta")


@dataclass(frozen=True)
class Delay:
    """Constant ``d0`` or sinusoidal ``d0 + d1 sin(omega t)``, clipped to [0, tau]."""

    d0: float
    d1: float = 0.0
    omega: float = 0.0

    @classmethod
    def constant(cls, value: float) -> "Delay":
        return cls(float(value))

    @classmethod
    def from_dict(cls, d: Mapping) -> "Delay":
        kind = d.get("kind", "constant")
        if kind == "constant":
            return cls.constant(d["value"])
        if kind == "sinusoidal":
            return cls(float(d["d0"]), float(d["d1"]), float(d["omega"]))
        raise DomainError(f"unknown delay kind {kind!r}")

    @property
    def is_constant(self) -> bool:
        return self.d1 == 0.0 or self.omega == 0.0

    def __call__(self, t, tau: float):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("delays are evaluated at t >= 0 only")
        raw = self.d0 + self.d1 * np.sin(self.omega * t)
        out = np.clip(raw, 0.0, tau)
        return float(out) if out.ndim == 0 else out


NeutralGain = Union[float, Callable[[float], float]]


@dataclass(frozen=True)
class CoefficientSet:
    drift_gains: tuple
    neutral_gain: NeutralGain = 0.0
    beta: float = 0.5
    sigma0: float = 0.0
    sigma_decay: float = 0.0
    jump_gain: float = 0.0
    delays: Mapping[str, Delay] = field(default_factory=dict)
    tau: float = 0.0
    sigma_diag: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "drift_gains", tuple(float(c) for c in self.drift_gains))
        if self.sigma_diag is not None:
            object.__setattr__(self, "sigma_diag", tuple(float(c) for c in self.sigma_diag))
        if self.tau < 0:
            raise DomainError(f"tau must be nonnegative, got {self.tau}")
        delays = {name: self.delays.get(name, Delay.constant(0.0)) for name in DELAY_NAMES}
        unknown = set(self.delays) - set(DELAY_NAMES)
        if unknown:
            raise DomainError(f"unknown delay names {sorted(unknown)}")
        object.__setattr__(self, "delays", delays)

    @property
    def time_invariant_neutral(self) -> bool:
        return not callable(self.neutral_gain)

    def neutral_gain_at(self, t: float) -> float:
        return float(self.neutral_gain(t)) if callable(self.neutral_gain) else float(self.neutral_gain)

    def delay(self, which: str, t):
        return self.delays[which](t, self.tau)

    def drift(self, t, x):
        return np.asarray(self.drift_gains) * x

    def neutral_weights(self, model: SpectralModel) -> np.ndarray:
        """mu_k^{-beta}; g(t, x)_k = c_g(t) mu_k^{-beta} x_k."""
        return model.mu ** (-self.beta)

    def neutral(self, model: SpectralModel, t: float, x):
        return self.neutral_gain_at(t) * self.neutral_weights(model) * x

    def sigma_scale(self, t):
        return self.sigma0 * np.exp(-self.sigma_decay * np.asarray(t, dtype=float))

    def sigma_diagonal(self, Q: QCovariance) -> np.ndarray:
        if self.sigma_diag is None:
            return np.ones(Q.n_modes)
        if len(self.sigma_diag) != Q.n_modes:
            raise DomainError(f"sigma_diag has {len(self.sigma_diag)} entries, Q has {Q.n_modes} modes")
        return np.asarray(self.sigma_diag)

    def sigma_hs_norm_sq(self, Q: QCovariance, t):
        """||sigma(t)||^2_{L_2^0} = sigma(t)^2 sum_n lambda_n D_n^2."""
        return self.sigma_scale(t) ** 2 * float(self.sigma_diagonal(Q) ** 2 @ Q.lam)

    def jump(self, t, x, z):
        return self.jump_gain * np.asarray(z)[..., None] * x


class HypothesisConstants(NamedTuple):
    K1: float
    K2: float
    K3: float
    beta: float
    norm_inv_beta: float
    gamma_sigma: float


def derive_constants(cset: CoefficientSet, model: SpectralModel, marks: MarkSpaceSpec) -> HypothesisConstants:
    if not 0.0 < cset.beta < 1.0:
        raise DomainError(f"beta must lie in (0, 1), got {cset.beta}")
    if len(cset.drift_gains) != model.dimension:
        raise DomainError(f"{len(cset.drift_gains)} drift gains for a model of dimension {model.dimension}")
    if not cset.time_invariant_neutral:
        raise DomainError("a time-varying neutral gain has no analytic K2; certificates need a constant gain")
    K1 = max(c * c for c in cset.drift_gains)
    K2 = float(cset.neutral_gain) ** 2
    K3 = cset.jump_gain**2 * marks.second_moment_weight
    return HypothesisConstants(K1, K2, K3, cset.beta, model.inverse_power_norm(cset.beta), cset.sigma_decay)


def check_h5(cset: CoefficientSet, Q: QCovariance, T: float, gamma_probe: float, n_cells: int = 256):
    """int_0^T e^{2 gamma s} ||sigma(s)||^2_{L_2^0} ds by composite Gauss-Legendre."""
    if not gamma_probe > 0:
        raise DomainError(f"gamma_probe must be positive, got {gamma_probe}")
    nodes, weights = np.polynomial.legendre.leggauss(10)
    edges = np.linspace(0.0, T, n_cells + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    s = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    w = (half[:, None] * weights[None, :]).ravel()
    vals = np.exp(2 * gamma_probe * s) * cset.sigma_hs_norm_sq(Q, s)
    integral = math.fsum(w * vals)
    return integral, math.isfinite(integral)


def check_h4_continuity(cset: CoefficientSet, grid: TimeGrid) -> float:
    """max_j ||(-A)^beta g(t_{j+1}, x) - (-A)^beta g(t_j, x)|| for unit x."""
    if cset.time_invariant_neutral:
        return 0.0
    gains = np.array([cset.neutral_gain_at(t) for t in grid.times])
    return float(np.max(np.abs(np.diff(gains))))


def evaluate_delay(cset: CoefficientSet, which: str, t: float) -> float:
    if which not in DELAY_NAMES:
        raise DomainError(f"delay must be one of {DELAY_NAMES}, got {which!r}")
    return cset.delay(which, t)


def validate_hypotheses(
    model: SpectralModel, Q: QCovariance, cset: CoefficientSet, marks: MarkSpaceSpec, T: float = 1.0
) -> dict:
    """Raise :class:`HypothesisError` naming the first failing hypothesis."""
    report = {}
    mu = model.eigenvalues
    if not mu[0] > 0 or any(b < a for a, b in zip(mu, mu[1:])):
        raise HypothesisError("H.1", "eigenvalues of -A must be positive and nondecreasing")
    if Q.n_modes > model.dimension:
        raise HypothesisError("H.1", f"Q has {Q.n_modes} modes but the model only {model.dimension}")
    report["H.1"] = {"M": 1.0, "lambda": model.mu_1}

    if len(cset.drift_gains) != model.dimension:
        raise HypothesisError("H.2", f"need {model.dimension} drift gains, got {len(cset.drift_gains)}")
    if not all(math.isfinite(c) for c in cset.drift_gains):
        raise HypothesisError("H.2", "drift gains must be finite")
    report["H.2"] = {"K1": max(c * c for c in cset.drift_gains)}

    if not 0.0 < cset.beta < 1.0:
        raise HypothesisError("H.3", f"beta must lie in (0, 1), got {cset.beta}")
    weights = cset.neutral_weights(model)
    sup_gain = abs(cset.neutral_gain_at(0.0)) if cset.time_invariant_neutral else max(
        abs(cset.neutral_gain_at(t)) for t in np.linspace(0.0, T, 1001)
    )
    if not math.isfinite(sup_gain):
        raise HypothesisError("H.3", "neutral gain must be finite")
    if sup_gain * float(weights.max()) >= 1.0:
        raise HypothesisError(
            "H.3", f"neutral map is not a contraction: |c_g| mu_1^(-beta) = {sup_gain * weights.max():.4g} >= 1"
        )
    report["H.3"] = {"beta": cset.beta, "K2": sup_gain**2}

    gap = check_h4_continuity(cset, TimeGrid.on_interval(T, 1024))
    report["H.4"] = {"max_gap": gap}

    if cset.sigma_decay < 0 or not math.isfinite(cset.sigma0):
        raise HypothesisError("H.5", "sigma0 must be finite and sigma_decay nonnegative")
    cset.sigma_diagonal(Q)
    integral, finite = check_h5(cset, Q, T, max(cset.sigma_decay, 1e-3))
    if not finite:
        raise HypothesisError("H.5", "weighted sigma integral diverges")
    report["H.5"] = {"gamma": cset.sigma_decay, "integral": integral}

    K3 = cset.jump_gain**2 * marks.second_moment_weight
    if not math.isfinite(K3):
        raise HypothesisError("H.6", "jump Lipschitz constant is not finite")
    report["H.6"] = {"K3": K3}

    for name in DELAY_NAMES:
        d = cset.delays[name]
        if d.d0 < 0 or (d.is_constant and d.d0 > cset.tau):
            raise HypothesisError("delays", f"delay {name} must take values in [0, tau={cset.tau}]")
    return report
