"""Diagonal (eigenbasis) model of the state space and the Q-fractional noise.

Everything here acts component-wise on coefficient vectors in the common
eigenbasis {e_k} of -A, so the semigroup and fractional powers are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .fractional_noise import BoundCheck, StepFunction, TimeGrid, check_hurst, fbm_increments, rkhs_gram

__all__ = [
    "QCovariance",
    "QfbmIncrements",
    "SpectralModel",
    "fractional_power_apply",
    "lemma2_bound_check",
    "lemma2_exact_moment",
    "qfbm_increments",
    "sample_qfbm",
    "schedule_as_step_functions",
    "semigroup_apply",
    "smoothing_constant",
]


@dataclass(frozen=True)
class SpectralModel:
    """Eigenvalues mu_k > 0 of -A, in nondecreasing order."""

    eigenvalues: tuple

    def __post_init__(self):
        mu = tuple(float(m) for m in self.eigenvalues)
        if not mu:
            raise DomainError("spectral model needs at least one eigenvalue")
        if not all(math.isfinite(m) for m in mu):
            raise DomainError("eigenvalues must be finite")
        if mu[0] <= 0:
            raise DomainError(f"smallest eigenvalue must be positive (0 in the resolvent set), got {mu[0]}")
        if any(b < a for a, b in zip(mu, mu[1:])):
            raise DomainError("eigenvalues must be nondecreasing")
        object.__setattr__(self, "eigenvalues", mu)

    @property
    def mu(self) -> np.ndarray:
        return np.asarray(self.eigenvalues)

    @property
    def dimension(self) -> int:
        return len(self.eigenvalues)

    @property
    def mu_1(self) -> float:
        return self.eigenvalues[0]

    def _check_vector(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.dimension:
            raise DomainError(f"vector has {v.shape[-1]} coefficients, model dimension is {self.dimension}")
        return v

    def inverse_power_norm(self, beta: float) -> float:
        """||(-A)^{-beta}|| = mu_1^{-beta}."""
        return self.mu_1 ** (-beta)


@dataclass(frozen=True)
class QCovariance:
    """Eigenvalues lambda_n >= 0 of the noise covariance Q (first n_Q modes)."""

    eigenvalues: tuple
    discarded_trace: float = 0.0

    def __post_init__(self):
        lam = tuple(float(x) for x in self.eigenvalues)
        if not lam:
            raise DomainError("Q needs at least one eigenvalue")
        if any(x < 0 or not math.isfinite(x) for x in lam):
            raise DomainError("Q eigenvalues must be finite and nonnegative")
        if self.discarded_trace < 0:
            raise DomainError("discarded trace cannot be negative")
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def lam(self) -> np.ndarray:
        return np.asarray(self.eigenvalues)

    @property
    def n_modes(self) -> int:
        return len(self.eigenvalues)

    @property
    def trace(self) -> float:
        return math.fsum(self.eigenvalues)


@dataclass
class QfbmIncrements:
    """Increments of sqrt(lambda_n) beta_n^H per mode and cell.

    ``increments`` has shape ``(n_Q, n_steps)`` for one realization or
    ``(n_paths, n_Q, n_steps)`` for an ensemble.
    """

    grid: TimeGrid
    increments: np.ndarray
    seed: int

    def values(self) -> np.ndarray:
        """Cumulative values B_n(t_j) including the zero at t_0."""
        shape = self.increments.shape[:-1] + (self.grid.n_nodes,)
        out = np.zeros(shape)
        np.cumsum(self.increments, axis=-1, out=out[..., 1:])
        return out


def semigroup_apply(model: SpectralModel, t: float, v) -> np.ndarray:
    """S(t) v = (e^{-mu_k t} v_k)_k."""
    if t < 0:
        raise DomainError(f"semigroup is defined for t >= 0, got {t}")
    v = model._check_vector(v)
    return np.exp(-model.mu * t) * v


def fractional_power_apply(model: SpectralModel, alpha: float, v) -> np.ndarray:
    """(-A)^alpha v = (mu_k^alpha v_k)_k for alpha in [-1, 1]."""
    if not -1.0 <= alpha <= 1.0:
        raise DomainError(f"fractional power exponent must lie in [-1, 1], got {alpha}")
    v = model._check_vector(v)
    return model.mu**alpha * v


def smoothing_constant(model: SpectralModel, beta: float, lambda_choice: float) -> float:
    """Smallest M with ||(-A)^{1-beta} S(t)|| <= M t^{-(1-beta)} e^{-lambda_choice t}.

    Per mode the supremum of t^{1-beta} e^{-(mu_k - lambda_choice) t} sits at
    t* = (1-beta)/(mu_k - lambda_choice).
    """
    if not 0.0 < beta < 1.0:
        raise DomainError(f"beta must lie in (0, 1), got {beta}")
    if not 0.0 < lambda_choice < model.mu_1:
        raise DomainError(
            f"lambda_choice must lie in (0, mu_1={model.mu_1}); at or above mu_1 the bound is infinite"
        )
    e = 1.0 - beta
    mu = model.mu
    per_mode = (e / math.e) ** e * (mu / (mu - lambda_choice)) ** e
    return float(per_mode.max())


def qfbm_increments(
    Q: QCovariance, H: float, grid: TimeGrid, seed: int, n_paths: int = 1, first_path: int = 0
) -> np.ndarray:
    """Ensemble of Q-fBm increments, shape ``(n_paths, n_Q, n_steps)``.

    Mode n of path p uses the stream (seed, n + 1, p); the scaling by
    sqrt(lambda_n) is applied after sampling so degenerate modes are exactly 0.
    """
    H = check_hurst(H)
    out = np.empty((n_paths, Q.n_modes, grid.n_steps))
    for n, lam in enumerate(Q.eigenvalues):
        incs = fbm_increments(grid, H, n_paths, seed, stream=(n + 1,), first_path=first_path)
        out[:, n, :] = math.sqrt(lam) * incs
    return out


def sample_qfbm(
    model: SpectralModel, Q: QCovariance, H: float, grid: TimeGrid, seed: int, path_index: int = 0
) -> QfbmIncrements:
    if Q.n_modes > model.dimension:
        raise DomainError(f"Q has {Q.n_modes} modes but the model only {model.dimension}")
    incs = qfbm_increments(Q, H, grid, seed, n_paths=1, first_path=path_index)[0]
    return QfbmIncrements(grid, incs, seed)


def lemma2_bound_check(
    model: SpectralModel,
    Q: QCovariance,
    sigma_schedule,
    H: float,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
) -> BoundCheck:
    """Monte Carlo check of E||int psi dB^H||^2 <= 2 H t^{2H-1} int ||psi||^2_{L_2^0}.

    ``sigma_schedule[j, n]`` is the diagonal entry psi(t_j) e_n = d e_n on
    cell j, so the integrand is a step function per mode.
    """
    H = check_hurst(H)
    d = np.asarray(sigma_schedule, dtype=float)
    if d.shape != (grid.n_steps, Q.n_modes):
        raise DomainError(f"schedule must have shape {(grid.n_steps, Q.n_modes)}, got {d.shape}")
    if Q.n_modes > model.dimension:
        raise DomainError("Q has more modes than the model")
    if n_paths < 2:
        raise DomainError("need at least two paths for a standard error")
    incs = qfbm_increments(Q, H, grid, seed, n_paths)
    # per mode, left-point sum of d_n(t_j) * sqrt(lambda_n) dbeta_n over cells
    coords = np.einsum("pnj,jn->pn", incs, d)
    sq = np.sum(coords**2, axis=1)
    lhs = float(sq.mean())
    se = float(sq.std(ddof=1) / math.sqrt(n_paths))
    t = grid.T
    hs_norm_sq = (d**2) @ Q.lam
    rhs = 2 * H * t ** (2 * H - 1) * math.fsum(hs_norm_sq * grid.step)
    return BoundCheck(lhs, rhs, lhs <= rhs + 5 * se, se)


def lemma2_exact_moment(Q: QCovariance, sigma_schedule, H: float, grid: TimeGrid) -> float:
    """Exact E||int psi dB^H||^2 = sum_n lambda_n <d_n, d_n>_H for the step schedule."""
    d = np.asarray(sigma_schedule, dtype=float)
    W = rkhs_gram(grid.times, H)
    return math.fsum(lam * float(d[:, n] @ W @ d[:, n]) for n, lam in enumerate(Q.eigenvalues))


def schedule_as_step_functions(sigma_schedule, grid: TimeGrid) -> list[StepFunction]:
    d = np.asarray(sigma_schedule, dtype=float)
    return [StepFunction.on_grid(grid, d[:, n]) for n in range(d.shape[1])]
