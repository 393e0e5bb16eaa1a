"""Scalar fractional Brownian motion with Hurst index in (1/2, 1).

Covariance, Volterra kernel, exact Gaussian path sampling, the reproducing
kernel scalar product for step functions, and left-point Wiener integrals.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import integrate, linalg, special

from .errors import DomainError, FactorizationError

__all__ = [
    "BoundCheck",
    "ScalarFbmPath",
    "StepFunction",
    "TimeGrid",
    "check_hurst",
    "fbm_covariance",
    "fbm_increments",
    "floored_cholesky",
    "hurst_constant",
    "increment_covariance",
    "increment_factor",
    "lemma1_bound_check",
    "rkhs_gram",
    "rkhs_scalar_product",
    "sample_fbm_paths",
    "stream_rng",
    "volterra_kernel",
    "wiener_integral_scalar",
    "write_ensemble_csv",
]

PIVOT_FLOOR = 1e-14
MAX_GRID_NODES = 2**12


class BoundCheck(NamedTuple):
    lhs: float
    rhs: float
    holds: bool
    std_err: float = 0.0


def check_hurst(H: float) -> float:
    H = float(H)
    if not 0.5 < H < 1.0:
        raise DomainError(f"Hurst parameter must lie strictly in (1/2, 1), got {H}")
    return H


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < t_1 < ... < t_n = n * step."""

    step: float
    n_steps: int

    def __post_init__(self):
        if not (self.step > 0 and math.isfinite(self.step)):
            raise DomainError(f"grid step must be positive, got {self.step}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise DomainError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @classmethod
    def on_interval(cls, T: float, n_steps: int) -> "TimeGrid":
        return cls(T / n_steps, n_steps)

    @property
    def T(self) -> float:
        return self.n_steps * self.step

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.step

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1


@dataclass
class ScalarFbmPath:
    grid: TimeGrid
    values: np.ndarray
    seed: int
    path_index: int = 0

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)


@dataclass
class StepFunction:
    """Piecewise-constant function: ``values[i]`` on ``[edges[i], edges[i+1])``."""

    edges: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.edges.ndim != 1 or self.edges.size < 2:
            raise DomainError("step function needs at least two edges")
        if np.any(np.diff(self.edges) <= 0):
            raise DomainError("step function edges must be strictly increasing")
        if self.values.shape != (self.edges.size - 1,):
            raise DomainError(
                f"expected {self.edges.size - 1} cell values, got shape {self.values.shape}"
            )

    @classmethod
    def on_grid(cls, grid: TimeGrid, values) -> "StepFunction":
        return cls(grid.times, values)

    @classmethod
    def indicator(cls, edges, t: float) -> "StepFunction":
        """1_{[0,t]} on the given edges; t must coincide with an edge."""
        edges = np.asarray(edges, dtype=float)
        return cls(edges, (edges[1:] <= t * (1 + 1e-14)).astype(float))

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def __abs__(self) -> "StepFunction":
        return StepFunction(self.edges, np.abs(self.values))

    def l2_norm_sq(self) -> float:
        return math.fsum(self.values**2 * self.widths)


def fbm_covariance(s, t, H: float):
    """R_H(s, t) = (t^{2H} + s^{2H} - |t - s|^{2H}) / 2."""
    H = check_hurst(H)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise DomainError("fBm covariance is defined for nonnegative times only")
    two_h = 2.0 * H
    out = 0.5 * (t**two_h + s**two_h - np.abs(t - s) ** two_h)
    return float(out) if out.ndim == 0 else out


def hurst_constant(H: float) -> float:
    """Normalising constant c_H of the Volterra kernel."""
    H = check_hurst(H)
    return math.sqrt(H * (2 * H - 1) / special.beta(2 - 2 * H, H - 0.5))


def volterra_kernel(t: float, s: float, H: float) -> float:
    """K_H(t, s), zero for t <= s.

    The (u - s)^{H - 3/2} endpoint singularity is removed with the
    substitution u = s + v^{1/(H - 1/2)}, which turns the integrand into
    (s + v^{1/p})^p / p with p = H - 1/2.
    """
    H = check_hurst(H)
    if not s > 0:
        raise DomainError(f"Volterra kernel is singular at s <= 0, got s={s}")
    if t <= s:
        return 0.0
    p = H - 0.5
    upper = (t - s) ** p

    def integrand(v):
        return (s + v ** (1.0 / p)) ** p / p

    value, _ = integrate.quad(integrand, 0.0, upper, epsabs=0.0, epsrel=1e-13, limit=200)
    return hurst_constant(H) * s ** (-p) * value


def increment_covariance(grid: TimeGrid, H: float) -> np.ndarray:
    """Covariance of the n increments of fBm over the cells of ``grid``."""
    t = grid.times
    a, b = t[:-1], t[1:]
    return _cell_pair_kernel(a, b, a, b, check_hurst(H))


def _cell_pair_kernel(a, b, c, d, H):
    # 1/2 (|b-c|^{2H} - |a-c|^{2H} - |b-d|^{2H} + |a-d|^{2H}) for all cell pairs;
    # equals H(2H-1) times the double integral of |t-s|^{2H-2} over [a,b]x[c,d].
    two_h = 2.0 * H
    A, B = a[:, None], b[:, None]
    C, D = c[None, :], d[None, :]
    return 0.5 * (
        np.abs(B - C) ** two_h - np.abs(A - C) ** two_h - np.abs(B - D) ** two_h + np.abs(A - D) ** two_h
    )


def floored_cholesky(C: np.ndarray, floor: float = PIVOT_FLOOR) -> np.ndarray:
    """Lower Cholesky factor with pivots below ``floor`` raised to ``floor``.

    LAPACK is tried first; whenever every pivot exceeds the floor the result
    is identical to the floored recursion. Pivots more negative than
    roundoff can explain raise :class:`FactorizationError`.
    """
    C = np.asarray(C, dtype=float)
    try:
        L = linalg.cholesky(C, lower=True, check_finite=True)
        if np.all(np.diag(L) ** 2 >= floor):
            return L
    except linalg.LinAlgError:
        pass
    n = C.shape[0]
    tol = 1e-10 * max(float(np.max(np.abs(np.diag(C)))), floor)
    L = np.zeros_like(C)
    for j in range(n):
        row = L[j, :j]
        pivot = C[j, j] - row @ row
        if pivot < -tol:
            raise FactorizationError(
                f"negative pivot {pivot:.3e} at index {j} (tolerance {tol:.1e})", index=j, pivot=pivot
            )
        pivot = max(pivot, floor)
        L[j, j] = math.sqrt(pivot)
        L[j + 1 :, j] = (C[j + 1 :, j] - L[j + 1 :, :j] @ row) / L[j, j]
    return L


@functools.lru_cache(maxsize=16)
def _cached_factor(H: float, step: float, n_steps: int) -> np.ndarray:
    L = floored_cholesky(increment_covariance(TimeGrid(step, n_steps), H))
    L.setflags(write=False)
    return L


def increment_factor(grid: TimeGrid, H: float) -> np.ndarray:
    H = check_hurst(H)
    if grid.n_nodes > MAX_GRID_NODES + 1:
        raise DomainError(f"grid has {grid.n_nodes} nodes; exact sampling is capped at {MAX_GRID_NODES}")
    return _cached_factor(H, grid.step, grid.n_steps)


def stream_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the stream addressed by (seed, *keys)."""
    if seed < 0 or any(k < 0 for k in keys):
        raise DomainError("seeds and stream keys must be nonnegative integers")
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def fbm_increments(
    grid: TimeGrid,
    H: float,
    n_paths: int,
    seed: int,
    stream: Sequence[int] = (),
    first_path: int = 0,
) -> np.ndarray:
    """Exact fBm increments, shape ``(n_paths, n_steps)``.

    Path ``i`` draws its normals from the stream ``(seed, *stream, first_path + i)``
    so any subset of paths can be regenerated independently.
    """
    if n_paths < 1:
        raise DomainError("n_paths must be at least 1")
    L = increment_factor(grid, H)
    Z = np.empty((n_paths, grid.n_steps))
    for i in range(n_paths):
        Z[i] = stream_rng(seed, *stream, first_path + i).standard_normal(grid.n_steps)
    return Z @ L.T


def sample_fbm_paths(grid: TimeGrid, H: float, n_paths: int, seed: int) -> list[ScalarFbmPath]:
    incs = fbm_increments(grid, H, n_paths, seed)
    values = np.zeros((n_paths, grid.n_nodes))
    np.cumsum(incs, axis=1, out=values[:, 1:])
    return [ScalarFbmPath(grid, values[i], seed, i) for i in range(n_paths)]


def _require_same_edges(psi: StepFunction, phi: StepFunction):
    if psi.edges.shape != phi.edges.shape or not np.array_equal(psi.edges, phi.edges):
        raise DomainError("step functions live on different grids")


def rkhs_gram(edges, H: float) -> np.ndarray:
    edges = np.asarray(edges, dtype=float)
    return _cell_pair_kernel(edges[:-1], edges[1:], edges[:-1], edges[1:], check_hurst(H))


def rkhs_scalar_product(psi: StepFunction, phi: StepFunction, H: float, T: float | None = None) -> float:
    """<psi, phi> in the fBm reproducing kernel space, exact for step functions."""
    _require_same_edges(psi, phi)
    if psi.edges[0] != 0.0:
        raise DomainError("step functions must start at t = 0")
    if T is not None and not math.isclose(psi.edges[-1], T, rel_tol=1e-12):
        raise DomainError(f"step functions end at {psi.edges[-1]}, expected T={T}")
    W = rkhs_gram(psi.edges, H)
    return math.fsum(psi.values * (W @ phi.values))


def lemma1_bound_check(psi: StepFunction, H: float, T: float | None = None) -> BoundCheck:
    """Compare ||psi||^2_{|H|} with 2 H T^{2H-1} ||psi||^2_{L^2}."""
    H = check_hurst(H)
    T = float(psi.edges[-1]) if T is None else float(T)
    lhs = rkhs_scalar_product(abs(psi), abs(psi), H, T)
    rhs = 2 * H * T ** (2 * H - 1) * psi.l2_norm_sq()
    return BoundCheck(lhs, rhs, lhs <= rhs * (1 + 1e-12))


def wiener_integral_scalar(psi: StepFunction, path: ScalarFbmPath) -> float:
    """Left-point Riemann-Stieltjes sum of psi against the path."""
    if psi.edges.shape != (path.grid.n_nodes,) or not np.allclose(
        psi.edges, path.grid.times, rtol=0, atol=1e-12 * path.grid.T
    ):
        raise DomainError("integrand grid does not match the path grid")
    return math.fsum(psi.values * path.increments)


def write_ensemble_csv(paths: Sequence[ScalarFbmPath], fh, comments: Sequence[str] = ()) -> None:
    """Rows ``path_id,t,value`` with 17 significant digits."""
    for line in comments:
        fh.write(f"# {line}\n")
    fh.write("path_id,t,value\n")
    stamps = {}
    for p in paths:
        if p.grid not in stamps:
            stamps[p.grid] = [f"{t:.17g}" for t in p.grid.times.tolist()]
        pid = p.path_index
        fh.write("".join(f"{pid},{t},{v:.17g}\n" for t, v in zip(stamps[p.grid], np.asarray(p.values).tolist())))
