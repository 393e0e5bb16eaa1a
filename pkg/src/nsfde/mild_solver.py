"""Mild solutions of the neutral delay equation in the truncated eigenbasis.

Per mode k, with E = exp(-mu_k dt) and y = x + g(t, x(t - r(t))), one step is

    y(t')  = E y(t) + (1 - E) g(t) + (1 - E)/mu_k f(t) + E sigma(t) dB
             + sum_{t < t_i <= t'} exp(-mu_k (t' - t_i)) h_i
             - (1 - E)/mu_k * (compensator rate at t)
    x(t')  = y(t') - g(t', x(t' - r(t')))

which is the variation-of-constants formula with every coefficient frozen at
the left node. Delayed states are read from the piecewise-constant,
right-continuous interpolant of the computed path; jump coefficients use left
limits. :func:`picard_apply` evaluates the same quadratures anchored at t = 0.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientSet
from .errors import DomainError, SolverError
from .fractional_noise import TimeGrid
from .hilbert_spectral import QCovariance, SpectralModel, qfbm_increments
from .jump_noise import JumpTrain, MarkSpaceSpec, sample_jump_train

__all__ = [
    "HistoryPath",
    "InitialDatum",
    "MomentTable",
    "NoiseBatch",
    "NoiseRealization",
    "SolverConfig",
    "is_deterministic",
    "monte_carlo_moments",
    "picard_apply",
    "picard_iterate",
    "sample_noise",
    "sample_noise_batch",
    "simulate_batch",
    "solve_path",
]

_SNAP = 1e-9


@dataclass(frozen=True)
class InitialDatum:
    """phi(t) = exp(kappa t) v on [-tau, 0]; kappa = 0 gives a constant datum."""

    vector: tuple
    kappa: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "vector", tuple(float(c) for c in self.vector))

    @property
    def v(self) -> np.ndarray:
        return np.asarray(self.vector)

    @property
    def kind(self) -> str:
        return "constant" if self.kappa == 0.0 else "exponential"

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(self.kappa * t)[..., None] * self.v

    def sup_norm_sq(self, tau: float) -> float:
        """E|phi|^2 over [-tau, 0]; the datum is deterministic."""
        base = float(self.v @ self.v)
        return base if self.kappa >= 0 else base * math.exp(-2 * self.kappa * tau)


@dataclass(frozen=True)
class SolverConfig:
    step: float
    horizon: float
    neutral_tol: float = 1e-12
    neutral_max_iter: int = 50
    scheme: str = "stepper"
    picard_max_iter: int = 50
    picard_tol: float = 1e-10

    def __post_init__(self):
        if not self.step > 0:
            raise DomainError(f"step must be positive, got {self.step}")
        if not self.horizon > 0:
            raise DomainError(f"horizon must be positive, got {self.horizon}")
        n = round(self.horizon / self.step)
        if n < 1 or abs(n * self.step - self.horizon) > 1e-9 * self.horizon:
            raise DomainError(f"horizon {self.horizon} is not a multiple of the step {self.step}")
        if self.scheme not in ("stepper", "picard"):
            raise DomainError(f"unknown scheme {self.scheme!r}")

    @property
    def n_steps(self) -> int:
        return round(self.horizon / self.step)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.step, self.n_steps)


@dataclass
class NoiseRealization:
    """One path's driving noise: Q-fBm increments ``(n_Q, n_steps)`` and a jump train."""

    grid: TimeGrid
    qfbm: np.ndarray
    train: JumpTrain
    marks: MarkSpaceSpec
    seed: int = 0
    path_index: int = 0


@dataclass
class NoiseBatch:
    grid: TimeGrid
    qfbm: np.ndarray  # (n_paths, n_Q, n_steps)
    trains: list
    marks: MarkSpaceSpec

    @classmethod
    def from_realization(cls, noise: NoiseRealization) -> "NoiseBatch":
        return cls(noise.grid, noise.qfbm[None], [noise.train], noise.marks)

    def __len__(self):
        return len(self.trains)


def sample_noise_batch(
    Q: QCovariance, H: float, marks: MarkSpaceSpec, grid: TimeGrid, seed: int, n_paths: int, first_path: int = 0
) -> NoiseBatch:
    incs = qfbm_increments(Q, H, grid, seed, n_paths, first_path)
    trains = [sample_jump_train(marks, grid.T, seed, first_path + i) for i in range(n_paths)]
    return NoiseBatch(grid, incs, trains, marks)


def sample_noise(
    Q: QCovariance, H: float, marks: MarkSpaceSpec, grid: TimeGrid, seed: int, path_index: int = 0
) -> NoiseRealization:
    batch = sample_noise_batch(Q, H, marks, grid, seed, 1, path_index)
    return NoiseRealization(grid, batch.qfbm[0], batch.trains[0], marks, seed, path_index)


def _locate(s: float, step: float) -> tuple[int, bool]:
    """Regular cell index holding s (snapped to nearby nodes) and whether s is a node."""
    x = s / step
    j = math.floor(x + _SNAP)
    return j, abs(x - j) <= _SNAP


def _jump_cells(times: np.ndarray, step: float, n_steps: int) -> np.ndarray:
    # event at t lies in cell j when t_j < t <= t_{j+1}
    return np.clip(np.ceil(times / step).astype(int) - 1, 0, n_steps - 1)


@dataclass
class HistoryPath:
    """Cadlag solution path on [-tau, T].

    Regular solver nodes are stored in ``regular``; jump nodes carry the
    post-jump value in ``jump_values`` and the left limit in ``jump_left``.
    Between nodes the path is the piecewise-constant right-continuous interpolant.
    """

    grid: TimeGrid
    tau: float
    phi: InitialDatum
    regular: np.ndarray
    jump_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    jump_values: np.ndarray = None
    jump_left: np.ndarray = None

    def __post_init__(self):
        N = self.regular.shape[1]
        if self.jump_values is None:
            self.jump_values = np.empty((0, N))
            self.jump_left = np.empty((0, N))
        self.jump_cells = _jump_cells(self.jump_times, self.grid.step, self.grid.n_steps)

    @property
    def initial_times(self) -> np.ndarray:
        if self.tau <= 0:
            return np.empty(0)
        k = math.ceil(self.tau / self.grid.step - _SNAP)
        times = -np.arange(k, 0, -1) * self.grid.step
        times[0] = -self.tau
        return times

    @property
    def times(self) -> np.ndarray:
        return self._merged()[0]

    @property
    def values(self) -> np.ndarray:
        return self._merged()[1]

    @property
    def left_limits(self) -> np.ndarray:
        return self.jump_left

    def _merged(self):
        init_t = self.initial_times
        t = np.concatenate([init_t, self.grid.times, self.jump_times])
        v = np.concatenate([self.phi(init_t).reshape(-1, self.regular.shape[1]), self.regular, self.jump_values])
        order = np.argsort(t, kind="stable")
        return t[order], v[order]

    def _jump_value(self, cell: int, s: float, strict: bool):
        lo, hi = np.searchsorted(self.jump_cells, [cell, cell + 1])
        if hi == lo:
            return None
        ts = self.jump_times[lo:hi]
        k = np.searchsorted(ts, s, side="left" if strict else "right")
        return None if k == 0 else self.jump_values[lo + k - 1]

    def value_at(self, s: float) -> np.ndarray:
        """Right-continuous value x(s)."""
        if s < -self.tau * (1 + _SNAP) - _SNAP * self.grid.step:
            raise DomainError(f"lookup at {s} precedes the initial segment [-{self.tau}, 0]")
        j, _ = _locate(s, self.grid.step)
        if j < 0:
            return self.phi(s)
        if j > self.grid.n_steps:
            raise DomainError(f"lookup at {s} beyond the horizon {self.grid.T}")
        jv = self._jump_value(j, s, strict=False)
        return self.regular[j] if jv is None else jv

    def left_limit_at(self, s: float) -> np.ndarray:
        """Left limit x(s-)."""
        j, at_node = _locate(s, self.grid.step)
        if j < 0 or (j == 0 and at_node):
            return self.phi(min(s, 0.0))
        if at_node:
            j -= 1
        jv = self._jump_value(j, s, strict=True)
        return self.regular[j] if jv is None else jv

    def sup_distance(self, other: "HistoryPath") -> float:
        d = float(np.max(np.abs(self.regular - other.regular)))
        if self.jump_values.size:
            d = max(d, float(np.max(np.abs(self.jump_values - other.jump_values))))
        return d

    @classmethod
    def frozen(cls, grid, tau, phi, jump_times) -> "HistoryPath":
        """Path equal to phi(0) on [0, T], with (trivial) nodes at the jump times."""
        v0 = phi(0.0)
        reg = np.repeat(v0[None], grid.n_nodes, axis=0)
        jv = np.repeat(v0[None], len(jump_times), axis=0)
        return cls(grid, tau, phi, reg, np.asarray(jump_times, dtype=float), jv, jv.copy())

    def write_csv(self, fh, comments=()) -> None:
        """Rows ``t,mode,value,is_left_limit``; left limits precede their jump node."""
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mode", "value", "is_left_limit"])
        init_t = self.initial_times
        rows = [(t, 0, v) for t, v in zip(init_t, self.phi(init_t))]
        rows += [(t, 1, v) for t, v in zip(self.grid.times, self.regular)]
        rows += [(t, 2, v) for t, v in zip(self.jump_times, self.jump_left)]
        rows += [(t, 3, v) for t, v in zip(self.jump_times, self.jump_values)]
        rows.sort(key=lambda r: (r[0], r[1]))
        for t, kind, v in rows:
            for k, val in enumerate(v):
                w.writerow([f"{t:.17g}", k, f"{val:.17g}", int(kind == 2)])


class _Batch:
    """Vectorised stepper over a batch of paths sharing the regular grid."""

    def __init__(self, model, Q, cset, phi, noise: NoiseBatch, cfg: SolverConfig):
        if noise.grid != cfg.grid:
            raise DomainError("noise was generated on a different grid than the solver config")
        N = model.dimension
        if len(cset.drift_gains) != N or len(phi.vector) != N:
            raise DomainError("coefficient / initial datum dimensions do not match the model")
        if Q.n_modes > N:
            raise DomainError("Q has more modes than the model")
        self.model, self.Q, self.cset, self.phi, self.cfg = model, Q, cset, phi, cfg
        self.noise = noise
        self.P = len(noise)
        self.n = cfg.n_steps
        self.dt = cfg.step
        mu = model.mu
        self.mu = mu
        self.E = np.exp(-mu * self.dt)
        self.W1 = -np.expm1(-mu * self.dt)
        self.Wd = self.W1 / mu
        self.gw = cset.neutral_weights(model)
        self.drift = np.asarray(cset.drift_gains)
        # sigma(t) D applied to the padded Q-fBm increments
        self.D = np.zeros(N)
        self.D[: Q.n_modes] = cset.sigma_diagonal(Q)
        self.comp_rate = cset.jump_gain * noise.marks.first_moment_weight
        self.X = np.zeros((self.P, self.n + 1, N))
        self._collect_events()

    def _collect_events(self):
        paths, times, marks = [], [], []
        for p, tr in enumerate(self.noise.trains):
            if len(tr) and tr.times[-1] > self.cfg.horizon * (1 + 1e-12):
                raise DomainError("jump train extends beyond the solver horizon")
            paths.append(np.full(len(tr), p))
            times.append(tr.times)
            marks.append(tr.marks)
        paths = np.concatenate(paths) if paths else np.empty(0, int)
        times = np.concatenate(times) if times else np.empty(0)
        marks = np.concatenate(marks) if marks else np.empty(0)
        cells = _jump_cells(times, self.dt, self.n)
        order = np.lexsort((times, cells))
        self.ev_path = paths[order].astype(int)
        self.ev_time = times[order]
        self.ev_mark = marks[order]
        self.ev_cell = cells[order]
        self.ev_h = np.zeros((times.size, self.model.dimension))
        self.cell_start = np.searchsorted(self.ev_cell, np.arange(self.n + 1))
        # per path event indices, ordered by time
        self.path_events = [np.flatnonzero(self.ev_path == p) for p in range(self.P)]

    # --- interpolation -------------------------------------------------
    def _check_range(self, s):
        if s < -self.cset.tau * (1 + _SNAP) - _SNAP * self.dt:
            raise DomainError(f"delayed lookup at {s} precedes -tau = {-self.cset.tau}")

    def lookup(self, s: float, upto: int) -> np.ndarray:
        """Right-continuous x(s) for all paths; nodes above ``upto`` are not yet known."""
        self._check_range(s)
        j, _ = _locate(s, self.dt)
        if j < 0:
            return np.broadcast_to(self.phi(s), (self.P, self.model.dimension)).copy()
        if j > upto:
            raise SolverError(f"lookup at {s} needs node {j} before it is computed", node=j)
        val = self.X[:, j].copy()
        lo, hi = self.cell_start[j], self.cell_start[j + 1] if j < self.n else self.ev_time.size
        if hi > lo:
            sel = lo + np.flatnonzero(self.ev_time[lo:hi] <= s)
            np.add.at(val, self.ev_path[sel], self.ev_h[sel])
        return val

    def left_limit_path(self, p: int, s: float, current_event: int) -> np.ndarray:
        self._check_range(s)
        j, at_node = _locate(s, self.dt)
        if j < 0 or (j == 0 and at_node):
            return self.phi(min(s, 0.0))
        if at_node:
            j -= 1
        val = self.X[p, j].copy()
        for e in self.path_events[p]:
            if e >= current_event:
                break
            if self.ev_cell[e] == j and self.ev_time[e] < s:
                val = val + self.ev_h[e]
        return val

    # --- stepping ------------------------------------------------------
    def neutral_at(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.cset.neutral_gain_at(t) * self.gw * x

    def run(self) -> np.ndarray:
        cset, dt = self.cset, self.dt
        self.X[:, 0] = self.phi(0.0)
        G = self.neutral_at(0.0, self.lookup(-cset.delay("r", 0.0), 0))
        for n in range(self.n):
            t, t1 = n * dt, (n + 1) * dt
            rest = self.E * (self.X[:, n] + G) + self.W1 * G
            if np.any(self.drift):
                xd = self.lookup(t - cset.delay("rho", t), n)
                rest += self.Wd * (self.drift * xd)
            if cset.sigma0 != 0.0:
                dB = np.zeros((self.P, self.model.dimension))
                dB[:, : self.Q.n_modes] = self.noise.qfbm[:, :, n]
                rest += self.E * (cset.sigma_scale(t) * self.D * dB)
            if self.comp_rate != 0.0:
                xc = self.lookup(t - cset.delay("theta", t), n)
                rest -= self.Wd * (self.comp_rate * xc)
            lo, hi = self.cell_start[n], self.cell_start[n + 1]
            for e in range(lo, hi):
                p, ti = self.ev_path[e], self.ev_time[e]
                xl = self.left_limit_path(p, ti - cset.delay("theta", ti), e)
                h = cset.jump_gain * self.ev_mark[e] * xl
                self.ev_h[e] = h
                rest[p] += np.exp(-self.mu * (t1 - ti)) * h
            G = self._close_step(n + 1, t1, rest)
        return self.X

    def _close_step(self, m: int, t1: float, rest: np.ndarray) -> np.ndarray:
        s = t1 - self.cset.delay("r", t1)
        j, _ = _locate(s, self.dt)
        if j < m:
            G = self.neutral_at(t1, self.lookup(s, m - 1))
            self.X[:, m] = rest - G
            return G
        # delayed argument is the new node itself: x = rest - g(t', x)
        x = rest - self.neutral_at(t1, self.X[:, m - 1])
        for _ in range(self.cfg.neutral_max_iter):
            x_new = rest - self.neutral_at(t1, x)
            diff = float(np.max(np.abs(x_new - x)))
            x = x_new
            if diff <= self.cfg.neutral_tol * max(1.0, float(np.max(np.abs(x)))):
                self.X[:, m] = x
                return self.neutral_at(t1, x)
        raise SolverError(
            f"neutral fixed-point iteration did not converge at node {m} (t={t1:.6g}) "
            f"within {self.cfg.neutral_max_iter} iterations",
            node=m,
        )

    def history(self, p: int) -> HistoryPath:
        idx = self.path_events[p]
        times = self.ev_time[idx]
        left = np.empty((idx.size, self.model.dimension))
        vals = np.empty_like(left)
        cur_cell, v = -1, None
        for k, e in enumerate(idx):
            c = self.ev_cell[e]
            if c != cur_cell:
                cur_cell, v = c, self.X[p, c].copy()
            left[k] = v
            v = v + self.ev_h[e]
            vals[k] = v
        return HistoryPath(self.cfg.grid, self.cset.tau, self.phi, self.X[p].copy(), times, vals, left)


def simulate_batch(model, Q, cset, phi, noise: NoiseBatch, cfg: SolverConfig) -> np.ndarray:
    """Regular-node values for every path in the batch, shape ``(P, n_steps + 1, N)``."""
    return _Batch(model, Q, cset, phi, noise, cfg).run()


def solve_path(model, Q, cset, phi, noise: NoiseRealization, cfg: SolverConfig) -> HistoryPath:
    b = _Batch(model, Q, cset, phi, NoiseBatch.from_realization(noise), cfg)
    b.run()
    return b.history(0)


def picard_apply(model, Q, cset, phi, noise: NoiseRealization, current: HistoryPath, cfg) -> HistoryPath:
    """One application of the fixed-point map, every integral anchored at t = 0."""
    grid = cfg.grid
    if noise.grid != grid or current.grid != grid:
        raise DomainError("path, noise and config grids differ")
    n, dt, N = grid.n_steps, grid.step, model.dimension
    mu = model.mu
    t = grid.times
    gw = cset.neutral_weights(model)
    W1 = -np.expm1(-mu * dt)
    Wd = W1 / mu

    def g_at(tn, x):
        return cset.neutral_gain_at(tn) * gw * x

    G = np.array([g_at(tn, current.value_at(tn - cset.delay("r", tn))) for tn in t])
    G[0] = g_at(0.0, phi(-cset.delay("r", 0.0)))
    F = np.array([cset.drift(tn, current.value_at(tn - cset.delay("rho", tn))) for tn in t[:-1]])
    comp_rate = cset.jump_gain * noise.marks.first_moment_weight
    C = np.array([comp_rate * current.value_at(tn - cset.delay("theta", tn)) for tn in t[:-1]])
    D = np.zeros(N)
    D[: Q.n_modes] = cset.sigma_diagonal(Q)
    dB = np.zeros((n, N))
    dB[:, : Q.n_modes] = noise.qfbm.T
    S = cset.sigma_scale(t[:-1])[:, None] * D * dB

    # lag[m, j] = t_m - t_j in units of dt
    lag = np.arange(n + 1)[:, None] - np.arange(n)[None, :]
    mask = (lag >= 1)[..., None]
    decay_after = np.where(mask, np.exp(-mu * ((lag - 1) * dt)[..., None]), 0.0)  # S(t_m - t_{j+1})
    decay_from = np.where(mask, np.exp(-mu * (lag * dt)[..., None]), 0.0)  # S(t_m - t_j)
    drive = W1 * G[:-1] + Wd * F - Wd * C
    reg = (
        np.exp(-mu * t[:, None]) * (phi(0.0) + G[0])
        - G
        + np.einsum("mjk,jk->mk", decay_after, drive)
        + np.einsum("mjk,jk->mk", decay_from, S)
    )

    tr = noise.train
    h = np.array([cset.jump_gain * z * current.left_limit_at(ti - cset.delay("theta", ti)) for ti, z in zip(tr.times, tr.marks)]).reshape(-1, N)
    if len(tr):
        since = t[:, None] - tr.times[None, :]
        jw = np.where((since >= 0)[..., None], np.exp(-mu * np.maximum(since, 0.0)[..., None]), 0.0)
        reg = reg + np.einsum("mik,ik->mk", jw, h)
    cells = _jump_cells(tr.times, dt, n)
    left = np.empty_like(h)
    vals = np.empty_like(h)
    cur_cell, v = -1, None
    for k, c in enumerate(cells):
        if c != cur_cell:
            cur_cell, v = c, reg[c].copy()
        left[k] = v
        v = v + h[k]
        vals[k] = v
    return HistoryPath(grid, cset.tau, phi, reg, tr.times.copy(), vals, left)


def picard_iterate(model, Q, cset, phi, noise, cfg, n_iter=None, start: HistoryPath | None = None):
    """Iterate the fixed-point map; returns (final path, successive sup-distances)."""
    x = start or HistoryPath.frozen(cfg.grid, cset.tau, phi, noise.train.times)
    dists = []
    for _ in range(n_iter or cfg.picard_max_iter):
        x_new = picard_apply(model, Q, cset, phi, noise, x, cfg)
        dists.append(x_new.sup_distance(x))
        x = x_new
        if n_iter is None and dists[-1] <= cfg.picard_tol:
            break
    return x, dists


@dataclass
class MomentTable:
    times: np.ndarray
    mean_sq: np.ndarray
    std_err: np.ndarray
    n_paths: int

    def write_csv(self, fh, comments=()) -> None:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mean_sq", "std_err", "n_paths"])
        for t, m, s in zip(self.times, self.mean_sq, self.std_err):
            w.writerow([f"{t:.17g}", f"{m:.17g}", f"{s:.17g}", self.n_paths])


def is_deterministic(cset: CoefficientSet, Q: QCovariance, marks: MarkSpaceSpec) -> bool:
    no_diffusion = cset.sigma0 == 0.0 or Q.trace == 0.0 or not np.any(cset.sigma_diagonal(Q))
    no_jumps = cset.jump_gain == 0.0 or marks.total_intensity == 0.0
    return no_diffusion and no_jumps


def monte_carlo_moments(
    model: SpectralModel,
    Q: QCovariance,
    cset: CoefficientSet,
    phi: InitialDatum,
    cfg: SolverConfig,
    n_paths: int,
    seed: int,
    *,
    hurst: float,
    marks: MarkSpaceSpec,
    threads: int = 1,
    chunk_size: int = 500,
) -> MomentTable:
    """m(t_j) = E||x(t_j)||^2 with standard errors over independent paths.

    Paths are processed in fixed chunks and merged in chunk order, so the
    result does not depend on ``threads``.
    """
    if n_paths < 2:
        raise DomainError("need at least two paths")
    grid = cfg.grid
    if is_deterministic(cset, Q, marks):
        noise = sample_noise_batch(Q, hurst, marks, grid, seed, 1)
        X = simulate_batch(model, Q, cset, phi, noise, cfg)
        m = np.sum(X[0] ** 2, axis=1)
        return MomentTable(grid.times, m, np.zeros_like(m), n_paths)

    starts = list(range(0, n_paths, chunk_size))

    def run_chunk(start):
        size = min(chunk_size, n_paths - start)
        noise = sample_noise_batch(Q, hurst, marks, grid, seed, size, start)
        X = simulate_batch(model, Q, cset, phi, noise, cfg)
        norms = np.sum(X**2, axis=2)
        mean = norms.mean(axis=0)
        m2 = np.sum((norms - mean) ** 2, axis=0)
        return size, np.sum(norms, axis=0), mean, m2

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run_chunk, starts))
    else:
        parts = [run_chunk(s) for s in starts]

    n_nodes = grid.n_nodes
    total = np.array([math.fsum(p[1][j] for p in parts) for j in range(n_nodes)])
    mean = total / n_paths
    m2 = np.array(
        [math.fsum(p[3][j] + p[0] * (p[2][j] - mean[j]) ** 2 for p in parts) for j in range(n_nodes)]
    )
    se = np.sqrt(m2 / (n_paths - 1) / n_paths)
    return MomentTable(grid.times, mean, se, n_paths)
