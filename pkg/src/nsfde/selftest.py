"""Property checks run by ``nsfde self-test``."""

from __future__ import annotations

import json
import math
from importlib import resources

import numpy as np

from . import oracles
from .config import build_experiment, parse_config
from .fractional_noise import StepFunction, TimeGrid, fbm_increments, lemma1_bound_check, rkhs_scalar_product
from .hilbert_spectral import QCovariance, SpectralModel, fractional_power_apply, lemma2_bound_check, lemma2_exact_moment, semigroup_apply
from .jump_noise import Gaussian, MarkSpaceSpec, compensated_sum, sample_jump_train
from .mild_solver import monte_carlo_moments
from .stability import gamma_identity_check

PRESETS = ("semigroup_only", "frozen_drift", "fractional_ou", "jump_only")


def preset_config(name: str) -> dict:
    return json.loads(resources.files("nsfde").joinpath("presets", f"{name}.json").read_text())


def oracle_rows(oracle, table, step):
    rows = []
    for t, expected in zip(oracle.times, oracle.mean_sq):
        j = round(t / step)
        m, se = float(table.mean_sq[j]), float(table.std_err[j])
        tol = oracle.n_se * se + oracle.rel_tol * abs(expected)
        rows.append({"t": t, "mean_sq": m, "std_err": se, "oracle": expected, "tolerance": tol, "ok": abs(m - expected) <= tol})
    return rows


def _lemma1():
    rng = np.random.default_rng(11)
    edges = np.linspace(0, 1, 17)
    ok = True
    for H in (0.55, 0.7, 0.9):
        for _ in range(20):
            ok &= lemma1_bound_check(StepFunction(edges, rng.normal(size=16)), H).holds
    return ok, "60 random step functions"


def _lemma2():
    grid = TimeGrid.on_interval(1.0, 128)
    model = SpectralModel((1.0, 2.0))
    Q = QCovariance((1.0, 0.5))
    sched = np.random.default_rng(5).uniform(0.2, 1.0, size=(128, 2))
    chk = lemma2_bound_check(model, Q, sched, 0.8, grid, 4000, 17)
    exact = lemma2_exact_moment(Q, sched, 0.8, grid)
    ok = chk.holds and abs(chk.lhs - exact) <= 5 * chk.std_err
    return ok, f"lhs={chk.lhs:.4f}+-{chk.std_err:.4f} exact={exact:.4f} rhs={chk.rhs:.4f}"


def _gamma():
    worst = max(gamma_identity_check(a / 10, c)[2] for a in range(1, 10) for c in (0.5, 1, 2, 10))
    return worst <= 1e-8, f"max rel_err={worst:.2e}"


def _fbm_isometry():
    grid = TimeGrid.on_interval(1.0, 256)
    psi = StepFunction.indicator(grid.times, 0.5)
    incs = fbm_increments(grid, 0.7, 4000, 23)
    vals = incs @ psi.values
    m, se = float(np.mean(vals**2)), float(np.std(vals**2, ddof=1) / math.sqrt(vals.size))
    exact = rkhs_scalar_product(psi, psi, 0.7)
    return abs(m - exact) <= 5 * se, f"E[I^2]={m:.4f}+-{se:.4f} vs {exact:.4f}"


def _poisson_isometry():
    spec = MarkSpaceSpec(2.0, Gaussian(0.3, 1.0))
    grid = TimeGrid.on_interval(1.0, 64)
    sums = np.array([
        compensated_sum(tr, np.ones_like, tr.marks, lambda s: np.full_like(s, spec.first_moment_weight), grid)
        for tr in (sample_jump_train(spec, 1.0, 31, i) for i in range(20000))
    ])
    se1 = sums.std(ddof=1) / math.sqrt(sums.size)
    se2 = (sums**2).std(ddof=1) / math.sqrt(sums.size)
    ok = abs(sums.mean()) <= 5 * se1 and abs((sums**2).mean() - spec.second_moment_weight) <= 5 * se2
    return ok, f"mean={sums.mean():.4f} second={np.mean(sums**2):.4f} vs {spec.second_moment_weight:.4f}"


def _semigroup_laws():
    model = SpectralModel((0.5, 1.0, 3.0, 10.0))
    v = np.random.default_rng(3).normal(size=4)
    a = semigroup_apply(model, 0.3, semigroup_apply(model, 0.2, v))
    b = semigroup_apply(model, 0.5, v)
    c = fractional_power_apply(model, 0.4, fractional_power_apply(model, -0.4, v))
    err = max(np.max(np.abs(a - b)), np.max(np.abs(c - v)), np.max(np.abs(semigroup_apply(model, 0.0, v) - v)))
    return err <= 1e-12, f"max err={err:.1e}"


def _preset(name):
    def check():
        exp = build_experiment(parse_config(preset_config(name)))
        cfg = exp.config
        table = monte_carlo_moments(
            exp.model, exp.Q, exp.cset, exp.phi, exp.solver, cfg.monte_carlo.n_paths, cfg.monte_carlo.seed,
            hurst=exp.hurst, marks=exp.marks,
        )
        rows = oracle_rows(cfg.oracle, table, exp.solver.step)
        detail = "; ".join(f"t={r['t']}: {r['mean_sq']:.6g} vs {r['oracle']:.6g}" for r in rows)
        return all(r["ok"] for r in rows), detail

    return check


def _oracle_embedding():
    emb = preset_config("fractional_ou")["oracle"]["mean_sq"][0]
    fresh = oracles.fractional_ou_second_moment(1.0, 0.5, 0.7, 1.0)
    return math.isclose(emb, fresh, rel_tol=1e-12), f"embedded={emb:.12g} recomputed={fresh:.12g}"


CHECKS = [
    ("lemma1_bound", _lemma1),
    ("lemma2_bound", _lemma2),
    ("gamma_identity", _gamma),
    ("fbm_isometry", _fbm_isometry),
    ("poisson_isometry", _poisson_isometry),
    ("semigroup_laws", _semigroup_laws),
    ("oracle_embedding", _oracle_embedding),
] + [(f"preset_{name}", _preset(name)) for name in PRESETS]


def run_self_test(echo=print) -> bool:
    all_ok = True
    for name, check in CHECKS:
        try:
            ok, detail = check()
        except Exception as exc:  # reported as a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= bool(ok)
        echo(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    return all_ok
