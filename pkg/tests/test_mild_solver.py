import io
import math

import numpy as np
import pytest

from nsfde import oracles
from nsfde.coefficients import CoefficientSet, Delay
from nsfde.errors import DomainError, SolverError
from nsfde.fractional_noise import TimeGrid
from nsfde.hilbert_spectral import QCovariance, SpectralModel, qfbm_increments
from nsfde.jump_noise import Gaussian, JumpTrain, MarkSpaceSpec
from nsfde.mild_solver import (
    HistoryPath,
    InitialDatum,
    NoiseBatch,
    NoiseRealization,
    SolverConfig,
    monte_carlo_moments,
    picard_apply,
    picard_iterate,
    sample_noise,
    simulate_batch,
    solve_path,
)
from nsfde.stability import certify

NO_JUMPS = MarkSpaceSpec(0.0)


def quiet_noise(grid, n_q=1, marks=NO_JUMPS, train=None):
    return NoiseRealization(grid, np.zeros((n_q, grid.n_steps)), train or JumpTrain([], []), marks)


def mixed_setup():
    """Certificate-passing two-mode config with every term switched on."""
    model = SpectralModel((1.5, 3.0))
    Q = QCovariance((1.0, 0.5))
    marks = MarkSpaceSpec(2.0, Gaussian(0.0, 1.0))
    cset = CoefficientSet(
        (0.2, -0.1), neutral_gain=0.05, beta=0.9, sigma0=0.3, sigma_decay=1.0, jump_gain=0.2,
        delays={"r": Delay.constant(0.25), "rho": Delay.constant(0.125), "theta": Delay.constant(0.0)}, tau=0.5,
    )
    return model, Q, marks, cset, InitialDatum((1.0, -0.5), kappa=0.5)


class TestConfig:
    @pytest.mark.parametrize("step, horizon", [(0.0, 1.0), (0.1, -1.0), (0.3, 1.0)])
    def test_invalid(self, step, horizon):
        with pytest.raises(DomainError):
            SolverConfig(step, horizon)

    def test_unknown_scheme(self):
        with pytest.raises(DomainError):
            SolverConfig(0.5, 1.0, scheme="rk4")


class TestStepperExamples:
    def test_pure_semigroup_is_exact(self):
        model = SpectralModel((0.5, 2.0, 7.0))
        cfg = SolverConfig(1 / 64, 2.0)
        v = np.array([1.0, -3.0, 0.25])
        path = solve_path(model, QCovariance((1.0,)), CoefficientSet((0.0,) * 3), InitialDatum(tuple(v)), quiet_noise(cfg.grid), cfg)
        exact = np.exp(-np.outer(cfg.grid.times, model.mu)) * v
        np.testing.assert_allclose(path.regular, exact, rtol=1e-13, atol=0)

    def test_frozen_drift_first_order(self):
        model = SpectralModel((1.0,))
        errs = []
        for n in (64, 128, 256, 512):
            cfg = SolverConfig(1 / n, 1.0)
            path = solve_path(model, QCovariance((1.0,)), CoefficientSet((-0.5,)), InitialDatum((1.0,)), quiet_noise(cfg.grid), cfg)
            exact = np.array([oracles.frozen_drift_solution(1.0, -0.5, 1.0, t) for t in cfg.grid.times])
            errs.append(float(np.max(np.abs(path.regular[:, 0] - exact))))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert errs[-1] < 1e-3
        assert np.all(orders >= 0.95)

    def test_time_frozen_neutral_term_telescopes(self):
        # with r = tau = T the delayed argument stays in the constant initial segment, so g is frozen
        mu, c, v = 2.0, 0.4, 1.3
        model = SpectralModel((mu,))
        cset = CoefficientSet((0.0,), neutral_gain=c, beta=0.5, delays={"r": Delay.constant(1.0)}, tau=1.0)
        cfg = SolverConfig(1 / 32, 1.0)
        path = solve_path(model, QCovariance((1.0,)), cset, InitialDatum((v,)), quiet_noise(cfg.grid), cfg)
        np.testing.assert_allclose(path.regular[:, 0], v * np.exp(-mu * cfg.grid.times), rtol=1e-13)

    def test_neutral_non_convergence_names_node(self):
        model = SpectralModel((1.0,))
        cset = CoefficientSet((0.0,), neutral_gain=0.99, beta=0.5)
        cfg = SolverConfig(0.25, 1.0, neutral_max_iter=5)
        with pytest.raises(SolverError) as info:
            solve_path(model, QCovariance((1.0,)), cset, InitialDatum((1.0,)), quiet_noise(cfg.grid), cfg)
        assert info.value.node is not None

    def test_implicit_neutral_converges_to_scalar_ode(self):
        # r = 0: y = (1 + c mu^-beta) x obeys y' = -mu x, so y decays at rate mu / (1 + c mu^-beta)
        mu, c, beta = 2.0, 0.3, 0.5
        w = mu**-beta
        model = SpectralModel((mu,))
        cset = CoefficientSet((0.0,), neutral_gain=c, beta=beta)
        errs = []
        for n in (32, 64, 128, 256):
            cfg = SolverConfig(1 / n, 1.0)
            path = solve_path(model, QCovariance((1.0,)), cset, InitialDatum((1.0,)), quiet_noise(cfg.grid), cfg)
            y = (1 + c * w) * path.regular[:, 0]
            exact = (1 + c * w) * np.exp(-mu * cfg.grid.times / (1 + c * w))
            errs.append(float(np.max(np.abs(y - exact))))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders >= 0.9)


class TestPathInvariants:
    def test_initial_segment_is_phi(self):
        model, Q, marks, cset, phi = mixed_setup()
        cfg = SolverConfig(1 / 32, 1.0)
        path = solve_path(model, Q, cset, phi, sample_noise(Q, 0.7, marks, cfg.grid, 3), cfg)
        init = path.initial_times
        assert init[0] == -cset.tau and np.all(init < 0)
        assert np.array_equal(path.values[: init.size], phi(init))
        assert np.array_equal(path.regular[0], phi(0.0))

    def test_lookup_before_initial_segment(self):
        model, Q, marks, cset, phi = mixed_setup()
        cfg = SolverConfig(1 / 32, 1.0)
        path = solve_path(model, Q, cset, phi, sample_noise(Q, 0.7, marks, cfg.grid, 3), cfg)
        with pytest.raises(DomainError):
            path.value_at(-1.0)

    def test_cadlag_jump_nodes(self):
        model = SpectralModel((1.0,))
        marks = MarkSpaceSpec(4.0, Gaussian(0.0, 1.0))
        cset = CoefficientSet((0.0,), jump_gain=0.5)
        cfg = SolverConfig(1 / 16, 2.0)
        noise = sample_noise(QCovariance((1.0,)), 0.7, marks, cfg.grid, seed=21)
        assert len(noise.train) > 2
        path = solve_path(model, QCovariance((1.0,)), cset, InitialDatum((1.0,)), noise, cfg)
        expected = path.jump_left * (1 + 0.5 * noise.train.marks[:, None])
        np.testing.assert_allclose(path.jump_values, expected, rtol=1e-14)
        for t, left, val in zip(noise.train.times, path.jump_left, path.jump_values):
            np.testing.assert_array_equal(path.left_limit_at(t), left)
            np.testing.assert_array_equal(path.value_at(t), val)

    def test_increments_shrink_without_noise(self):
        model = SpectralModel((1.0, 4.0))
        cset = CoefficientSet((0.3, -0.2), neutral_gain=0.2, beta=0.5, delays={"r": Delay.constant(0.3), "rho": Delay.constant(0.1)}, tau=0.5)
        gaps = []
        for n in (32, 64, 128, 256):
            cfg = SolverConfig(1 / n, 1.0)
            path = solve_path(model, QCovariance((1.0,)), cset, InitialDatum((1.0, 1.0)), quiet_noise(cfg.grid), cfg)
            gaps.append(float(np.max(np.abs(np.diff(path.regular, axis=0)))))
        assert all(b < a for a, b in zip(gaps, gaps[1:]))

    def test_path_csv(self):
        model = SpectralModel((1.0,))
        marks = MarkSpaceSpec(3.0, Gaussian(0.0, 1.0))
        cfg = SolverConfig(0.25, 1.0)
        cset = CoefficientSet((0.0,), jump_gain=0.5, tau=0.5)
        noise = sample_noise(QCovariance((1.0,)), 0.7, marks, cfg.grid, seed=2)
        path = solve_path(model, QCovariance((1.0,)), cset, InitialDatum((1.0,)), noise, cfg)
        buf = io.StringIO()
        path.write_csv(buf, ["seed=2"])
        lines = buf.getvalue().splitlines()
        assert lines[:2] == ["# seed=2", "t,mode,value,is_left_limit"]
        rows = [ln.split(",") for ln in lines[2:]]
        assert len(rows) == 2 + 5 + 2 * len(noise.train)
        assert sum(r[3] == "1" for r in rows) == len(noise.train)
        times = [float(r[0]) for r in rows]
        assert times == sorted(times)


class TestPicard:
    def test_solver_output_is_fixed_point(self):
        model, Q, marks, cset, phi = mixed_setup()
        cfg = SolverConfig(1 / 32, 1.0)
        noise = sample_noise(Q, 0.7, marks, cfg.grid, 5)
        path = solve_path(model, Q, cset, phi, noise, cfg)
        again = picard_apply(model, Q, cset, phi, noise, path, cfg)
        assert again.sup_distance(path) <= 1e-10

    def test_implicit_neutral_fixed_point(self):
        model = SpectralModel((1.0, 2.0))
        cset = CoefficientSet((0.1, 0.1), neutral_gain=0.3, beta=0.5)
        cfg = SolverConfig(1 / 32, 1.0)
        noise = quiet_noise(cfg.grid)
        path = solve_path(model, QCovariance((1.0,)), cset, InitialDatum((1.0, 1.0)), noise, cfg)
        again = picard_apply(model, QCovariance((1.0,)), cset, InitialDatum((1.0, 1.0)), noise, path, cfg)
        assert again.sup_distance(path) <= 1e-10

    def test_zero_coefficients_map_to_semigroup(self):
        model = SpectralModel((1.0, 2.0))
        cfg = SolverConfig(1 / 16, 1.0)
        phi = InitialDatum((1.0, 2.0))
        junk = HistoryPath(cfg.grid, 0.0, phi, np.random.default_rng(0).normal(size=(17, 2)))
        out = picard_apply(model, QCovariance((1.0,)), CoefficientSet((0.0, 0.0)), phi, quiet_noise(cfg.grid), junk, cfg)
        np.testing.assert_allclose(out.regular, np.exp(-np.outer(cfg.grid.times, model.mu)) * phi.v, rtol=1e-14)

    def test_contraction_ratio(self):
        model, Q, marks, cset, phi = mixed_setup()
        theta = certify(model, cset, marks).theta
        assert theta < 1
        cfg = SolverConfig(1 / 32, 1.0)
        noise = sample_noise(Q, 0.7, marks, cfg.grid, 9)
        _, dists = picard_iterate(model, Q, cset, phi, noise, cfg, n_iter=10)
        dists = np.array(dists)
        # causal delays can make the iteration reach its fixed point exactly
        live = dists[:-1] > 0
        assert np.all(dists[1:][live] < dists[:-1][live])
        assert np.all(dists[1:][~live] == 0)
        assert np.max(dists[1:][live] / dists[:-1][live]) <= math.sqrt(theta) + 0.1

    def test_grid_mismatch(self):
        model = SpectralModel((1.0,))
        cfg = SolverConfig(1 / 16, 1.0)
        other = TimeGrid.on_interval(1.0, 8)
        phi = InitialDatum((1.0,))
        with pytest.raises(DomainError):
            picard_apply(model, QCovariance((1.0,)), CoefficientSet((0.0,)), phi, quiet_noise(other), HistoryPath.frozen(cfg.grid, 0.0, phi, []), cfg)


class TestMoments:
    def test_deterministic_case_has_zero_error(self):
        model = SpectralModel((1.0, 2.0))
        cfg = SolverConfig(1 / 16, 1.0)
        phi = InitialDatum((1.0, 1.0))
        table = monte_carlo_moments(model, QCovariance((1.0,)), CoefficientSet((0.0, 0.0)), phi, cfg, 100, 0, hurst=0.7, marks=NO_JUMPS)
        assert np.all(table.std_err == 0)
        exact = np.exp(-2 * cfg.grid.times) + np.exp(-4 * cfg.grid.times)
        np.testing.assert_allclose(table.mean_sq, exact, rtol=1e-13)

    def test_too_few_paths(self):
        cfg = SolverConfig(0.5, 1.0)
        with pytest.raises(DomainError):
            monte_carlo_moments(SpectralModel((1.0,)), QCovariance((1.0,)), CoefficientSet((0.0,)), InitialDatum((1.0,)), cfg, 1, 0, hurst=0.7, marks=NO_JUMPS)

    def test_fractional_ou_oracle(self):
        model, Q = SpectralModel((1.0,)), QCovariance((1.0,))
        cset = CoefficientSet((0.0,), sigma0=0.5)
        cfg = SolverConfig(1 / 256, 1.0)
        table = monte_carlo_moments(model, Q, cset, InitialDatum((0.0,)), cfg, 4000, 77, hurst=0.7, marks=NO_JUMPS)
        ref = oracles.fractional_ou_second_moment(1.0, 0.5, 0.7, 1.0)
        assert abs(table.mean_sq[-1] - ref) <= 5 * table.std_err[-1] + 0.03 * ref

    def test_jump_moment_ode(self):
        model = SpectralModel((1.0,))
        marks = MarkSpaceSpec(2.0, Gaussian(0.0, 1.0))
        cset = CoefficientSet((0.0,), jump_gain=0.5)
        cfg = SolverConfig(1 / 64, 1.0)
        table = monte_carlo_moments(model, QCovariance((1.0,)), cset, InitialDatum((1.0,)), cfg, 4000, 8, hurst=0.7, marks=marks)
        for t in (0.5, 1.0):
            j = round(t / cfg.step)
            ref = oracles.jump_linear_second_moment(1.0, 0.5, 1.0, t)
            assert abs(table.mean_sq[j] - ref) <= 5 * table.std_err[j] + 0.03 * ref

    def test_grid_convergence_with_common_noise(self):
        model, Q = SpectralModel((1.0,)), QCovariance((1.0,))
        cset = CoefficientSet((0.0,), sigma0=0.5)
        P, fine_n = 2000, 1024
        fine = qfbm_increments(Q, 0.7, TimeGrid.on_interval(1.0, fine_n), 3, P)
        m = []
        for n in (128, 256, 512, 1024):
            cfg = SolverConfig(1 / n, 1.0)
            coarse = fine.reshape(P, 1, n, fine_n // n).sum(axis=-1)
            batch = NoiseBatch(cfg.grid, coarse, [JumpTrain([], [])] * P, NO_JUMPS)
            X = simulate_batch(model, Q, cset, InitialDatum((0.0,)), batch, cfg)
            m.append(float(np.mean(X[:, -1, 0] ** 2)))
        diffs = np.abs(np.diff(m))
        assert np.all(np.diff(diffs) < 0)

    def test_reproducible_and_thread_independent(self):
        model, Q, marks, cset, phi = mixed_setup()
        cfg = SolverConfig(1 / 32, 1.0)
        kw = dict(hurst=0.7, marks=marks, chunk_size=50)
        a = monte_carlo_moments(model, Q, cset, phi, cfg, 230, 4, **kw)
        b = monte_carlo_moments(model, Q, cset, phi, cfg, 230, 4, **kw)
        c = monte_carlo_moments(model, Q, cset, phi, cfg, 230, 4, threads=4, **kw)
        assert np.array_equal(a.mean_sq, b.mean_sq) and np.array_equal(a.std_err, b.std_err)
        np.testing.assert_allclose(c.mean_sq, a.mean_sq, rtol=1e-12, atol=0)
        np.testing.assert_allclose(c.std_err, a.std_err, rtol=1e-12, atol=0)

    def test_table_csv(self):
        cfg = SolverConfig(0.5, 1.0)
        table = monte_carlo_moments(SpectralModel((1.0,)), QCovariance((1.0,)), CoefficientSet((0.0,)), InitialDatum((1.0,)), cfg, 2, 0, hurst=0.7, marks=NO_JUMPS)
        buf = io.StringIO()
        table.write_csv(buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "t,mean_sq,std_err,n_paths"
        assert lines[1] == "0,1,0,2"
        assert len(lines) == 4
