"""Reference values computed without the simulation path.

These are closed forms and one-dimensional quadratures used by the preset
self-test; they never call the solver or the samplers.
"""

import math

from scipy import integrate


def fractional_ou_second_moment(mu: float, sigma0: float, H: float, t: float) -> float:
    """E|x(t)|^2 for dx = -mu x dt + sigma0 dB^H, x(0) = 0.

    The double integral sigma0^2 H(2H-1) int int e^{-mu(t-u)} e^{-mu(t-v)} |u-v|^{2H-2}
    reduces, with w = |u - v|, to a single integral carrying the w^{2H-2}
    endpoint weight, which QUADPACK's QAWS rule integrates exactly.
    """
    def smooth(w):
        return (math.exp(-mu * w) - math.exp(-mu * (2 * t - w))) / (2 * mu)

    val, _ = integrate.quad(smooth, 0.0, t, weight="alg", wvar=(2 * H - 2, 0.0), epsabs=0, epsrel=1e-13)
    return sigma0**2 * 2 * H * (2 * H - 1) * val


def jump_linear_second_moment(mu: float, K3: float, m0: float, t: float) -> float:
    """m(t) = m0 exp((-2 mu + K3) t) for dx = -mu x dt + c_h x(t-) int z N~(dt, dz)."""
    return m0 * math.exp((-2 * mu + K3) * t)


def frozen_drift_solution(mu: float, gain: float, v: float, t: float) -> float:
    """x(t) = v exp((-mu + gain) t) for x' = -mu x + gain x."""
    return v * math.exp((-mu + gain) * t)
