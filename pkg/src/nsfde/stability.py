"""Contraction certificate, empirical decay-rate fit and the Gamma identity."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, special

from .coefficients import CoefficientSet, HypothesisConstants, derive_constants
from .errors import DomainError, InsufficientDataError
from .hilbert_spectral import SpectralModel, smoothing_constant
from .jump_noise import MarkSpaceSpec
from .mild_solver import InitialDatum, MomentTable

__all__ = [
    "DecayCertificate",
    "DecayFit",
    "certify",
    "contraction_constant",
    "fit_decay_rate",
    "gamma_identity_check",
    "initial_decay_check",
]

LAMBDA_GAP = 1e-6


@dataclass
class DecayCertificate:
    theta: float
    passes: bool
    components: dict
    constants_used: dict
    predicted_rate_cap: float | None = None
    admissible_rate: tuple | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "passes": self.passes,
            "components": dict(self.components),
            "constants": dict(self.constants_used),
            "predicted_rate_cap": self.predicted_rate_cap,
            "admissible_rate_interval": list(self.admissible_rate) if self.admissible_rate else None,
            "notes": list(self.notes),
        }


def contraction_constant(c: HypothesisConstants, M: float, lam: float, M_smooth: float) -> DecayCertificate:
    """theta = 4 (K2 ||(-A)^-b||^2 + K2 M_{1-b}^2 lam^{-2b} Gamma(b)^2 + K1 M^2 / lam^2 + M^2 K3 / (2 lam))."""
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    b = c.beta
    if not 0.0 < b < 1.0:
        raise DomainError(f"beta must lie in (0, 1), got {b}")
    components = {
        "neutral_static": c.K2 * c.norm_inv_beta**2,
        "neutral_convolution": c.K2 * M_smooth**2 * lam ** (-2 * b) * float(special.gamma(b)) ** 2,
        "drift": c.K1 * M**2 / lam**2,
        "jump": M**2 * c.K3 / (2 * lam),
    }
    theta = 4 * math.fsum(components.values())
    constants = {
        "M": M,
        "lambda": lam,
        "beta": b,
        "M_1_minus_beta": M_smooth,
        "K1": c.K1,
        "K2": c.K2,
        "K3": c.K3,
        "norm_inv_beta": c.norm_inv_beta,
    }
    return DecayCertificate(theta, theta < 1.0, components, constants)


def certify(
    model: SpectralModel,
    cset: CoefficientSet,
    marks: MarkSpaceSpec,
    phi_decay: float | None = None,
    lambda_gap: float = LAMBDA_GAP,
) -> DecayCertificate:
    """Certificate for the diagonal model with M = 1 and lambda = mu_1.

    The smoothing constant is taken at lambda_choice = mu_1 (1 - lambda_gap),
    which keeps its supremum finite.
    """
    consts = derive_constants(cset, model, marks)
    lam = model.mu_1
    lam_choice = lam * (1 - lambda_gap)
    M_smooth = smoothing_constant(model, consts.beta, lam_choice)
    cert = contraction_constant(consts, 1.0, lam, M_smooth)
    cert.constants_used["lambda_choice"] = lam_choice
    cert.constants_used["gamma_sigma"] = consts.gamma_sigma
    caps = [2 * lam_choice]
    if cset.sigma0 != 0.0:
        caps.append(2 * consts.gamma_sigma)
    if phi_decay is not None:
        caps.append(phi_decay)
    cert.predicted_rate_cap = min(caps)
    cert.admissible_rate = (0.0, lam)
    cert.notes.append("predicted_rate_cap is heuristic from proof structure: min(2 lambda_choice, 2 gamma_sigma, a)")
    if cset.sigma0 != 0.0 and math.isclose(consts.gamma_sigma, lam, rel_tol=1e-12):
        cert.notes.append("gamma_sigma equals lambda: this case is not treated by the decay argument")
    return cert


@dataclass
class DecayFit:
    a_hat: float
    M_star_hat: float
    r_squared: float
    window: tuple
    n_points: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d


def fit_decay_rate(table: MomentTable, min_points: int = 5) -> DecayFit:
    """Least-squares line through (t, log m(t)) on nodes with m > 10 standard errors."""
    t = np.asarray(table.times, dtype=float)
    m = np.asarray(table.mean_sq, dtype=float)
    se = np.asarray(table.std_err, dtype=float)
    usable = (m > 10 * se) & (m > 0) & np.isfinite(m)
    if usable.sum() < min_points:
        raise InsufficientDataError(f"only {int(usable.sum())} usable nodes, need {min_points}")
    x, y = t[usable], np.log(m[usable])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(-slope), float(math.exp(intercept)), r2, (float(x[0]), float(x[-1])), int(x.size))


def gamma_identity_check(alpha: float, c: float):
    """c^{-alpha} against (1/Gamma(alpha)) int_0^inf t^{alpha-1} e^{-ct} dt.

    After u = c t the integral is c^{-alpha} int_0^inf u^{alpha-1} e^{-u} du;
    the algebraic endpoint factor on [0, 1] goes to QUADPACK's QAWS weight.
    """
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")
    if not c > 0:
        raise DomainError(f"c must be positive, got {c}")
    head, _ = integrate.quad(lambda u: math.exp(-u), 0.0, 1.0, weight="alg", wvar=(alpha - 1.0, 0.0), epsabs=0, epsrel=1e-13)
    tail, _ = integrate.quad(lambda u: u ** (alpha - 1.0) * math.exp(-u), 1.0, math.inf, epsabs=0, epsrel=1e-13)
    lhs = c ** (-alpha)
    rhs = c ** (-alpha) * (head + tail) / special.gamma(alpha)
    return lhs, rhs, abs(rhs - lhs) / abs(lhs)


def initial_decay_check(phi: InitialDatum, M0: float, a: float, tau: float, n_probe: int = 1000) -> bool:
    """E||phi(t)||^2 <= M0 E|phi|^2 e^{-a t} on a probe of [-tau, 0]."""
    if not (M0 > 0 and a > 0):
        raise DomainError("M0 and a must be positive")
    t = np.linspace(-tau, 0.0, n_probe)
    lhs = np.sum(phi(t) ** 2, axis=-1)
    rhs = M0 * phi.sup_norm_sq(tau) * np.exp(-a * t)
    return bool(np.all(lhs <= rhs * (1 + 1e-12)))
