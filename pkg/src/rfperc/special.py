"""Gaussian-measure primitives used by every analytic module.

Conventions.  ``Dz`` denotes the standard Gaussian measure
``Dz = exp(-z^2/2) / sqrt(2*pi) dz``.  The Gaussian tail function is

    H(x) = P(Z > x) = erfc(x / sqrt(2)) / 2,

and its finite-temperature softening

    H_beta(x) = exp(-beta) + (1 - exp(-beta)) * H(x),

which interpolates between 1 at beta = 0 and H(x) at beta = inf.  Inverse
temperatures are plain floats; ``math.inf`` selects the hard-constraint
branch exactly instead of a large-beta approximation, which would suffer
catastrophic cancellation inside log H_beta.

Expectations over Dz are evaluated with Gauss-Hermite rules in the
probabilists' normalization (weights sum to 1, exact for polynomials of
degree <= 2*order - 1).  Integrands built from ln H have slowly decaying
tails near q -> 1, so the analytic solvers use a generous default order
and double it when two successive orders disagree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.special import erfc, log_ndtr, roots_hermitenorm

from .errors import AccuracyError, DomainError, EvaluationError

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)
_LOG_SQRT2PI = 0.5 * math.log(2.0 * math.pi)

#: Default Gauss-Hermite order for the analytic modules.
DEFAULT_ORDER = 120

#: Threshold beyond which gauss_H switches from erfc to exp(log_ndtr);
#: scipy's erfc flushes to zero near x ~ 38 while the log route keeps
#: subnormal tail values alive.
_ERFC_SWITCH = 30.0


def _check_finite(x, name="x"):
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} must be finite, got {x!r}")


def gauss_H(x):
    """Gaussian tail probability P(Z > x) = erfc(x/sqrt(2))/2.

    Accepts scalars or arrays.  Stays strictly positive (subnormal) out to
    x ~ 38 instead of underflowing at the erfc limit.
    """
    arr = np.asarray(x, dtype=float)
    _check_finite(arr)
    out = np.where(arr < _ERFC_SWITCH,
                   0.5 * erfc(arr / _SQRT2),
                   np.exp(log_ndtr(-arr)))
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def log_H(x):
    """ln H(x), accurate over the whole real line.

    Backed by scipy's log_ndtr, which evaluates the scaled complementary
    error function in the body and the Mills-ratio asymptotics in the tail,
    so log_H(30) and beyond are finite and accurate.
    """
    arr = np.asarray(x, dtype=float)
    _check_finite(arr)
    out = log_ndtr(-arr)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def _check_beta(beta):
    if not (beta >= 0.0):  # also rejects NaN
        raise DomainError(f"beta must be >= 0 or inf, got {beta!r}")


def gauss_H_beta(x, beta):
    """H_beta(x) = exp(-beta) + (1 - exp(-beta)) H(x).

    Branches once at the top: beta = inf returns H(x) exactly, beta = 0
    returns 1 identically.
    """
    _check_beta(beta)
    if math.isinf(beta):
        return gauss_H(x)
    arr = np.asarray(x, dtype=float)
    _check_finite(arr)
    emb = math.exp(-beta)
    out = emb + (1.0 - emb) * 0.5 * erfc(arr / _SQRT2)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def log_H_beta(x, beta):
    """ln H_beta(x), stable for large positive x at any beta."""
    _check_beta(beta)
    if math.isinf(beta):
        return log_H(x)
    if beta == 0.0:
        arr = np.asarray(x, dtype=float)
        out = np.zeros_like(arr)
        return float(out) if np.isscalar(x) or arr.ndim == 0 else out
    arr = np.asarray(x, dtype=float)
    _check_finite(arr)
    # log(e^-b + (1-e^-b) H) via logaddexp; H <= 1 so both summands are tame.
    out = np.logaddexp(-beta, math.log1p(-math.exp(-beta)) + log_ndtr(-arr))
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def log_H_beta_prime(x, beta):
    """d/dx ln H_beta(x) = -(1 - e^-beta) G(x) / H_beta(x).

    Evaluated in log space at beta = inf, where both G and H underflow in
    the right tail but their ratio (the inverse Mills ratio) stays ~ x.
    """
    _check_beta(beta)
    arr = np.asarray(x, dtype=float)
    _check_finite(arr)
    log_g = -0.5 * arr * arr - _LOG_SQRT2PI
    if math.isinf(beta):
        out = -np.exp(log_g - log_ndtr(-arr))
    elif beta == 0.0:
        out = np.zeros_like(arr)
    else:
        emb = math.exp(-beta)
        out = -(1.0 - emb) * np.exp(log_g) / (emb + (1.0 - emb) * 0.5 * erfc(arr / _SQRT2))
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


# ---------------------------------------------------------------------------
# Nonlinearity moments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NonlinearityMoments:
    """Gaussian moments of an activation: mu0 = E[s(z)], mu1 = E[z s(z)],
    mu2 = E[s(z)^2].  The residual variance mu_star_sq = mu2 - mu1^2 - mu0^2
    is derived, never stored, so the defining identity holds exactly.
    """

    mu0: float
    mu1: float
    mu2: float

    def __post_init__(self):
        for name in ("mu0", "mu1", "mu2"):
            _check_finite(getattr(self, name), name)
        if self.mu_star_sq < -1e-12:
            raise DomainError(
                "mu2 < mu1^2 + mu0^2 violates Cauchy-Schwarz: "
                f"mu_star_sq = {self.mu_star_sq!r}")

    @property
    def mu_star_sq(self) -> float:
        return self.mu2 - self.mu1 ** 2 - self.mu0 ** 2


#: Moments of sign(z): mu1 = sqrt(2/pi), mu2 = 1.
SIGN_MOMENTS = NonlinearityMoments(mu0=0.0, mu1=math.sqrt(2.0 / math.pi), mu2=1.0)


def moments_of(nonlinearity: Callable[[float], float], tol: float = 1e-10) -> NonlinearityMoments:
    """Compute (mu0, mu1, mu2) of a scalar activation by adaptive quadrature.

    The integration is split at the origin, where sign-like activations are
    allowed to kink.  Raises AccuracyError when the quadrature error
    estimate exceeds ``tol``.
    """
    def against_gaussian(f):
        total, err = 0.0, 0.0
        for lo, hi in ((-np.inf, 0.0), (0.0, np.inf)):
            val, abserr = integrate.quad(
                lambda z: f(z) * math.exp(-0.5 * z * z) / _SQRT2PI,
                lo, hi, epsabs=1e-13, epsrel=1e-13, limit=200)
            total += val
            err += abserr
        return total, err

    mu0, e0 = against_gaussian(nonlinearity)
    mu1, e1 = against_gaussian(lambda z: z * nonlinearity(z))
    mu2, e2 = against_gaussian(lambda z: nonlinearity(z) ** 2)
    worst = max(e0, e1, e2)
    if worst > tol * max(1.0, abs(mu2)):
        raise AccuracyError(
            f"moment quadrature did not converge: error estimate {worst:.3e} > {tol:.1e}")
    return NonlinearityMoments(mu0=mu0, mu1=mu1, mu2=mu2)


# ---------------------------------------------------------------------------
# Gauss-Hermite quadrature against Dz
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Immutable nodes/weights for expectations against Dz.

    Weights sum to 1 and nodes are symmetric about the origin.
    """

    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    order: int

    def __post_init__(self):
        if self.nodes.shape != self.weights.shape or self.nodes.ndim != 1:
            raise DomainError("nodes and weights must be matching 1-d arrays")
        if self.order < 1:
            raise DomainError("order must be positive")
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)


_RULE_CACHE: dict[int, QuadratureRule] = {}


def gauss_hermite(order: int = DEFAULT_ORDER) -> QuadratureRule:
    """Cached Gauss-Hermite rule of the given order for ∫ Dz f(z).

    scipy's hermitenorm roots stay accurate into the thousands of nodes
    (numpy's hermgauss overflows past order ~400).
    """
    rule = _RULE_CACHE.get(order)
    if rule is None:
        x, w = roots_hermitenorm(order)
        rule = QuadratureRule(nodes=x, weights=w / _SQRT2PI, order=order)
        _RULE_CACHE[order] = rule
    return rule


def integrate_gauss(f: Callable, rule: QuadratureRule) -> float:
    """Gauss-Hermite estimate of ∫ Dz f(z).

    ``f`` may be vectorized or scalar.  A non-finite integrand value raises
    EvaluationError carrying the offending node.
    """
    try:
        vals = np.asarray(f(rule.nodes), dtype=float)
        if vals.shape != rule.nodes.shape:
            raise TypeError
    except (TypeError, ValueError):
        vals = np.array([float(f(z)) for z in rule.nodes])
    bad = ~np.isfinite(vals)
    if bad.any():
        node = float(rule.nodes[np.argmax(bad)])
        raise EvaluationError(f"integrand non-finite at node {node!r}", node=node)
    return float(vals @ rule.weights)


def gauss_expect(f: Callable, order: int = DEFAULT_ORDER) -> float:
    """∫ Dz f(z) at a fixed order."""
    return integrate_gauss(f, gauss_hermite(order))


def gauss_expect_checked(f: Callable, order: int = DEFAULT_ORDER,
                         atol: float = 1e-9, max_doublings: int = 2) -> float:
    """∫ Dz f(z) with automatic order doubling.

    The order is doubled (up to ``max_doublings`` times) while two
    successive estimates disagree by more than ``atol * (1 + |value|)``.
    """
    prev = gauss_expect(f, order)
    for _ in range(max_doublings):
        order *= 2
        cur = gauss_expect(f, order)
        if abs(cur - prev) <= atol * (1.0 + abs(cur)):
            return cur
        prev = cur
    return prev


def log_2cosh(y):
    """ln(2 cosh(y)) without overflow: |y| + log1p(exp(-2|y|))."""
    a = np.abs(y)
    return a + np.log1p(np.exp(-2.0 * a))
