"""Replica-symmetric saddle point of the binary random-features perceptron.

Model: a teacher with D binary weights labels P standard-Gaussian patterns;
a student with N binary weights sees the patterns through a fixed Gaussian
projection D -> N followed by an odd activation, and must satisfy all P
constraints with margin kappa.  In the thermodynamic limit at fixed
alpha = P/N and alpha_T = P/D the quenched free entropy per student weight

    phi = -q_hat/2 (1 - q) + alpha_D/2 (p_d p_d_hat + p p_hat)
          - alpha_D r r_hat + G_SS + alpha_D G_SE + alpha G_E

is extremized over four order parameters and their conjugates.  q is the
student-student overlap, p and p_d the projected student-student overlap
and self-overlap, r the projected student-teacher overlap; alpha_D =
alpha / alpha_T.  The three free-entropy blocks are

    G_SS = ∫Dx ln 2cosh(sqrt(q_hat) x)                    (binary entropy)
    G_SE = -q/(2(1-q)) - ln(eta)/2 + A/(2 eta)            (projection block)
           with eta = 1 + (p_hat + p_d_hat)(1-q),
                A = (p_hat + r_hat^2)(1-q) + q/(1-q)
    G_E  = 2 ∫Dx H(-Mx/sqrt(Q-M^2)) ln H_beta((kappa - sqrt(Q) x)
                                               / sqrt(Q_d - Q))

where the effective overlaps are M = mu1 r, Q = mu_star^2 q + mu1^2 p and
Q_d = mu_star^2 + mu1^2 p_d.  Stationarity yields the eight update
equations implemented below; they are solved by a damped fixed point.

Observables: generalization error eps_g = arccos(M/sqrt(Q_d))/pi, its
Bayes-barycenter counterpart arccos(M/sqrt(Q))/pi, the stability density,
the SAT/UNSAT threshold alpha_c(alpha_T) and the maximum margin
kappa_max(alpha, alpha_T) as roots of phi = 0, plus the reduced storage
(alpha_T -> 0) and infinite-overparameterization (alpha -> 0) systems.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .errors import BracketError, DomainError, NonConvergenceError, SingularityError
from .special import (
    DEFAULT_ORDER,
    NonlinearityMoments,
    SIGN_MOMENTS,
    gauss_H,
    gauss_hermite,
    log_2cosh,
    log_H_beta,
    log_H_beta_prime,
)

_LOG_SQRT2PI = 0.5 * math.log(2.0 * math.pi)
_SQRT2PI_VAL = math.sqrt(2.0 * math.pi)
_EPS_DEGENERATE = 1e-12


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    """Ensemble-level control point (alpha, alpha_T, kappa, beta, moments).

    ``alpha_T = 0`` is reserved for the storage limit returned by
    :func:`solve_storage_limit`; everywhere else alpha_T must be positive.
    """

    alpha: float
    alpha_T: float
    kappa: float = 0.0
    beta: float = math.inf
    moments: NonlinearityMoments = SIGN_MOMENTS

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError(f"alpha must be > 0, got {self.alpha}")
        if self.alpha_T < 0:
            raise DomainError(f"alpha_T must be >= 0, got {self.alpha_T}")
        if self.kappa < 0:
            raise DomainError(f"kappa must be >= 0, got {self.kappa}")
        if not self.beta >= 0:
            raise DomainError(f"beta must be >= 0 or inf, got {self.beta}")
        if abs(self.moments.mu0) > 1e-12:
            raise DomainError("only odd activations (mu0 = 0) are supported")

    @property
    def alpha_D(self) -> float:
        if self.alpha_T == 0:
            raise DomainError("alpha_D is undefined in the storage limit")
        return self.alpha / self.alpha_T


@dataclass(frozen=True)
class OrderParams:
    q: float
    p: float
    p_d: float
    r: float

    def validate(self):
        if not 0.0 <= self.q <= 1.0:
            raise DomainError(f"q out of [0, 1]: {self.q}")
        if self.p_d <= 0:
            raise DomainError(f"p_d must be positive: {self.p_d}")
        if self.p > self.p_d + 1e-12:
            raise DomainError(f"p = {self.p} exceeds p_d = {self.p_d}")
        if self.r ** 2 > self.p + 1e-12:
            raise DomainError(f"r^2 = {self.r**2} exceeds p = {self.p}")
        return self


@dataclass(frozen=True)
class ConjugateParams:
    q_hat: float
    p_hat: float
    p_d_hat: float
    r_hat: float


@dataclass(frozen=True)
class EffectiveOverlaps:
    """Teacher-aligned effective overlaps M = mu1 r, Q = mu_star^2 q + mu1^2 p,
    Q_d = mu_star^2 + mu1^2 p_d."""

    M: float
    Q: float
    Q_d: float

    @classmethod
    def from_order(cls, op: OrderParams, moments: NonlinearityMoments) -> "EffectiveOverlaps":
        ms = moments.mu_star_sq
        m1sq = moments.mu1 ** 2
        return cls(M=moments.mu1 * op.r,
                   Q=ms * op.q + m1sq * op.p,
                   Q_d=ms + m1sq * op.p_d)


_RECORD_FIELDS = ("alpha", "alpha_T", "kappa", "beta", "q", "p", "p_d", "r",
                  "q_hat", "p_hat", "p_d_hat", "r_hat", "phi", "eps_g",
                  "eps_g_bayes", "iterations", "residual")


@dataclass(frozen=True)
class SaddleSolution:
    params: ModelParams
    op: OrderParams
    cp: ConjugateParams
    phi: float
    residual: float
    iterations: int

    def to_record(self) -> dict:
        """Flat record with a fixed column order (see RECORD_FIELDS)."""
        vals = {
            "alpha": self.params.alpha, "alpha_T": self.params.alpha_T,
            "kappa": self.params.kappa, "beta": self.params.beta,
            "q": self.op.q, "p": self.op.p, "p_d": self.op.p_d, "r": self.op.r,
            "q_hat": self.cp.q_hat, "p_hat": self.cp.p_hat,
            "p_d_hat": self.cp.p_d_hat, "r_hat": self.cp.r_hat,
            "phi": self.phi,
            "eps_g": generalization_error(self.op, self.params.moments),
            "eps_g_bayes": bayes_generalization_error(self.op, self.params.moments),
            "iterations": self.iterations, "residual": self.residual,
        }
        return {k: vals[k] for k in _RECORD_FIELDS}


RECORD_FIELDS = _RECORD_FIELDS


# ---------------------------------------------------------------------------
# Free-entropy blocks
# ---------------------------------------------------------------------------

def entropic_term(q_hat: float, order: int = DEFAULT_ORDER) -> float:
    """G_SS(q_hat) = ∫Dx ln 2cosh(sqrt(q_hat) x); equals ln 2 at q_hat = 0.

    This value already contains the q_hat/2 shift relative to the raw
    replica limit, which is compensated by the -q_hat/2 (1-q) term in phi.
    """
    if q_hat < 0:
        raise DomainError(f"q_hat must be >= 0, got {q_hat}")
    if q_hat == 0.0:
        return math.log(2.0)
    rule = gauss_hermite(order)
    c = math.sqrt(q_hat)
    return float(log_2cosh(c * rule.nodes) @ rule.weights)


def _entropic_q(q_hat: float, order: int = DEFAULT_ORDER) -> float:
    """q-update from G_SS: q = ∫Dx tanh^2(sqrt(q_hat) x)."""
    if q_hat <= 0.0:
        return 0.0
    rule = gauss_hermite(order)
    t = np.tanh(math.sqrt(q_hat) * rule.nodes)
    return float((t * t) @ rule.weights)


def _gse_pieces(op: OrderParams, cp: ConjugateParams):
    q = op.q
    if q >= 1.0:
        raise SingularityError("q = 1 makes the projection block singular", quantity="q")
    one_q = 1.0 - q
    eta = 1.0 + (cp.p_hat + cp.p_d_hat) * one_q
    if eta <= 0.0:
        raise SingularityError(
            f"1 + (p_hat + p_d_hat)(1-q) = {eta} <= 0", quantity="eta")
    A = (cp.p_hat + cp.r_hat ** 2) * one_q + q / one_q
    return one_q, eta, A


def entropic_energetic_term(op: OrderParams, cp: ConjugateParams) -> float:
    """Closed-form G_SE; see module docstring for eta and A."""
    one_q, eta, A = _gse_pieces(op, cp)
    return -0.5 * op.q / one_q - 0.5 * math.log(eta) + 0.5 * A / eta


def _gse_grads(op: OrderParams, cp: ConjugateParams):
    """Partials of G_SE wrt (q, p_hat, p_d_hat, r_hat)."""
    one_q, eta, A = _gse_pieces(op, cp)
    hsum = cp.p_hat + cp.p_d_hat
    d_p_hat = -one_q * A / (2.0 * eta * eta)
    d_p_d_hat = -one_q / (2.0 * eta) - one_q * A / (2.0 * eta * eta)
    d_r_hat = cp.r_hat * one_q / eta
    inv1q2 = 1.0 / (one_q * one_q)
    dA_dq = -(cp.p_hat + cp.r_hat ** 2) + inv1q2
    d_q = (-0.5 * inv1q2 + hsum / (2.0 * eta)
           + (dA_dq * eta + A * hsum) / (2.0 * eta * eta))
    return d_q, d_p_hat, d_p_d_hat, d_r_hat


def _energetic_pieces(eff: EffectiveOverlaps, kappa: float, beta: float,
                      order: int = DEFAULT_ORDER):
    """Value and (dM, dQ, dQd) of G_E in a single quadrature pass."""
    M, Q, Q_d = eff.M, eff.Q, eff.Q_d
    if Q_d - Q < _EPS_DEGENERATE:
        raise SingularityError(
            f"Q_d - Q = {Q_d - Q} signals a collapsed student space", quantity="Q_d - Q")
    if Q < M * M - 1e-14:
        raise SingularityError(f"Q < M^2 ({Q} < {M*M})", quantity="Q - M^2")
    if Q <= 0.0:
        # q = p = r = 0: every constraint is satisfied with probability H_beta(kappa).
        val = float(log_H_beta(kappa / math.sqrt(Q_d), beta))
        return val, 0.0, 0.0, 0.0

    rule = gauss_hermite(order)
    x, w = rule.nodes, rule.weights
    sQ = math.sqrt(Q)
    sD = math.sqrt(Q_d - Q)
    a2 = (kappa - sQ * x) / sD
    lhb = log_H_beta(a2, beta)
    lhb_p = log_H_beta_prime(a2, beta)

    varM = Q - M * M
    if abs(M) < _EPS_DEGENERATE:
        # H factor is identically 1/2; d(a1)/dM = -x/sqrt(Q) there.
        hfac = np.full_like(x, 0.5)
        dM = (2.0 / (_SQRT2PI_VAL * sQ)) * float((x * lhb) @ w)
        dQ1 = 0.0
    elif varM < _EPS_DEGENERATE:
        # Perfect teacher alignment: H(-Mx/0+) degenerates to a step in x;
        # the delta-like boundary contributions to the gradients are dropped.
        hfac = np.where(np.sign(M) * x > 0, 1.0, np.where(x == 0, 0.5, 0.0))
        dM = 0.0
        dQ1 = 0.0
    else:
        sM = math.sqrt(varM)
        a1 = -M * x / sM
        hfac = gauss_H(a1)
        g1_term = np.exp(-0.5 * a1 * a1 - _LOG_SQRT2PI) * x * lhb
        dM = 2.0 * float(g1_term @ w) * Q / (varM * sM)
        dQ1 = -float(g1_term @ w) * M / (varM * sM)

    val = 2.0 * float((hfac * lhb) @ w)
    da2_dQ = -x / (2.0 * sQ * sD) + a2 / (2.0 * (Q_d - Q))
    da2_dQd = -a2 / (2.0 * (Q_d - Q))
    dQ = dQ1 + 2.0 * float((hfac * lhb_p * da2_dQ) @ w)
    dQd = 2.0 * float((hfac * lhb_p * da2_dQd) @ w)
    return val, dM, dQ, dQd


def energetic_term(eff: EffectiveOverlaps, kappa: float, beta: float = math.inf,
                   order: int = DEFAULT_ORDER) -> float:
    """G_E; non-positive at beta = inf, identically 0 at beta = 0."""
    if beta == 0.0:
        return 0.0
    return _energetic_pieces(eff, kappa, beta, order)[0]


def energetic_term_grads(eff: EffectiveOverlaps, kappa: float, beta: float = math.inf,
                         order: int = DEFAULT_ORDER):
    """(dG_E/dM, dG_E/dQ, dG_E/dQ_d)."""
    if beta == 0.0:
        return 0.0, 0.0, 0.0
    _, dM, dQ, dQd = _energetic_pieces(eff, kappa, beta, order)
    return dM, dQ, dQd


def free_entropy(params: ModelParams, op: OrderParams, cp: ConjugateParams,
                 order: int = DEFAULT_ORDER) -> float:
    """Assemble phi from the three blocks and the Lagrange terms."""
    aD = params.alpha_D
    eff = EffectiveOverlaps.from_order(op, params.moments)
    gss = entropic_term(cp.q_hat, order)
    gse = entropic_energetic_term(op, cp)
    ge = energetic_term(eff, params.kappa, params.beta, order)
    return (-0.5 * cp.q_hat * (1.0 - op.q)
            + 0.5 * aD * (op.p_d * cp.p_d_hat + op.p * cp.p_hat)
            - aD * op.r * cp.r_hat
            + gss + aD * gse + params.alpha * ge)


def free_entropy_grads(params: ModelParams, op: OrderParams, cp: ConjugateParams,
                       order: int = DEFAULT_ORDER) -> dict:
    """Analytic partials of phi wrt all eight parameters.

    The saddle updates are these partials set to zero and solved for one
    variable each; the finite-difference test exercises this function.
    """
    aD = params.alpha_D
    m = params.moments
    eff = EffectiveOverlaps.from_order(op, m)
    gse_q, gse_ph, gse_pdh, gse_rh = _gse_grads(op, cp)
    gM, gQ, gQd = energetic_term_grads(eff, params.kappa, params.beta, order)
    dq_hat = -0.5 * (1.0 - op.q) + 0.5 * (1.0 - _entropic_q(cp.q_hat, order))
    return {
        "q": 0.5 * cp.q_hat + aD * gse_q + params.alpha * m.mu_star_sq * gQ,
        "p": 0.5 * aD * cp.p_hat + params.alpha * m.mu1 ** 2 * gQ,
        "p_d": 0.5 * aD * cp.p_d_hat + params.alpha * m.mu1 ** 2 * gQd,
        "r": -aD * cp.r_hat + params.alpha * m.mu1 * gM,
        "q_hat": dq_hat,
        "p_hat": aD * (0.5 * op.p + gse_ph),
        "p_d_hat": aD * (0.5 * op.p_d + gse_pdh),
        "r_hat": aD * (-op.r + gse_rh),
    }


# ---------------------------------------------------------------------------
# Fixed-point solver
# ---------------------------------------------------------------------------

def default_init(params: ModelParams, order: int = DEFAULT_ORDER):
    """Interior starting point; hats from one forward update."""
    op = OrderParams(q=0.5, p=0.5, p_d=1.0, r=0.3)
    cp = _hat_update(params, op, ConjugateParams(0.0, 0.0, 0.0, 0.0), order)
    return op, cp


def _hat_update(params: ModelParams, op: OrderParams, cp: ConjugateParams,
                order: int) -> ConjugateParams:
    m = params.moments
    eff = EffectiveOverlaps.from_order(op, m)
    gM, gQ, gQd = energetic_term_grads(eff, params.kappa, params.beta, order)
    aT = params.alpha_T
    p_hat = -2.0 * aT * m.mu1 ** 2 * gQ
    p_d_hat = -2.0 * aT * m.mu1 ** 2 * gQd
    r_hat = aT * m.mu1 * gM
    cp_new = ConjugateParams(q_hat=cp.q_hat, p_hat=p_hat, p_d_hat=p_d_hat, r_hat=r_hat)
    gse_q, _, _, _ = _gse_grads(op, cp_new)
    q_hat = -2.0 * params.alpha_D * gse_q - 2.0 * params.alpha * m.mu_star_sq * gQ
    return ConjugateParams(q_hat=q_hat, p_hat=p_hat, p_d_hat=p_d_hat, r_hat=r_hat)


def _order_update(op_old: OrderParams, cp: ConjugateParams, order: int) -> OrderParams:
    q = _entropic_q(max(cp.q_hat, 0.0), order)
    one_q = 1.0 - q
    eta = 1.0 + (cp.p_hat + cp.p_d_hat) * one_q
    if eta <= 0.0:
        raise SingularityError(f"eta = {eta} <= 0 during iteration", quantity="eta")
    A = (cp.p_hat + cp.r_hat ** 2) * one_q + (q / one_q if one_q > 0 else 0.0)
    p = one_q * A / (eta * eta)
    p_d = p + one_q / eta
    r = cp.r_hat * one_q / eta
    return OrderParams(q=q, p=p, p_d=p_d, r=r)


def _project(op: OrderParams, cp: ConjugateParams):
    """Project transient invariant violations back to the feasible set."""
    touched = False
    q = min(max(op.q, 0.0), 1.0 - 1e-12)
    p_d = max(op.p_d, 1e-12)
    p = op.p
    if p > p_d:
        p, touched = p_d, True
    r = op.r
    if r * r > p:
        if p < 0:
            p, touched = 0.0, True
        r, touched = math.copysign(math.sqrt(max(p, 0.0)), r), True
    q_hat = cp.q_hat
    if q_hat < 0.0:
        q_hat, touched = 0.0, True
    if (q, p, p_d, r) != (op.q, op.p, op.p_d, op.r):
        touched = True
    return OrderParams(q, p, p_d, r), replace(cp, q_hat=q_hat), touched


def solve_saddle(params: ModelParams, init=None, tol: float = 1e-9,
                 max_iter: int = 2000, damping: float = 0.5,
                 order: int = DEFAULT_ORDER) -> SaddleSolution:
    """Damped fixed-point iteration of the eight saddle equations.

    ``init`` may be a (OrderParams, ConjugateParams) pair, e.g. from a
    previous solution for warm starts.  Damping halves when the residual
    oscillates; persistent feasibility projections abort.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    if init is None:
        op, cp = default_init(params, order)
    else:
        op, cp = init
    damp = damping
    prev_res = math.inf
    bad_streak = 0
    projected_streak = 0
    res = math.inf
    for it in range(1, max_iter + 1):
        cp_new = _hat_update(params, op, cp, order)
        op_new = _order_update(op, cp_new, order)
        res = max(
            abs(op_new.q - op.q), abs(op_new.p - op.p),
            abs(op_new.p_d - op.p_d), abs(op_new.r - op.r),
            abs(cp_new.q_hat - cp.q_hat), abs(cp_new.p_hat - cp.p_hat),
            abs(cp_new.p_d_hat - cp.p_d_hat), abs(cp_new.r_hat - cp.r_hat),
        )
        op = OrderParams(
            q=op.q + damp * (op_new.q - op.q),
            p=op.p + damp * (op_new.p - op.p),
            p_d=op.p_d + damp * (op_new.p_d - op.p_d),
            r=op.r + damp * (op_new.r - op.r),
        )
        cp = ConjugateParams(
            q_hat=cp.q_hat + damp * (cp_new.q_hat - cp.q_hat),
            p_hat=cp.p_hat + damp * (cp_new.p_hat - cp.p_hat),
            p_d_hat=cp.p_d_hat + damp * (cp_new.p_d_hat - cp.p_d_hat),
            r_hat=cp.r_hat + damp * (cp_new.r_hat - cp.r_hat),
        )
        op, cp, touched = _project(op, cp)
        projected_streak = projected_streak + 1 if touched else 0
        if projected_streak > 50:
            raise NonConvergenceError(
                "feasibility projection persisted for more than 50 iterations",
                residual=res, iterations=it, state=(op, cp))
        if res < tol:
            phi = free_entropy(params, op, cp, order)
            phi_fine = free_entropy(params, op, cp, 2 * order)
            if abs(phi_fine - phi) > 1e-9 * (1.0 + abs(phi_fine)):
                phi = free_entropy(params, op, cp, 4 * order)
            else:
                phi = phi_fine
            return SaddleSolution(params=params, op=op, cp=cp, phi=phi,
                                  residual=res, iterations=it)
        if res > prev_res:
            bad_streak += 1
            if bad_streak >= 2:
                damp = max(damp * 0.5, 0.02)
                bad_streak = 0
        else:
            bad_streak = 0
            damp = min(damp * 1.01, damping)
        prev_res = res
    raise NonConvergenceError(
        f"saddle iteration did not reach tol={tol} in {max_iter} iterations",
        residual=res, iterations=max_iter, state=(op, cp))


# ---------------------------------------------------------------------------
# Observables
# ---------------------------------------------------------------------------

def _arccos_ratio(num: float, den_sq: float) -> float:
    if den_sq <= 0:
        raise DomainError(f"nonpositive variance {den_sq} in arccos ratio")
    ratio = num / math.sqrt(den_sq)
    if abs(ratio) > 1.0:
        if abs(ratio) - 1.0 < 1e-10:
            warnings.warn(f"arccos argument clamped: |{ratio}| > 1", stacklevel=3)
            ratio = math.copysign(1.0, ratio)
        else:
            raise DomainError(f"arccos argument {ratio} out of range")
    return math.acos(ratio) / math.pi


def generalization_error(op: OrderParams, moments: NonlinearityMoments) -> float:
    """eps_g = arccos(M / sqrt(Q_d)) / pi."""
    eff = EffectiveOverlaps.from_order(op, moments)
    return _arccos_ratio(eff.M, eff.Q_d)


def bayes_generalization_error(op: OrderParams, moments: NonlinearityMoments) -> float:
    """Barycenter error arccos(M / sqrt(Q)) / pi; 1/2 in the q = p = r = 0 limit."""
    eff = EffectiveOverlaps.from_order(op, moments)
    if eff.Q < 1e-300:
        return 0.5
    return _arccos_ratio(eff.M, eff.Q)


def stability_density(delta, sol: SaddleSolution, order: int = DEFAULT_ORDER):
    """Density of pattern stabilities at the solved point (zero margin only).

    At beta = inf the density vanishes for delta < 0; at any beta it
    integrates to 1.  The margin-kappa generalization is not defined here,
    so kappa != 0 is rejected.
    """
    if sol.params.kappa != 0.0:
        raise NotImplementedError("stability density is defined for kappa = 0 only")
    beta = sol.params.beta
    eff = EffectiveOverlaps.from_order(sol.op, sol.params.moments)
    M, Q, Q_d = eff.M, eff.Q, eff.Q_d
    sQ, sD = math.sqrt(Q), math.sqrt(Q_d - Q)
    varM = Q - M * M
    rule = gauss_hermite(order)
    x, w = rule.nodes, rule.weights
    if varM < _EPS_DEGENERATE:
        hfac = np.where(np.sign(M) * x > 0, 1.0, np.where(x == 0, 0.5, 0.0))
    else:
        hfac = gauss_H(-M * x / math.sqrt(varM))
    log_hb_den = log_H_beta(-(sQ / sD) * x, beta)

    deltas = np.atleast_1d(np.asarray(delta, dtype=float))
    out = np.empty_like(deltas)
    for i, d in enumerate(deltas):
        if math.isinf(beta) and d < 0.0:
            out[i] = 0.0
            continue
        loss_fac = 1.0 if d >= 0.0 else math.exp(-beta)
        u = (d - sQ * x) / sD
        log_gauss = -0.5 * u * u - _LOG_SQRT2PI
        out[i] = (2.0 * loss_fac / sD) * float(
            (np.exp(log_gauss - log_hb_den) * hfac) @ w)
    return float(out[0]) if np.isscalar(delta) else out


# ---------------------------------------------------------------------------
# Roots on the phase diagram
# ---------------------------------------------------------------------------

def _warm_solver(order: int = DEFAULT_ORDER, tol: float = 1e-9):
    """phi evaluator that warm-starts each solve from the previous one.

    A q -> 1 runaway (student space collapse) happens beyond the RS
    spinodal where no solutions exist; for root bracketing that counts as
    phi = -inf and the warm-start state is left untouched.
    """
    state = {"init": None}

    def phi_at(params: ModelParams) -> float:
        try:
            sol = solve_saddle(params, init=state["init"], tol=tol,
                               max_iter=20000, order=order)
        except SingularityError:
            return -math.inf
        except NonConvergenceError as err:
            op, _ = err.state
            if op.q > 0.95:  # crawling toward the q -> 1 collapse
                return -math.inf
            raise
        state["init"] = (sol.op, sol.cp)
        return sol.phi

    return phi_at


def _bisect(f, lo, hi, flo, fhi, xtol):
    """Plain bisection; robust to the mild quadrature noise in phi."""
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
    return 0.5 * (lo + hi)


def max_margin(alpha: float, alpha_T: float, beta: float = math.inf,
               moments: NonlinearityMoments = SIGN_MOMENTS,
               xtol: float = 1e-4, order: int = DEFAULT_ORDER) -> float:
    """Largest margin with nonnegative entropy: root of phi(kappa) = 0.

    Deep in the overparameterized regime the replica-symmetric fixed point
    can destabilize (q -> 1 collapse) while phi is still positive; the
    collapse counts as phi = -inf, so the returned value is then the
    boundary of existence of the reachable branch rather than a true zero
    crossing.
    """
    phi_at = _warm_solver(order)
    f = lambda k: phi_at(ModelParams(alpha, alpha_T, kappa=k, beta=beta, moments=moments))
    lo, flo = 0.0, f(0.0)
    if flo <= 0:
        raise BracketError(
            f"phi(kappa=0) = {flo} <= 0: alpha beyond the SAT/UNSAT threshold",
            endpoints=((0.0, flo), None))
    hi, fh = 0.5, f(0.5)
    while fh > 0:
        lo, flo = hi, fh
        hi *= 2.0
        if hi > 16.0:
            raise BracketError("no sign change of phi(kappa) up to kappa = 16",
                               endpoints=((lo, flo), (hi, fh)))
        fh = f(hi)
    return _bisect(f, lo, hi, flo, fh, xtol)


def critical_capacity(alpha_T: float, kappa: float = 0.0, beta: float = math.inf,
                      moments: NonlinearityMoments = SIGN_MOMENTS,
                      xtol: float = 1e-4, order: int = DEFAULT_ORDER) -> float:
    """SAT/UNSAT threshold: root of phi(alpha; kappa) = 0 in alpha."""
    phi_at = _warm_solver(order)
    f = lambda a: phi_at(ModelParams(a, alpha_T, kappa=kappa, beta=beta, moments=moments))
    lo, flo = 0.4, f(0.4)
    if flo <= 0:
        while flo <= 0:
            lo *= 0.5
            if lo < 1e-3:
                raise BracketError("phi < 0 even at alpha = 1e-3",
                                   endpoints=((lo, flo), None))
            flo = f(lo)
    hi, fh = 2.0 * lo, f(2.0 * lo)
    while fh > 0:
        lo, flo = hi, fh
        hi *= 2.0
        if hi > 64.0:
            raise BracketError("no sign change of phi(alpha) up to alpha = 64",
                               endpoints=((lo, flo), (hi, fh)))
        fh = f(hi)
    return _bisect(f, lo, hi, flo, fh, xtol)


def optimal_margin(alpha: float, alpha_T: float,
                   moments: NonlinearityMoments = SIGN_MOMENTS,
                   xtol: float = 1e-3, order: int = DEFAULT_ORDER) -> float:
    """Margin minimizing the barycenter error over [0, kappa_max].

    The upper search bound only needs to contain the minimizer, so a loose
    kappa_max suffices and keeps the search away from the stiff boundary.
    """
    kmax = max_margin(alpha, alpha_T, moments=moments, xtol=1e-2, order=order)
    state = {"init": None}

    def eps_b(k: float) -> float:
        sol = solve_saddle(ModelParams(alpha, alpha_T, kappa=k, moments=moments),
                           init=state["init"], max_iter=20000, order=order)
        state["init"] = (sol.op, sol.cp)
        return bayes_generalization_error(sol.op, moments)

    res = optimize.minimize_scalar(
        eps_b, bounds=(0.0, max(0.98 * kmax - 1e-6, 1e-6)), method="bounded",
        options={"xatol": xtol})
    k_star = float(res.x)
    # A bounded minimizer never returns the exact endpoint; snap to 0 when
    # the interior candidate is no better than the zero-margin point.
    if eps_b(0.0) <= res.fun + 1e-12:
        return 0.0
    return k_star


# ---------------------------------------------------------------------------
# Reduced systems
# ---------------------------------------------------------------------------

def solve_storage_limit(alpha: float, beta: float = math.inf, tol: float = 1e-10,
                        max_iter: int = 4000, damping: float = 0.5,
                        order: int = DEFAULT_ORDER) -> SaddleSolution:
    """alpha_T -> 0 limit: the classical storage problem.

    Only (q, q_hat) survive, with p = q, p_d = 1, r = 0 and zero remaining
    hats; phi is independent of the activation.
    """
    if alpha <= 0:
        raise DomainError("alpha must be positive")
    q, q_hat = 0.5, 1.0
    res = math.inf
    for it in range(1, max_iter + 1):
        # G_E depends on q only through Q/Q_d = q; use unit moments.
        eff = EffectiveOverlaps(M=0.0, Q=q, Q_d=1.0)
        _, _, gQ, _ = _energetic_pieces(eff, 0.0, beta, order)
        q_hat_new = max(-2.0 * alpha * gQ, 0.0)
        q_new = _entropic_q(q_hat_new, order)
        res = max(abs(q_new - q), abs(q_hat_new - q_hat))
        q += damping * (q_new - q)
        q_hat += damping * (q_hat_new - q_hat)
        q = min(max(q, 0.0), 1.0 - 1e-14)
        if res < tol:
            break
    else:
        raise NonConvergenceError("storage fixed point did not converge",
                                  residual=res, iterations=max_iter, state=(q, q_hat))
    eff = EffectiveOverlaps(M=0.0, Q=q, Q_d=1.0)
    ge = energetic_term(eff, 0.0, beta, order)
    phi = -0.5 * q_hat * (1.0 - q) + entropic_term(q_hat, order) + alpha * ge
    params = ModelParams(alpha=alpha, alpha_T=0.0, kappa=0.0, beta=beta)
    return SaddleSolution(params=params,
                          op=OrderParams(q=q, p=q, p_d=1.0, r=0.0),
                          cp=ConjugateParams(q_hat=q_hat, p_hat=0.0, p_d_hat=0.0, r_hat=0.0),
                          phi=phi, residual=res, iterations=it)


def storage_capacity(beta: float = math.inf, xtol: float = 1e-4,
                     order: int = DEFAULT_ORDER) -> float:
    """Root of the storage-limit phi(alpha) = 0 (zero margin)."""
    f = lambda a: solve_storage_limit(a, beta=beta, order=order).phi
    lo, hi = 0.5, 1.0
    flo, fh = f(lo), f(hi)
    while fh > 0:
        lo, flo = hi, fh
        hi *= 2.0
        fh = f(hi)
    return _bisect(f, lo, hi, flo, fh, xtol)


@dataclass(frozen=True)
class OverparamSolution:
    """alpha -> 0 limit at fixed alpha_T: reduced (p, p_d, r) and the
    O(alpha/alpha_T) entropy correction delta_phi; phi ~ ln 2 + alpha_D delta_phi."""

    alpha_T: float
    kappa: float
    beta: float
    p: float
    p_d: float
    r: float
    delta_phi: float

    def eps_g(self, moments: NonlinearityMoments = SIGN_MOMENTS) -> float:
        ratio2 = moments.mu_star_sq / moments.mu1 ** 2
        return _arccos_ratio(self.r, ratio2 + self.p_d)

    def eps_g_bayes(self) -> float:
        return _arccos_ratio(self.r, self.p)


def _overparam_effective(p, p_d, r, moments):
    ratio2 = moments.mu_star_sq / moments.mu1 ** 2
    return EffectiveOverlaps(M=r, Q=p, Q_d=ratio2 + p_d)


def solve_overparam_limit(alpha_T: float, kappa: float = 0.0, beta: float = math.inf,
                          moments: NonlinearityMoments = SIGN_MOMENTS,
                          order: int = DEFAULT_ORDER) -> OverparamSolution:
    """Solve the three-parameter stationarity system of delta_phi.

    Parameterized as (r, ln(p - r^2), ln(p_d - p)) so the feasibility
    ordering r^2 < p < p_d is maintained by construction.
    """
    if alpha_T <= 0:
        raise DomainError("alpha_T must be positive")

    def unpack(vec):
        r = vec[0]
        p = r * r + math.exp(vec[1])
        p_d = p + math.exp(vec[2])
        return p, p_d, r

    def residuals(vec):
        p, p_d, r = unpack(vec)
        gM, gQ, gQd = energetic_term_grads(
            _overparam_effective(p, p_d, r, moments), kappa, beta, order)
        dp = p_d - p
        return [
            -r / dp + alpha_T * gM,                                      # d/dr
            (p - r * r) / (2.0 * dp * dp) + alpha_T * gQ,                # d/dp
            -0.5 + (r * r + p_d - 2.0 * p) / (2.0 * dp * dp) + alpha_T * gQd,  # d/dp_d
        ]

    x0 = np.array([0.5, math.log(0.35), math.log(0.4)])
    sol = optimize.root(residuals, x0, method="hybr", options={"xtol": 1e-12})
    if not sol.success:
        # retry from a less aligned start
        sol = optimize.root(residuals, np.array([0.2, math.log(0.2), math.log(0.8)]),
                            method="hybr", options={"xtol": 1e-12})
    if not sol.success or np.max(np.abs(residuals(sol.x))) > 1e-8:
        raise NonConvergenceError("overparameterization system did not converge",
                                  residual=float(np.max(np.abs(sol.fun))),
                                  iterations=int(sol.nfev), state=sol.x)
    p, p_d, r = unpack(sol.x)
    dp = p_d - p
    gse = 0.5 * (p / dp + math.log(dp))
    ge = energetic_term(_overparam_effective(p, p_d, r, moments), kappa, beta, order)
    delta_phi = 0.5 * (1.0 - p_d - r * r / dp) + gse + alpha_T * ge
    return OverparamSolution(alpha_T=alpha_T, kappa=kappa, beta=beta,
                             p=p, p_d=p_d, r=r, delta_phi=delta_phi)
