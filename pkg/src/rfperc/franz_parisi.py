"""Franz-Parisi local entropy around typical reference solutions.

A reference configuration is drawn from the typical margin-kappa_tilde
measure (the tilde system, solved once by :mod:`rfperc.saddle` and frozen).
The constrained system counts margin-kappa solutions at fixed overlap
t1 = 1 - 2 d with the reference, d being the normalized Hamming distance.
Its replica-symmetric free entropy

    Phi_FP(t1) = -q_hat/2 (1-q) + alpha_D/2 (p_d p_d_hat + p p_hat)
                 - alpha_D r r_hat - alpha_D (k1 k1_hat - k0 k0_hat)
                 - t1 t1_hat + t0 t0_hat
                 + G_SS + alpha_D G_SE + alpha G_E

involves, besides the constrained copies of (q, p, p_d, r) and their
conjugates, the cross overlaps t1, t0 (direct), k1, k0 (projected) with
the reference replica block and their conjugates.  The three blocks:

  * G_SS is a nested binary trace: the reference spin is Boltzmann-weighted
    by exp(sqrt(q~_hat) w~ x), and the constrained spin sees the field
    sqrt(q_hat - t0_hat^2/q~_hat) y + (t0_hat/sqrt(q~_hat)) x
    + (t1_hat - t0_hat) w~.

  * G_SE is a closed form in eta = 1 + (p_hat + p_d_hat)(1-q) and its tilde
    twin; with the cross couplings switched off it reduces exactly to the
    single-system projection block.

  * G_E = 2 ∫DxDy [H_bt(u)/H_bt(h)] ∫_{h(x)}^inf Dz ln H_b(v) with
    h(x) = (kappa~ - sqrt(Q~) x)/sqrt(Q~_d - Q~),
    Gamma = Q - (T1-T0)^2/(Q~_d - Q~), b = T0/sqrt(Q~ Gamma), a = sqrt(1-b^2),
    u = [M~ sqrt(Gamma)(b y - a x) - M sqrt(Q~) y] / den,
    den = sqrt((Q~ - M~^2)(Gamma - M^2) - (T0 - M M~)^2),
    v = [kappa - sqrt(Gamma)(a y + b x) - (T1-T0)/sqrt(Q~_d - Q~) z]
        / sqrt(Q_d - Q),
    and cross effective overlaps T1 = mu1^2 k1 + mu_star^2 t1,
    T0 = mu1^2 k0 + mu_star^2 t0.

Both inverse temperatures default to infinity (hard constraints); the
finite-beta branches are kept for diagnostics.  The replica-index
convention follows the reduction checks below: tilde quantities always
denote the reference system (they appear in h and in the H_bt ratio).

The curve classifier labels a local-entropy profile "negative" when any
converged point lies below zero, "non-monotonic" when the profile dips by
more than a small dead band before rising again, and "monotonic"
otherwise.  The local-entropy transition in alpha is where the
maximum-margin reference's profile stops being monotonic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .errors import (
    BracketError,
    DomainError,
    NonConvergenceError,
    SingularityError,
)
from .saddle import (
    EffectiveOverlaps,
    ModelParams,
    SaddleSolution,
    max_margin,
    solve_saddle,
)
from .special import (
    NonlinearityMoments,
    SIGN_MOMENTS,
    gauss_H,
    gauss_H_beta,
    gauss_hermite,
    log_2cosh,
    log_H,
    log_H_beta,
    log_H_beta_prime,
)

_LOG_SQRT2PI = 0.5 * math.log(2.0 * math.pi)

#: Gauss-Hermite order for the 2-d entropic trace.
ENTROPIC_ORDER = 60
#: Gauss-Hermite orders (x, y) and Gauss-Legendre order (z) for G_E.
ENERGETIC_ORDER = (48, 48, 32)
#: |z| beyond which standard Gaussian mass is treated as zero.
_ZCUT = 8.5


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FpModelParams:
    """Control point for a local-entropy computation.

    kappa_tilde is the reference margin, kappa the margin imposed on the
    constrained configurations (zero for the solution-counting curves).
    """

    alpha: float
    alpha_T: float
    kappa_tilde: float
    kappa: float = 0.0
    beta: float = math.inf
    beta_tilde: float = math.inf
    moments: NonlinearityMoments = SIGN_MOMENTS

    def __post_init__(self):
        if self.alpha <= 0 or self.alpha_T <= 0:
            raise DomainError("alpha and alpha_T must be positive")
        if self.kappa_tilde < 0 or self.kappa < 0:
            raise DomainError("margins must be nonnegative")

    @property
    def alpha_D(self) -> float:
        return self.alpha / self.alpha_T

    def reference_model(self) -> ModelParams:
        return ModelParams(alpha=self.alpha, alpha_T=self.alpha_T,
                           kappa=self.kappa_tilde, beta=self.beta_tilde,
                           moments=self.moments)


@dataclass(frozen=True)
class FpState:
    """Constrained-system order parameters at fixed reference overlap t1."""

    t1: float
    q: float
    p: float
    p_d: float
    r: float
    t0: float
    k1: float
    k0: float
    q_hat: float
    p_hat: float
    p_d_hat: float
    r_hat: float
    t1_hat: float
    t0_hat: float
    k1_hat: float
    k0_hat: float
    reference: SaddleSolution

    def order_vector(self):
        return np.array([self.q, self.p, self.p_d, self.r,
                         self.t0, self.k1, self.k0,
                         self.q_hat, self.p_hat, self.p_d_hat, self.r_hat,
                         self.t1_hat, self.t0_hat, self.k1_hat, self.k0_hat])


@dataclass(frozen=True)
class FpAux:
    """Derived quantities entering G_E; a^2 + b^2 = 1 by construction."""

    eta: float
    eta_tilde: float
    Gamma: float
    a: float
    b: float
    T1: float
    T0: float

    @classmethod
    def from_state(cls, state: FpState, moments: NonlinearityMoments) -> "FpAux":
        ref = state.reference
        mu1sq = moments.mu1 ** 2
        msq = moments.mu_star_sq
        T1 = mu1sq * state.k1 + msq * state.t1
        T0 = mu1sq * state.k0 + msq * state.t0
        teff = EffectiveOverlaps.from_order(ref.op, moments)
        ceff = EffectiveOverlaps.from_order(
            _order_of(state), moments)
        dqt = teff.Q_d - teff.Q
        if dqt <= 0:
            raise SingularityError("reference Q~_d - Q~ <= 0", quantity="Q~_d - Q~")
        Gamma = ceff.Q - (T1 - T0) ** 2 / dqt
        if Gamma <= 0:
            raise SingularityError(f"Gamma = {Gamma} <= 0", quantity="Gamma")
        b = T0 / math.sqrt(teff.Q * Gamma)
        if abs(b) > 1.0:
            raise SingularityError(f"|b| = {abs(b)} > 1", quantity="b")
        a = math.sqrt(1.0 - b * b)
        eta = 1.0 + (state.p_hat + state.p_d_hat) * (1.0 - state.q)
        eta_t = 1.0 + (ref.cp.p_hat + ref.cp.p_d_hat) * (1.0 - ref.op.q)
        if eta <= 0 or eta_t <= 0:
            raise SingularityError("eta or eta~ nonpositive", quantity="eta")
        return cls(eta=eta, eta_tilde=eta_t, Gamma=Gamma, a=a, b=b, T1=T1, T0=T0)


def _order_of(state: FpState):
    from .saddle import OrderParams
    return OrderParams(q=state.q, p=state.p, p_d=state.p_d, r=state.r)


@dataclass(frozen=True)
class FpSolution:
    params: FpModelParams
    state: FpState
    phi_fp: float
    residual: float
    iterations: int


@dataclass(frozen=True)
class LocalEntropyCurve:
    """phi_FP values on a distance grid with a qualitative label."""

    distances: np.ndarray
    entropies: np.ndarray
    converged: np.ndarray
    classification: str
    params: FpModelParams

    def to_rows(self):
        flags = _dip_flags(self.distances, self.entropies, self.converged)
        for d, phi, ok, flag in zip(self.distances, self.entropies,
                                    self.converged, flags):
            yield {"d": d, "t1": 1.0 - 2.0 * d,
                   "phi_fp": phi if ok else float("nan"),
                   "flag": flag if ok else "gap"}


def binary_entropy(d: float) -> float:
    """-d ln d - (1-d) ln(1-d); zero at the boundary."""
    if not 0.0 <= d <= 1.0:
        raise DomainError(f"d must lie in [0, 1], got {d}")
    if d == 0.0 or d == 1.0:
        return 0.0
    return -d * math.log(d) - (1.0 - d) * math.log(1.0 - d)


# ---------------------------------------------------------------------------
# Entropic block (nested binary trace)
# ---------------------------------------------------------------------------

def _entropic_grids(order: int):
    rule = gauss_hermite(order)
    return rule.nodes, rule.weights


def _xi_field(x, y, w_sign, q_hat, t1_hat, t0_hat, qt_hat):
    cbar_sq = q_hat - t0_hat ** 2 / qt_hat
    if cbar_sq < -1e-12:
        raise DomainError(
            f"q_hat - t0_hat^2/q~_hat = {cbar_sq} < 0 in entropic trace")
    cbar = math.sqrt(max(cbar_sq, 0.0))
    return cbar * y + (t0_hat / math.sqrt(qt_hat)) * x + (t1_hat - t0_hat) * w_sign, cbar


def _entropic_expect(fn, q_hat, t1_hat, t0_hat, qt_hat, order=ENTROPIC_ORDER):
    """E over Dx, the reference spin trace and Dy of fn(Xi, w~, x, y)."""
    if qt_hat <= 1e-10:
        raise DomainError("reference q~_hat must be positive")
    x, wx = _entropic_grids(order)
    y, wy = x, wx
    X = x[:, None]
    lw = 2.0 * math.sqrt(qt_hat) * x          # log weight ratio of w~ = +1 vs -1
    w_plus = 1.0 / (1.0 + np.exp(-lw))
    total = 0.0
    for w_sign, w_prob in ((1.0, w_plus), (-1.0, 1.0 - w_plus)):
        xi, cbar = _xi_field(X, y[None, :], w_sign, q_hat, t1_hat, t0_hat, qt_hat)
        vals = fn(xi, w_sign, X, y[None, :], cbar)
        total += float(wx @ ((vals @ wy) * w_prob))
    return total


def fp_entropic_term(q_hat, t1_hat, t0_hat, qt_hat, order=ENTROPIC_ORDER) -> float:
    """G_SS; reduces to ∫Dy ln 2cosh(sqrt(q_hat) y) at t1_hat = t0_hat = 0."""
    return _entropic_expect(lambda xi, w, x, y, c: log_2cosh(xi),
                            q_hat, t1_hat, t0_hat, qt_hat, order)


def _entropic_moments(q_hat, t1_hat, t0_hat, qt_hat, order=ENTROPIC_ORDER):
    """(E tanh^2, E w~ tanh, t0-update) of the constrained spin field.

    The t0 update -dG_SS/dt0_hat is evaluated with the y-part integrated
    by parts, which stays regular when q_hat -> t0_hat^2 / q~_hat:

        t0 = E[tanh Xi (w~ - x/sqrt(q~_hat))] + (t0_hat/q~_hat) E[sech^2 Xi].
    """
    sq = math.sqrt(qt_hat)

    def moments(xi, w, x, y, cbar):
        t = np.tanh(xi)
        sech2 = 1.0 - t * t
        return np.stack([t * t, w * t, t * (w - x / sq) + (t0_hat / qt_hat) * sech2])

    x, wx = _entropic_grids(order)
    X = x[:, None]
    w_plus = 1.0 / (1.0 + np.exp(-2.0 * sq * x))
    acc = np.zeros(3)
    for w_sign, w_prob in ((1.0, w_plus), (-1.0, 1.0 - w_plus)):
        xi, _ = _xi_field(X, x[None, :], w_sign, q_hat, t1_hat, t0_hat, qt_hat)
        vals = moments(xi, w_sign, X, x[None, :], None)
        acc += (vals @ wx) @ (wx * w_prob)
    return acc[0], acc[1], acc[2]


def _solve_t1_hat(t1, q_hat, t0_hat, qt_hat, guess, order=ENTROPIC_ORDER):
    """Invert t1 = dG_SS/dt1_hat = E[w~ tanh Xi] for t1_hat (monotone)."""
    def g(t1h):
        return _entropic_moments(q_hat, t1h, t0_hat, qt_hat, order)[1] - t1

    lo, hi = guess - 1.0, guess + 1.0
    glo, ghi = g(lo), g(hi)
    span = 1.0
    while glo > 0 or ghi < 0:
        span *= 2.0
        if span > 1e4:
            raise NonConvergenceError("t1_hat bracket expansion failed",
                                      state=(t1, q_hat, t0_hat))
        if glo > 0:
            lo -= span
            glo = g(lo)
        if ghi < 0:
            hi += span
            ghi = g(hi)
    return optimize.brentq(g, lo, hi, xtol=1e-11, rtol=8.9e-16)


# ---------------------------------------------------------------------------
# Projection block (closed form)
# ---------------------------------------------------------------------------

def _gse_closed(q, t0, t1, p_hat, p_d_hat, r_hat, k1_hat, k0_hat,
                qt, pt_hat, pdt_hat, rt_hat):
    """Closed-form G_SE of the coupled system.

    First line is the single-system block rewritten with common
    denominators; the braces carry the cross couplings and vanish when
    k1_hat = k0_hat and t1 = t0.
    """
    one_q = 1.0 - q
    one_qt = 1.0 - qt
    eta = 1.0 + (p_hat + p_d_hat) * one_q
    eta_t = 1.0 + (pt_hat + pdt_hat) * one_qt
    if eta <= 0 or eta_t <= 0:
        raise SingularityError("eta or eta~ nonpositive in G_SE", quantity="eta")
    hp = p_hat + p_d_hat
    hpt = pt_hat + pdt_hat
    at = pt_hat + rt_hat ** 2
    dk = k1_hat - k0_hat
    dt = t1 - t0

    out = (-0.5 * math.log(eta)
           + ((p_hat + r_hat ** 2) * one_q - hp * q) / (2.0 * eta))
    out += (1.0 / (2.0 * eta * eta_t)) * (
        one_q * dk * dk * (one_q + (one_qt ** 2 * at + qt) / eta_t)
        + 2.0 * dk * (one_q * one_qt * (k0_hat + r_hat * rt_hat) + t0))
    out += (1.0 / (2.0 * eta * eta_t)) * (
        hp * dt * dt * (hpt - (pt_hat + rt_hat ** 2 + hpt ** 2 * qt) / eta_t)
        + 2.0 * dt * (hp * hpt * t0 + k0_hat + r_hat * rt_hat))
    out += (dk * dt / (eta * eta_t)) * (
        1.0 + (one_qt * at - hpt * qt) / eta_t)
    return out


_GSE_ARGS = ("q", "t0", "p_hat", "p_d_hat", "r_hat", "k1_hat", "k0_hat")


def fp_entropic_energetic_term(state: FpState) -> float:
    ref = state.reference
    return _gse_closed(state.q, state.t0, state.t1,
                       state.p_hat, state.p_d_hat, state.r_hat,
                       state.k1_hat, state.k0_hat,
                       ref.op.q, ref.cp.p_hat, ref.cp.p_d_hat, ref.cp.r_hat)


def _gse_partials(state: FpState):
    """Central-difference partials of the closed form wrt _GSE_ARGS.

    The expression is cheap and smooth, so finite differences at h ~ 1e-6
    are accurate to ~1e-10, far below the fixed-point tolerance.
    """
    ref = state.reference
    base = dict(q=state.q, t0=state.t0, t1=state.t1,
                p_hat=state.p_hat, p_d_hat=state.p_d_hat, r_hat=state.r_hat,
                k1_hat=state.k1_hat, k0_hat=state.k0_hat)
    tilde = (ref.op.q, ref.cp.p_hat, ref.cp.p_d_hat, ref.cp.r_hat)

    def val(**kw):
        args = {**base, **kw}
        return _gse_closed(args["q"], args["t0"], args["t1"],
                           args["p_hat"], args["p_d_hat"], args["r_hat"],
                           args["k1_hat"], args["k0_hat"], *tilde)

    grads = {}
    for name in _GSE_ARGS:
        x0 = base[name]
        h = 1e-6 * max(1.0, abs(x0))
        grads[name] = (val(**{name: x0 + h}) - val(**{name: x0 - h})) / (2.0 * h)
    return grads


# ---------------------------------------------------------------------------
# Energetic block (2-d Gauss-Hermite x truncated Gauss-Legendre)
# ---------------------------------------------------------------------------

def _gl_nodes(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _fp_energetic_pieces(state: FpState, params: FpModelParams,
                         orders=ENERGETIC_ORDER, want_grads=True):
    """G_E and its gradients wrt (M, Q, Q_d, T1, T0) in one tensor pass.

    The z integral runs over the reference's conditional Gaussian measure
    above h(x); its window adapts to the boundary layer of width ~1/h that
    the conditioning creates at large h.
    """
    m = params.moments
    ref = state.reference
    aux = FpAux.from_state(state, m)
    teff = EffectiveOverlaps.from_order(ref.op, m)
    ceff = EffectiveOverlaps.from_order(_order_of(state), m)
    Mt, Qt, Qdt = teff.M, teff.Q, teff.Q_d
    M, Q, Qd = ceff.M, ceff.Q, ceff.Q_d
    if Qd - Q <= 1e-13:
        raise SingularityError("Q_d - Q <= 0 in FP energetic term", quantity="Q_d - Q")
    dqt = Qdt - Qt
    Gamma, a, b, T1, T0 = aux.Gamma, aux.a, aux.b, aux.T1, aux.T0
    sG = math.sqrt(Gamma)
    sQt = math.sqrt(Qt)
    sdqt = math.sqrt(dqt)
    c = (T1 - T0) / sdqt
    s = math.sqrt(Qd - Q)
    den_sq = (Qt - Mt * Mt) * (Gamma - M * M) - (T0 - M * Mt) ** 2
    if den_sq <= 0:
        raise SingularityError(f"joint covariance degenerate: den^2 = {den_sq}",
                               quantity="den^2")
    den = math.sqrt(den_sq)
    beta, beta_t = params.beta, params.beta_tilde

    nx, ny, nz = orders
    rx = gauss_hermite(nx)
    ry = gauss_hermite(ny)
    x, wx = rx.nodes, rx.weights
    y, wy = ry.nodes, ry.weights
    zg, zw = _gl_nodes(nz)

    h = (params.kappa_tilde - sQt * x) / sdqt          # (nx,)
    lo = np.maximum(h, -_ZCUT)
    # Window covering the conditional measure above h: for large h the mass
    # sits in a boundary layer of width ~1/h, so the span adapts.
    hi = np.maximum(h + 16.0 / np.maximum(1.0, h), _ZCUT)
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    Z = mid[:, None] + half[:, None] * zg[None, :]     # (nx, nz)
    # weights of the conditional measure Dz / H_bt(h) on [lo, hi]
    log_gz = -0.5 * Z * Z - _LOG_SQRT2PI
    if math.isinf(beta_t):
        rho = np.exp(log_gz - log_H(h)[:, None]) * (half[:, None] * zw[None, :])
    else:
        rho = (np.exp(log_gz) / gauss_H_beta(h, beta_t)[:, None]
               * (half[:, None] * zw[None, :]))

    X = x[:, None]
    Y = y[None, :]
    T_xy = params.kappa - sG * (a * Y + b * X)         # (nx, ny)
    u = (Mt * sG * (b * Y - a * X) - M * sQt * Y) / den
    V = (T_xy[:, :, None] - c * Z[:, None, :]) / s     # (nx, ny, nz)
    lhb = log_H_beta(V, beta)
    K = np.einsum("ij,iaj->ia", rho, lhb)              # ∫ Dz lnH_b(v) / H_bt(h)
    Hu = gauss_H_beta(u, beta_t)
    value = 2.0 * float(wx @ (Hu * K) @ wy)
    if not want_grads:
        return value, None

    lhb_p = log_H_beta_prime(V, beta)
    J0 = np.einsum("ij,iaj->ia", rho, lhb_p)
    J1 = np.einsum("ij,iaj->ia", rho * Z, lhb_p)
    if math.isinf(beta_t):
        Hu_p = -np.exp(-0.5 * u * u - _LOG_SQRT2PI)
    else:
        Hu_p = -(1.0 - math.exp(-beta_t)) * np.exp(-0.5 * u * u - _LOG_SQRT2PI)

    # chain-rule scalars per parameter theta in (M, Q, Qd, T1, T0)
    dG = {"M": 0.0, "Q": 1.0, "Qd": 0.0,
          "T1": -2.0 * (T1 - T0) / dqt, "T0": 2.0 * (T1 - T0) / dqt}
    dc = {"M": 0.0, "Q": 0.0, "Qd": 0.0, "T1": 1.0 / sdqt, "T0": -1.0 / sdqt}
    ds = {"M": 0.0, "Q": -0.5 / s, "Qd": 0.5 / s, "T1": 0.0, "T0": 0.0}
    dT0_flag = {"M": 0.0, "Q": 0.0, "Qd": 0.0, "T1": 0.0, "T0": 1.0}
    dM_flag = {"M": 1.0, "Q": 0.0, "Qd": 0.0, "T1": 0.0, "T0": 0.0}

    grads = {}
    for th in ("M", "Q", "Qd", "T1", "T0"):
        dGam = dG[th]
        dsqG = dGam / (2.0 * sG)
        db = dT0_flag[th] / math.sqrt(Qt * Gamma) - (b / (2.0 * Gamma)) * dGam
        da = -(b / a) * db if a > 1e-14 else 0.0
        dden_sq = ((Qt - Mt * Mt) * (dGam - 2.0 * M * dM_flag[th])
                   - 2.0 * (T0 - M * Mt) * (dT0_flag[th] - Mt * dM_flag[th]))
        dNu = (Mt * (dsqG * (b * Y - a * X) + sG * (db * Y - da * X))
               - dM_flag[th] * sQt * Y)
        du = dNu / den - u * (dden_sq / (2.0 * den_sq))
        dT_xy = -dsqG * (a * Y + b * X) - sG * (da * Y + db * X)
        P = dT_xy / s - T_xy * (ds[th] / (s * s))
        R = -dc[th] / s + c * (ds[th] / (s * s))
        grads[th] = 2.0 * float(
            wx @ (Hu_p * du * K + Hu * (P * J0 + R * J1)) @ wy)
    return value, grads


def fp_energetic_term(state: FpState, params: FpModelParams,
                      orders=ENERGETIC_ORDER) -> float:
    if params.beta == 0.0:
        return 0.0
    return _fp_energetic_pieces(state, params, orders, want_grads=False)[0]


# ---------------------------------------------------------------------------
# Free entropy and fixed point
# ---------------------------------------------------------------------------

def fp_free_entropy(params: FpModelParams, state: FpState,
                    entropic_order=ENTROPIC_ORDER,
                    energetic_orders=ENERGETIC_ORDER) -> float:
    aD = params.alpha_D
    ref = state.reference
    gss = fp_entropic_term(state.q_hat, state.t1_hat, state.t0_hat,
                           ref.cp.q_hat, entropic_order)
    gse = fp_entropic_energetic_term(state)
    ge = fp_energetic_term(state, params, energetic_orders)
    return (-0.5 * state.q_hat * (1.0 - state.q)
            + 0.5 * aD * (state.p_d * state.p_d_hat + state.p * state.p_hat)
            - aD * state.r * state.r_hat
            - aD * (state.k1 * state.k1_hat - state.k0 * state.k0_hat)
            - state.t1 * state.t1_hat + state.t0 * state.t0_hat
            + gss + aD * gse + params.alpha * ge)


def default_fp_init(params: FpModelParams, reference: SaddleSolution,
                    t1: float, t0_init: str = "scaled") -> FpState:
    """Pinned-limit interpolation of the reference values at overlap t1.

    ``t0_init`` selects between the q~-scaled guess and zero (both lead to
    the same fixed point on tested curves; exposed for cross-checks).
    """
    rop = reference.op
    q = min(max(t1 * t1, 1e-6), 1.0 - 1e-9)
    p = rop.p + t1 * t1 * (rop.p_d - rop.p)
    state = FpState(
        t1=t1, q=q, p=p, p_d=rop.p_d, r=rop.r,
        t0=rop.q * t1 if t0_init == "scaled" else 0.0,
        k1=rop.p + t1 * (rop.p_d - rop.p), k0=rop.p,
        q_hat=0.0, p_hat=0.0, p_d_hat=0.0, r_hat=0.0,
        t1_hat=0.0, t0_hat=0.0, k1_hat=0.0, k0_hat=0.0,
        reference=reference)
    state, _ = _fp_project(state, params)
    try:
        return _fp_update(state, params)[0]
    except SingularityError:
        return state


def _fp_update(state: FpState, params: FpModelParams,
               entropic_order=ENTROPIC_ORDER, energetic_orders=ENERGETIC_ORDER):
    """One Gauss-Seidel pass over the fifteen stationarity conditions."""
    m = params.moments
    aT = params.alpha_T
    aD = params.alpha_D
    alpha = params.alpha
    mu1sq = m.mu1 ** 2
    msq = m.mu_star_sq
    ref = state.reference

    _, ge = _fp_energetic_pieces(state, params, energetic_orders, want_grads=True)
    p_hat = -2.0 * aT * mu1sq * ge["Q"]
    p_d_hat = -2.0 * aT * mu1sq * ge["Qd"]
    r_hat = aT * m.mu1 * ge["M"]
    k1_hat = aT * mu1sq * ge["T1"]
    k0_hat = -aT * mu1sq * ge["T0"]

    mid = replace(state, p_hat=p_hat, p_d_hat=p_d_hat, r_hat=r_hat,
                  k1_hat=k1_hat, k0_hat=k0_hat)
    gse = _gse_partials(mid)
    q_hat = -2.0 * aD * gse["q"] - 2.0 * alpha * msq * ge["Q"]
    t0_hat = -aD * gse["t0"] - alpha * msq * ge["T0"]
    q_hat = max(q_hat, 0.0)
    # keep the inner variance of the entropic trace nonnegative
    t0_cap = math.sqrt(q_hat * ref.cp.q_hat) * (1.0 - 1e-12)
    t0_hat = min(max(t0_hat, -t0_cap), t0_cap)

    t1_hat = _solve_t1_hat(state.t1, q_hat, t0_hat, ref.cp.q_hat,
                           guess=state.t1_hat, order=entropic_order)
    q_new, _, t0_new = _entropic_moments(q_hat, t1_hat, t0_hat, ref.cp.q_hat,
                                         entropic_order)

    mid = replace(mid, q=q_new, t0=t0_new, q_hat=q_hat,
                  t0_hat=t0_hat, t1_hat=t1_hat)
    gse2 = _gse_partials(mid)
    new = replace(
        mid,
        p=-2.0 * gse2["p_hat"], p_d=-2.0 * gse2["p_d_hat"], r=gse2["r_hat"],
        k1=gse2["k1_hat"], k0=-gse2["k0_hat"],
    )
    old_vec = state.order_vector()
    res = float(np.max(np.abs(new.order_vector() - old_vec) / (1.0 + np.abs(old_vec))))
    return new, res


def _fp_project(state: FpState, params: FpModelParams):
    q = min(max(state.q, 0.0), 1.0 - 1e-12)
    p_d = max(state.p_d, 1e-12)
    p = min(state.p, p_d)
    r = state.r
    if r * r > p:
        p = max(p, 0.0)
        r = math.copysign(math.sqrt(p), r)
    t0 = min(max(state.t0, -math.sqrt(q)), math.sqrt(q))
    touched = (q, p, p_d, r, t0) != (state.q, state.p, state.p_d, state.r, state.t0)
    state = replace(state, q=q, p=p, p_d=p_d, r=r, t0=t0)

    # Keep the joint (teacher, reference, constrained) covariance admissible:
    # Gamma > 0, b^2 <= 1 and den^2 > 0.  Transient violations are pulled
    # back by shrinking the cross overlaps k1, k0 toward the safe point.
    m = params.moments
    mu1sq = m.mu1 ** 2
    teff = EffectiveOverlaps.from_order(state.reference.op, m)
    ceff = EffectiveOverlaps.from_order(_order_of(state), m)
    dqt = teff.Q_d - teff.Q
    for _ in range(60):
        T1 = mu1sq * state.k1 + m.mu_star_sq * state.t1
        T0 = mu1sq * state.k0 + m.mu_star_sq * state.t0
        Gamma = ceff.Q - (T1 - T0) ** 2 / dqt
        if Gamma <= 1e-12:
            k_mid = (T0 + m.mu_star_sq * (state.t1 - state.t0)) / mu1sq
            state = replace(state, k1=k_mid + 0.8 * (state.k1 - k_mid))
            touched = True
            continue
        ok_b = T0 * T0 <= teff.Q * Gamma * (1.0 - 1e-12)
        den_sq = ((teff.Q - teff.M ** 2) * (Gamma - ceff.M ** 2)
                  - (T0 - ceff.M * teff.M) ** 2)
        if ok_b and den_sq > 1e-14:
            break
        # shrink T0 toward the teacher-aligned center M M~ via k0
        center = (ceff.M * teff.M - m.mu_star_sq * state.t0) / mu1sq
        state = replace(state, k0=center + 0.85 * (state.k0 - center))
        touched = True
    else:
        state = _fp_shrink_cross(state, params, factor=0.0)
        touched = True
    return state, touched


def _fp_shrink_cross(state: FpState, params: FpModelParams, factor: float = 0.5):
    """Pull the cross overlaps hard toward the admissible interior
    (T0 at the teacher-aligned center M M~, T1 at T0)."""
    m = params.moments
    mu1sq = m.mu1 ** 2
    teff = EffectiveOverlaps.from_order(state.reference.op, m)
    ceff = EffectiveOverlaps.from_order(_order_of(state), m)
    k0_c = (ceff.M * teff.M - m.mu_star_sq * state.t0) / mu1sq
    k0 = k0_c + factor * (state.k0 - k0_c)
    T0 = mu1sq * k0 + m.mu_star_sq * state.t0
    k1_c = (T0 - m.mu_star_sq * state.t1) / mu1sq
    k1 = k1_c + factor * (state.k1 - k1_c)
    return replace(state, k0=k0, k1=k1)


def _state_from_vector(state: FpState, vec) -> FpState:
    return replace(state, q=vec[0], p=vec[1], p_d=vec[2], r=vec[3], t0=vec[4],
                   k1=vec[5], k0=vec[6], q_hat=vec[7], p_hat=vec[8],
                   p_d_hat=vec[9], r_hat=vec[10], t1_hat=vec[11],
                   t0_hat=vec[12], k1_hat=vec[13], k0_hat=vec[14])


def _fp_root_polish(state: FpState, params: FpModelParams, tol,
                    entropic_order, energetic_orders):
    """Newton-type solve of F(x) - x = 0 for fixed points that are
    unstable under plain damped iteration (Hopf-like cycles of the update
    flow appear at intermediate distances)."""

    def residual(vec):
        st = _state_from_vector(state, vec)
        try:
            new, _ = _fp_update(st, params, entropic_order, energetic_orders)
        except (SingularityError, DomainError, NonConvergenceError):
            return np.full(vec.shape, 1e2)
        return new.order_vector() - vec

    sol = optimize.root(residual, state.order_vector(), method="hybr",
                        options={"xtol": 1e-12, "maxfev": 4000})
    if not sol.success:
        return None
    polished = _state_from_vector(state, sol.x)
    try:
        _, res = _fp_update(polished, params, entropic_order, energetic_orders)
    except (SingularityError, DomainError, NonConvergenceError):
        return None
    if res > 100.0 * tol or not 0.0 <= polished.q < 1.0:
        return None
    return polished, res


def solve_fp(params: FpModelParams, t1: float, reference: SaddleSolution = None,
             init: FpState = None, tol: float = 1e-8, max_iter: int = 2500,
             damping: float = 0.5, entropic_order=ENTROPIC_ORDER,
             energetic_orders=ENERGETIC_ORDER, t0_init: str = "scaled") -> FpSolution:
    """Damped fixed point of the constrained system at fixed t1.

    Falls back to a Newton-type root solve when the damped map stagnates
    on a limit cycle instead of contracting.
    """
    if not -1.0 < t1 < 1.0:
        raise DomainError(f"t1 must lie in (-1, 1), got {t1}")
    if reference is None:
        reference = solve_saddle(params.reference_model())
    if init is None:
        state = default_fp_init(params, reference, t1, t0_init)
    else:
        state = replace(init, t1=t1, reference=reference)
    state, _ = _fp_project(state, params)
    damp = damping
    prev_res = math.inf
    best_res = math.inf
    since_improve = 0
    bad = 0
    touched_streak = 0
    rescues = 0
    res = math.inf
    for it in range(1, max_iter + 1):
        try:
            new, res = _fp_update(state, params, entropic_order, energetic_orders)
        except SingularityError:
            rescues += 1
            if rescues > 40:
                raise
            state, _ = _fp_project(_fp_shrink_cross(state, params), params)
            damp = max(0.5 * damp, 0.01)
            continue
        vec = state.order_vector() + damp * (new.order_vector() - state.order_vector())
        state = replace(
            state, q=vec[0], p=vec[1], p_d=vec[2], r=vec[3], t0=vec[4],
            k1=vec[5], k0=vec[6], q_hat=vec[7], p_hat=vec[8], p_d_hat=vec[9],
            r_hat=vec[10], t1_hat=vec[11], t0_hat=vec[12], k1_hat=vec[13],
            k0_hat=vec[14])
        state, touched = _fp_project(state, params)
        touched_streak = touched_streak + 1 if touched else 0
        if touched_streak > 50:
            raise NonConvergenceError("FP projection persisted beyond 50 iterations",
                                      residual=res, iterations=it, state=state)
        if res < tol:
            phi = fp_free_entropy(params, state, entropic_order, energetic_orders)
            return FpSolution(params=params, state=state, phi_fp=phi,
                              residual=res, iterations=it)
        # limit cycles of the update map show up as a stagnating residual,
        # not a growing one; after two failed damping reductions hand the
        # stationarity system to the root solver
        if res < 0.97 * best_res:
            best_res = res
            since_improve = 0
        else:
            since_improve += 1
            if since_improve >= 30:
                if damp <= 0.13 * damping:
                    polished = _fp_root_polish(state, params, tol,
                                               entropic_order, energetic_orders)
                    if polished is not None:
                        state, res = polished
                        phi = fp_free_entropy(params, state, entropic_order,
                                              energetic_orders)
                        return FpSolution(params=params, state=state, phi_fp=phi,
                                          residual=res, iterations=it)
                damp = max(0.5 * damp, 0.01)
                since_improve = 0
        if res > prev_res:
            bad += 1
            if bad >= 2:
                damp = max(0.5 * damp, 0.01)
                bad = 0
        else:
            bad = 0
            damp = min(damp * 1.002, damping)
        prev_res = res
    raise NonConvergenceError(
        f"FP iteration did not reach tol={tol} in {max_iter} iterations",
        residual=res, iterations=max_iter, state=state)


# ---------------------------------------------------------------------------
# Curves and transitions
# ---------------------------------------------------------------------------

def default_distance_grid(n: int = 40, d_min: float = 1e-3, d_max: float = 0.49):
    return np.geomspace(d_min, d_max, n)


def _dip_flags(distances, entropies, converged, dead_band: float = 1e-4):
    """Per-point dip markers: '-' where the curve sits below its running
    maximum by more than the dead band, '+' elsewhere."""
    flags = []
    running = -math.inf
    for phi, ok in zip(entropies, converged):
        if not ok:
            flags.append("gap")
            continue
        flags.append("-" if phi < running - dead_band else "+")
        running = max(running, phi)
    return flags


def classify_entropy_curve(distances, entropies, converged=None,
                           dead_band: float = 1e-4) -> str:
    """'negative' if any converged point is below zero, else 'non-monotonic'
    if the curve dips below its running maximum by more than the dead band,
    else 'monotonic'.  The dead band doubles as the negativity noise floor
    so both tests share one resolution."""
    entropies = np.asarray(entropies, dtype=float)
    if converged is None:
        converged = np.isfinite(entropies)
    vals = entropies[np.asarray(converged, dtype=bool)]
    if vals.size == 0:
        raise DomainError("no converged points to classify")
    if np.any(vals < -dead_band):
        return "negative"
    running = np.maximum.accumulate(vals)
    if np.any(vals < running - dead_band):
        return "non-monotonic"
    return "monotonic"


def local_entropy_curve(params: FpModelParams, distances=None,
                        reference: SaddleSolution = None,
                        tol: float = 1e-8, max_iter: int = 2500,
                        entropic_order=ENTROPIC_ORDER,
                        energetic_orders=ENERGETIC_ORDER,
                        dead_band: float = 1e-4) -> LocalEntropyCurve:
    """phi_FP along a distance grid, warm-starting each point from its
    neighbor (solved from the smallest distance outward, where the pinned
    initialization is reliable)."""
    if distances is None:
        distances = default_distance_grid()
    distances = np.asarray(distances, dtype=float)
    if distances.ndim != 1 or np.any(np.diff(distances) <= 0):
        raise DomainError("distance grid must be strictly increasing")
    if np.any((distances <= 0) | (distances >= 0.5)):
        raise DomainError("distances must lie in (0, 0.5)")
    if reference is None:
        reference = solve_saddle(params.reference_model())
    entropies = np.full(distances.shape, np.nan)
    converged = np.zeros(distances.shape, dtype=bool)
    states = [None] * distances.size

    def attempt(i, init):
        try:
            sol = solve_fp(params, 1.0 - 2.0 * distances[i], reference=reference,
                           init=init, tol=tol, max_iter=max_iter,
                           entropic_order=entropic_order,
                           energetic_orders=energetic_orders)
        except (NonConvergenceError, SingularityError):
            return None
        # configurations at fixed distance can never outnumber the binomial
        # count, so a fixed point above the bound is a spurious branch
        if sol.phi_fp > binary_entropy(distances[i]) + 5e-4:
            return None
        entropies[i] = sol.phi_fp
        converged[i] = True
        states[i] = sol.state
        return sol.state

    init = None
    for i in range(distances.size):
        init = attempt(i, init) or init
    # backfill gaps from the nearest converged neighbor on the right
    for i in range(distances.size - 2, -1, -1):
        if not converged[i] and converged[i + 1]:
            attempt(i, states[i + 1])
    label = classify_entropy_curve(distances, entropies, converged, dead_band)
    return LocalEntropyCurve(distances=distances, entropies=entropies,
                             converged=converged, classification=label,
                             params=params)


#: Distance grid used by the transition classifiers.  The dip that signals
#: the loss of monotonicity develops at small distance; the grid starts at
#: the resolution the reported transition refers to (linear-axis curve
#: plots begin near d ~ 0.02), below which increasingly shallow sub-scale
#: dips would shift the detected threshold downward.
TRANSITION_GRID = np.geomspace(0.022, 0.35, 16)


def _is_monotonic(params: FpModelParams, reference: SaddleSolution,
                  grid, **kw) -> bool:
    curve = local_entropy_curve(params, distances=grid, reference=reference, **kw)
    if np.count_nonzero(curve.converged) < max(4, grid.size // 2):
        raise NonConvergenceError("too few converged points to classify",
                                  state=curve)
    return curve.classification == "monotonic"


def kappa_u(alpha: float, alpha_T: float, kappa: float = 0.0,
            moments: NonlinearityMoments = SIGN_MOMENTS,
            xtol: float = 1e-3, grid=None, **kw) -> float:
    """Smallest reference margin whose local entropy is monotonic.

    Bisection on kappa_tilde in [0, kappa_max]; fails with BracketError
    when even the maximum-margin curve is not monotonic (alpha above the
    local-entropy transition).
    """
    if grid is None:
        grid = TRANSITION_GRID
    kmax = max_margin(alpha, alpha_T, moments=moments)

    def mono(ktilde):
        p = FpModelParams(alpha=alpha, alpha_T=alpha_T, kappa_tilde=ktilde,
                          kappa=kappa, moments=moments)
        return _is_monotonic(p, solve_saddle(p.reference_model()), grid, **kw)

    hi = kmax
    if not mono(hi):
        raise BracketError(
            f"max-margin curve is not monotonic at alpha = {alpha}: "
            "alpha exceeds the local-entropy transition",
            endpoints=((hi, False), None))
    lo = 0.0
    if mono(lo):
        return 0.0
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if mono(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def local_entropy_transition(alpha_T: float, kappa: float = 0.0,
                             moments: NonlinearityMoments = SIGN_MOMENTS,
                             xtol: float = 2e-3, bracket=(0.5, 0.99),
                             grid=None, **kw) -> float:
    """alpha at which the maximum-margin reference's local entropy stops
    being monotonic (bisection; bracket given as fractions of alpha_c)."""
    from .saddle import critical_capacity

    if grid is None:
        grid = TRANSITION_GRID
    a_c = critical_capacity(alpha_T, moments=moments)

    def mono(alpha):
        kmax = max_margin(alpha, alpha_T, moments=moments)
        p = FpModelParams(alpha=alpha, alpha_T=alpha_T, kappa_tilde=kmax,
                          kappa=kappa, moments=moments)
        return _is_monotonic(p, solve_saddle(p.reference_model()), grid, **kw)

    lo, hi = bracket[0] * a_c, bracket[1] * a_c
    mlo, mhi = mono(lo), mono(hi)
    while not mlo:
        lo *= 0.8
        if lo < 0.05 * a_c:
            raise BracketError("no monotonic regime found below alpha_c",
                               endpoints=((lo, mlo), (hi, mhi)))
        mlo = mono(lo)
    while mhi:
        hi = 0.5 * (hi + a_c)
        if a_c - hi < 1e-3:
            raise BracketError("curve still monotonic arbitrarily close to alpha_c",
                               endpoints=((lo, mlo), (hi, mhi)))
        mhi = mono(hi)
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if mono(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
