"""First-principles oracle for the FP energetic block at beta = beta~ = inf.

Joint Gaussian fields per pattern: teacher u ~ N(0,1); reference
stabilities lam~_a = M~ u + B x + C zeta_a with B^2 = Q~ - M~^2,
C^2 = Q~_d - Q~; one constrained stability
lam = M u + beta_c x + gamma zeta_1 + eps eta + sqrt(Q_d - Q) xi
with beta_c = (T0 - M M~)/B, gamma = (T1 - T0)/C and
eps^2 = Q - M^2 - beta_c^2 - gamma^2 (the field shared among constrained
replicas beyond what teacher and reference explain).

The conditional free-entropy block is then

  G_E = 2 ∫_{u>0} Du ∫Dx ∫Deta
        E_zeta[ Theta(M~u + Bx + C zeta - k~) ln H((k - mean)/sqrt(Q_d-Q)) ]
        / H((k~ - M~u - Bx)/C)

which this script evaluates by dense tensor quadrature and compares with
the production implementation.
"""

import math
import sys

import numpy as np
from scipy.special import log_ndtr, roots_hermitenorm, roots_legendre

sys.path.insert(0, "/root/pkg/src")
from rfperc.saddle import ModelParams, OrderParams, ConjugateParams, SaddleSolution, EffectiveOverlaps
from rfperc.franz_parisi import FpModelParams, FpState, _fp_energetic_pieces
from rfperc.special import SIGN_MOMENTS


def oracle(Mt, Qt, Qdt, M, Q, Qd, T1, T0, kt, k, n_gauss=80, n_leg=120):
    B = math.sqrt(Qt - Mt * Mt)
    C = math.sqrt(Qdt - Qt)
    beta_c = (T0 - M * Mt) / B
    gamma = (T1 - T0) / C
    eps_sq = Q - M * M - beta_c ** 2 - gamma ** 2
    assert eps_sq > 0, eps_sq
    eps = math.sqrt(eps_sq)
    sD = math.sqrt(Qd - Q)

    xg, wg = roots_hermitenorm(n_gauss)
    wg = wg / math.sqrt(2 * math.pi)
    # u > 0 half line via Legendre on (0, 8.5]
    ul, wl = roots_legendre(n_leg)
    u = 4.25 * (ul + 1.0)
    wu = wl * 4.25 * np.exp(-0.5 * u * u) / math.sqrt(2 * math.pi)

    total = 0.0
    zl, zwl = roots_legendre(n_leg)
    for iu, uu in enumerate(u):
        # grids over x (reference-shared) and eta (constrained-shared)
        hx = (kt - Mt * uu - B * xg) / C      # zeta cutoff per x
        lo = np.maximum(hx, -8.5)
        hi = np.maximum(hx + 16.0 / np.maximum(1.0, hx), 8.5)
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        Z = mid[:, None] + half[:, None] * zl[None, :]         # (nx, nz)
        log_gz = -0.5 * Z * Z - 0.5 * math.log(2 * math.pi)
        rho = np.exp(log_gz - log_ndtr(-hx)[:, None]) * (half[:, None] * zwl[None, :])
        # mean = M u + beta_c x + gamma zeta + eps eta
        base = M * uu + beta_c * xg                            # (nx,)
        args = (k - (base[:, None, None] + gamma * Z[:, None, :]
                     + eps * xg[None, :, None])) / sD          # (nx, neta, nz)
        lnH = log_ndtr(-args)
        inner = np.einsum("ij,iaj->ia", rho, lnH)              # (nx, neta)
        total += wu[iu] * float(wg @ inner @ wg)
    return 2.0 * total


def production(Mt, Qt, Qdt, M, Q, Qd, T1, T0, kt, k, moments=SIGN_MOMENTS,
               orders=(64, 64, 48)):
    mu1sq = moments.mu1 ** 2
    msq = moments.mu_star_sq
    # invert effective overlaps into order parameters for the state objects
    rt = Mt / moments.mu1
    pt = (Qt - msq * 0.5) / mu1sq
    qt = 0.5
    pdt = (Qdt - msq) / mu1sq
    ref = SaddleSolution(
        params=ModelParams(alpha=1.0, alpha_T=2.0, kappa=kt),
        op=OrderParams(q=qt, p=pt, p_d=pdt, r=rt),
        cp=ConjugateParams(0.5, 0.1, 0.1, 0.1), phi=0.0, residual=0.0,
        iterations=1)
    r = M / moments.mu1
    q = 0.4
    p = (Q - msq * q) / mu1sq
    pd = (Qd - msq) / mu1sq
    t1 = 0.3
    t0 = 0.2
    k1 = (T1 - msq * t1) / mu1sq
    k0 = (T0 - msq * t0) / mu1sq
    st = FpState(t1=t1, q=q, p=p, p_d=pd, r=r, t0=t0, k1=k1, k0=k0,
                 q_hat=0, p_hat=0, p_d_hat=0, r_hat=0, t1_hat=0, t0_hat=0,
                 k1_hat=0, k0_hat=0, reference=ref)
    params = FpModelParams(alpha=1.0, alpha_T=2.0, kappa_tilde=kt, kappa=k)
    val, _ = _fp_energetic_pieces(st, params, orders, want_grads=False)
    return val


cases = [
    dict(Mt=0.6, Qt=0.9, Qdt=1.3, M=0.5, Q=0.8, Qd=1.25, T1=0.75, T0=0.55, kt=0.4, k=0.0),
    dict(Mt=0.3, Qt=0.7, Qdt=1.1, M=0.45, Q=0.75, Qd=1.2, T1=0.5, T0=0.35, kt=0.0, k=0.2),
    dict(Mt=0.9, Qt=1.4, Qdt=1.6, M=0.85, Q=1.35, Qd=1.55, T1=1.30, T0=1.23, kt=0.8, k=0.0),
    dict(Mt=0.0, Qt=0.8, Qdt=1.2, M=0.4, Q=0.7, Qd=1.1, T1=0.0, T0=0.0, kt=0.3, k=0.1),
]
for c in cases:
    v_or = oracle(**c)
    v_pr = production(**c)
    print("oracle=%+.8f production=%+.8f diff=%.2e" % (v_or, v_pr, abs(v_or - v_pr)))
