"""Independent oracle for the coupled projection block G_SE.

Starting point: for integer replica counts (n reference, s constrained)
the Gaussian projection integral gives

    G_SE(n, s) = -1/2 ln det(I - qbar phat) + 1/2 rhat^T (I - qbar phat)^-1 qbar rhat

with RS-structured blocks.  The spectrum splits into sum-zero sectors
(eigenvalues eta~, eta) plus a 3-dimensional coupled sector spanned by the
special reference replica, the remaining reference replicas and the
constrained replicas.  Everything is analytic in (n, s), so the quantity
entering the conditional free entropy, lim_{n->0} d/ds G_SE |_{s=0}, can
be produced symbolically and compared against the transcribed closed form.
"""

import sympy as sp

qt, q, t1, t0 = sp.symbols("qt q t1 t0")
pth, pdth, rth = sp.symbols("pth pdth rth")
ph, pdh, rh = sp.symbols("ph pdh rh")
k1h, k0h = sp.symbols("k1h k0h")
n, s = sp.symbols("n s")

A = n - 1  # multiplicity of the non-special reference replicas
sqA = sp.sqrt(A)
sqS = sp.sqrt(s)

Q3 = sp.Matrix([
    [1,          qt * sqA,            t1 * sqS],
    [qt * sqA,   1 + qt * (n - 2),    t0 * sqA * sqS],
    [t1 * sqS,   t0 * sqA * sqS,      1 + q * (s - 1)],
])

P3 = sp.Matrix([
    [-pdth,       pth * sqA,            k1h * sqS],
    [pth * sqA,  -pdth + pth * (n - 2), k0h * sqA * sqS],
    [k1h * sqS,   k0h * sqA * sqS,      -pdh + ph * (s - 1)],
])

v3 = sp.Matrix([rth, rth * sqA, rh * sqS])

eta_t = 1 + (pdth + pth) * (1 - qt)
eta = 1 + (pdh + ph) * (1 - q)

M3 = sp.eye(3) - Q3 * P3
G = (-(n - 2) * sp.log(eta_t) / 2 - (s - 1) * sp.log(eta) / 2
     - sp.log(M3.det()) / 2
     + (v3.T * M3.solve(Q3 * v3))[0, 0] / 2)

G = sp.simplify(G)
dG = sp.diff(G, s)
expr = dG.subs(s, 0)
expr_n0 = sp.simplify(sp.limit(expr, n, 0))
print("limit computed")

args = (qt, q, t1, t0, pth, pdth, rth, ph, pdh, rh, k1h, k0h)
fn = sp.lambdify(args, expr_n0, "math")

import importlib.util
spec = importlib.util.spec_from_file_location(
    "fpmod", "/root/pkg/src/rfperc/franz_parisi.py")

import sys
sys.path.insert(0, "/root/pkg/src")
from rfperc.franz_parisi import _gse_closed

import random
random.seed(4)
worst = 0.0
for trial in range(12):
    vals = dict(
        qt=random.uniform(0.1, 0.9), q=random.uniform(0.1, 0.9),
        t1=random.uniform(-0.8, 0.8), t0=random.uniform(-0.5, 0.5),
        pth=random.uniform(-0.4, 0.6), pdth=random.uniform(-0.2, 0.7),
        rth=random.uniform(-0.8, 0.8), ph=random.uniform(-0.4, 0.6),
        pdh=random.uniform(-0.2, 0.7), rh=random.uniform(-0.8, 0.8),
        k1h=random.uniform(-0.6, 0.6), k0h=random.uniform(-0.6, 0.6))
    eta_v = 1 + (vals["pdh"] + vals["ph"]) * (1 - vals["q"])
    eta_tv = 1 + (vals["pdth"] + vals["pth"]) * (1 - vals["qt"])
    if eta_v <= 0.05 or eta_tv <= 0.05:
        continue
    oracle = fn(*[vals[a.name] for a in args])
    mine = _gse_closed(vals["q"], vals["t0"], vals["t1"], vals["ph"],
                       vals["pdh"], vals["rh"], vals["k1h"], vals["k0h"],
                       vals["qt"], vals["pth"], vals["pdth"], vals["rth"])
    diff = abs(oracle - mine)
    worst = max(worst, diff)
    print(f"trial {trial}: oracle={oracle:+.10f} closed={mine:+.10f} diff={diff:.2e}")
print("worst |diff| =", worst)
