"""Numba kernels for the Monte Carlo and perceptron-rule solvers.

All kernels operate on the (N, P) int8 matrix of label-signed projected
patterns z, so the margin constraint for weights w reads
(1/sqrt(N)) w . z[:, mu] >= kappa for every pattern mu.  Stabilities are
maintained incrementally: flipping w[i] shifts every delta[mu] by
-2 w[i] z[i, mu] / sqrt(N).
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def mc_sweep(zT, delta, w, kappa, beta, inv_sqrt_n, sites, unif, energy,
             stop_at_zero):
    """One Metropolis sweep (len(sites) attempted single-spin flips).

    beta is the inverse temperature; passing a huge value turns the rule
    into zero-temperature dynamics (downhill and tie moves only).  Returns
    the updated energy (number of unsatisfied patterns).
    """
    n_pat = delta.shape[0]
    for t in range(sites.shape[0]):
        i = sites[t]
        step = -2.0 * w[i] * inv_sqrt_n
        d_energy = 0
        for mu in range(n_pat):
            nd = delta[mu] + step * zT[i, mu]
            if nd < kappa:
                d_energy += 1
            if delta[mu] < kappa:
                d_energy -= 1
        accept = False
        if d_energy <= 0:
            accept = True
        else:
            accept = unif[t] < np.exp(-beta * d_energy)
        if accept:
            w[i] = -w[i]
            for mu in range(n_pat):
                delta[mu] += step * zT[i, mu]
            energy += d_energy
            if stop_at_zero and energy == 0:
                return energy
    return energy


@njit(cache=True, nogil=True)
def recompute_stabilities(zT, w, inv_sqrt_n, delta):
    """delta[mu] = (1/sqrt(N)) sum_i w[i] z[i, mu], written in place."""
    n, n_pat = zT.shape
    for mu in range(n_pat):
        acc = 0.0
        for i in range(n):
            acc += w[i] * zT[i, mu]
        delta[mu] = acc * inv_sqrt_n
    return delta


@njit(cache=True, nogil=True)
def count_errors(delta, kappa):
    e = 0
    for mu in range(delta.shape[0]):
        if delta[mu] < kappa:
            e += 1
    return e


@njit(cache=True, nogil=True)
def sbpi_iteration(zP, h, w, theta_m, p_s, h_max, perm, unif):
    """One full pattern presentation of the two-threshold hidden-state rule.

    Hidden states h are odd integers clipped to [-h_max, h_max]; the
    visible weights are their signs.  Stabilities here are in integer
    units (w . z without the 1/sqrt(N)): a misclassified pattern (< 0)
    always triggers the update h += 2 z; a barely-correct one
    (0 <= stability <= theta_m) triggers it with probability p_s.
    Returns the number of updates applied.
    """
    n_pat, n = zP.shape
    updates = 0
    for t in range(n_pat):
        mu = perm[t]
        acc = 0
        for i in range(n):
            acc += w[i] * zP[mu, i]
        fire = False
        if acc < 0:
            fire = True
        elif acc <= theta_m and unif[t] < p_s:
            fire = True
        if fire:
            updates += 1
            for i in range(n):
                hi = h[i] + 2 * zP[mu, i]
                if hi > h_max:
                    hi = h_max
                elif hi < -h_max:
                    hi = -h_max
                h[i] = hi
                w[i] = 1 if hi > 0 else -1
    return updates
