"""Learning algorithms for finite teacher-student instances.

The suite spans the sampling spectrum: Metropolis simulated annealing and
zero-temperature Monte Carlo target the Gibbs measure of the
number-of-errors loss; the stochastic two-threshold perceptron rule and
the message-passing solvers (belief propagation and its focusing variant)
are biased toward robust, high-local-entropy solutions.

All solvers consume the label-signed projected patterns, take explicit
(seed, run_id) pairs for their private random streams, and report a
``solved`` flag that is re-derived from an exact stability recomputation,
never from internal bookkeeping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import log_ndtr

from . import _kernels
from .errors import DomainError
from .instance import TeacherStudentInstance, check_weights, empirical_overlaps, \
    generalization_error_closed_form, sign_pm, train_error
from .rng import solver_stream

_BIG_BETA = 1e300  # effectively zero temperature in the Metropolis rule


# ---------------------------------------------------------------------------
# Configurations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SaConfig:
    """Simulated annealing: beta grows linearly each sweep."""

    beta_init: float = 1.0
    delta_beta: float = 5e-3
    max_sweeps: int = 4000
    kappa: float = 0.0
    record_energy: bool = False
    record_states: bool = False  # per-sweep packed states, N <= 63 only

    def __post_init__(self):
        if self.beta_init <= 0 or self.delta_beta < 0:
            raise DomainError("beta_init must be > 0 and delta_beta >= 0")


@dataclass(frozen=True)
class SbpiConfig:
    """Two-threshold stochastic perceptron rule on hidden integer states.

    theta_m is the secondary-update window in unnormalized stability units
    (the integer w . z), the native scale of the hidden-state rule.
    h_max = None sizes the clipping bound as the smallest odd integer
    >= sqrt(N); fixed small bounds stall against interference once P is
    in the hundreds.
    """

    max_iterations: int = 500
    theta_m: float = 2.0
    p_s: float = 0.3
    h_max: int = None

    def __post_init__(self):
        if self.theta_m < 0 or not 0.0 <= self.p_s <= 1.0:
            raise DomainError("theta_m >= 0 and p_s in [0, 1] required")
        if self.h_max is not None and (self.h_max < 1 or self.h_max % 2 == 0):
            raise DomainError("h_max must be a positive odd integer")

    def resolved_h_max(self, n: int) -> int:
        if self.h_max is not None:
            return self.h_max
        return int(math.sqrt(n)) | 1


@dataclass(frozen=True)
class BpConfig:
    damping: float = 0.5
    max_updates: int = 200
    init_epsilon: float = 1e-2
    convergence_tol: float = 1e-3

    def __post_init__(self):
        if not 0.0 <= self.damping < 1.0:
            raise DomainError("damping must lie in [0, 1)")


def default_gamma_schedule(steps: int = 30, gamma_last: float = 10.0):
    """atanh(i/(steps-1)) ramp with a finite stand-in for the last step."""
    g = np.arctanh(np.arange(steps - 1) / (steps - 1.0))
    return np.append(g, gamma_last)


@dataclass(frozen=True)
class FbpConfig:
    """Focusing BP: y replicas coupled with strength gamma, swept upward."""

    bp: BpConfig = field(default_factory=lambda: BpConfig(damping=0.9))
    y: float = 10.0
    gamma_schedule: tuple = tuple(default_gamma_schedule())

    def __post_init__(self):
        if self.y <= 1:
            raise DomainError("replica strength y must exceed 1")
        if np.any(np.diff(self.gamma_schedule) < 0):
            raise DomainError("gamma schedule must be non-decreasing")


@dataclass
class SolverResult:
    algorithm: str
    weights: np.ndarray
    solved: bool
    sweeps_or_iters: int
    kappa: float
    seed: int
    run_id: int
    train_error: float
    energy_trace: list = None
    state_trace: np.ndarray = None
    config: dict = None

    def to_json_dict(self, inst: TeacherStudentInstance = None,
                     include_weights: bool = False) -> dict:
        out = {
            "algorithm": self.algorithm,
            "config": self.config,
            "seed": self.seed,
            "run_id": self.run_id,
            "solved": bool(self.solved),
            "train_error": self.train_error,
            "sweeps": self.sweeps_or_iters,
        }
        if include_weights:
            out["weights_rle"] = rle_encode(self.weights)
        if inst is not None:
            r_emp, p_d_emp = empirical_overlaps(self.weights, inst)
            out["empirical_overlaps"] = {"r": r_emp, "p_d": p_d_emp}
            out["eps_g_closed_form"] = generalization_error_closed_form(
                self.weights, inst)
        return out


def rle_encode(w) -> dict:
    """Run-length encoding of a +-1 vector: first value plus run lengths."""
    w = np.asarray(w, dtype=np.int8)
    if w.size == 0:
        return {"first": 1, "runs": []}
    edges = np.flatnonzero(np.diff(w)) + 1
    bounds = np.concatenate(([0], edges, [w.size]))
    return {"first": int(w[0]), "runs": np.diff(bounds).tolist()}


def rle_decode(enc) -> np.ndarray:
    val = int(enc["first"])
    parts = []
    for run in enc["runs"]:
        parts.append(np.full(run, val, dtype=np.int8))
        val = -val
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int8)


def _finalize(algorithm, w, inst, kappa, iters, seed, run_id, config,
              energy_trace=None, state_trace=None) -> SolverResult:
    err = train_error(w, inst, kappa)  # independent check, never bookkeeping
    return SolverResult(algorithm=algorithm, weights=w.copy(), solved=err == 0.0,
                        sweeps_or_iters=iters, kappa=kappa, seed=seed,
                        run_id=run_id, train_error=err,
                        energy_trace=energy_trace, state_trace=state_trace,
                        config=config)


def _pack_state(w) -> int:
    bits = (np.asarray(w) > 0).astype(np.uint64)
    return int(bits @ (np.uint64(1) << np.arange(bits.size, dtype=np.uint64)))


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

def _mc_run(inst: TeacherStudentInstance, kappa, beta_schedule, max_sweeps,
            rng, record_energy=False, record_states=False, w0=None,
            stop_at_solution=True):
    zT = inst.signed_projections()
    n = inst.N
    inv_sqrt_n = 1.0 / math.sqrt(n)
    w = (w0.copy() if w0 is not None
         else sign_pm(rng.integers(0, 2, n) * 2 - 1))
    delta = np.empty(inst.P)
    _kernels.recompute_stabilities(zT, w, inv_sqrt_n, delta)
    energy = int(_kernels.count_errors(delta, kappa))
    trace = [energy] if record_energy else None
    states = [] if record_states else None
    sweeps_done = 0
    for sweep in range(max_sweeps):
        if stop_at_solution and energy == 0:
            break
        beta = beta_schedule(sweep)
        sites = rng.integers(0, n, n)
        unif = rng.random(n)
        energy = int(_kernels.mc_sweep(zT, delta, w, kappa, beta, inv_sqrt_n,
                                       sites, unif, energy, stop_at_solution))
        sweeps_done = sweep + 1
        if record_energy:
            trace.append(energy)
        if record_states:
            states.append(_pack_state(w))
    return w, sweeps_done, trace, states


def simulated_annealing(inst: TeacherStudentInstance, cfg: SaConfig = SaConfig(),
                        seed: int = 0, run_id: int = 0,
                        stop_at_solution: bool = True) -> SolverResult:
    """Metropolis single-flip annealing on the number-of-errors energy.

    A sweep is N attempted flips; the inverse temperature increases by
    delta_beta after each sweep.  Stops at the first exact solution.
    """
    if cfg.record_states and inst.N > 63:
        raise DomainError("state recording packs into 63 bits (N <= 63)")
    rng = solver_stream(seed, run_id)
    sched = lambda s: cfg.beta_init + cfg.delta_beta * s
    w, sweeps, trace, states = _mc_run(
        inst, cfg.kappa, sched, cfg.max_sweeps, rng,
        record_energy=cfg.record_energy, record_states=cfg.record_states,
        stop_at_solution=stop_at_solution)
    return _finalize("sa", w, inst, cfg.kappa, sweeps, seed, run_id,
                     asdict(cfg), energy_trace=trace,
                     state_trace=np.array(states, dtype=np.uint64) if states else None)


def zero_temp_mc(inst: TeacherStudentInstance, kappa: float = 0.0,
                 max_sweeps: int = 200, seed: int = 0, run_id: int = 0,
                 w0=None, record_energy: bool = False) -> SolverResult:
    """Zero-temperature dynamics: accept every move with dE <= 0 (ties too)."""
    rng = solver_stream(seed, run_id)
    w, sweeps, trace, _ = _mc_run(
        inst, kappa, lambda s: _BIG_BETA, max_sweeps, rng,
        record_energy=record_energy,
        w0=None if w0 is None else check_weights(w0, inst.N))
    return _finalize("mct0", w, inst, kappa, sweeps, seed, run_id,
                     {"kappa": kappa, "max_sweeps": max_sweeps},
                     energy_trace=trace)


# ---------------------------------------------------------------------------
# Stochastic two-threshold perceptron rule
# ---------------------------------------------------------------------------

def sbpi(inst: TeacherStudentInstance, cfg: SbpiConfig = SbpiConfig(),
         seed: int = 0, run_id: int = 0) -> SolverResult:
    """Hidden-state perceptron rule with stochastic secondary updates.

    Weights are signs of odd integer states in [-h_max, h_max].  Patterns
    are presented in a fresh random order each iteration; stops as soon as
    the training set is solved at zero margin.
    """
    rng = solver_stream(seed, run_id)
    zP = np.ascontiguousarray(inst.signed_projections().T)  # (P, N)
    zT = np.ascontiguousarray(zP.T)
    n, n_pat = inst.N, inst.P
    h_max = cfg.resolved_h_max(n)
    h = (rng.integers(0, 2, n).astype(np.int16) * 2 - 1)
    w = h.astype(np.int8)
    inv_sqrt_n = 1.0 / math.sqrt(n)
    delta = np.empty(n_pat)
    iters = 0
    for it in range(cfg.max_iterations):
        perm = rng.permutation(n_pat)
        unif = rng.random(n_pat)
        _kernels.sbpi_iteration(zP, h, w, cfg.theta_m, cfg.p_s, h_max,
                                perm, unif)
        iters = it + 1
        _kernels.recompute_stabilities(zT, w, inv_sqrt_n, delta)
        if _kernels.count_errors(delta, 0.0) == 0:
            break
    config = asdict(cfg)
    config["h_max"] = h_max
    return _finalize("sbpi", w, inst, 0.0, iters, seed, run_id, config)


# ---------------------------------------------------------------------------
# Belief propagation and focusing BP
# ---------------------------------------------------------------------------

def _log_H(x):
    return log_ndtr(-x)


class _BpRunner:
    """Dense-graph BP with the central-limit Gaussian approximation of the
    pattern factors.  Messages are variable->factor magnetizations m (N, P)
    and factor->variable log-likelihood fields u (N, P)."""

    def __init__(self, inst: TeacherStudentInstance, kappa: float,
                 cfg: BpConfig, rng):
        self.z = inst.signed_projections().astype(np.float64)  # (N, P)
        self.n, self.n_pat = self.z.shape
        self.kappa = kappa
        self.cfg = cfg
        m0 = rng.uniform(-cfg.init_epsilon, cfg.init_epsilon, self.n)
        self.m = np.repeat(m0[:, None], self.n_pat, axis=1)
        self.u = np.zeros_like(self.m)
        self.inv_sqrt_n = 1.0 / math.sqrt(self.n)
        self.updates = 0

    def round(self, ustar=None):
        """One synchronous message round; returns max |change| in m."""
        z, m = self.z, self.m
        mean_full = (m * z).sum(axis=0) * self.inv_sqrt_n        # (P,)
        var_full = (1.0 - m * m).sum(axis=0) / self.n            # (P,)
        mc = mean_full[None, :] - m * z * self.inv_sqrt_n        # cavity means
        vc = np.maximum(var_full[None, :] - (1.0 - m * m) / self.n, 1e-12)
        sv = np.sqrt(vc)
        shift = z * self.inv_sqrt_n
        u_new = 0.5 * (_log_H((self.kappa - mc - shift) / sv)
                       - _log_H((self.kappa - mc + shift) / sv))
        d = self.cfg.damping
        self.u = d * self.u + (1.0 - d) * u_new
        h = self.u.sum(axis=1)                                   # (N,)
        if ustar is not None:
            h = h + ustar
        m_new = np.tanh(h[:, None] - self.u)
        diff = float(np.max(np.abs(m_new - m)))
        self.m = m_new
        self.updates += 1
        return diff

    def cavity_fields(self):
        """Total pattern fields per variable (excluding any replica field)."""
        return self.u.sum(axis=1)

    def magnetizations(self, ustar=None):
        h = self.cavity_fields()
        if ustar is not None:
            h = h + ustar
        return np.tanh(h)


def bp_marginals(inst: TeacherStudentInstance, cfg: BpConfig = BpConfig(),
                 kappa: float = 0.0, seed: int = 0, run_id: int = 0):
    """Posterior magnetizations under a uniform measure over margin-kappa
    solutions.  Returns (magnetizations, converged flag, rounds run);
    non-convergence still returns the last iterate.
    """
    rng = solver_stream(seed, run_id)
    runner = _BpRunner(inst, kappa, cfg, rng)
    converged = False
    for _ in range(cfg.max_updates):
        diff = runner.round()
        if diff < cfg.convergence_tol:
            converged = True
            break
    return runner.magnetizations(), converged, runner.updates


def bp_barycenter(magnetizations) -> np.ndarray:
    """Componentwise sign of the posterior means (ties to +1)."""
    return sign_pm(magnetizations)


def _replica_field(h, gamma, y):
    """Focusing field from y-1 replica neighbors coupled with strength gamma.

    The cavity magnetization toward the center is tanh(h); the center
    aggregates y-1 such messages and sends back
    atanh(tanh(gamma) * tanh((y-1) atanh(tanh(gamma) tanh(h)))).
    """
    tg = math.tanh(gamma)
    inner = np.clip(tg * np.tanh(h), -1.0 + 1e-15, 1.0 - 1e-15)
    center = np.tanh((y - 1.0) * np.arctanh(inner))
    outer = np.clip(tg * center, -1.0 + 1e-15, 1.0 - 1e-15)
    return np.arctanh(outer)


def focusing_bp(inst: TeacherStudentInstance, cfg: FbpConfig = FbpConfig(),
                kappa: float = 0.0, seed: int = 0, run_id: int = 0,
                return_magnetizations: bool = False):
    """BP with a progressively focusing replica coupling.

    Each schedule step fixes gamma, runs message rounds until convergence
    or the per-step budget, then moves on (matching the fixed-length
    protocol); the final weights are the signs of the magnetizations.
    """
    rng = solver_stream(seed, run_id)
    runner = _BpRunner(inst, kappa, cfg.bp, rng)
    ustar = np.zeros(inst.N)
    for gamma in cfg.gamma_schedule:
        for _ in range(cfg.bp.max_updates):
            ustar = _replica_field(runner.cavity_fields(), gamma, cfg.y)
            diff = runner.round(ustar=ustar)
            if diff < cfg.bp.convergence_tol:
                break
    mags = runner.magnetizations(ustar=ustar)
    w = bp_barycenter(mags)
    result = _finalize("fbp", w, inst, kappa, runner.updates, seed, run_id,
                       {"y": cfg.y, "steps": len(cfg.gamma_schedule),
                        "damping": cfg.bp.damping})
    if return_magnetizations:
        return result, mags
    return result


def bp_solver(inst: TeacherStudentInstance, cfg: BpConfig = BpConfig(),
              kappa: float = 0.0, seed: int = 0, run_id: int = 0) -> SolverResult:
    """Plain BP used as a solver: barycenter of the estimated posterior."""
    mags, converged, rounds = bp_marginals(inst, cfg, kappa, seed, run_id)
    w = bp_barycenter(mags)
    res = _finalize("bp", w, inst, kappa, rounds, seed, run_id, asdict(cfg))
    res.config["converged"] = converged
    return res
