"""Experiment orchestration and landscape measurements.

Ties the instance-level solvers to the analytic predictions: local-energy
profiles around solutions, stability histograms against the theoretical
density, and seeded multi-sample experiment grids with deterministic CSV
and JSON outputs.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError
from .instance import (
    TeacherStudentInstance,
    check_weights,
    empirical_overlaps,
    generalization_error_closed_form,
    overlap,
    sign_pm,
    train_error,
)
from .rng import derive_seed, perturbation_stream
from . import solvers as _solvers


# ---------------------------------------------------------------------------
# Local-energy profile
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalEnergyCurve:
    """Mean train error versus mean perturbation distance.

    Binary weights are perturbed multiplicatively, w -> sign(w (1 + eta))
    with eta ~ N(0, level^2), which flips weight i exactly when
    eta_i < -1; the noise level is therefore a smooth dial for the
    expected Hamming distance H(1/level).
    """

    noise_levels: np.ndarray
    distances: np.ndarray
    energies: np.ndarray
    stderr: np.ndarray
    reps: int


def local_energy_profile(weights, inst: TeacherStudentInstance, noise_levels,
                         reps: int = 10, seed: int = 0, run_id: int = 0,
                         kappa: float = 0.0) -> LocalEnergyCurve:
    """Average train error as a function of distance from ``weights``."""
    w = check_weights(weights, inst.N)
    levels = np.asarray(noise_levels, dtype=float)
    if np.any(levels < 0) or np.any(np.diff(levels) <= 0):
        raise DomainError("noise levels must be nonnegative and increasing")
    if reps < 1:
        raise DomainError("reps must be >= 1")
    rng = perturbation_stream(seed, run_id)
    dist = np.empty(levels.size)
    mean_e = np.empty(levels.size)
    se = np.empty(levels.size)
    for k, level in enumerate(levels):
        d_acc = np.empty(reps)
        e_acc = np.empty(reps)
        for rep in range(reps):
            eta = rng.standard_normal(inst.N) * level
            w2 = np.where(eta < -1.0, -w, w).astype(np.int8)
            d_acc[rep] = np.mean(w2 != w)
            e_acc[rep] = train_error(w2, inst, kappa)
        dist[k] = d_acc.mean()
        mean_e[k] = e_acc.mean()
        se[k] = e_acc.std(ddof=1) / math.sqrt(reps) if reps > 1 else 0.0
    return LocalEnergyCurve(noise_levels=levels, distances=dist,
                            energies=mean_e, stderr=se, reps=reps)


def stability_histogram(weights, inst: TeacherStudentInstance, bins=40,
                        range_=None):
    """Density-normalized histogram of stabilities; overlay-ready against
    the analytic stability density.  Returns (centers, density, edges)."""
    if np.isscalar(bins) and bins < 10:
        raise DomainError("use at least 10 bins")
    from .instance import stabilities as _stab
    deltas = _stab(weights, inst)
    density, edges = np.histogram(deltas, bins=bins, range=range_, density=True)
    centers = 0.5 * (edges[1:] + edges[:-1])
    return centers, density, edges


# ---------------------------------------------------------------------------
# Experiment grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlgorithmSpec:
    name: str
    options: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentSpec:
    """One grid of (alpha) cells at fixed (D, alpha_T), a set of algorithms,
    and sampling counts.  Fully determined by ``seed``."""

    D: int
    alpha_T: float
    alphas: tuple
    algorithms: tuple
    samples: int = 5
    runs_per_sample: int = 2
    seed: int = 0
    kappa: float = 0.0
    workers: int = 1
    record_weights: bool = False
    local_energy: dict = None   # {"noise_levels": [...], "reps": int}

    def __post_init__(self):
        if len(self.alphas) == 0 or self.samples < 1 or self.runs_per_sample < 1:
            raise DomainError("empty grid or nonpositive sampling counts")

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentSpec":
        algos = tuple(AlgorithmSpec(a["name"], a.get("options", {}))
                      for a in doc["algorithms"])
        return cls(D=int(doc["D"]), alpha_T=float(doc["alpha_T"]),
                   alphas=tuple(float(a) for a in doc["alphas"]),
                   algorithms=algos,
                   samples=int(doc.get("samples", 5)),
                   runs_per_sample=int(doc.get("runs_per_sample", 2)),
                   seed=int(doc.get("seed", 0)),
                   kappa=float(doc.get("kappa", 0.0)),
                   workers=int(doc.get("workers", 1)),
                   record_weights=bool(doc.get("record_weights", False)),
                   local_energy=doc.get("local_energy"))

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["algorithms"] = [{"name": a.name, "options": a.options}
                             for a in self.algorithms]
        doc["alphas"] = list(self.alphas)
        return doc

    def cell_geometry(self, alpha: float) -> tuple[int, int]:
        """(N, P) for a nominal alpha; N is forced odd so that stabilities
        never tie exactly at zero."""
        P = round(self.alpha_T * self.D)
        N = max(int(round(P / alpha)), 3) | 1
        return N, P


def run_solver(name: str, inst: TeacherStudentInstance, kappa: float,
               seed: int, run_id: int, options: dict) -> _solvers.SolverResult:
    """Dispatch by algorithm name: sa, mct0, sbpi, bp, fbp."""
    opts = dict(options)
    if name == "sa":
        cfg = _solvers.SaConfig(kappa=kappa, **opts)
        return _solvers.simulated_annealing(inst, cfg, seed=seed, run_id=run_id)
    if name == "mct0":
        return _solvers.zero_temp_mc(inst, kappa=kappa, seed=seed, run_id=run_id,
                                     **opts)
    if name == "sbpi":
        cfg = _solvers.SbpiConfig(**opts)
        return _solvers.sbpi(inst, cfg, seed=seed, run_id=run_id)
    if name == "bp":
        cfg = _solvers.BpConfig(**opts)
        return _solvers.bp_solver(inst, cfg, kappa=kappa, seed=seed, run_id=run_id)
    if name == "fbp":
        bp_opts = opts.pop("bp", {})
        cfg = _solvers.FbpConfig(bp=_solvers.BpConfig(damping=0.9, **bp_opts), **opts)
        return _solvers.focusing_bp(inst, cfg, kappa=kappa, seed=seed, run_id=run_id)
    raise DomainError(f"unknown algorithm {name!r}")


def pairwise_overlap_report(weight_sets):
    """Mean inter-run overlap of solved runs, sample by sample.

    ``weight_sets`` is a list (one entry per sample) of lists of weight
    vectors from distinct solved runs.  Samples with fewer than two solved
    runs are skipped; returns (mean, stderr, samples_used, samples_skipped).
    """
    per_sample = []
    skipped = 0
    for runs in weight_sets:
        if len(runs) < 2:
            skipped += 1
            continue
        vals = [overlap(runs[i], runs[j])
                for i in range(len(runs)) for j in range(i + 1, len(runs))]
        per_sample.append(float(np.mean(vals)))
    if not per_sample:
        return math.nan, math.nan, 0, skipped
    arr = np.asarray(per_sample)
    se = arr.std(ddof=1) / math.sqrt(arr.size) if arr.size > 1 else 0.0
    return float(arr.mean()), float(se), arr.size, skipped


def _run_cell_sample(spec: ExperimentSpec, ci: int, alpha: float, si: int):
    """All runs of all algorithms on one sampled instance."""
    N, P = spec.cell_geometry(alpha)
    inst_seed = derive_seed(spec.seed, ci, si, 0, 0)
    inst = TeacherStudentInstance.generate(D=spec.D, N=N, P=P, seed=inst_seed)
    rows = []
    curves = {}
    weights = {a.name: [] for a in spec.algorithms}
    for ai, algo in enumerate(spec.algorithms):
        for ri in range(spec.runs_per_sample):
            run_seed = derive_seed(spec.seed, ci, si, ai + 1, ri)
            res = run_solver(algo.name, inst, spec.kappa, run_seed, ri,
                             algo.options)
            r_emp, p_d_emp = empirical_overlaps(res.weights, inst)
            row = {
                "cell": ci, "alpha_nominal": alpha, "alpha": P / N,
                "D": spec.D, "N": N, "P": P, "sample": si, "run": ri,
                "algorithm": algo.name, "seed": run_seed,
                "solved": int(res.solved), "train_error": res.train_error,
                "sweeps": res.sweeps_or_iters,
                "r_emp": r_emp, "p_d_emp": p_d_emp,
                "eps_g_closed_form": generalization_error_closed_form(
                    res.weights, inst),
            }
            rows.append(row)
            if res.solved:
                weights[algo.name].append(res.weights)
            if spec.local_energy and res.solved:
                le = local_energy_profile(
                    res.weights, inst,
                    spec.local_energy["noise_levels"],
                    reps=spec.local_energy.get("reps", 10),
                    seed=run_seed, kappa=spec.kappa)
                curves[(ci, si, algo.name, ri)] = le
    return rows, weights, curves


RUN_COLUMNS = ("cell", "alpha_nominal", "alpha", "D", "N", "P", "sample",
               "run", "algorithm", "seed", "solved", "train_error", "sweeps",
               "r_emp", "p_d_emp", "eps_g_closed_form")

CELL_COLUMNS = ("cell", "alpha_nominal", "alpha", "D", "N", "P", "algorithm",
                "n_runs", "n_solved", "success_rate", "mean_train_error",
                "mean_eps_g_solved", "se_eps_g_solved",
                "mean_pairwise_overlap", "se_pairwise_overlap",
                "overlap_samples_used", "overlap_samples_skipped")


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    runs: list
    cells: list
    curves: dict


def run_experiment(spec: ExperimentSpec, out_dir=None) -> ExperimentResult:
    """Execute the grid; aggregation order is fixed by (cell, sample, run)
    indices regardless of worker scheduling, so outputs are byte-stable."""
    tasks = [(ci, alpha, si)
             for ci, alpha in enumerate(spec.alphas)
             for si in range(spec.samples)]
    results = {}

    def work(task):
        ci, alpha, si = task
        try:
            results[(ci, si)] = _run_cell_sample(spec, ci, alpha, si)
        except Exception as err:  # partial failures never abort the grid
            results[(ci, si)] = ([{
                "cell": ci, "alpha_nominal": alpha, "alpha": math.nan,
                "D": spec.D, "N": -1, "P": -1, "sample": si, "run": -1,
                "algorithm": "error", "seed": -1, "solved": 0,
                "train_error": math.nan, "sweeps": 0, "r_emp": math.nan,
                "p_d_emp": math.nan, "eps_g_closed_form": math.nan,
                "error": repr(err)}], {}, {})

    if spec.workers > 1:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            list(pool.map(work, tasks))
    else:
        for t in tasks:
            work(t)

    runs = []
    curves = {}
    cells = []
    for ci, alpha in enumerate(spec.alphas):
        sample_rows = [results[(ci, si)] for si in range(spec.samples)]
        for rows, _, cur in sample_rows:
            runs.extend(rows)
            curves.update(cur)
        for algo in spec.algorithms:
            rows = [r for rows, _, _ in sample_rows for r in rows
                    if r["algorithm"] == algo.name]
            if not rows:
                continue
            solved_rows = [r for r in rows if r["solved"]]
            eps = np.array([r["eps_g_closed_form"] for r in solved_rows])
            weight_sets = [w[algo.name] for _, w, _ in sample_rows]
            ov_mean, ov_se, used, skipped = pairwise_overlap_report(weight_sets)
            cells.append({
                "cell": ci, "alpha_nominal": alpha, "alpha": rows[0]["alpha"],
                "D": spec.D, "N": rows[0]["N"], "P": rows[0]["P"],
                "algorithm": algo.name, "n_runs": len(rows),
                "n_solved": len(solved_rows),
                "success_rate": len(solved_rows) / len(rows),
                "mean_train_error": float(np.mean([r["train_error"] for r in rows])),
                "mean_eps_g_solved": float(eps.mean()) if eps.size else math.nan,
                "se_eps_g_solved": (float(eps.std(ddof=1) / math.sqrt(eps.size))
                                    if eps.size > 1 else math.nan),
                "mean_pairwise_overlap": ov_mean,
                "se_pairwise_overlap": ov_se,
                "overlap_samples_used": used,
                "overlap_samples_skipped": skipped,
            })
    result = ExperimentResult(spec=spec, runs=runs, cells=cells, curves=curves)
    if out_dir is not None:
        write_experiment(result, out_dir)
    return result


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.12g}"
    return str(v)


def _write_csv(path, columns, rows):
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row.get(c, "")) for c in columns) + "\n")


def write_experiment(result: ExperimentResult, out_dir) -> None:
    """spec.json + runs.csv + cells.csv (+ curves/) in ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "spec.json", "w") as fh:
        json.dump(result.spec.to_json(), fh, sort_keys=True, indent=1)
    _write_csv(out / "runs.csv", RUN_COLUMNS,
               sorted(result.runs, key=lambda r: (r["cell"], r["sample"],
                                                  r["algorithm"], r["run"])))
    _write_csv(out / "cells.csv", CELL_COLUMNS, result.cells)
    if result.curves:
        cdir = out / "curves"
        cdir.mkdir(exist_ok=True)
        for (ci, si, algo, ri), curve in sorted(result.curves.items()):
            rows = [{"noise_level": nl, "distance": d, "energy": e, "stderr": s}
                    for nl, d, e, s in zip(curve.noise_levels, curve.distances,
                                           curve.energies, curve.stderr)]
            _write_csv(cdir / f"cell{ci}_sample{si}_{algo}_run{ri}.csv",
                       ("noise_level", "distance", "energy", "stderr"), rows)
