"""Experiment families: sampling sweeps, energy-map dumps, verification, ablation."""

from __future__ import annotations

import csv
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np

from . import geometry as geo
from .config import ExperimentConfig
from .field import write_field
from .guidance import GuidanceConfig, taylor_bound_constants
from .metrics import (AGGREGATE_COLUMNS, ParetoRow, SampleEvaluation, evaluate_sample,
                      pareto_table, pool, write_pareto_csv)
from .sampler import Trajectory, run_sampler
from .scoremodel import gmm_eps, mixture_hessian, mixture_log_density, mixture_score

log = logging.getLogger(__name__)


def slug(cfg: GuidanceConfig) -> str:
    if cfg.mode == "uniform":
        return f"cfg_{cfg.omega:g}"
    return f"samg_{cfg.omega_min:g}-{cfg.omega_max:g}_k{cfg.kernel}"


def cell_dirs(guidance: list[GuidanceConfig]) -> list[str]:
    return [re.sub(r"[^A-Za-z0-9_.-]", "_", f"{i:02d}_{slug(g)}")
            for i, g in enumerate(guidance)]


@dataclass
class CellResult:
    guidance: GuidanceConfig
    seed: int
    trajectory: Trajectory
    evaluation: SampleEvaluation


def run_cells(cfg: ExperimentConfig, guidance: Optional[list[GuidanceConfig]] = None,
              seeds: Optional[Iterable[int]] = None, model=None) -> list[list[CellResult]]:
    """Run every (guidance, seed) cell; results are indexed [guidance][seed]."""
    guidance = cfg.guidance if guidance is None else guidance
    seeds = list(cfg.seeds if seeds is None else seeds)
    model = cfg.testbed if model is None else model
    solver = cfg.solver

    def one(job):
        g, seed = job
        traj = run_sampler(model, solver, g, cfg.steps, seed)
        ev = evaluate_sample(traj.final, cfg.model, cfg.condition, cfg.mask_threshold)
        return CellResult(g, seed, traj, ev)

    jobs = [(g, s) for g in guidance for s in seeds]
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool_:
            flat = list(pool_.map(one, jobs))
    else:
        flat = [one(j) for j in jobs]
    n = len(seeds)
    return [flat[i * n:(i + 1) * n] for i in range(len(guidance))]


def high_energy_distance(results: list[CellResult], quantile: float = 0.9) -> float:
    """Mean off-manifold distance over each run's top-decile cumulative-energy pixels."""
    vals = []
    for r in results:
        energy = np.sum([rec.energy for rec in r.trajectory.trace.records], axis=0)
        sel = energy >= np.quantile(energy, quantile)
        vals.append(r.evaluation.distance[sel])
    return float(np.concatenate(vals).mean())


METRIC_COLUMNS = ("config", "seed") + AGGREGATE_COLUMNS


def cmd_sample(cfg: ExperimentConfig) -> dict:
    """Write final samples, per-run traces and a metrics CSV; returns pooled aggregates."""
    if not cfg.guidance:
        raise ValueError("no guidance configs to sample")
    out = Path(cfg.out)
    grid = run_cells(cfg)
    dirs = cell_dirs(cfg.guidance)
    summary = {}
    rows = []
    for d, results in zip(dirs, grid):
        cell = out / d
        cell.mkdir(parents=True, exist_ok=True)
        for r in results:
            write_field(cell / f"seed_{r.seed}.lfld", r.trajectory.final)
            r.trajectory.trace.write_csv(cell / f"trace_seed_{r.seed}.csv")
            rows.append({"config": d, "seed": r.seed, **r.evaluation.aggregates()})
        agg = pool([r.evaluation for r in results])
        summary[d] = agg
        rows.append({"config": d, "seed": "all", **agg})
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    return summary


# -- energy maps -------------------------------------------------------------

@dataclass
class EnergyStats:
    inside_mean: float
    outside_mean: float
    ratio: float
    n_late: int
    paths: list


def colocation_stats(traj: Trajectory, mask: np.ndarray, threshold: float = 0.5,
                     late_fraction: float = 0.2) -> tuple[float, float, float, int]:
    """Mean energy inside vs outside the mask over the final fraction of steps."""
    recs = traj.trace.records
    n_late = max(1, int(round(late_fraction * len(recs))))
    inside = mask > threshold
    late = np.array([r.energy for r in recs[-n_late:]])
    if not inside.any() or inside.all():
        return float("nan"), float("nan"), float("nan"), n_late
    e_in = float(late[:, inside].mean())
    e_out = float(late[:, ~inside].mean())
    if e_out > 0:
        ratio = e_in / e_out
    else:
        ratio = math.inf if e_in > 0 else float("nan")
    return e_in, e_out, ratio, n_late


def cmd_energy_maps(cfg: ExperimentConfig) -> EnergyStats:
    samg = [g for g in cfg.guidance if g.mode == "samg"]
    if not samg:
        raise ValueError("energy-maps needs at least one samg guidance config")
    g = samg[0]
    seed = int(cfg.energy.get("seed", cfg.seeds[0]))
    traj = run_sampler(cfg.testbed, cfg.solver, g, cfg.steps, seed)
    out = Path(cfg.out)
    paths = traj.trace.write_pgms(out / "maps")
    e_in, e_out, ratio, n_late = colocation_stats(
        traj, cfg.condition.mask, cfg.mask_threshold, float(cfg.energy.get("late_fraction", 0.2)))
    with open(out / "maps" / "index.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "t", "energy_pgm", "omega_pgm", "E_mean_inside", "E_mean_outside"])
        inside = cfg.condition.mask > cfg.mask_threshold
        for i, (rec, (ep, op)) in enumerate(zip(traj.trace.records, paths)):
            ein = float(rec.energy[inside].mean()) if inside.any() else float("nan")
            eout = float(rec.energy[~inside].mean()) if (~inside).any() else float("nan")
            w.writerow([i, rec.t, ep.name, op.name, repr(ein), repr(eout)])
    return EnergyStats(e_in, e_out, ratio, n_late, paths)


# -- verification suite --------------------------------------------------------

def check_score(rng: np.random.Generator, n_points: int = 100, fd_step: float = 1e-5,
                eps_rtol: float = 1e-5, hess_rtol: float = 1e-4,
                hessian_fn: Callable = mixture_hessian) -> geo.CheckReport:
    """Analytic eps and Hessian against central differences on random GMMs."""
    rep = geo.CheckReport("score")
    worst_eps = worst_hess = 0.0
    for _ in range(n_points):
        k = int(rng.integers(1, 5))
        c = int(rng.integers(1, 5))
        means = rng.normal(0.0, 2.0, size=(k, c))
        w = rng.dirichlet(np.ones(k))
        sigma0 = float(rng.uniform(0.2, 1.0))
        ab = float(rng.uniform(0.05, 0.95))
        x = rng.normal(0.0, 1.5, size=(1, c))
        eps = gmm_eps(x, means, w, sigma0, ab)[0]
        hess = hessian_fn(x, means, w, sigma0, ab)[0]
        grad_fd = np.empty(c)
        hess_fd = np.empty((c, c))
        for j in range(c):
            e = np.zeros((1, c))
            e[0, j] = fd_step
            grad_fd[j] = (mixture_log_density(x + e, means, w, sigma0, ab)[0]
                          - mixture_log_density(x - e, means, w, sigma0, ab)[0]) / (2 * fd_step)
            hess_fd[:, j] = (mixture_score(x + e, means, w, sigma0, ab)[0]
                             - mixture_score(x - e, means, w, sigma0, ab)[0]) / (2 * fd_step)
        eps_fd = -math.sqrt(1.0 - ab) * grad_fd
        err_eps = np.linalg.norm(eps - eps_fd) / np.linalg.norm(eps_fd)
        err_hess = np.linalg.norm(hess - hess_fd) / np.linalg.norm(hess_fd)
        worst_eps, worst_hess = max(worst_eps, err_eps), max(worst_hess, err_hess)
        rep.tested += 1
        if err_eps > eps_rtol or err_hess > hess_rtol:
            rep.violations += 1
    rep.max_slack = max(worst_eps - eps_rtol, worst_hess - hess_rtol)
    rep.details.update(max_eps_error=worst_eps, max_hessian_error=worst_hess)
    return rep


def check_deviation_law(radii=(0.5, 1.0, 2.0), dims=(2, 3, 8), n_s: int = 25,
                        exp_tol: float = 0.02, coef_rtol: float = 0.01) -> geo.CheckReport:
    rep = geo.CheckReport("deviation")
    fits = []
    for r in radii:
        for d in dims:
            m = geo.SphereManifold(r, d)
            fit = geo.fit_deviation_law(m, np.geomspace(1e-3 * r, 1e-1 * r, n_s),
                                        np.random.default_rng(d))
            exp_err = abs(fit.exponent - 2.0)
            coef_err = abs(fit.coefficient - fit.theory_coefficient) / fit.theory_coefficient
            rep.tested += 1
            rep.max_slack = max(rep.max_slack, exp_err - exp_tol, coef_err - coef_rtol)
            if exp_err > exp_tol or coef_err > coef_rtol:
                rep.violations += 1
            fits.append((r, d, fit.exponent, fit.coefficient))
    rep.details["fits"] = fits
    return rep


def check_taylor(rng: np.random.Generator, n: int = 100_000, hi: float = 1e6) -> geo.CheckReport:
    """Tangent line of E^-1/2 never exceeds the curve; ties only where E ~ eta0."""
    rep = geo.CheckReport("taylor")
    # half uniform on (0, hi], half log-uniform so small values are exercised too
    half = n // 2
    u = hi * (1.0 - rng.random((half, 2)))
    lg = np.exp(rng.uniform(math.log(1e-6), math.log(hi), size=(n - half, 2)))
    pairs = np.vstack([u, lg])
    e, eta0 = pairs[:, 0], pairs[:, 1]
    c1, c2 = np.vectorize(taylor_bound_constants, otypes=[float, float])(eta0)
    g = c1 - c2 * e
    f = e ** -0.5
    ulp = 4 * np.finfo(float).eps * np.maximum(np.abs(f), np.abs(c1))
    above = g > f + ulp
    tie = g >= f
    near = np.abs(e - eta0) <= 1e-7 * eta0
    bad = above | (tie & ~near)
    rep.tested = n
    rep.violations = int(bad.sum())
    rep.max_slack = float(np.max(g - f))
    return rep


def check_gronwall(rng: np.random.Generator, n: int = 1000, max_steps: int = 1000,
                   rtol: float = 1e-12) -> geo.CheckReport:
    rep = geo.CheckReport("gronwall")
    while rep.tested < n:
        delta = math.exp(rng.uniform(math.log(1e-6), 0.0))
        L = math.exp(rng.uniform(math.log(1e-3), math.log(10.0)))
        h = math.exp(rng.uniform(math.log(1e-4), 0.0))
        steps = int(rng.integers(1, max_steps + 1))
        if L * steps * h > 200:  # keep both sides finite
            continue
        rec = geo.simulate_error_recursion(delta, L, h, steps)
        bound = geo.gronwall_bound(delta, L, h, steps)
        rep.tested += 1
        rep.max_slack = max(rep.max_slack, (rec - bound) / bound)
        if rec > bound * (1 + rtol):
            rep.violations += 1
    ex_rec = geo.simulate_error_recursion(0.01, 1.0, 0.1, 10)
    ex_bound = geo.gronwall_bound(0.01, 1.0, 0.1, 10)
    rep.details.update(example_recursion=ex_rec, example_bound=ex_bound)
    return rep


def random_gmm_2d(rng: np.random.Generator):
    # K >= 2: a single component has a vanishing delta score everywhere
    k = int(rng.integers(2, 5))
    means = rng.normal(0.0, 2.0, size=(k, 2))
    w = rng.dirichlet(np.ones(k))
    sigma0 = float(rng.uniform(0.2, 1.0))
    ab = float(rng.uniform(0.05, 0.95))
    return means, w, sigma0, ab


def check_spectral(rng: np.random.Generator, n_points: int = 1000, per_model: int = 10,
                   hessian_fn: Callable = mixture_hessian) -> geo.CheckReport:
    """Spectral curvature bound over random 2-D mixtures, guidance direction from a
    random one-hot condition of random strength. Draws points until ``n_points``
    have been evaluated; skipped points (vanishing delta score) do not count."""
    total = geo.CheckReport("spectral")
    ratios = []
    identity_err = 0.0
    while total.tested < n_points:
        means, w, sigma0, ab = random_gmm_2d(rng)
        k = means.shape[0]
        m = min(per_model, n_points - total.tested)
        pts = rng.normal(0.0, 3.0, size=(m, 2))
        strength = rng.uniform(0.2, 1.0)
        cond = (1 - strength) * w + strength * np.eye(k)[rng.integers(k)]
        rep = geo.spectral_check(means, w, sigma0, pts, ab, cond_weights=cond,
                                 hessian_fn=hessian_fn)
        total.tested += rep.tested
        total.skipped += rep.skipped
        total.violations += rep.violations
        total.max_slack = max(total.max_slack, rep.max_slack)
        ratios.extend(rep.details["ratios"])
        identity_err = max(identity_err, rep.details["max_identity_error"])

    # equality case: isotropic Gaussian, curvature 1/r is attained
    iso = geo.spectral_check(np.zeros((1, 2)), np.ones(1), 0.6, rng.normal(size=(20, 2)),
                             0.5, hessian_fn=hessian_fn)
    iso_gap = float(np.max(np.abs(iso.details["ratios"] - 1.0)))
    total.details.update(max_ratio=max(ratios) if ratios else float("nan"),
                         max_identity_error=identity_err, isotropic_max_gap=iso_gap)
    if iso.violations or iso_gap > 1e-6:
        total.violations += 1
    return total


def check_jensen(rng: np.random.Generator, n_maps: int = 500, size: int = 12,
                 kernel: int = 3) -> geo.CheckReport:
    total = geo.CheckReport("jensen")
    for _ in range(n_maps):
        e = rng.uniform(0.0, 1.0, size=(size, size))
        y, x = rng.integers(1, size - 1, size=2)
        e[y, x] = rng.uniform(2.0, 50.0)  # planted spike
        rep = geo.jensen_smoothing_check(e, kernel)
        if (int(y), int(x)) not in geo.strict_local_maxima(e, kernel):
            total.violations += 1
        total.tested += rep.tested
        total.violations += rep.violations
        total.max_slack = max(total.max_slack, rep.max_slack)
    return total


def check_flow(rng: np.random.Generator, n: int = 1000, rtol: float = 1e-12) -> geo.CheckReport:
    """Arithmetic and scaling identities of the flow truncation bound."""
    rep = geo.CheckReport("flow")
    for _ in range(n):
        kappa, omega, dt, energy, delta = np.exp(rng.uniform(-3, 3, size=5))
        c = int(rng.integers(1, 9))
        b = geo.flow_truncation_bound(kappa, omega, dt, c, energy)
        quarter = geo.flow_truncation_bound(kappa, omega, dt / 2, c, energy)
        limit = geo.flow_omega_limit(delta, kappa, dt, c, energy)
        back = geo.flow_truncation_bound(kappa, limit, dt, c, energy)
        errs = (abs(quarter - b / 4) / b, abs(back - delta) / delta)
        rep.tested += 1
        rep.max_slack = max(rep.max_slack, max(errs) - rtol)
        if max(errs) > rtol:
            rep.violations += 1
    return rep


CHECKS = ("score", "deviation", "taylor", "gronwall", "spectral", "jensen", "flow")


def run_verification(only: Optional[Iterable[str]] = None, seed: int = 0,
                     params: Optional[dict] = None,
                     hessian_fn: Callable = mixture_hessian) -> list[geo.CheckReport]:
    names = list(CHECKS) if not only else list(only)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown checks {unknown}; expected {list(CHECKS)}")
    params = params or {}
    reports = []
    for name in names:
        rng = np.random.default_rng([seed, CHECKS.index(name)])
        kw = dict(params.get(name, {}))
        if name == "score":
            rep = check_score(rng, hessian_fn=hessian_fn, **kw)
        elif name == "deviation":
            rep = check_deviation_law(**kw)
        elif name == "taylor":
            rep = check_taylor(rng, **kw)
        elif name == "gronwall":
            rep = check_gronwall(rng, **kw)
        elif name == "spectral":
            rep = check_spectral(rng, hessian_fn=hessian_fn, **kw)
        elif name == "jensen":
            rep = check_jensen(rng, **kw)
        else:
            rep = check_flow(rng, **kw)
        log.info("%s: tested=%d violations=%d", name, rep.tested, rep.violations)
        reports.append(rep)
    return reports


def write_verify_csv(path, reports: list[geo.CheckReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["name", "tested", "violations", "skipped", "max_slack"])
        w.writeheader()
        for r in reports:
            w.writerow(r.row())


# -- ablation ---------------------------------------------------------------

def ablation_grid(spec: dict) -> list[GuidanceConfig]:
    omegas = spec.get("omegas", [2.0, 8.0])
    bounds = spec.get("bounds", [[2.0, 8.0]])
    kernels = spec.get("kernels", [1, 3])
    grid = [GuidanceConfig.uniform(float(o)) for o in omegas]
    grid += [GuidanceConfig.samg(float(lo), float(hi), int(k))
             for lo, hi in bounds for k in kernels]
    if not grid:
        raise ValueError("ablation grid is empty")
    return grid


def cmd_ablate(cfg: ExperimentConfig) -> list[ParetoRow]:
    grid = ablation_grid(cfg.ablate)
    results = run_cells(cfg, guidance=grid)
    table = []
    extra = {}
    for g, res in zip(grid, results):
        agg = pool([r.evaluation for r in res])
        table.append((g.label, agg))
        extra[g.label] = (agg, high_energy_distance(res))
    rows = pareto_table(table)
    for r in rows:
        r.high_energy_distance = extra[r.label][1]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pareto_csv(out / "pareto.csv", rows)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config", *AGGREGATE_COLUMNS, "high_energy_distance"])
        for g in grid:
            agg, hed = extra[g.label]
            w.writerow([g.label, *(repr(agg[c]) for c in AGGREGATE_COLUMNS), repr(hed)])
    return rows
