"""The six named experiments behind the command line runner.

Each experiment splits into ``compute`` (per seed chunk, may run in a worker
process) and ``assess`` (reduces the per-seed records into assertions).
Records come back in seed order, so output does not depend on the number
of workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from . import spectral as sp
from . import sync
from .config import ExperimentConfig
from .dynamics import O_LIMIT
from .errors import NumericRangeError, SyncError
from .noise import TimeGrid, build_ou_paths, estimate_T_omega, sample_wiener


#: relative slack for R_nu <= R_1; equal radii differ by quadrature rounding
RADIUS_RTOL = 1e-9


@dataclass
class Assertion:
    name: str
    passed: bool
    observed: float
    threshold: float
    comparison: str
    seeds: list
    source: str
    asserted: bool = True

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "observed": _json_float(self.observed),
            "threshold": _json_float(self.threshold),
            "comparison": self.comparison,
            "seeds": list(self.seeds),
            "source": self.source,
            "asserted": self.asserted,
        }


def _json_float(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


@dataclass
class SeedRecord:
    seed: Optional[int]
    flagged: bool = False
    reason: str = ""
    rows: Dict[str, list] = field(default_factory=dict)
    metrics: Dict[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class Experiment:
    name: str
    tables: Dict[str, tuple]
    compute: Callable
    assess: Callable
    uses_seeds: bool = True


def _noise_and_ou(cfg: ExperimentConfig, seed: int, grid: Optional[TimeGrid] = None):
    grid = cfg.grid.build() if grid is None else grid
    noise = sample_wiener(seed, grid, cfg.system.m)
    return noise, build_ou_paths(noise, cfg.system.coeff_matrix())


def _fraction(records, key):
    good = [r for r in records if not r.flagged]
    if not good:
        return float("nan"), []
    ok = [r.seed for r in good if r.metrics[key]]
    return len(ok) / len(good), [r.seed for r in good]


def _frac_assertion(name, records, key, threshold, source):
    frac, seeds = _fraction(records, key)
    return Assertion(name, bool(frac >= threshold), frac, threshold, ">=", seeds, source)


# ---------------------------------------------------------------------------
# pairwise-sync


def _pairwise_compute(cfg: ExperimentConfig, seeds):
    spec = cfg.system.build()
    grid = cfg.grid.build()
    tol = cfg.tolerances
    out, ous, members = [], [], []
    for seed in seeds:
        _, ou = _noise_and_ou(cfg, seed, grid)
        rec = SeedRecord(seed)
        try:
            tw = estimate_T_omega(ou, spec.L)
        except SyncError as exc:
            rec.flagged, rec.reason = True, str(exc)
            out.append(rec)
            continue
        if not tw.found:
            rec.flagged, rec.reason = True, "T_omega not found on the grid"
        rec.metrics["t_omega"] = tw.value
        out.append(rec)
        if not rec.flagged:
            ous.append(ou)
            members.append(rec)
    if members:
        x1 = np.stack([np.random.default_rng([r.seed, 0xB1]).standard_normal((spec.N, spec.d))
                       for r in members])
        x2 = np.stack([np.random.default_rng([r.seed, 0xB2]).standard_normal((spec.N, spec.d))
                       for r in members])
        win = (0.0, grid.t_max)
        runs = sync.integrate_rode_ensemble(spec, ous + ous, np.concatenate([x1, x2]), win)
        B = len(members)
        for b, rec in enumerate(members):
            t1, t2 = runs[b], runs[B + b]
            if t1.flagged or t2.flagged:
                rec.flagged, rec.reason = True, t1.reason or t2.reason
                continue
            rep = sync.pairwise_gap(t1, t2, rec.metrics["t_omega"])
            comp = sync.component_gap_series(t1.states)
            rec.metrics.update(
                rate=rep.fitted_decay_rate,
                rate_defined=rep.rate_defined,
                envelope=sync.envelope_holds(rep, spec.L, slack=tol.envelope_slack),
                envelope_plain=sync.envelope_holds(rep, spec.L, slack=tol.envelope_slack,
                                                   quantity="max"),
            )
            rec.rows["gaps"] = [
                (rec.seed, t, g, q, c)
                for t, g, q, c in zip(rep.times, rep.pairwise_gap_series,
                                      rep.extras["squared_gap_norm"], comp)
            ]
            if b == 0:
                rec.rows["trajectory"] = [(rec.seed, t, j, *x[j])
                                          for t, x in zip(t1.times, t1.states) for j in range(spec.N)]
            rec.rows["rates"] = [(rec.seed, rec.metrics["t_omega"], rep.fitted_decay_rate,
                                  int(rec.metrics["envelope"]), int(rec.metrics["envelope_plain"]))]
    return out


def _pairwise_assess(cfg: ExperimentConfig, records):
    tol = cfg.tolerances
    res = [_frac_assertion("contraction envelope (squared gaps)", records, "envelope",
                           tol.envelope_fraction, "rates.csv")]
    frac, seeds = _fraction(records, "envelope_plain")
    res.append(Assertion("contraction envelope (max gap)", bool(frac >= tol.envelope_fraction),
                         frac, tol.envelope_fraction, ">=", seeds, "rates.csv", asserted=False))
    good = [r for r in records if not r.flagged and r.metrics["rate_defined"]]
    rates = [r.metrics["rate"] for r in good]
    worst = max(rates) if rates else float("nan")
    res.append(Assertion("fitted decay rate", bool(rates) and worst <= tol.max_decay_rate, worst,
                         tol.max_decay_rate, "<=", [r.seed for r in good], "rates.csv",
                         asserted=cfg.system.noiseless))
    return res, {"worst_rate": worst, "median_rate": float(np.median(rates)) if rates else float("nan")}


# ---------------------------------------------------------------------------
# pullback-attractor


def _pullback_compute(cfg: ExperimentConfig, seeds):
    spec = cfg.system.build()
    grid = cfg.grid.build()
    tol = cfg.tolerances
    depths = sync.default_depths(cfg.depth)
    out = []
    for seed in seeds:
        _, ou = _noise_and_ou(cfg, seed, grid)
        rec = SeedRecord(seed)
        try:
            est = sync.pullback_attractor(spec, ou, depths, tol.attractor_tol, seed=seed)
            inv = sync.invariance_gap(spec, ou, cfg.depth, cfg.invariance_shift,
                                      tolerance=tol.attractor_tol)
            radii = [sync.absorbing_radius(spec, ou, cfg.depth, nu=nu) for nu in cfg.nus]
        except NumericRangeError as exc:
            rec.flagged, rec.reason = True, str(exc)
            out.append(rec)
            continue
        rec.metrics.update(
            singleton=est.singleton_gap <= tol.attractor_tol,
            converged=est.converged,
            invariance=inv <= tol.invariance_tol,
            radius_monotone=all(r <= radii[0] * (1.0 + RADIUS_RTOL) for r in radii[1:]),
            worst_radius_excess=max([r - radii[0] for r in radii[1:]], default=0.0),
        )
        rec.rows["attractor"] = [(seed, spec.nu, cfg.depth, est.cauchy_gap, est.singleton_gap, inv,
                                  *est.value.ravel())]
        rec.rows["radius"] = [(seed, nu, r) for nu, r in zip(cfg.nus, radii)]
        out.append(rec)
    return out


def _pullback_assess(cfg: ExperimentConfig, records):
    tol = cfg.tolerances
    res = [
        _frac_assertion("singleton and depth convergence", records, "converged",
                        tol.attractor_fraction, "attractor.csv"),
        _frac_assertion("invariance under shift", records, "invariance",
                        tol.attractor_fraction, "attractor.csv"),
    ]
    if len(cfg.nus) > 1:
        frac, seeds = _fraction(records, "radius_monotone")
        res.append(Assertion(f"absorbing radius <= radius at nu={cfg.nus[0]}", frac == 1.0, frac,
                             1.0, ">=", seeds, "radius.csv"))
    worst = max((r.metrics["worst_radius_excess"] for r in records if not r.flagged), default=0.0)
    return res, {"worst_radius_excess": worst}


# ---------------------------------------------------------------------------
# nu-sweep


def _sweep_compute(cfg: ExperimentConfig, seeds):
    spec = cfg.system.build()
    grid = cfg.grid.build()
    ous = [_noise_and_ou(cfg, seed, grid)[1] for seed in seeds]
    reps = sync.nu_sweep_ensemble(spec, ous, cfg.nus, cfg.window,
                                  [cfg.initial_state(seed) for seed in seeds], t0=cfg.sweep_start)
    out = []
    for seed, rep in zip(seeds, reps):
        rec = SeedRecord(seed)
        out.append(rec)
        if rep.flagged:
            rec.flagged, rec.reason = True, rep.reason
            continue
        rec.metrics.update(
            slope=rep.slope,
            decreasing=rep.strictly_decreasing,
            max_gap=float(rep.sup_gaps.max()),
            m_ratio=float(rep.M_bounds.max() / rep.M_bounds[0]) if rep.M_bounds[0] > 0 else 1.0,
        )
        rec.rows["sweep"] = [(seed, nu, g, M, rep.slope)
                             for nu, g, M in zip(rep.nus, rep.sup_gaps, rep.M_bounds)]
    return out


def _sweep_assess(cfg: ExperimentConfig, records):
    tol = cfg.tolerances
    good = [r for r in records if not r.flagged]
    seeds = [r.seed for r in good]
    if cfg.system.identical_components:
        worst = max((r.metrics["max_gap"] for r in good), default=float("nan"))
        return [Assertion("exact synchronization floor", bool(good) and worst <= tol.exact_sync_floor,
                          worst, tol.exact_sync_floor, "<=", seeds, "sweep.csv")], {"max_gap": worst}
    dec = all(r.metrics["decreasing"] for r in good) and bool(good)
    slopes = np.array([r.metrics["slope"] for r in good])
    dev = float(np.abs(slopes - tol.slope_target).max()) if good else float("nan")
    m_ratio = max((r.metrics["m_ratio"] for r in good), default=float("nan"))
    res = [
        Assertion("sup gap strictly decreasing in nu", dec, float(sum(r.metrics["decreasing"] for r in good)),
                  float(len(good)), ">=", seeds, "sweep.csv"),
        Assertion(f"log-log slope within {tol.slope_target} +- {tol.slope_halfwidth}",
                  bool(good) and dev <= tol.slope_halfwidth, dev, tol.slope_halfwidth, "<=",
                  seeds, "sweep.csv"),
        Assertion("M bound <= 1.05 x value at smallest nu", m_ratio <= 1.05, m_ratio, 1.05, "<=",
                  seeds, "sweep.csv", asserted=False),
    ]
    return res, {"slopes": [float(s) for s in slopes], "max_m_ratio": m_ratio}


# ---------------------------------------------------------------------------
# averaged-convergence


def _averaged_compute(cfg: ExperimentConfig, seeds):
    spec = cfg.system.build()
    grid = cfg.grid.build()
    tol = cfg.tolerances
    out, noises, ous, members = [], [], [], []
    for seed in seeds:
        noise, ou = _noise_and_ou(cfg, seed, grid)
        rec = SeedRecord(seed)
        out.append(rec)
        i0, i1 = grid.window(cfg.window[0] - cfg.depth, cfg.window[1])
        if np.abs(ou.values[:, i0 : i1 + 1]).max() > O_LIMIT:
            rec.flagged, rec.reason = True, "OU value out of range"
            continue
        noises.append(noise)
        ous.append(ou)
        members.append(rec)
    if not members:
        return out
    rep = sync.averaged_comparison(spec, ous, cfg.nus, cfg.window, cfg.depth,
                                   tolerance=tol.attractor_tol)
    i0, i1 = grid.window(*cfg.window)
    wtimes = grid.times[i0 : i1 + 1]
    nu_mid = cfg.nus[len(cfg.nus) // 2]
    s_mid = spec.with_nu(nu_mid)
    x_mid = sync.attractor_trajectories(s_mid, ous, cfg.depth, cfg.window)
    for b, rec in enumerate(members):
        resid = sync.stationary_residual(s_mid, noises[b], ous[b], x_mid[:, b], wtimes,
                                         factor=tol.residual_factor)
        single = rep.averaged_singleton[b]
        rec.metrics.update(
            monotone=bool(rep.monotone[b]),
            averaged_singleton=single.converged,
            residual=resid["passed"],
            residual_ratio=resid["max_ratio"],
        )
        rec.rows["averaged"] = [
            (rec.seed, nu, g, mg, M, resid["max_ratio"] if nu == nu_mid else float("nan"))
            for nu, g, mg, M in zip(rep.nus, rep.gaps[b], rep.mean_gaps[b], rep.M_bounds[b])
        ]
        rec.rows["averaged_attractor"] = [(rec.seed, cfg.window[0], single.cauchy_gap,
                                           single.singleton_gap, *np.ravel(single.value))]
    return out


def _averaged_assess(cfg: ExperimentConfig, records):
    tol = cfg.tolerances
    return [
        _frac_assertion("gap to averaged attractor decreasing in nu", records, "monotone",
                        tol.averaged_fraction, "averaged.csv"),
        _frac_assertion("averaged attractor singleton", records, "averaged_singleton",
                        tol.attractor_fraction, "averaged_attractor.csv"),
        _frac_assertion("stationary solution residual", records, "residual",
                        tol.averaged_fraction, "averaged.csv"),
    ], {}


# ---------------------------------------------------------------------------
# conjugacy-check


def _conjugacy_compute(cfg: ExperimentConfig, seeds):
    spec = cfg.system.build()
    grid = cfg.grid.build()
    tol = cfg.tolerances
    win = (0.0, cfg.window[1]) if cfg.window[0] < 0 else (cfg.window[0], cfg.window[1])
    out = []
    for seed in seeds:
        noise, ou = _noise_and_ou(cfg, seed, grid)
        rec = SeedRecord(seed)
        x0 = cfg.initial_state(seed)
        r = sync.integrate_rode(spec, ou, x0, win, seed=seed)
        X0 = x0 * np.exp(ou.at(win[0]))[:, None]
        s = sync.integrate_sode_stratonovich(spec, noise, ou, X0, win, seed=seed)
        if r.flagged or s.flagged:
            rec.flagged, rec.reason = True, r.reason or s.reason
            out.append(rec)
            continue
        conv = r.to_frame(ou, "sode")
        rel = float(np.abs(conv.states - s.states).max() / np.abs(s.states).max())
        rec.metrics["agree"] = rel <= tol.conjugacy_rel
        rec.rows["conjugacy"] = [(seed, rel)]
        out.append(rec)
    return out


def _conjugacy_assess(cfg: ExperimentConfig, records):
    tol = cfg.tolerances
    return [_frac_assertion(f"RODE vs SODE relative sup gap <= {tol.conjugacy_rel}", records,
                            "agree", tol.conjugacy_fraction, "conjugacy.csv")], {}


# ---------------------------------------------------------------------------
# spectral-check


def spectral_records(p_max: int, tol) -> SeedRecord:
    rec = SeedRecord(None)
    rows = []
    worst = 0.0
    for p in range(1, p_max + 1):
        for alpha in (0.0, 1.0, 1.9, 3.0):
            dev = float(np.abs(sp.tridiag_eigenvalues(p, alpha)
                               - np.linalg.eigvalsh(sp.tridiag_matrix(p, alpha))).max())
            worst = max(worst, dev)
            rows.append(("tridiag", p, alpha, dev))
    top = [float(sp.tridiag_eigenvalues(p, sp.alpha_threshold(p)).max()) for p in range(2, p_max + 1)]
    sharp = max(
        (abs(sp.definiteness_boundary(p, tol.bisection_tol / 10) - sp.sharp_alpha_threshold(p))
         for p in range(1, p_max + 1)),
        default=0.0,
    )
    circ = 0.0
    for n in range(3, max(p_max, 3) + 1):
        dev = float(np.abs(sp.circulant_laplacian_eigenvalues(n, 1.0)
                           - np.linalg.eigvalsh(sp.circulant_laplacian(n))).max())
        circ = max(circ, dev)
        rows.append(("circulant", n, 1.0, dev))
    comp = _comparison_closed_form_error()
    rows.append(("comparison", 3, float("nan"), comp))
    rec.rows["spectral"] = rows
    rec.metrics.update(eig_dev=worst, max_top=max(top, default=-1.0), sharp_dev=sharp,
                       circ_dev=circ, comparison_err=comp)
    return rec


def _comparison_closed_form_error(h: float = 1e-3) -> float:
    A = np.array([[-3.0, 1.0, 0.5], [1.0, -2.0, 0.3], [0.5, 0.3, -4.0]])
    psi = np.array([1.0, -0.5, 2.0])
    phi0 = np.array([1.0, 2.0, -1.0])
    grid = TimeGrid(0.0, 1.0, h)
    n = grid.n_points
    # early nodes, odd and even node counts: covers trapezoid start-up and both Simpson parities
    times = np.array([0.001, 0.002, 0.003, 0.004, 0.25, 0.333, 0.5, 0.777, 0.999, 1.0])
    got = sp.comparison_bound(np.broadcast_to(A, (n, 3, 3)), np.broadcast_to(psi, (n, 3)), phi0,
                              grid, 0.0, 1.0, out_times=times)
    E = sp.expm_sym(times[:, None, None] * A)
    forced = np.einsum("kij,j->ki", E - np.eye(3), psi)
    exact = np.einsum("kij,j->ki", E, phi0) + np.linalg.solve(A, forced.T).T
    return float(np.abs(got - exact).max())


def _spectral_compute(cfg: ExperimentConfig, seeds):
    return [spectral_records(cfg.p_max, cfg.tolerances)]


def _spectral_assess(cfg: ExperimentConfig, records):
    tol = cfg.tolerances
    m = records[0].metrics
    res = [
        Assertion("closed-form tridiagonal spectrum", m["eig_dev"] <= tol.spectral_atol, m["eig_dev"],
                  tol.spectral_atol, "<=", [], "spectral.csv"),
        Assertion("negative definite at alpha_0(p), p >= 2", m["max_top"] < 0, m["max_top"], 0.0, "<",
                  [], "spectral.csv"),
        Assertion("sharp threshold located by bisection", m["sharp_dev"] <= tol.bisection_tol,
                  m["sharp_dev"], tol.bisection_tol, "<=", [], "spectral.csv"),
        Assertion("circulant Laplacian spectrum", m["circ_dev"] <= tol.spectral_atol, m["circ_dev"],
                  tol.spectral_atol, "<=", [], "spectral.csv"),
        Assertion("comparison bound vs constant-coefficient closed form",
                  m["comparison_err"] <= tol.comparison_atol, m["comparison_err"], tol.comparison_atol,
                  "<=", [], "spectral.csv"),
    ]
    return res, {}


EXPERIMENT_TABLE = {
    "pairwise-sync": Experiment(
        "pairwise-sync",
        {"gaps": ("seed", "t", "pairwise_gap", "squared_gap_norm", "component_gap"),
         "rates": ("seed", "t_omega", "fitted_rate", "envelope_squared", "envelope_max"),
         "trajectory": ("seed", "t", "j", "values...")},
        _pairwise_compute, _pairwise_assess),
    "pullback-attractor": Experiment(
        "pullback-attractor",
        {"attractor": ("seed", "nu", "depth", "cauchy_gap", "singleton_gap", "invariance_gap", "values..."),
         "radius": ("seed", "nu", "R_nu")},
        _pullback_compute, _pullback_assess),
    "nu-sweep": Experiment(
        "nu-sweep",
        {"sweep": ("seed", "nu", "sup_gap", "M_bound", "slope")},
        _sweep_compute, _sweep_assess),
    "averaged-convergence": Experiment(
        "averaged-convergence",
        {"averaged": ("seed", "nu", "sup_gap", "mean_gap", "M_bound", "residual_ratio"),
         "averaged_attractor": ("seed", "t", "cauchy_gap", "singleton_gap", "values...")},
        _averaged_compute, _averaged_assess),
    "conjugacy-check": Experiment(
        "conjugacy-check",
        {"conjugacy": ("seed", "rel_sup_gap")},
        _conjugacy_compute, _conjugacy_assess),
    "spectral-check": Experiment(
        "spectral-check",
        {"spectral": ("kind", "size", "alpha", "max_abs_dev")},
        _spectral_compute, _spectral_assess, uses_seeds=False),
}
