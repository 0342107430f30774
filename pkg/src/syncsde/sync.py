"""Pathwise integration and synchronization diagnostics.

The coupled RODE is advanced with the explicit Heun (trapezoidal
predictor-corrector) scheme on the shared noise grid, reading OU values at
the nodes.  The equivalent SODE is advanced with the stochastic Heun scheme,
which is consistent with the Stratonovich interpretation and uses exactly
the increments that built the OU paths.

Pullback attractors are approximated by starting at ``t = -T`` from a small
set of initial states and reading the state at ``t = 0``; the singleton
property is checked, not assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import dynamics as dyn
from .dynamics import Frame, StateVector, SystemSpec
from .errors import ComparisonError, ConfigurationError, NumericRangeError, SyncError
from .noise import NoiseGrid, OUPathSet, TimeGrid
from .spectral import CouplingMatrixSeries, circulant_laplacian_eigenvalues, comparison_bound

#: windows shorter than this many nodes are rejected for sup statistics
MIN_WINDOW_NODES = 10
#: gaps below this are treated as the floating-point floor when fitting rates
GAP_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class TrajectoryBundle:
    """States of all components on a run of grid nodes.

    ``states`` has shape ``(n, N, d)``.  A flagged bundle stopped early
    because the OU path left the usable range or the state blew up; it keeps
    only the valid prefix and records why.
    """

    times: np.ndarray
    frame: Frame
    states: np.ndarray
    spec: SystemSpec
    seed: Optional[int] = None
    flagged: bool = False
    reason: str = ""

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else float("nan")

    def index_of(self, t: float) -> int:
        k = int(round((t - self.times[0]) / self.h))
        if k < 0 or k >= len(self.times) or abs(self.times[k] - t) > 1e-7 * max(1.0, abs(t)):
            raise ConfigurationError(f"t={t} is not a node of this trajectory")
        return k

    def to_frame(self, ou: OUPathSet, target) -> "TrajectoryBundle":
        target = Frame(target)
        if target is self.frame:
            return self
        i0 = ou.grid.index_of(self.times[0])
        o = ou.values[:, i0 : i0 + len(self.times)]
        dyn.check_ou_range(o)
        sign = 1.0 if target is Frame.SODE else -1.0
        states = self.states * np.exp(sign * o.T)[:, :, None]
        return TrajectoryBundle(self.times, target, states, self.spec, self.seed,
                                self.flagged, self.reason)


def check_step_stability(spec: SystemSpec, h: float) -> None:
    """Reject steps for which explicit Heun is unstable on the coupling modes."""
    stiff = -circulant_laplacian_eigenvalues(spec.N, spec.nu).min()
    if h * stiff > 2.0:
        raise ConfigurationError(
            f"step h={h} too large for coupling nu={spec.nu}: need h <= {2.0 / stiff:.3g}"
        )


def _as_rode_array(x0, spec: SystemSpec, frame: Frame) -> np.ndarray:
    if isinstance(x0, StateVector):
        if x0.frame is not frame:
            raise ConfigurationError(f"initial state must be in the {frame.value} frame")
        x0 = x0.components
    x = np.asarray(x0, dtype=float)
    if x.shape[-2:] != (spec.N, spec.d):
        if x.shape[-1] == spec.N and spec.d == 1:
            x = x[..., None]
        else:
            raise ConfigurationError(f"initial state must have shape (..., {spec.N}, {spec.d})")
    if not np.all(np.isfinite(x)):
        raise ConfigurationError("initial state must be finite")
    return x


def _heun_rode(rhs, o_window, h, x0, record_from=0):
    """Advance ``x' = rhs(x, O)`` over the window; ``o_window`` is ``(..., N, n)``.

    Returns ``(states, ok)`` where ``states`` stacks nodes ``record_from..n-1``
    (or just the valid prefix when the run blew up).
    """
    n = o_window.shape[-1]
    x = x0
    rec = [x] if record_from == 0 else []
    for k in range(n - 1):
        k1 = rhs(x, o_window[..., k])
        xp = x + h * k1
        k2 = rhs(xp, o_window[..., k + 1])
        x = x + 0.5 * h * (k1 + k2)
        if not np.all(np.isfinite(x)):
            return (np.array(rec) if rec else x0[None]), False
        if k + 1 >= record_from:
            rec.append(x)
    return np.array(rec), True


def _coupled_rhs_fast(spec: SystemSpec):
    """RODE right-hand side without per-call validation (range checked up front)."""
    nu = spec.nu
    if spec.polynomial:
        a = np.array([dr.a for dr in spec.drifts])[:, None]
        b = np.array([dr.b for dr in spec.drifts])[:, None]
        g = spec.forcing_matrix()
        cubic = bool(b.any())

        def rhs(x, o):
            o = o[..., None]
            out = (o - a) * x + np.exp(-o) * g
            if cubic:
                out = out - b * np.exp(2.0 * o) * x**3
            if nu:
                out = out + nu * (np.roll(x, 1, axis=-2) - 2.0 * x + np.roll(x, -1, axis=-2))
            return out
        return rhs

    def rhs(x, o):
        return dyn._conjugate_all(spec, x, o) + nu * dyn.laplacian(x)
    return rhs


def _averaged_rhs_fast(spec: SystemSpec):
    """Averaged RODE right-hand side for ``z (..., d)`` and ``o (..., N)``."""
    if spec.polynomial:
        a = np.array([dr.a for dr in spec.drifts])[:, None]
        b = np.array([dr.b for dr in spec.drifts])[:, None]
        g = spec.forcing_matrix()
        cubic = bool(b.any())

        def rhs(z, o):
            o = o[..., None]
            zs = z[..., None, :]
            out = (o - a) * zs + np.exp(-o) * g
            if cubic:
                out = out - b * np.exp(2.0 * o) * zs**3
            return out.mean(axis=-2)
        return rhs

    def rhs(z, o):
        zs = np.broadcast_to(z[..., None, :], z.shape[:-1] + (spec.N, spec.d))
        return dyn._conjugate_all(spec, zs, o).mean(axis=-2)
    return rhs


def integrate_rode(spec: SystemSpec, ou: OUPathSet, x0, window, *, seed=None) -> TrajectoryBundle:
    """Heun integration of the coupled RODE from ``window[0]`` to ``window[1]``."""
    i0, i1 = ou.grid.window(*window)
    if ou.N != spec.N:
        raise ConfigurationError(f"OU paths have {ou.N} rows, system has N={spec.N}")
    check_step_stability(spec, ou.grid.h)
    x = _as_rode_array(x0, spec, Frame.RODE)
    o = ou.values[:, i0 : i1 + 1]
    times = ou.grid.times[i0 : i1 + 1]
    try:
        dyn.check_ou_range(o)
    except NumericRangeError as exc:
        return TrajectoryBundle(times[:1], Frame.RODE, x[None], spec, seed, True, str(exc))
    states, ok = _heun_rode(_coupled_rhs_fast(spec), o, ou.grid.h, x)
    return TrajectoryBundle(times[: len(states)], Frame.RODE, states, spec, seed,
                            not ok, "" if ok else "non-finite state")


def integrate_averaged(spec: SystemSpec, ou: OUPathSet, z0, window) -> tuple:
    """Heun integration of the averaged RODE; returns ``(times, states (n, d))``."""
    i0, i1 = ou.grid.window(*window)
    o = ou.values[:, i0 : i1 + 1]
    dyn.check_ou_range(o)
    z = np.asarray(z0, dtype=float).reshape(spec.d)
    states, ok = _heun_rode(_averaged_rhs_fast(spec), o, ou.grid.h, z)
    if not ok:
        raise NumericRangeError("averaged RODE produced a non-finite state")
    return ou.grid.times[i0 : i1 + 1], states


def integrate_sode_stratonovich(spec: SystemSpec, noise: NoiseGrid, ou: OUPathSet, X0,
                                window, *, seed=None) -> TrajectoryBundle:
    """Stochastic Heun for the equivalent coupled SODE.

    Predictor ``X~ = X + h b(X, O_k) + G(X) dW``; corrector averages the drift
    ``b`` at both ends and the noise term ``G(X) dW`` at ``X`` and ``X~``, where
    ``G(X) dW`` is ``X_j * sum_i c_ij dW_i`` for component ``j``.
    """
    if noise.grid != ou.grid:
        raise ConfigurationError("noise and OU paths must live on the same grid")
    if noise.m != spec.m:
        raise ConfigurationError(f"noise has {noise.m} drivers, system expects m={spec.m}")
    i0, i1 = ou.grid.window(*window)
    check_step_stability(spec, ou.grid.h)
    X = _as_rode_array(X0, spec, Frame.SODE)
    o = ou.values[:, i0 : i1 + 1]
    times = ou.grid.times[i0 : i1 + 1]
    try:
        dyn.check_ou_range(o)
    except NumericRangeError as exc:
        return TrajectoryBundle(times[:1], Frame.SODE, X[None], spec, seed, True, str(exc))
    h = ou.grid.h
    loads = (spec.coeffs @ noise.increments[:, i0:i1]).T[:, :, None]  # (n-1, N, 1)
    drift = _sode_drift_fast(spec, o)
    rec = [X]
    for k in range(i1 - i0):
        dw = loads[k]
        b1 = drift(X, k)
        g1 = X * dw
        Xp = X + h * b1 + g1
        b2 = drift(Xp, k + 1)
        X = X + 0.5 * h * (b1 + b2) + 0.5 * (g1 + Xp * dw)
        if not np.all(np.isfinite(X)):
            return TrajectoryBundle(times[: len(rec)], Frame.SODE, np.array(rec), spec,
                                    seed, True, "non-finite state")
        rec.append(X)
    return TrajectoryBundle(times, Frame.SODE, np.array(rec), spec, seed)


def _sode_drift_fast(spec: SystemSpec, o_window):
    """SODE drift at node ``k`` of a range-checked OU window ``(N, n)``."""
    nu = spec.nu
    rho = np.exp(o_window - np.roll(o_window, 1, axis=0)).T[:, :, None]
    varrho = np.exp(o_window - np.roll(o_window, -1, axis=0)).T[:, :, None]
    drift_all = spec.drift_all
    if spec.polynomial:
        a = np.array([dr.a for dr in spec.drifts])[:, None]
        b = np.array([dr.b for dr in spec.drifts])[:, None]
        g = spec.forcing_matrix()
        cubic = bool(b.any())

        def drift_all(X):
            out = g - a * X
            return out - b * X**3 if cubic else out

    def drift(X, k):
        out = drift_all(X)
        if nu:
            out = out + nu * (rho[k] * np.roll(X, 1, axis=-2) - 2.0 * X
                              + varrho[k] * np.roll(X, -1, axis=-2))
        return out
    return drift


# ---------------------------------------------------------------------------
# pullback attractors and the absorbing ball


@dataclass(frozen=True, eq=False)
class AttractorEstimate:
    """Pullback estimate of the singleton attractor at ``eval_time``.

    ``value`` has shape ``(N, d)`` for the coupled system and ``(d,)`` for the
    averaged one.  ``cauchy_gap`` compares the two deepest depths from the
    origin; ``singleton_gap`` is the largest distance between runs started
    from distinct initial states at the deepest depth.
    """

    value: np.ndarray
    pullback_depths: tuple
    cauchy_gap: float
    singleton_gap: float
    converged: bool
    tolerance: float
    eval_time: float = 0.0
    initial_states: np.ndarray = field(default=None, repr=False)


def absorbing_integral(spec: SystemSpec, ou: OUPathSet, truncation_T: float,
                       nu: Optional[float] = None) -> np.ndarray:
    """Truncated ``C_nu = int_{-T}^0 exp(int_u^0 A~) f~(u) du`` (length ``N``).

    ``A~`` is the absorbing comparison matrix and
    ``f~_j(u) = exp(-2 O_j(u)) |f_j(0)|^2 / L``.
    """
    nu = spec.nu if nu is None else float(nu)
    L = spec.L
    if not L > 0:
        raise ConfigurationError("absorbing radius needs L > 0")
    grid = ou.grid
    i0, i1 = grid.window(-float(truncation_T), 0.0)
    f0 = np.sum(spec.forcing_matrix() ** 2, axis=1)
    if not f0.any():
        return np.zeros(spec.N)
    dyn.check_ou_range(ou.values[:, i0 : i1 + 1])
    series = CouplingMatrixSeries.from_ou(ou, L, nu, "absorbing")
    A = np.zeros((grid.n_points, spec.N, spec.N))
    A[i0 : i1 + 1] = series.matrices(i0, i1)
    psi = np.zeros((grid.n_points, spec.N))
    psi[i0 : i1 + 1] = (np.exp(-2.0 * ou.values[:, i0 : i1 + 1]) * f0[:, None]).T / L
    zero = np.zeros(spec.N)
    return comparison_bound(A, psi, zero, grid, -float(truncation_T), 0.0, out_times=[0.0])[0]


def absorbing_radius(spec: SystemSpec, ou: OUPathSet, truncation_T: float,
                     nu: Optional[float] = None) -> float:
    """``R_nu = sqrt(1 + |C_nu|^2)`` from the truncated absorbing integral."""
    C = absorbing_integral(spec, ou, truncation_T, nu)
    return math.sqrt(1.0 + float(C @ C))


def default_depths(depth: float) -> tuple:
    """Pair of pullback depths whose t = 0 states are compared for convergence."""
    return (0.8 * float(depth), float(depth))


def _initial_set(shape, radius, seed, n_random=2):
    """Origin plus ``n_random`` seeded points of norm ``radius``."""
    rng = np.random.default_rng([int(seed), 0xA77])
    pts = [np.zeros(shape)]
    for _ in range(n_random):
        v = rng.standard_normal(shape)
        pts.append(v * (radius / np.linalg.norm(v)))
    return np.stack(pts)


def _pullback(rhs, ou, depths, tolerance, eval_time, x_init):
    depths = tuple(float(T) for T in depths)
    if not depths or any(T <= 0 for T in depths) or list(depths) != sorted(set(depths)):
        raise ConfigurationError("pullback depths must be positive and strictly increasing")
    h = ou.grid.h
    finals = []
    for T in depths:
        i0, i1 = ou.grid.window(eval_time - T, eval_time)
        o = ou.values[:, i0 : i1 + 1]
        dyn.check_ou_range(o)
        states, ok = _heun_rode(rhs, o, h, x_init, record_from=i1 - i0)
        if not ok:
            raise NumericRangeError(f"pullback run from depth {T} blew up")
        finals.append(states[-1])
    last = finals[-1]
    flat = last.reshape(len(last), -1)
    singleton = max(
        float(np.linalg.norm(flat[i] - flat[j]))
        for i in range(len(flat)) for j in range(i + 1, len(flat))
    ) if len(flat) > 1 else 0.0
    cauchy = float(np.linalg.norm(finals[-1][0] - finals[-2][0])) if len(finals) > 1 else float("inf")
    converged = cauchy <= tolerance and singleton <= tolerance
    return AttractorEstimate(last[0], depths, cauchy, singleton, converged, float(tolerance),
                             float(eval_time), x_init)


def pullback_attractor(spec: SystemSpec, ou: OUPathSet, depths: Sequence[float],
                       tolerance: float = 1e-8, *, eval_time: float = 0.0,
                       radius: Optional[float] = None, seed: int = 0,
                       initial_states=None) -> AttractorEstimate:
    """Pullback approximation of the coupled attractor at ``eval_time``.

    Runs start from the origin and two seeded points on the sphere of the
    given ``radius`` (by default the absorbing radius truncated at the
    deepest depth, when it fits on the grid, else 1).  Non-convergence is
    reported through ``converged``, not raised.
    """
    check_step_stability(spec, ou.grid.h)
    if initial_states is None:
        if radius is None:
            radius = _default_radius(spec, ou, max(depths))
        initial_states = _initial_set((spec.N, spec.d), radius, seed)
    x_init = np.asarray(initial_states, dtype=float)
    return _pullback(_coupled_rhs_fast(spec), ou, depths, tolerance, eval_time, x_init)


def averaged_pullback_attractor(spec: SystemSpec, ou: OUPathSet, depths: Sequence[float],
                                tolerance: float = 1e-8, *, eval_time: float = 0.0,
                                radius: float = 1.0, seed: int = 0,
                                initial_states=None) -> AttractorEstimate:
    """Same as :func:`pullback_attractor` for the averaged RODE."""
    if initial_states is None:
        initial_states = _initial_set((spec.d,), radius, seed)
    x_init = np.asarray(initial_states, dtype=float)
    return _pullback(_averaged_rhs_fast(spec), ou, depths, tolerance, eval_time, x_init)


def _default_radius(spec, ou, depth):
    try:
        return absorbing_radius(spec, ou, depth)
    except SyncError:
        return 1.0


# ---------------------------------------------------------------------------
# ensembles


def integrate_rode_ensemble(spec: SystemSpec, ous: Sequence[OUPathSet], x0, window,
                            *, seeds=None) -> list:
    """Integrate one coupled RODE per OU path set, advancing all members together.

    ``x0`` is either one ``(N, d)`` state shared by all members or a stack
    ``(B, N, d)``.  Members whose OU values leave the usable range are
    returned flagged; the rest are stepped as a single batch.
    """
    ous = list(ous)
    if not ous:
        return []
    grid = ous[0].grid
    if any(o.grid != grid for o in ous):
        raise ConfigurationError("ensemble members must share one grid")
    seeds = list(seeds) if seeds is not None else [None] * len(ous)
    x = _as_rode_array(x0, spec, Frame.RODE)
    x = np.broadcast_to(x, (len(ous), spec.N, spec.d)) if x.ndim == 2 else x
    if x.shape[0] != len(ous):
        raise ConfigurationError("one initial state per ensemble member expected")
    check_step_stability(spec, grid.h)
    i0, i1 = grid.window(*window)
    times = grid.times[i0 : i1 + 1]
    out = [None] * len(ous)
    good = []
    for b, ou in enumerate(ous):
        if ou.N != spec.N:
            raise ConfigurationError(f"OU paths have {ou.N} rows, system has N={spec.N}")
        try:
            dyn.check_ou_range(ou.values[:, i0 : i1 + 1])
            good.append(b)
        except NumericRangeError as exc:
            out[b] = TrajectoryBundle(times[:1], Frame.RODE, x[b][None], spec, seeds[b], True, str(exc))
    if good:
        o = np.stack([ous[b].values[:, i0 : i1 + 1] for b in good])
        states, ok = _heun_rode(_coupled_rhs_fast(spec), o, grid.h, np.array(x[good]))
        if ok:
            for r, b in enumerate(good):
                out[b] = TrajectoryBundle(times, Frame.RODE, states[:, r], spec, seeds[b])
        else:
            for b in good:
                out[b] = integrate_rode(spec, ous[b], x[b], window, seed=seeds[b])
    return out


def _pullback_runs(rhs, o_stack, h, x0, record_from):
    states, ok = _heun_rode(rhs, o_stack, h, x0, record_from=record_from)
    if not ok:
        raise NumericRangeError("pullback run produced a non-finite state")
    return states


def attractor_trajectories(spec: SystemSpec, ous: Sequence[OUPathSet], depth: float, window,
                           *, averaged: bool = False) -> np.ndarray:
    """Pullback attractor trajectories on ``window`` for several OU path sets.

    Each member starts at the origin at ``window[0] - depth`` and is recorded
    over the window.  Returns ``(n, B, N, d)`` (or ``(n, B, d)`` for the
    averaged equation).
    """
    ous = list(ous)
    grid = ous[0].grid
    t0, t1 = window
    i0, i1 = grid.window(t0 - float(depth), t1)
    k0 = grid.index_of(t0) - i0
    o = np.stack([ou.values[:, i0 : i1 + 1] for ou in ous])
    dyn.check_ou_range(o)
    if averaged:
        return _pullback_runs(_averaged_rhs_fast(spec), o, grid.h, np.zeros((len(ous), spec.d)), k0)
    check_step_stability(spec, grid.h)
    x0 = np.zeros((len(ous), spec.N, spec.d))
    return _pullback_runs(_coupled_rhs_fast(spec), o, grid.h, x0, k0)


# ---------------------------------------------------------------------------
# gap diagnostics


@dataclass(frozen=True, eq=False)
class SyncReport:
    """Gap series and scalar diagnostics for one run.

    Only the fields relevant to the producing operation are filled; the
    rest stay ``None``.  ``extras`` carries auxiliary series and scalars.
    """

    times: np.ndarray
    pairwise_gap_series: Optional[np.ndarray] = None
    component_gap_series: Optional[np.ndarray] = None
    fitted_decay_rate: Optional[float] = None
    rate_defined: bool = False
    averaged_gap: Optional[float] = None
    nu: Optional[float] = None
    M_bound: Optional[float] = None
    extras: dict = field(default_factory=dict)


def fit_decay_rate(times, gap, start_time: float = 0.0, floor: float = GAP_FLOOR):
    """Least-squares slope of ``log gap`` against ``t``.

    The fit starts at the later of ``start_time`` and the first node where
    the gap has dropped below a tenth of its initial value, and stops at the
    first node below ``floor``.  Returns ``(rate, defined, (ta, tb))``;
    fewer than three usable nodes leave the rate undefined (``nan``).
    """
    times = np.asarray(times, dtype=float)
    gap = np.asarray(gap, dtype=float)
    nan = (float("nan"), False, (float("nan"), float("nan")))
    if len(gap) < 3 or not gap[0] > floor:
        return nan
    below = np.nonzero(gap < 0.1 * gap[0])[0]
    k_drop = int(below[0]) if below.size else 0
    k_start = max(k_drop, int(np.searchsorted(times, start_time - 1e-12)))
    floor_hit = np.nonzero(gap[k_start:] < floor)[0]
    k_end = k_start + int(floor_hit[0]) if floor_hit.size else len(gap)
    if k_end - k_start < 3:
        return nan
    t = times[k_start:k_end]
    slope = np.polyfit(t, np.log(gap[k_start:k_end]), 1)[0]
    return float(slope), True, (float(t[0]), float(t[-1]))


def _check_comparable(a: TrajectoryBundle, b: TrajectoryBundle):
    if a.frame is not b.frame:
        raise ComparisonError("bundles are in different frames")
    if a.states.shape != b.states.shape:
        raise ComparisonError(f"shape mismatch {a.states.shape} vs {b.states.shape}")
    if not np.allclose(a.times, b.times, rtol=0, atol=1e-9):
        raise ComparisonError("bundles live on different time nodes")
    if a.spec is not b.spec and (a.spec.N, a.spec.d) != (b.spec.N, b.spec.d):
        raise ComparisonError("bundles come from incompatible systems")


def pairwise_gap(traj1: TrajectoryBundle, traj2: TrajectoryBundle,
                 t_omega: float = 0.0) -> SyncReport:
    """Distance between two solutions of the same system.

    ``pairwise_gap_series`` is ``max_j |x1_j - x2_j|``; ``extras`` also holds
    ``squared_gap_norm``, the Euclidean norm of the vector of squared
    component distances, which is the quantity the contraction bound controls.
    """
    _check_comparable(traj1, traj2)
    diff = traj1.states - traj2.states
    per = np.linalg.norm(diff, axis=2)
    gap = per.max(axis=1)
    sq = np.linalg.norm(per**2, axis=1)
    rate, ok, span = fit_decay_rate(traj1.times, gap, max(float(t_omega), 0.0))
    return SyncReport(traj1.times, pairwise_gap_series=gap, fitted_decay_rate=rate,
                      rate_defined=ok, nu=traj1.spec.nu,
                      extras={"squared_gap_norm": sq, "fit_window": span, "t_omega": float(t_omega)})


def envelope_holds(report: SyncReport, L: float, *, slack: float = 0.05,
                   anchor: Optional[float] = None, quantity: str = "squared") -> bool:
    """Check ``q(t) <= q(anchor) e^{-L (t - anchor)} (1 + slack)`` for ``t >= anchor``.

    ``quantity`` selects the squared-gap vector norm (default) or the plain
    max-component gap.  The anchor defaults to the report's ``t_omega``.
    """
    q = report.extras["squared_gap_norm"] if quantity == "squared" else report.pairwise_gap_series
    anchor = report.extras.get("t_omega", 0.0) if anchor is None else anchor
    k = int(np.searchsorted(report.times, anchor - 1e-9))
    if k >= len(q):
        return False
    tt = report.times[k:] - report.times[k]
    bound = q[k] * np.exp(-L * tt) * (1.0 + slack)
    return bool(np.all(q[k:] <= bound + GAP_FLOOR))


def component_gap_series(states) -> np.ndarray:
    """``max_{j,k} |x_j - x_k|`` at every node of an ``(n, N, d)`` stack."""
    s = np.asarray(states, dtype=float)
    diff = s[:, :, None, :] - s[:, None, :, :]
    return np.linalg.norm(diff, axis=-1).max(axis=(1, 2))


def _window_slice(times, window):
    t1, t2 = window
    if not t1 < t2:
        raise ConfigurationError("window must satisfy T1 < T2")
    sel = np.nonzero((times >= t1 - 1e-9) & (times <= t2 + 1e-9))[0]
    if sel.size < MIN_WINDOW_NODES:
        raise ConfigurationError(
            f"window [{t1}, {t2}] holds {sel.size} nodes, need at least {MIN_WINDOW_NODES}"
        )
    return slice(int(sel[0]), int(sel[-1]) + 1)


def component_gap(traj: TrajectoryBundle, window=None) -> SyncReport:
    series = component_gap_series(traj.states)
    sup = None
    if window is not None:
        sup = float(series[_window_slice(traj.times, window)].max())
    return SyncReport(traj.times, component_gap_series=series, nu=traj.spec.nu,
                      extras={"sup_gap": sup, "window": window})


def m_bound_terms(spec: SystemSpec, states, ou_values, beta: float = 1.0) -> np.ndarray:
    """Per-node, per-component ``(4/beta)(e^{-2O}|f(e^O x)|^2 + O^2 |x|^2)``.

    ``states`` is ``(n, N, d)`` and ``ou_values`` is ``(N, n)``; returns ``(n, N)``.
    """
    x = np.asarray(states, dtype=float)
    o = np.asarray(ou_values, dtype=float).T[:, :, None]
    f = spec.drift_all(np.exp(o) * x)
    return (4.0 / beta) * (np.exp(-2.0 * o[..., 0]) * np.sum(f * f, axis=-1)
                           + o[..., 0] ** 2 * np.sum(x * x, axis=-1))


def m_bound(spec: SystemSpec, states, ou_values, beta: float = 1.0) -> np.ndarray:
    """Sup-window bound for every cyclic neighbour pair ``(j, j+1)``; length ``N``."""
    sup = m_bound_terms(spec, states, ou_values, beta).max(axis=0)
    return sup + np.roll(sup, -1)


def _loglog_slope(nus, gaps):
    nus = np.asarray(nus, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    if len(nus) < 2 or np.any(gaps <= 0):
        return float("nan")
    return float(np.polyfit(np.log(nus), np.log(gaps), 1)[0])


@dataclass(frozen=True, eq=False)
class SweepReport:
    nus: np.ndarray
    sup_gaps: np.ndarray
    slope: float
    strictly_decreasing: bool
    M_bounds: np.ndarray
    window: tuple
    flagged: bool = False
    reason: str = ""

    def m_bound_uniform(self, rel: float = 0.05) -> bool:
        """Every ``M`` stays below ``(1 + rel)`` times its value at the first ``nu``."""
        return bool(np.all(self.M_bounds <= (1.0 + rel) * self.M_bounds[0] + GAP_FLOOR))


def _check_nus(nus):
    nus = np.asarray(nus, dtype=float)
    if nus.ndim != 1 or nus.size == 0 or np.any(np.diff(nus) <= 0):
        raise ConfigurationError("nus must be a non-empty strictly increasing list")
    if np.any(nus < 1):
        raise ConfigurationError("nus must all be >= 1")
    return nus


def nu_sweep(spec: SystemSpec, ou: OUPathSet, nus: Sequence[float], window, x0,
             *, t0: float = 0.0, beta: float = 1.0) -> SweepReport:
    """Sup-window component gap of the solution started from ``x0`` at ``t0``, per ``nu``.

    The same OU paths and initial state are reused for every coupling
    strength.  A flagged trajectory invalidates the sweep.
    """
    return nu_sweep_ensemble(spec, [ou], nus, window, [x0], t0=t0, beta=beta)[0]


def nu_sweep_ensemble(spec: SystemSpec, ous: Sequence[OUPathSet], nus: Sequence[float],
                      window, x0s, *, t0: float = 0.0, beta: float = 1.0) -> list:
    """:func:`nu_sweep` for several OU path sets, integrated as one batch per ``nu``."""
    nus = _check_nus(nus)
    ous = list(ous)
    if window[0] < t0:
        raise ConfigurationError("window must start at or after t0")
    x0s = np.stack([_as_rode_array(x, spec, Frame.RODE) for x in x0s])
    B = len(ous)
    gaps = np.full((B, len(nus)), np.nan)
    Ms = np.full((B, len(nus)), np.nan)
    reasons = [""] * B
    for i, nu in enumerate(nus):
        s = spec.with_nu(nu)
        runs = integrate_rode_ensemble(s, ous, x0s, (t0, window[1]))
        for b, tr in enumerate(runs):
            if reasons[b]:
                continue
            if tr.flagged:
                reasons[b] = f"nu={nu}: {tr.reason}"
                continue
            sl = _window_slice(tr.times, window)
            gaps[b, i] = component_gap_series(tr.states[sl]).max()
            i0 = ous[b].grid.index_of(tr.times[sl.start])
            o = ous[b].values[:, i0 : i0 + (sl.stop - sl.start)]
            Ms[b, i] = m_bound(s, tr.states[sl], o, beta).max()
    out = []
    for b in range(B):
        if reasons[b]:
            out.append(SweepReport(nus, gaps[b], float("nan"), False, Ms[b], tuple(window),
                                   True, reasons[b]))
        else:
            out.append(SweepReport(nus, gaps[b], _loglog_slope(nus, gaps[b]),
                                   bool(np.all(np.diff(gaps[b]) < 0)), Ms[b], tuple(window)))
    return out


@dataclass(frozen=True, eq=False)
class AveragedReport:
    """Distance between coupled attractor trajectories and the averaged one.

    ``gaps[b, i]`` is the sup-window ``max_j |x_nu_j - z|`` for member ``b``
    and ``nus[i]``; ``mean_gaps`` uses the component mean instead of each
    component.  ``averaged_singleton`` holds the singleton check of the
    averaged equation per member.
    """

    nus: np.ndarray
    gaps: np.ndarray
    mean_gaps: np.ndarray
    M_bounds: np.ndarray
    averaged_singleton: tuple
    window: tuple
    depth: float

    @property
    def monotone(self) -> np.ndarray:
        return np.all(np.diff(self.gaps, axis=1) < 0, axis=1)


def averaged_comparison(spec: SystemSpec, ous: Sequence[OUPathSet], nus: Sequence[float],
                        window, depth: float, *, tolerance: float = 1e-8,
                        beta: float = 1.0) -> AveragedReport:
    """Compare pullback attractor trajectories of the coupled and averaged RODEs."""
    nus = _check_nus(nus)
    ous = list(ous)
    grid = ous[0].grid
    _window_slice(grid.times, window)
    z = attractor_trajectories(spec, ous, depth, window, averaged=True)
    single = _averaged_singletons(spec, ous, default_depths(depth), tolerance, window[0])
    i0 = grid.index_of(window[0])
    gaps, means, Ms = [], [], []
    for nu in nus:
        s = spec.with_nu(nu)
        x = attractor_trajectories(s, ous, depth, window)
        d = np.linalg.norm(x - z[:, :, None, :], axis=-1)
        gaps.append(d.max(axis=(0, 2)))
        means.append(np.linalg.norm(x.mean(axis=2) - z, axis=-1).max(axis=0))
        Ms.append([m_bound(s, x[:, b], ou.values[:, i0 : i0 + len(x)], beta).max()
                   for b, ou in enumerate(ous)])
    return AveragedReport(nus, np.array(gaps).T, np.array(means).T, np.array(Ms).T,
                          single, tuple(window), float(depth))


def _averaged_singletons(spec, ous, depths, tolerance, eval_time, seed=0):
    """Batched singleton check of the averaged equation, one estimate per member."""
    grid = ous[0].grid
    x_init = _initial_set((spec.d,), 1.0, seed)
    rhs = _averaged_rhs_fast(spec)
    finals = []
    for T in depths:
        i0, i1 = grid.window(eval_time - T, eval_time)
        o = np.stack([ou.values[:, i0 : i1 + 1] for ou in ous])[:, None]
        dyn.check_ou_range(o)
        x0 = np.broadcast_to(x_init, (len(ous),) + x_init.shape).copy()
        finals.append(_pullback_runs(rhs, o, grid.h, x0, i1 - i0)[-1])
    out = []
    for b in range(len(ous)):
        last = finals[-1][b]
        single = max(float(np.linalg.norm(last[i] - last[j]))
                     for i in range(len(last)) for j in range(i + 1, len(last)))
        cauchy = float(np.linalg.norm(finals[-1][b][0] - finals[-2][b][0]))
        out.append(AttractorEstimate(last[0], tuple(depths), cauchy, single,
                                     cauchy <= tolerance and single <= tolerance,
                                     float(tolerance), float(eval_time), x_init))
    return tuple(out)


def stationary_residual(spec: SystemSpec, noise: NoiseGrid, ou: OUPathSet, x_traj,
                        times, factor: float = 10.0) -> dict:
    """One stochastic Heun step from the frame-converted attractor at every node.

    Compares the step's landing point with the converted attractor at the
    next node.  The local error scale is the window mean of the
    predictor-corrector difference of the same steps (per-node values
    collapse wherever the Wiener increment is near zero).  Passes when the
    largest residual is at most ``factor`` times that scale.
    """
    x = np.asarray(x_traj, dtype=float)
    i0 = ou.grid.index_of(times[0])
    n = len(times)
    o = ou.values[:, i0 : i0 + n]
    dyn.check_ou_range(o)
    X = x * np.exp(o.T)[:, :, None]
    h = ou.grid.h
    dw = (spec.coeffs @ noise.increments[:, i0 : i0 + n - 1]).T[:, :, None]
    res = np.empty(n - 1)
    est = np.empty(n - 1)
    for k in range(n - 1):
        b1 = dyn.coupled_sode_drift(spec, X[k], o[:, k])
        g1 = X[k] * dw[k]
        Xp = X[k] + h * b1 + g1
        b2 = dyn.coupled_sode_drift(spec, Xp, o[:, k + 1])
        Xn = X[k] + 0.5 * h * (b1 + b2) + 0.5 * (g1 + Xp * dw[k])
        res[k] = np.linalg.norm(Xn - X[k + 1])
        est[k] = np.linalg.norm(Xn - Xp)
    scale = float(est.mean())
    return {"residual": res, "local_error": est, "scale": scale,
            "max_ratio": float(res.max() / max(scale, GAP_FLOOR)),
            "passed": bool(res.max() <= factor * scale + GAP_FLOOR)}


def invariance_gap(spec: SystemSpec, ou: OUPathSet, depth: float, s: float, *,
                   tolerance: float = 1e-8) -> float:
    """Distance between the forward image of the attractor and its pullback at ``s``.

    The attractor at 0 is evolved to ``s``; independently the pullback
    estimate is recomputed at time 0 on the OU paths shifted by ``s``.
    """
    est = pullback_attractor(spec, ou, default_depths(depth), tolerance, radius=1.0)
    fwd = integrate_rode(spec, ou, est.value, (0.0, s))
    if fwd.flagged:
        raise NumericRangeError(fwd.reason)
    shifted = pullback_attractor(spec, ou.shifted(s), default_depths(depth), tolerance,
                                 radius=1.0)
    return float(np.linalg.norm(fwd.states[-1] - shifted.value))
