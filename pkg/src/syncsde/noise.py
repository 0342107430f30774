"""Seeded Wiener drivers, stationary Ornstein-Uhlenbeck paths and the path shift.

A single uniform two-sided time grid carries everything: the negative half
feeds pullback runs, the positive half forward runs.  A sample path of the
noise is represented by its Wiener increments on that grid together with
the seed that produced them, so every downstream object is a pure function
of ``(seed, grid, parameters)``.

The OU paths solve ``dO = -O dt + sum_i c_i dW_i`` and are advanced with the
exponential-Euler recursion

    O[k+1] = exp(-h) * O[k] + sum_i c_i * dW_i[k]

which reuses the shared increments identically for every row, so rows that
load on the same driver are correlated exactly at grid resolution.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.signal import lfilter

from .errors import AlignmentError, ConfigurationError, DimensionError, RangeError

_ALIGN_TOL = 1e-7


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_min, t_min + h, ..., t_max``.

    When the grid straddles zero, ``t_min`` must be a multiple of ``h`` so
    that ``t = 0`` is a node; node times are then generated from integer
    offsets and zero is represented exactly.
    """

    t_min: float
    t_max: float
    h: float

    def __post_init__(self):
        t_min, t_max, h = float(self.t_min), float(self.t_max), float(self.h)
        if not (math.isfinite(t_min) and math.isfinite(t_max) and math.isfinite(h)):
            raise ConfigurationError("grid bounds and step must be finite")
        if h <= 0:
            raise ConfigurationError(f"grid step must be positive, got h={h}")
        if t_min >= t_max:
            raise ConfigurationError(f"need t_min < t_max, got [{t_min}, {t_max}]")
        steps = (t_max - t_min) / h
        if abs(steps - round(steps)) > _ALIGN_TOL * max(1.0, steps):
            raise ConfigurationError(
                f"(t_max - t_min) / h = {steps} is not an integer number of steps"
            )
        if t_min <= 0.0 <= t_max:
            k0 = t_min / h
            if abs(k0 - round(k0)) > _ALIGN_TOL * max(1.0, abs(k0)):
                raise ConfigurationError("grid straddles 0 but 0 is not a grid node")
        object.__setattr__(self, "t_min", t_min)
        object.__setattr__(self, "t_max", t_max)
        object.__setattr__(self, "h", h)

    @property
    def n_points(self) -> int:
        return int(round((self.t_max - self.t_min) / self.h)) + 1

    @property
    def contains_zero(self) -> bool:
        return self.t_min <= 0.0 <= self.t_max

    @cached_property
    def _k0(self):
        if self.contains_zero:
            return int(round(self.t_min / self.h))
        return None

    @cached_property
    def times(self) -> np.ndarray:
        k = np.arange(self.n_points, dtype=float)
        if self._k0 is not None:
            t = (self._k0 + k) * self.h
        else:
            t = self.t_min + k * self.h
        t.setflags(write=False)
        return t

    @property
    def zero_index(self) -> int:
        if self._k0 is None:
            raise RangeError("grid does not contain t = 0")
        return -self._k0

    def index_of(self, t: float) -> int:
        """Index of the node at time ``t``; raises if ``t`` is off-grid."""
        x = (float(t) - self.times[0]) / self.h
        k = int(round(x))
        if abs(x - k) > _ALIGN_TOL * max(1.0, abs(x)):
            raise AlignmentError(f"t={t} is not a multiple of h={self.h} on this grid")
        if k < 0 or k >= self.n_points:
            raise RangeError(f"t={t} outside grid [{self.t_min}, {self.t_max}]")
        return k

    def window(self, t0: float, t1: float) -> tuple[int, int]:
        i0, i1 = self.index_of(t0), self.index_of(t1)
        if i1 < i0:
            raise ConfigurationError(f"window [{t0}, {t1}] is reversed")
        return i0, i1

    def shifted(self, s: float) -> "TimeGrid":
        """Grid of the shifted path: node ``t`` here corresponds to ``t + s`` before."""
        return TimeGrid(self.t_min - s, self.t_max - s, self.h)


@dataclass(frozen=True, eq=False)
class NoiseGrid:
    """Wiener increments of ``m`` independent scalar drivers on ``grid``.

    ``increments[i, k]`` is ``W_i(t_{k+1}) - W_i(t_k)``.  The reconstructed
    path is pinned to ``W(0) = 0`` (or ``W(t_min) = 0`` for grids that do not
    reach zero).
    """

    grid: TimeGrid
    increments: np.ndarray
    seed: int

    def __post_init__(self):
        inc = np.array(self.increments, dtype=float)
        if inc.ndim != 2 or inc.shape[1] != self.grid.n_points - 1:
            raise DimensionError(
                f"increments must have shape (m, {self.grid.n_points - 1}), got {inc.shape}"
            )
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def m(self) -> int:
        return self.increments.shape[0]

    @cached_property
    def path(self) -> np.ndarray:
        """Driver values ``W_i(t_k)``, shape ``(m, n_points)``."""
        w = np.zeros((self.m, self.grid.n_points))
        np.cumsum(self.increments, axis=1, out=w[:, 1:])
        anchor = self.grid.zero_index if self.grid.contains_zero else 0
        w -= w[:, anchor : anchor + 1]
        w.setflags(write=False)
        return w


def sample_wiener(seed: int, grid: TimeGrid, m: int) -> NoiseGrid:
    """Draw i.i.d. ``Normal(0, h)`` increments for ``m`` drivers."""
    if not isinstance(grid, TimeGrid):
        raise ConfigurationError("grid must be a TimeGrid")
    if int(m) < 1:
        raise ConfigurationError(f"need at least one driver, got m={m}")
    rng = np.random.default_rng(int(seed))
    inc = rng.standard_normal((int(m), grid.n_points - 1)) * math.sqrt(grid.h)
    return NoiseGrid(grid, inc, int(seed))


def shift_path(noise: NoiseGrid, s: float) -> NoiseGrid:
    """Driver path of ``theta_s omega``, i.e. ``t -> W(t + s) - W(s)``.

    The increments are unchanged; only the time labels move by ``-s``.  ``s``
    has to be a node of the grid so that the new path is pinned at a node.
    """
    grid = noise.grid
    x = (float(s) - grid.times[0]) / grid.h
    k = int(round(x))
    if abs(x - k) > _ALIGN_TOL * max(1.0, abs(x)):
        raise AlignmentError(f"shift s={s} is not grid-aligned (h={grid.h})")
    if k < 0 or k >= grid.n_points:
        raise RangeError(f"shift s={s} leaves no window inside [{grid.t_min}, {grid.t_max}]")
    return NoiseGrid(grid.shifted(grid.times[k]), noise.increments, noise.seed)


@dataclass(frozen=True, eq=False)
class OUPathSet:
    """``N`` OU paths sampled on ``grid``; ``values`` has shape ``(N, n_points)``."""

    grid: TimeGrid
    values: np.ndarray
    coeffs: np.ndarray = field(default=None)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[None, :]
        if vals.ndim != 2 or vals.shape[1] != self.grid.n_points:
            raise DimensionError(
                f"values must have shape (N, {self.grid.n_points}), got {vals.shape}"
            )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.coeffs is not None:
            c = np.atleast_2d(np.array(self.coeffs, dtype=float))
            if c.shape[0] != vals.shape[0]:
                raise DimensionError("coeffs row count must equal number of paths")
            c.setflags(write=False)
            object.__setattr__(self, "coeffs", c)

    @property
    def N(self) -> int:
        return self.values.shape[0]

    def at(self, t: float) -> np.ndarray:
        return self.values[:, self.grid.index_of(t)]

    @cached_property
    def integral_from_zero(self) -> np.ndarray:
        """Signed trapezoid ``int_0^t O_j`` at every node, shape ``(N, n_points)``."""
        z = self.grid.zero_index
        cum = cumulative_trapezoid(self.values, dx=self.grid.h, axis=1, initial=0.0)
        out = cum - cum[:, z : z + 1]
        out.setflags(write=False)
        return out

    def shifted(self, s: float) -> "OUPathSet":
        """Paths of ``theta_s omega``: the value at ``t`` is the old value at ``t + s``."""
        k = self.grid.index_of(s)
        return OUPathSet(self.grid.shifted(self.grid.times[k]), self.values, self.coeffs)


def stationary_covariance(coeffs) -> np.ndarray:
    """Stationary covariance ``C C^T / 2`` of the OU vector."""
    c = np.atleast_2d(np.asarray(coeffs, dtype=float))
    return 0.5 * c @ c.T


def build_ou_paths(noise: NoiseGrid, coeffs, init="stationary") -> OUPathSet:
    """Build the OU rows driven by ``noise`` with loadings ``coeffs`` (N x m).

    ``init`` is either ``"stationary"`` (joint Gaussian draw with covariance
    ``C C^T / 2`` from a stream derived from the noise seed) or an array of
    ``N`` explicit values at ``grid.t_min``.
    """
    c = np.atleast_2d(np.asarray(coeffs, dtype=float))
    if c.ndim != 2 or c.shape[0] < 1:
        raise DimensionError("coeffs must be an N x m array with N >= 1")
    if c.shape[1] != noise.m:
        raise DimensionError(
            f"coeffs have {c.shape[1]} columns but the noise has {noise.m} drivers"
        )
    N = c.shape[0]
    if isinstance(init, str):
        if init != "stationary":
            raise ConfigurationError(f"unknown OU init mode {init!r}")
        rng = np.random.default_rng([noise.seed, 0x0F])
        o0 = c @ rng.standard_normal(noise.m) / math.sqrt(2.0)
    else:
        o0 = np.asarray(init, dtype=float).reshape(-1)
        if o0.shape != (N,):
            raise DimensionError(f"explicit OU init must have {N} values")
    forcing = c @ noise.increments
    x = np.concatenate([o0[:, None], forcing], axis=1)
    values = lfilter([1.0], [1.0, -math.exp(-noise.grid.h)], x, axis=1)
    return OUPathSet(noise.grid, values, c)


def ergodic_average(ou: OUPathSet, j: int, t: float) -> float:
    """Trapezoid value of ``(1/t) int_0^t O_j``."""
    k = ou.grid.index_of(t)
    if k == ou.grid.zero_index:
        raise ZeroDivisionError("ergodic average undefined at t = 0")
    return float(ou.integral_from_zero[j, k] / ou.grid.times[k])


class TOmega(NamedTuple):
    value: float
    found: bool


def estimate_T_omega(ou: OUPathSet, L: float) -> TOmega:
    """Smallest grid time after which the OU integral bounds hold for every row.

    Looks for ``T >= 0`` with ``int_0^t O_j <= (L/4) t`` for all nodes
    ``t > T`` and ``int_s^0 O_j <= -(L/4) s`` for all nodes ``s < -T``.  If the
    last violation sits at the edge of the grid the search is inconclusive
    and ``TOmega(t_max, False)`` is returned.
    """
    if not L > 0:
        raise ConfigurationError(f"L must be positive, got {L}")
    g = ou.grid
    if not (g.t_min < 0.0 < g.t_max):
        raise RangeError("T_omega needs a grid with both negative and positive times")
    t = g.times
    I = ou.integral_from_zero
    z = g.zero_index
    bound = 0.25 * L * t

    pos = t[z + 1 :]
    bad_pos = np.any(I[:, z + 1 :] > bound[z + 1 :], axis=0)
    t_pos = pos[bad_pos].max() if bad_pos.any() else 0.0

    neg = t[:z]
    # int_s^0 O = -I(s) <= -(L/4) s  <=>  I(s) >= (L/4) s
    bad_neg = np.any(I[:, :z] < bound[:z], axis=0)
    t_neg = -neg[bad_neg].min() if bad_neg.any() else 0.0

    T = max(t_pos, t_neg)
    if T >= min(g.t_max, -g.t_min):
        return TOmega(g.t_max, False)
    return TOmega(float(T), True)


def write_paths_csv(path, noise: NoiseGrid, ou: OUPathSet, header: str = "") -> None:
    """Write ``t, W1..Wm, O1..ON`` per node with 12 significant digits."""
    if ou.grid != noise.grid:
        raise ConfigurationError("noise and OU paths must share a grid")
    cols = ["t"] + [f"W{i + 1}" for i in range(noise.m)] + [f"O{j + 1}" for j in range(ou.N)]
    data = np.column_stack([noise.grid.times, noise.path.T, ou.values.T])
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header} columns={','.join(cols)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in data:
            w.writerow(["%.12g" % v for v in row])
