"""Drifts, the OU conjugation and right-hand sides of the coupled systems.

Components are indexed from 0 in code; neighbours wrap cyclically so that
component ``-1`` is ``N - 1`` and component ``N`` is ``0``.

State arrays have shape ``(..., N, d)``; leading axes are batch axes and
broadcast through every right-hand side, which lets the integrators advance
several initial conditions at once.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, NumericRangeError

#: |O| beyond this triggers NumericRangeError; exp overflows near 709.
O_LIMIT = 500.0


class Frame(str, enum.Enum):
    RODE = "rode"
    SODE = "sode"


@dataclass(frozen=True, eq=False)
class DriftSpec:
    """One drift ``f : R^d -> R^d`` with its one-sided Lipschitz constant.

    The shipped families are componentwise ``f(x) = -a x - b x^3 + g``; a
    linear drift is the ``b = 0`` case.  ``g`` is a constant forcing and
    equals ``f(0)``.  Custom drifts carry an arbitrary callable and must
    pass :func:`verify_one_sided_lipschitz` when constructed.
    """

    kind: str
    d: int
    claimed_L: float
    a: float = 0.0
    b: float = 0.0
    forcing: np.ndarray = field(default=None)
    func: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        g = np.zeros(self.d) if self.forcing is None else np.asarray(self.forcing, float)
        g = np.broadcast_to(g, (self.d,)).copy()
        g.setflags(write=False)
        object.__setattr__(self, "forcing", g)

    @classmethod
    def linear(cls, lam: float, d: int = 1, forcing=0.0) -> "DriftSpec":
        if not lam > 0:
            raise ConfigurationError(f"linear drift needs lambda > 0, got {lam}")
        return cls("linear", int(d), float(lam), a=float(lam), forcing=forcing)

    @classmethod
    def cubic(cls, a: float, b: float, d: int = 1, forcing=0.0) -> "DriftSpec":
        if not a > 0:
            raise ConfigurationError(f"cubic drift needs a > 0, got {a}")
        if b < 0:
            raise ConfigurationError(f"cubic drift needs b >= 0, got {b}")
        return cls("cubic", int(d), float(a), a=float(a), b=float(b), forcing=forcing)

    @classmethod
    def custom(cls, func: Callable, d: int, claimed_L: float, *, radius: float = 10.0,
               n_samples: int = 10_000, seed: int = 0) -> "DriftSpec":
        """Wrap ``func`` after Monte-Carlo certifying ``claimed_L`` on a ball.

        Only global one-sided Lipschitz drifts are meaningful here; the check
        can only sample a bounded region.
        """
        if not claimed_L > 0:
            raise ConfigurationError("claimed_L must be positive")
        g = np.asarray(func(np.zeros(d)), dtype=float)
        spec = cls("custom", int(d), float(claimed_L), forcing=g, func=func)
        check = verify_one_sided_lipschitz(spec, claimed_L, n_samples, radius, seed)
        if not check.passed:
            raise ConfigurationError(
                f"custom drift violates the one-sided Lipschitz bound L={claimed_L} "
                f"at x1={check.witness[0]}, x2={check.witness[1]}"
            )
        return spec

    @property
    def is_polynomial(self) -> bool:
        return self.kind in ("linear", "cubic")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_polynomial:
            out = -self.a * x + self.forcing
            if self.b:
                out = out - self.b * x**3
            return out
        return np.apply_along_axis(lambda v: np.asarray(self.func(v), float), -1, x)


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """``N`` cyclically coupled components with drifts, noise loadings and ``nu``."""

    drifts: tuple
    coeffs: np.ndarray
    nu: float

    def __post_init__(self):
        drifts = tuple(self.drifts)
        if len(drifts) < 3:
            raise ConfigurationError(f"need N >= 3 components, got {len(drifts)}")
        dims = {dr.d for dr in drifts}
        if len(dims) != 1:
            raise DimensionError(f"all drifts must share one state dimension, got {dims}")
        c = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if c.shape[0] != len(drifts):
            raise DimensionError(f"coeffs need {len(drifts)} rows, got {c.shape[0]}")
        if self.nu < 0:
            raise ConfigurationError(f"coupling nu must be nonnegative, got {self.nu}")
        c.setflags(write=False)
        object.__setattr__(self, "drifts", drifts)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def N(self) -> int:
        return len(self.drifts)

    @property
    def d(self) -> int:
        return self.drifts[0].d

    @property
    def m(self) -> int:
        return self.coeffs.shape[1]

    @property
    def L(self) -> float:
        return min(dr.claimed_L for dr in self.drifts)

    @property
    def polynomial(self) -> bool:
        return all(dr.is_polynomial for dr in self.drifts)

    def with_nu(self, nu: float) -> "SystemSpec":
        return replace(self, nu=nu)

    def forcing_matrix(self) -> np.ndarray:
        """``f_j(0)`` stacked, shape ``(N, d)``."""
        return np.stack([dr.forcing for dr in self.drifts])

    def drift_all(self, X):
        """Apply ``f_j`` to component ``j`` of ``X`` (shape ``(..., N, d)``)."""
        X = np.asarray(X, dtype=float)
        if self.polynomial:
            a = np.array([dr.a for dr in self.drifts])[:, None]
            b = np.array([dr.b for dr in self.drifts])[:, None]
            out = -a * X + self.forcing_matrix()
            if b.any():
                out = out - b * X**3
            return out
        return np.stack([dr(X[..., j, :]) for j, dr in enumerate(self.drifts)], axis=-2)


@dataclass(frozen=True, eq=False)
class StateVector:
    frame: Frame
    components: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "frame", Frame(self.frame))
        comp = np.array(self.components, dtype=float)
        if comp.ndim == 1:
            comp = comp[:, None]
        object.__setattr__(self, "components", comp)


def check_ou_range(ou_values) -> None:
    o = np.asarray(ou_values)
    if not np.all(np.isfinite(o)) or np.any(np.abs(o) > O_LIMIT):
        raise NumericRangeError(f"OU value beyond +-{O_LIMIT}; path flagged as unusable")


def laplacian(x, axis: int = -2):
    """Cyclic discrete Laplacian ``x[j-1] - 2 x[j] + x[j+1]`` along ``axis``."""
    return np.roll(x, 1, axis=axis) - 2.0 * x + np.roll(x, -1, axis=axis)


def conjugate_rhs(spec: SystemSpec, j: int, x, O_j: float) -> np.ndarray:
    """``exp(-O_j) f_j(exp(O_j) x) + O_j x`` for component ``j`` (0-based)."""
    check_ou_range(O_j)
    x = np.asarray(x, dtype=float)
    e = np.exp(O_j)
    return spec.drifts[j](e * x) / e + O_j * x


def _conjugate_all(spec: SystemSpec, x, ou_values):
    o = np.asarray(ou_values, dtype=float)[..., None]
    e = np.exp(o)
    return spec.drift_all(e * x) / e + o * x


def coupled_rode_rhs(spec: SystemSpec, state, ou_values) -> np.ndarray:
    """Right-hand side of the coupled RODE for every component."""
    x = _components(state, Frame.RODE)
    check_ou_range(ou_values)
    return _conjugate_all(spec, x, ou_values) + spec.nu * laplacian(x)


def coupled_sode_drift(spec: SystemSpec, state, ou_values) -> np.ndarray:
    """Drift of the equivalent coupled SODE.

    Neighbour couplings carry the weights ``exp(O_j - O_{j-1})`` and
    ``exp(O_j - O_{j+1})``; the Stratonovich noise term is left to the
    integrator.
    """
    X = _components(state, Frame.SODE)
    check_ou_range(ou_values)
    o = np.asarray(ou_values, dtype=float)
    rho = np.exp(o - np.roll(o, 1))[:, None]
    varrho = np.exp(o - np.roll(o, -1))[:, None]
    coupling = rho * np.roll(X, 1, axis=-2) - 2.0 * X + varrho * np.roll(X, -1, axis=-2)
    return spec.drift_all(X) + spec.nu * coupling


def averaged_rode_rhs(spec: SystemSpec, z, ou_values) -> np.ndarray:
    """Mean over ``j`` of the conjugated drifts evaluated at a common ``z``."""
    check_ou_range(ou_values)
    z = np.asarray(z, dtype=float)
    zs = np.broadcast_to(z[..., None, :], z.shape[:-1] + (spec.N, spec.d))
    return _conjugate_all(spec, zs, ou_values).mean(axis=-2)


def frame_convert(state: StateVector, ou_values, target) -> StateVector:
    """Switch between ``x_j = exp(-O_j) X_j`` (RODE) and ``X_j`` (SODE)."""
    target = Frame(target)
    if state.frame is target:
        return state
    check_ou_range(ou_values)
    o = np.asarray(ou_values, dtype=float)[:, None]
    sign = 1.0 if target is Frame.SODE else -1.0
    return StateVector(target, state.components * np.exp(sign * o))


def averaged_frame_convert(z, ou_values, target) -> np.ndarray:
    """Averaged conjugation ``z = exp(-mean_j O_j) Z``."""
    check_ou_range(ou_values)
    s = float(np.mean(ou_values))
    return np.asarray(z, float) * np.exp(s if Frame(target) is Frame.SODE else -s)


def _components(state, frame: Frame) -> np.ndarray:
    if isinstance(state, StateVector):
        if state.frame is not frame:
            raise ConfigurationError(f"expected a {frame.value} state, got {state.frame.value}")
        return state.components
    return np.asarray(state, dtype=float)


class LipschitzCheck(NamedTuple):
    passed: bool
    witness: Optional[tuple]
    worst_margin: float


def _uniform_ball(rng, n, d, radius):
    v = rng.standard_normal((n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / d)
    return v * r[:, None]


def verify_one_sided_lipschitz(drift: DriftSpec, L: float, n_samples: int,
                               radius: float, seed: int = 0) -> LipschitzCheck:
    """Sample pairs in the ball and test ``<dx, df> <= -L |dx|^2``.

    The check tolerates ``1e-12 |dx|^2`` of rounding.  On failure the first
    violating pair is returned as the witness.  ``worst_margin`` is the largest
    value of ``(<dx, df> + L |dx|^2) / |dx|^2`` seen.
    """
    if n_samples < 1:
        raise ConfigurationError("n_samples must be >= 1")
    if not radius > 0:
        raise ConfigurationError("radius must be positive")
    rng = np.random.default_rng(seed)
    x1 = _uniform_ball(rng, n_samples, drift.d, radius)
    x2 = _uniform_ball(rng, n_samples, drift.d, radius)
    dx = x1 - x2
    df = drift(x1) - drift(x2)
    sq = np.einsum("ij,ij->i", dx, dx)
    lhs = np.einsum("ij,ij->i", dx, df)
    excess = lhs + L * sq
    bad = excess > 1e-12 * sq
    with np.errstate(invalid="ignore", divide="ignore"):
        margin = np.where(sq > 0, excess / sq, -np.inf)
    worst = float(margin.max())
    if bad.any():
        i = int(np.argmax(bad))
        return LipschitzCheck(False, (x1[i], x2[i]), worst)
    return LipschitzCheck(True, None, worst)


def make_system(lams: Sequence[float], coeffs, nu: float, *, d: int = 1,
                forcing=0.0, cubic_b: float = 0.0) -> SystemSpec:
    """Shorthand for systems whose drifts are ``-lam_j x - b x^3 + g_j``."""
    lams = list(lams)
    g = np.broadcast_to(np.asarray(forcing, float), (len(lams),) + np.shape(forcing)[1:])
    if cubic_b:
        drifts = [DriftSpec.cubic(l, cubic_b, d, gj) for l, gj in zip(lams, g)]
    else:
        drifts = [DriftSpec.linear(l, d, gj) for l, gj in zip(lams, g)]
    c = np.atleast_2d(np.asarray(coeffs, dtype=float))
    if c.shape[0] == 1 and len(lams) > 1:
        c = np.repeat(c, len(lams), axis=0)
    return SystemSpec(tuple(drifts), c, nu)
