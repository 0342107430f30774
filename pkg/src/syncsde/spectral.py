"""Spectra of the coupling matrices and the componentwise comparison bound.

Two matrix families appear here:

* the ``p x p`` tridiagonal matrix with ``-alpha`` on the diagonal and ones
  next to it, whose eigenvalues are ``-alpha + 2 cos(k pi / (p + 1))``;
* the symmetric cyclic matrices built from OU paths, with diagonal
  ``2 O_j(t) - 2L - 2 nu`` (pairwise variant) or ``2 O_j(t) - L - 2 nu``
  (absorbing variant) and ``nu`` at cyclic neighbours.

Matrix exponentials are evaluated through a symmetric eigendecomposition,
which is exact for the matrices used here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid, simpson
from scipy.optimize import bisect

from .errors import ConfigurationError, DimensionError, UnsupportedStructureError
from .noise import OUPathSet, TimeGrid


@dataclass(frozen=True)
class TridiagSpec:
    p: int
    alpha: float

    def __post_init__(self):
        if int(self.p) < 1:
            raise ConfigurationError(f"p must be >= 1, got {self.p}")

    def matrix(self) -> np.ndarray:
        return tridiag_matrix(self.p, self.alpha)

    def eigenvalues(self) -> np.ndarray:
        return tridiag_eigenvalues(self.p, self.alpha)


def tridiag_matrix(p: int, alpha: float) -> np.ndarray:
    A = -float(alpha) * np.eye(p)
    i = np.arange(p - 1)
    A[i, i + 1] = A[i + 1, i] = 1.0
    return A


def tridiag_eigenvalues(p, alpha: Optional[float] = None) -> np.ndarray:
    """Closed-form spectrum ``-alpha + 2 cos(k pi / (p+1))``, ascending."""
    if isinstance(p, TridiagSpec):
        p, alpha = p.p, p.alpha
    if int(p) < 1:
        raise ConfigurationError(f"p must be >= 1, got {p}")
    k = np.arange(1, int(p) + 1)
    return np.sort(-float(alpha) + 2.0 * np.cos(k * np.pi / (p + 1)))


def alpha_threshold(p: int) -> float:
    """``1 - cos(p pi / (p+1))``: the tridiagonal matrix is negative definite above it."""
    if int(p) < 1:
        raise ConfigurationError(f"p must be >= 1, got {p}")
    return 1.0 - math.cos(p * math.pi / (p + 1))


def sharp_alpha_threshold(p: int) -> float:
    """Exact boundary ``2 cos(pi / (p+1))`` where the top eigenvalue crosses zero."""
    return 2.0 * math.cos(math.pi / (p + 1))


def definiteness_boundary(p: int, tol: float = 1e-10) -> float:
    """Locate the sign change of the numerical top eigenvalue in ``alpha`` by bisection.

    Uses a dense eigensolver rather than the closed form so it can serve as
    an independent check of :func:`sharp_alpha_threshold`.
    """
    top = lambda a: np.linalg.eigvalsh(tridiag_matrix(p, a))[-1]
    return bisect(top, -2.5, 2.5, xtol=tol)


def cyclic_adjacency(N: int) -> np.ndarray:
    """``P + P^T`` for the cyclic shift ``P`` (ones at cyclic neighbours)."""
    P = np.roll(np.eye(N), 1, axis=1)
    return P + P.T


def circulant_laplacian(N: int) -> np.ndarray:
    return cyclic_adjacency(N) - 2.0 * np.eye(N)


def circulant_laplacian_eigenvalues(N: int, nu: float = 1.0) -> np.ndarray:
    """``-2 nu (1 - cos(2 pi k / N))`` for ``k = 0..N-1``, ascending."""
    k = np.arange(N)
    return np.sort(-2.0 * nu * (1.0 - np.cos(2.0 * np.pi * k / N)))


@dataclass(frozen=True, eq=False)
class CouplingMatrixSeries:
    """Time-dependent comparison matrix on a grid.

    ``diagonal_series[j, k]`` is the diagonal entry for component ``j`` at
    node ``k``; off-diagonal entries are ``nu`` at cyclic neighbours.
    """

    grid: TimeGrid
    nu: float
    diagonal_series: np.ndarray
    variant: str

    @classmethod
    def from_ou(cls, ou: OUPathSet, L: float, nu: float, variant: str = "pairwise"):
        if variant == "pairwise":
            diag = 2.0 * ou.values - 2.0 * L - 2.0 * nu
        elif variant == "absorbing":
            diag = 2.0 * ou.values - L - 2.0 * nu
        else:
            raise ConfigurationError(f"unknown variant {variant!r}")
        return cls(ou.grid, float(nu), diag, variant)

    @property
    def N(self) -> int:
        return self.diagonal_series.shape[0]

    def matrix(self, k: int) -> np.ndarray:
        return np.diag(self.diagonal_series[:, k]) + self.nu * cyclic_adjacency(self.N)

    def matrices(self, i0: int = 0, i1: Optional[int] = None) -> np.ndarray:
        """Stack of matrices for nodes ``i0..i1`` inclusive, shape ``(n, N, N)``."""
        i1 = self.grid.n_points - 1 if i1 is None else i1
        diag = self.diagonal_series[:, i0 : i1 + 1].T
        out = np.broadcast_to(self.nu * cyclic_adjacency(self.N), (len(diag), self.N, self.N)).copy()
        idx = np.arange(self.N)
        out[:, idx, idx] = diag
        return out

    def integrated(self, i0: int, i1: int) -> np.ndarray:
        """Trapezoid ``int_{t_i0}^{t_i1} A(tau) dtau``."""
        h = self.grid.h
        seg = self.diagonal_series[:, i0 : i1 + 1]
        diag = h * (seg.sum(axis=1) - 0.5 * (seg[:, 0] + seg[:, -1])) if i1 > i0 else np.zeros(self.N)
        return np.diag(diag) + (i1 - i0) * h * self.nu * cyclic_adjacency(self.N)


def circulant_quadratic_form(series: CouplingMatrixSeries, xi, t_index: int) -> float:
    """Instantaneous ``xi^T A(t) xi``."""
    xi = _as_vector(xi, series.N)
    d = series.diagonal_series[:, t_index]
    return float(np.dot(d, xi * xi) + 2.0 * series.nu * np.dot(xi, np.roll(xi, 1)))


def accumulated_quadratic_form(series: CouplingMatrixSeries, xi, t_index: int,
                               start_index: Optional[int] = None) -> float:
    """``xi^T (int_0^t A) xi`` with the diagonal integrated by trapezoid.

    ``start_index`` defaults to the node at ``t = 0``; for ``t < 0`` the
    integral runs backwards and carries the sign of ``t``.
    """
    xi = _as_vector(xi, series.N)
    s = series.grid.zero_index if start_index is None else start_index
    if t_index >= s:
        M = series.integrated(s, t_index)
    else:
        M = -series.integrated(t_index, s)
    return float(xi @ M @ xi)


def _as_vector(xi, n):
    xi = np.asarray(xi, dtype=float).reshape(-1)
    if xi.shape != (n,):
        raise DimensionError(f"xi must have length {n}, got {xi.shape}")
    return xi


def expm_sym(M) -> np.ndarray:
    """``exp(M)`` for (stacks of) symmetric matrices via ``eigh``."""
    w, V = np.linalg.eigh(M)
    return (V * np.exp(w)[..., None, :]) @ np.swapaxes(V, -1, -2)


def check_cooperative(A, atol: float = 1e-12) -> None:
    """Reject inputs that are not symmetric with nonnegative off-diagonals."""
    A = np.asarray(A, dtype=float)
    scale = max(1.0, float(np.abs(A).max(initial=0.0)))
    if np.abs(A - np.swapaxes(A, -1, -2)).max(initial=0.0) > atol * scale:
        raise UnsupportedStructureError("comparison matrices must be symmetric")
    p = A.shape[-1]
    off = A[..., ~np.eye(p, dtype=bool)]
    if off.size and off.min() < -atol * scale:
        raise UnsupportedStructureError(
            "comparison matrices must have nonnegative off-diagonal entries"
        )


def comparison_bound(A_series, psi, phi0, grid: TimeGrid, t0: float, t1: float,
                     out_times=None, quadrature: str = "simpson") -> np.ndarray:
    """Right-hand side of the componentwise integral comparison bound.

    Evaluates, at each requested node ``t`` in ``[t0, t1]``,

        exp(int_{t0}^t A) phi0 + int_{t0}^t exp(int_u^t A) psi(u) du

    with ``int A`` accumulated by trapezoid on the grid and the outer
    integral by composite Simpson (``quadrature="trapezoid"`` is available
    for comparison).

    Parameters
    ----------
    A_series : array (n_points, p, p) or CouplingMatrixSeries
        Matrix values at every grid node.  Must be symmetric with
        nonnegative off-diagonals.
    psi : array (n_points, p) or None
        Inhomogeneous term on the grid; ``None`` means zero.
    phi0 : array (p,)
    out_times : sequence of times, optional
        Nodes at which to evaluate; defaults to every node in ``[t0, t1]``.

    Returns
    -------
    array (n_out, p)
    """
    if isinstance(A_series, CouplingMatrixSeries):
        A_series = A_series.matrices()
    A = np.asarray(A_series, dtype=float)
    if A.ndim == 1:
        A = A[:, None, None]
    if A.ndim != 3 or A.shape[0] != grid.n_points or A.shape[1] != A.shape[2]:
        raise DimensionError(f"A_series must have shape ({grid.n_points}, p, p)")
    p = A.shape[1]
    phi0 = np.asarray(phi0, dtype=float).reshape(p)
    i0, i1 = grid.window(t0, t1)
    Aw = A[i0 : i1 + 1]
    check_cooperative(Aw)
    if psi is None:
        psi_w = None
    else:
        psi = np.asarray(psi, dtype=float)
        if psi.ndim == 1:
            psi = psi[:, None]
        if psi.shape != (grid.n_points, p):
            raise DimensionError(f"psi must have shape ({grid.n_points}, {p})")
        psi_w = psi[i0 : i1 + 1]
    if quadrature not in ("simpson", "trapezoid"):
        raise ConfigurationError(f"unknown quadrature {quadrature!r}")

    cum = cumulative_trapezoid(Aw, dx=grid.h, axis=0, initial=0.0)
    if out_times is None:
        ks = range(i1 - i0 + 1)
    else:
        ks = [grid.index_of(t) - i0 for t in out_times]
        if any(k < 0 or k > i1 - i0 for k in ks):
            raise ConfigurationError("out_times must lie inside [t0, t1]")

    out = np.empty((len(ks), p))
    for r, k in enumerate(ks):
        out[r] = expm_sym(cum[k]) @ phi0
        if psi_w is None or k == 0:
            continue
        E = expm_sym(cum[k] - cum[: k + 1])
        integrand = np.einsum("uij,uj->ui", E, psi_w[: k + 1])
        if quadrature == "simpson" and k >= 2:
            out[r] += simpson(integrand, dx=grid.h, axis=0)
        else:
            out[r] += np.trapezoid(integrand, dx=grid.h, axis=0)
    return out
