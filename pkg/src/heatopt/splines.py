"""Univariate B-spline spaces on open knot vectors.

Basis functions are evaluated with the Cox-de Boor recursion (derivative
variant of Piegl & Tiller, A2.3), vectorized over evaluation points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SplineSpace",
    "QuadRule",
    "make_space",
    "uniform_space",
    "uniform_refine",
    "knot_insertion_matrix",
    "gauss_rule",
    "basis_derivs",
]

MAX_DEGREE = 8


@dataclass(frozen=True, eq=False)
class SplineSpace:
    """B-spline space S_{p,k}(Z) on an open knot vector.

    Attributes:
        degree (int): polynomial degree p
        knots (ndarray): open knot vector; end knots repeated p+1 times
        smoothness (int): continuity k across inner breakpoints, -1 <= k < p
    """

    degree: int
    knots: np.ndarray
    smoothness: int

    def __post_init__(self):
        self.knots.setflags(write=False)

    def __repr__(self):
        return "SplineSpace(p=%d, k=%d, n_elements=%d, dim=%d)" % (
            self.degree, self.smoothness, self.n_elements, self.dim)

    @property
    def dim(self) -> int:
        return len(self.knots) - self.degree - 1

    @cached_property
    def breakpoints(self) -> np.ndarray:
        return np.unique(self.knots)

    @property
    def n_elements(self) -> int:
        return len(self.breakpoints) - 1

    @property
    def interval(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def mesh_size(self) -> float:
        return float(np.max(np.diff(self.breakpoints)))

    def find_span(self, x):
        """Knot span index `s` with knots[s] <= x < knots[s+1] (last span closed)."""
        x = np.asarray(x, dtype=float)
        a, b = self.interval
        if np.any(x < a - 1e-14) or np.any(x > b + 1e-14):
            raise ValueError("evaluation point outside [%g, %g]" % (a, b))
        s = np.searchsorted(self.knots, x, side="right") - 1
        return np.clip(s, self.degree, self.dim - 1)

    def eval_basis(self, x: float, r: int = 0):
        """Return ``(first, values)``: the r-th derivatives of the p+1
        possibly nonzero basis functions at `x`, starting at index `first`."""
        if not 0 <= r <= self.degree:
            raise ValueError("derivative order must be in [0, p]")
        span, ders = basis_derivs(self, np.array([x], dtype=float), r)
        return int(span[0]) - self.degree, ders[0, r]

    def collocation(self, x, r: int = 0) -> sp.csr_matrix:
        """Sparse matrix of r-th derivatives, rows = points, cols = basis functions."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        span, ders = basis_derivs(self, x, r)
        p = self.degree
        rows = np.repeat(np.arange(len(x)), p + 1)
        cols = (span[:, None] - p + np.arange(p + 1)).ravel()
        return sp.csr_matrix((ders[:, r, :].ravel(), (rows, cols)), shape=(len(x), self.dim))

    def evaluate(self, coefs, x, r: int = 0) -> np.ndarray:
        """Evaluate the spline with coefficient vector `coefs` (or its r-th derivative)."""
        return self.collocation(x, r) @ np.asarray(coefs)

    def refine(self) -> "SplineSpace":
        return uniform_refine(self)


@dataclass(frozen=True)
class QuadRule:
    """Gauss rule on a partition of an interval.

    ``points``/``weights`` have shape (n_cells, n_pts); ``cells`` holds the
    cell endpoints (n_cells + 1,).
    """

    cells: np.ndarray
    points: np.ndarray
    weights: np.ndarray = field(repr=False)

    @property
    def n_cells(self) -> int:
        return len(self.cells) - 1


def _open_knots(p: int, k: int, Z: np.ndarray) -> np.ndarray:
    inner = np.repeat(Z[1:-1], p - k)
    return np.concatenate([np.full(p + 1, Z[0]), inner, np.full(p + 1, Z[-1])])


def make_space(p: int, k: int, Z) -> SplineSpace:
    """Spline space of degree `p`, C^k smooth across the breakpoints `Z`."""
    Z = np.asarray(Z, dtype=float)
    if not (1 <= p <= MAX_DEGREE):
        raise ValueError("degree must be in [1, %d], got %d" % (MAX_DEGREE, p))
    if not -1 <= k < p:
        raise ValueError("smoothness must satisfy -1 <= k < p, got p=%d, k=%d" % (p, k))
    if Z.ndim != 1 or len(Z) < 2:
        raise ValueError("need at least two breakpoints")
    if np.any(np.diff(Z) <= 0):
        raise ValueError("breakpoints must be strictly increasing")
    return SplineSpace(p, _open_knots(p, k, Z), k)


def uniform_space(p: int, k: int, n_elements: int, a: float = 0.0, b: float = 1.0) -> SplineSpace:
    return make_space(p, k, np.linspace(a, b, n_elements + 1))


def uniform_refine(space: SplineSpace) -> SplineSpace:
    """Halve every knot span, keeping degree and smoothness."""
    Z = space.breakpoints
    mid = 0.5 * (Z[:-1] + Z[1:])
    Zf = np.empty(2 * len(Z) - 1)
    Zf[0::2] = Z
    Zf[1::2] = mid
    return make_space(space.degree, space.smoothness, Zf)


def basis_derivs(space: SplineSpace, x, nder: int):
    """Nonzero basis functions and derivatives up to order `nder`.

    Returns:
        span (ndarray[int]): knot span per point, shape (n,)
        ders (ndarray): shape (n, nder+1, p+1); ``ders[i, r, j]`` is the r-th
            derivative of basis function ``span[i] - p + j`` at ``x[i]``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = space.degree
    U = space.knots
    span = space.find_span(x)
    n = len(x)

    ndu = np.zeros((p + 1, p + 1, n))
    ndu[0, 0] = 1.0
    left = np.zeros((p + 1, n))
    right = np.zeros((p + 1, n))
    for j in range(1, p + 1):
        left[j] = x - U[span + 1 - j]
        right[j] = U[span + j] - x
        saved = np.zeros(n)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((n, nder + 1, p + 1))
    ders[:, 0, :] = ndu[:, p, :].T
    a = np.zeros((2, p + 1, n))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, min(nder, p) + 1):
            d = np.zeros(n)
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d = d + a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d = d + a[s2, k] * ndu[r, pk]
            ders[:, k, r] = d
            s1, s2 = s2, s1
    fac = p
    for k in range(1, min(nder, p) + 1):
        ders[:, k, :] *= fac
        fac *= p - k
    return span, ders


def gauss_rule(breakpoints, n_pts: int, split=()) -> QuadRule:
    """Per-cell Gauss-Legendre rule with `n_pts` points.

    Cells are the spans between `breakpoints`, additionally split at any
    point of `split` lying strictly inside the interval.
    """
    bp = np.asarray(breakpoints, dtype=float)
    extra = [s for s in split if bp[0] < s < bp[-1]]
    cells = np.unique(np.concatenate([bp, np.asarray(extra, dtype=float)]))
    xi, wi = np.polynomial.legendre.leggauss(n_pts)
    lo, hi = cells[:-1, None], cells[1:, None]
    pts = 0.5 * (lo + hi) + 0.5 * (hi - lo) * xi[None, :]
    wts = 0.5 * (hi - lo) * wi[None, :]
    return QuadRule(cells, pts, wts)


def _insert_knot(knots: np.ndarray, p: int, xi: float):
    """Boehm insertion of one knot; returns (new knots, matrix new <- old)."""
    n = len(knots) - p - 1
    s = int(np.searchsorted(knots, xi, side="right") - 1)
    rows, cols, vals = [], [], []
    for i in range(n + 1):
        if i <= s - p:
            rows.append(i); cols.append(i); vals.append(1.0)
        elif i > s:
            rows.append(i); cols.append(i - 1); vals.append(1.0)
        else:
            al = (xi - knots[i]) / (knots[i + p] - knots[i])
            rows += [i, i]; cols += [i, i - 1]; vals += [al, 1.0 - al]
    T = sp.csr_matrix((vals, (rows, cols)), shape=(n + 1, n))
    return np.insert(knots, s + 1, xi), T


def knot_insertion_matrix(coarse: SplineSpace, fine: SplineSpace) -> sp.csr_matrix:
    """Matrix T with fine coefficients = T @ coarse coefficients."""
    p = coarse.degree
    if fine.degree != p or coarse.interval != fine.interval:
        raise ValueError("spaces are not nested: degree or interval differ")
    cv, cc = np.unique(coarse.knots, return_counts=True)
    fv, fc = np.unique(fine.knots, return_counts=True)
    fine_mult = dict(zip(fv.tolist(), fc.tolist()))
    new = []
    for v, c in zip(cv.tolist(), cc.tolist()):
        if fine_mult.get(v, 0) < c:
            raise ValueError("spaces are not nested: knot %g lost in fine space" % v)
    coarse_mult = dict(zip(cv.tolist(), cc.tolist()))
    for v, c in zip(fv.tolist(), fc.tolist()):
        new += [v] * (c - coarse_mult.get(v, 0))
    knots = coarse.knots.copy()
    T = sp.identity(coarse.dim, format="csr")
    for xi in new:
        knots, Ti = _insert_knot(knots, p, xi)
        T = Ti @ T
    T = T.tocsr()
    T.eliminate_zeros()
    return T
