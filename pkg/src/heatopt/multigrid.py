"""Geometric multigrid for the spatial problems d*M_x + c*B_x.

The hierarchy is built from nested spline spaces: prolongation is the
knot-insertion matrix restricted to the Dirichlet-reduced basis, coarse
matrices are Galerkin products T^T A T.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, spsolve_triangular

from .linalg.direct import SparseCholesky
from .splines import knot_insertion_matrix, uniform_space

__all__ = ["MultigridHierarchy", "SpatialMultigrid", "build_hierarchy"]


class MultigridHierarchy:
    """Prolongations and Galerkin mass/biharmonic matrices per level.

    ``prolongations[l]`` maps level l to level l+1; level 0 is the coarsest.
    """

    def __init__(self, prolongations, M_fine, B_fine):
        self.prolongations = [sp.csr_matrix(T) for T in prolongations]
        Ms, Bs = [sp.csr_matrix(M_fine)], [sp.csr_matrix(B_fine)]
        for T in reversed(self.prolongations):
            if T.shape[0] != Ms[0].shape[0]:
                raise ValueError("hierarchy/dimension mismatch")
            Ms.insert(0, (T.T @ Ms[0] @ T).tocsr())
            Bs.insert(0, (T.T @ Bs[0] @ T).tocsr())
        self.M, self.B = Ms, Bs

    @property
    def n_levels(self) -> int:
        return len(self.M)

    def solver(self, d: float, c: float, pre: int = 2, post: int = 2, cycle: int = 2):
        return SpatialMultigrid(self, d, c, pre, post, cycle)


def build_hierarchy(level: int, p: int, M_fine, B_fine, d: int = 2,
                    coarsest: int = 0) -> MultigridHierarchy:
    """Hierarchy for S_{p,p-1} spaces on uniform grids, levels coarsest..level."""
    Ts = []
    for l in range(coarsest, level):
        c = uniform_space(p, p - 1, 2 ** l)
        f = uniform_space(p, p - 1, 2 ** (l + 1))
        T1 = knot_insertion_matrix(c, f)[1:-1, 1:-1]
        T = T1
        for _ in range(d - 1):
            T = sp.kron(T, T1, format="csr")
        Ts.append(T)
    return MultigridHierarchy(Ts, M_fine, B_fine)


class SpatialMultigrid(LinearOperator):
    """One multigrid cycle (zero initial guess) for (d M + c B) x = b.

    Gauss-Seidel smoothing in lexicographic order: forward sweeps before,
    backward sweeps after the coarse correction, so the cycle is a
    symmetric operator. ``cycle=2`` gives a W-cycle, 1 a V-cycle.
    """

    def __init__(self, hierarchy: MultigridHierarchy, d: float, c: float,
                 pre: int = 2, post: int = 2, cycle: int = 2):
        self.h = hierarchy
        self.pre, self.post, self.gamma = pre, post, cycle
        self.A = [(d * M + c * B).tocsr() for M, B in zip(hierarchy.M, hierarchy.B)]
        self.lower = [sp.tril(A, format="csr") for A in self.A]
        self.upper = [sp.triu(A, format="csr") for A in self.A]
        self.coarse = SparseCholesky(self.A[0])
        n = self.A[-1].shape[0]
        super().__init__(np.float64, (n, n))

    def _smooth(self, l, b, x, forward):
        A = self.A[l]
        T = self.lower[l] if forward else self.upper[l]
        return x + spsolve_triangular(T, b - A @ x, lower=forward)

    def _cycle(self, l, b):
        if l == 0:
            return self.coarse.solve(b)
        x = np.zeros_like(b)
        for _ in range(self.pre):
            x = self._smooth(l, b, x, True)
        T = self.h.prolongations[l - 1]
        rc = T.T @ (b - self.A[l] @ x)
        e = np.zeros(T.shape[1])
        for _ in range(self.gamma):
            e = e + self._cycle(l - 1, rc - self.A[l - 1] @ e)
        x = x + T @ e
        for _ in range(self.post):
            x = self._smooth(l, b, x, False)
        return x

    def _matvec(self, b):
        return self._cycle(len(self.A) - 1, np.ravel(b).astype(float))

    def solve(self, b):
        return self._matvec(b)
