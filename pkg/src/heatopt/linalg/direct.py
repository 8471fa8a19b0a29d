"""Direct factorizations: sparse Cholesky and the dense time-pencil eigensolve."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg.lapack import dpbtrf, dpbtrs
from scipy.sparse.csgraph import reverse_cuthill_mckee

__all__ = [
    "NotSPDError",
    "SparseCholesky",
    "sparse_cholesky",
    "TimePencilEigen",
    "generalized_eig",
    "KronCholesky",
    "write_matrix_market",
    "read_matrix_market",
]


class NotSPDError(np.linalg.LinAlgError):
    """Raised on a non-positive pivot; `pivot` is the 0-based original row index."""

    def __init__(self, msg, pivot=None):
        super().__init__(msg)
        self.pivot = pivot


class SparseCholesky:
    """Cholesky factorization P A P^T = R^T R in banded storage.

    The permutation P is reverse Cuthill-McKee, which keeps the band (and
    the fill inside it) small for the tensor-product spline matrices.
    """

    ordering = "reverse_cuthill_mckee"

    def __init__(self, A):
        A = sp.csr_matrix(A, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("matrix must be square")
        self.n = n
        perm = reverse_cuthill_mckee(A, symmetric_mode=True) if n > 1 else np.arange(n)
        self.perm = np.asarray(perm, dtype=np.int64)
        Ap = A[self.perm][:, self.perm].tocoo()
        upper = Ap.col >= Ap.row
        r, c, v = Ap.row[upper], Ap.col[upper], Ap.data[upper]
        bw = int(np.max(c - r)) if len(r) else 0
        ab = np.zeros((bw + 1, n))
        # LAPACK upper band storage: ab[bw + i - j, j] = A[i, j]
        np.add.at(ab, (bw + r - c, c), v)
        self.bandwidth = bw
        cb, info = dpbtrf(ab, lower=0)
        if info > 0:
            piv = int(self.perm[info - 1])
            raise NotSPDError("matrix not SPD: non-positive pivot at index %d" % piv, piv)
        if info < 0:
            raise ValueError("illegal argument to dpbtrf (%d)" % info)
        self._cb = cb

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        bp = b[self.perm]
        x, info = dpbtrs(self._cb, bp, lower=0)
        if info != 0:
            raise ValueError("dpbtrs failed (%d)" % info)
        out = np.empty_like(x)
        out[self.perm] = x
        return out

    __call__ = solve


def sparse_cholesky(A) -> SparseCholesky:
    return SparseCholesky(A)


@dataclass(frozen=True)
class TimePencilEigen:
    """U^T M U = I and U^T A U = diag(d), eigenvalues ascending."""

    U: np.ndarray
    d: np.ndarray


def generalized_eig(A, M) -> TimePencilEigen:
    """Eigendecomposition of the symmetric-definite pencil (A, M).

    Reduces with the Cholesky factor M = R^T R to the standard symmetric
    problem R^{-T} A R^{-1} and back-transforms the eigenvectors.
    """
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    M = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
    try:
        R = sla.cholesky(M, lower=False)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError("mass matrix of the pencil is not SPD") from exc
    Rinv_A = sla.solve_triangular(R, A, trans="T", lower=False)
    C = sla.solve_triangular(R, Rinv_A.T, trans="T", lower=False).T
    C = 0.5 * (C + C.T)
    d, V = np.linalg.eigh(C)
    U = sla.solve_triangular(R, V, lower=False)
    return TimePencilEigen(U, d)


class KronCholesky:
    """Exact inverse of A ⊗ B from Cholesky factors of both factors."""

    def __init__(self, A, B):
        self.shape = (A.shape[0] * B.shape[0],) * 2
        self.nt, self.nx = A.shape[0], B.shape[0]
        self.fa = SparseCholesky(A)
        self.fb = SparseCholesky(B)

    def solve(self, v):
        V = np.asarray(v, dtype=float).reshape(self.nt, self.nx)
        W = self.fb.solve(V.T).T
        return self.fa.solve(W).reshape(-1)

    __call__ = solve


def write_matrix_market(path, A, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment)


def read_matrix_market(path) -> sp.csr_matrix:
    return sp.csr_matrix(scipy.io.mmread(str(path)))
