"""Lazy Kronecker-sum and block operators."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

__all__ = ["KronOperator", "BlockOperator", "kron_apply"]


def kron_apply(A, B, v):
    """(A ⊗ B) v without forming the Kronecker product.

    `v` may carry trailing columns; the time index is the slow one.
    """
    v = np.asarray(v)
    nt, nx = A.shape[1], B.shape[1]
    V = v.reshape(nt, nx)
    W = (B @ V.T).T
    return np.asarray(A @ W).reshape(-1)


class KronOperator(LinearOperator):
    """Sum of scaled Kronecker products ``sum_k c_k (A_k ⊗ B_k)``.

    The first factor acts on the slow (time) index. Factors may be sparse or
    dense; the product is never formed.
    """

    def __init__(self, terms):
        terms = [(float(c), A, B) for c, A, B in terms]
        if not terms:
            raise ValueError("KronOperator needs at least one term")
        shape = (terms[0][1].shape[0] * terms[0][2].shape[0],
                 terms[0][1].shape[1] * terms[0][2].shape[1])
        for _, A, B in terms:
            s = (A.shape[0] * B.shape[0], A.shape[1] * B.shape[1])
            if s != shape or A.shape != terms[0][1].shape:
                raise ValueError("inconsistent Kronecker factor shapes")
        self.terms = terms
        super().__init__(np.float64, shape)

    def __repr__(self):
        return "<KronOperator %dx%d with %d terms>" % (self.shape + (len(self.terms),))

    @property
    def factor_shapes(self):
        _, A, B = self.terms[0]
        return A.shape, B.shape

    def _matvec(self, v):
        v = np.ravel(v)
        out = np.zeros(self.shape[0])
        for c, A, B in self.terms:
            out += c * kron_apply(A, B, v)
        return out

    def _matmat(self, X):
        return np.column_stack([self._matvec(x) for x in np.asarray(X).T])

    def _rmatvec(self, v):
        return self.transpose_op()._matvec(v)

    def _adjoint(self):
        return self.transpose_op()

    def transpose_op(self) -> "KronOperator":
        return KronOperator([(c, A.T, B.T) for c, A, B in self.terms])

    def __add__(self, other):
        if isinstance(other, KronOperator):
            return KronOperator(self.terms + other.terms)
        return super().__add__(other)

    def scaled(self, s: float) -> "KronOperator":
        return KronOperator([(s * c, A, B) for c, A, B in self.terms])

    def to_sparse(self) -> sp.csr_matrix:
        """Materialize (for oracles and small problems only)."""
        out = None
        for c, A, B in self.terms:
            K = c * sp.kron(sp.csr_matrix(A), sp.csr_matrix(B), format="csr")
            out = K if out is None else out + K
        return out.tocsr()

    def restrict(self, rows_t=None, cols_t=None, rows_x=None, cols_x=None) -> "KronOperator":
        """Select rows/columns of the factors (tensor-product index sets)."""
        def sel(M, r, c):
            M = sp.csr_matrix(M)
            if r is not None:
                M = M[r]
            if c is not None:
                M = M[:, c]
            return M
        return KronOperator([(c, sel(A, rows_t, cols_t), sel(B, rows_x, cols_x))
                             for c, A, B in self.terms])


class BlockOperator(LinearOperator):
    """Block operator from a grid of sub-operators (``None`` = zero block).

    A block may be given as ``(op, "T")`` to use the transpose of `op`.
    """

    def __init__(self, blocks, row_sizes=None, col_sizes=None):
        nr, nc = len(blocks), len(blocks[0])
        self.blocks = []
        rs = list(row_sizes) if row_sizes is not None else [None] * nr
        cs = list(col_sizes) if col_sizes is not None else [None] * nc
        for i in range(nr):
            row = []
            for j in range(nc):
                b = blocks[i][j]
                if isinstance(b, tuple):
                    op, flag = b
                    if flag != "T":
                        raise ValueError("unknown block flag %r" % flag)
                    b = op.T
                if b is not None:
                    for sizes, k, n in ((rs, i, b.shape[0]), (cs, j, b.shape[1])):
                        if sizes[k] is None:
                            sizes[k] = n
                        elif sizes[k] != n:
                            raise ValueError("block (%d,%d) has inconsistent shape" % (i, j))
                row.append(b)
            self.blocks.append(row)
        if None in rs or None in cs:
            raise ValueError("block sizes undetermined; pass row_sizes/col_sizes")
        self.row_sizes, self.col_sizes = rs, cs
        self.row_offsets = np.concatenate([[0], np.cumsum(rs)])
        self.col_offsets = np.concatenate([[0], np.cumsum(cs)])
        super().__init__(np.float64, (int(sum(rs)), int(sum(cs))))

    def split(self, v, axis="col"):
        off = self.col_offsets if axis == "col" else self.row_offsets
        return [v[off[i]:off[i + 1]] for i in range(len(off) - 1)]

    def _matvec(self, v):
        v = np.ravel(v)
        parts = self.split(v)
        out = np.zeros(self.shape[0])
        for i, row in enumerate(self.blocks):
            o = out[self.row_offsets[i]:self.row_offsets[i + 1]]
            for j, b in enumerate(row):
                if b is not None:
                    o += b @ parts[j]
        return out

    def _matmat(self, X):
        return np.column_stack([self._matvec(x) for x in np.asarray(X).T])

    def _rmatvec(self, v):
        v = np.ravel(v)
        parts = self.split(v, "row")
        out = np.zeros(self.shape[1])
        for i, row in enumerate(self.blocks):
            for j, b in enumerate(row):
                if b is not None:
                    out[self.col_offsets[j]:self.col_offsets[j + 1]] += b.T @ parts[i]
        return out

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for i, row in enumerate(self.blocks):
            for j, b in enumerate(row):
                if b is None:
                    continue
                if isinstance(b, KronOperator):
                    blk = b.to_sparse().toarray()
                elif sp.issparse(b):
                    blk = b.toarray()
                elif isinstance(b, np.ndarray):
                    blk = b
                else:
                    blk = b @ np.eye(b.shape[1])
                out[self.row_offsets[i]:self.row_offsets[i + 1],
                    self.col_offsets[j]:self.col_offsets[j + 1]] = blk
        return out
