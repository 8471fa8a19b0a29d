from .direct import (KronCholesky, NotSPDError, SparseCholesky, TimePencilEigen,
                     generalized_eig, read_matrix_market, sparse_cholesky,
                     write_matrix_market)
from .kron import BlockOperator, KronOperator, kron_apply
from .krylov import (ConditionEstimate, KrylovResult, cg, cg_tridiagonal,
                     lanczos_condition, minres)

__all__ = [
    "BlockOperator", "ConditionEstimate", "KronCholesky", "KronOperator",
    "KrylovResult", "NotSPDError", "SparseCholesky", "TimePencilEigen", "cg",
    "cg_tridiagonal", "generalized_eig", "kron_apply", "lanczos_condition",
    "minres", "read_matrix_market", "sparse_cholesky", "write_matrix_market",
]
