"""Preconditioned Krylov methods for symmetric problems.

Operators and preconditioners are anything supporting ``@`` on vectors
(scipy LinearOperators, sparse or dense matrices). Preconditioners are
given by the action of their *inverse*.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

__all__ = ["KrylovResult", "minres", "cg", "lanczos_condition", "ConditionEstimate",
           "cg_tridiagonal"]

_EPS = np.finfo(float).eps


def _as_apply(op):
    if op is None:
        return lambda v: v.copy()
    if callable(op) and not hasattr(op, "shape"):
        return op
    return lambda v: np.asarray(op @ v).ravel()


@dataclass
class KrylovResult:
    """Solution and convergence history of a Krylov run.

    ``residuals`` holds the preconditioned residual norms ``sqrt(r^T B^{-1} r)``,
    starting with the initial one.
    """

    x: np.ndarray
    iterations: int
    residuals: list = field(default_factory=list)
    converged: bool = False
    breakdown: bool = False
    alphas: list = field(default_factory=list, repr=False)
    betas: list = field(default_factory=list, repr=False)

    @property
    def reduction(self) -> float:
        if not self.residuals or self.residuals[0] == 0:
            return 0.0
        return self.residuals[-1] / self.residuals[0]


def minres(A, b, M=None, tol: float = 1e-6, maxit: int = 1000, callback=None) -> KrylovResult:
    """Preconditioned MINRES for symmetric (indefinite) `A` and SPD `M`.

    `M` applies the inverse of the preconditioner. Stops once the
    preconditioned residual norm has dropped by the factor `tol`, starting
    from the zero vector.
    """
    Aop, Minv = _as_apply(A), _as_apply(M)
    b = np.asarray(b, dtype=float).ravel()
    n = b.size
    x = np.zeros(n)
    r1 = b.copy()
    y = Minv(r1)
    beta1 = float(r1 @ y)
    if beta1 < 0:
        raise ValueError("preconditioner is not positive definite")
    beta1 = np.sqrt(beta1)
    res = KrylovResult(x, 0, [beta1])
    if beta1 == 0:
        res.converged = True
        return res

    oldb, beta, dbar, epsln = 0.0, beta1, 0.0, 0.0
    phibar, cs, sn = beta1, -1.0, 0.0
    w, w2 = np.zeros(n), np.zeros(n)
    r2 = r1
    for itn in range(1, maxit + 1):
        v = y / beta
        y = Aop(v)
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = Minv(r2)
        oldb = beta
        bb = float(r2 @ y)
        if bb < 0:
            raise ValueError("preconditioner is not positive definite")
        beta = np.sqrt(bb)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(np.hypot(gbar, beta), _EPS)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        res.residuals.append(phibar)
        res.iterations = itn
        if callback is not None:
            callback(x)
        if phibar <= tol * beta1:
            res.converged = True
            break
        if beta <= _EPS * beta1:
            res.breakdown = True
            break
    res.x = x
    return res


def cg(A, b, M=None, tol: float = 1e-8, maxit: int = 1000, min_iter: int = 0) -> KrylovResult:
    """Preconditioned conjugate gradients; records the step coefficients
    (``alphas``/``betas``) that define the Lanczos tridiagonal."""
    Aop, Minv = _as_apply(A), _as_apply(M)
    b = np.asarray(b, dtype=float).ravel()
    x = np.zeros_like(b)
    r = b.copy()
    z = Minv(r)
    rz = float(r @ z)
    res = KrylovResult(x, 0, [np.sqrt(max(rz, 0.0))])
    if rz == 0:
        res.converged = True
        return res
    r0 = res.residuals[0]
    p = z.copy()
    for itn in range(1, maxit + 1):
        q = Aop(p)
        pq = float(p @ q)
        if pq <= 0:
            res.breakdown = True
            break
        a = rz / pq
        x = x + a * p
        r = r - a * q
        z = Minv(r)
        rz_new = float(r @ z)
        bta = rz_new / rz
        res.alphas.append(a)
        res.betas.append(bta)
        res.iterations = itn
        res.residuals.append(np.sqrt(max(rz_new, 0.0)))
        if res.residuals[-1] <= tol * r0 and itn >= min_iter:
            res.converged = True
            break
        rz = rz_new
        p = z + bta * p
    res.x = x
    return res


def cg_tridiagonal(result: KrylovResult):
    """Diagonal and off-diagonal of the Lanczos matrix implied by a CG run."""
    a = np.asarray(result.alphas)
    b = np.asarray(result.betas)
    k = len(a)
    diag = 1.0 / a
    diag[1:] += b[:k - 1] / a[:k - 1]
    off = np.sqrt(b[:k - 1]) / a[:k - 1]
    return diag, off


@dataclass
class ConditionEstimate:
    lam_min: float
    lam_max: float
    iterations: int
    ritz_values: np.ndarray = field(repr=False, default=None)

    @property
    def cond(self) -> float:
        return self.lam_max / self.lam_min


def lanczos_condition(A, Minv, n_iters: int = 60, rng=None, start=None,
                      tol: float = 1e-13) -> ConditionEstimate:
    """Extreme eigenvalues of the pencil (A, B) for SPD A and B.

    `Minv` applies B^{-1}. Runs Lanczos in the B inner product with full
    reorthogonalization; Ritz values of the tridiagonal bound the spectrum
    from inside, so the ratio is a lower bound on the condition number.
    """
    Aop, Binv = _as_apply(A), _as_apply(Minv)
    n = A.shape[0]
    if start is None:
        rng = np.random.default_rng(0 if rng is None else rng)
        start = rng.standard_normal(n)
    w = np.asarray(start, dtype=float).copy()     # w = B q, residual space
    q = Binv(w)
    beta = np.sqrt(max(float(w @ q), 0.0))
    if beta == 0:
        raise ValueError("Lanczos start vector has zero norm")
    Q, Z = [], []
    alphas, betas = [], []
    q, w = q / beta, w / beta
    for _ in range(min(n_iters, n)):
        Q.append(q)
        Z.append(w)
        s = Aop(q)
        alpha = float(q @ s)
        alphas.append(alpha)
        s = s - alpha * w
        if len(Z) > 1:
            s = s - betas[-1] * Z[-2]
        for _ in range(2):
            for qj, zj in zip(Q, Z):
                s = s - float(qj @ s) * zj
        r = Binv(s)
        bb = float(s @ r)
        if bb <= (tol * abs(alpha)) ** 2:
            break
        beta = np.sqrt(bb)
        betas.append(beta)
        q, w = r / beta, s / beta
    # early exit means an invariant subspace: the Ritz values are then exact
    k = len(alphas)
    theta = eigh_tridiagonal(np.array(alphas), np.array(betas[:k - 1]), eigvals_only=True)
    return ConditionEstimate(float(theta[0]), float(theta[-1]), k, theta)
