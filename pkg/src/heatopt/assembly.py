"""Galerkin matrices in time and space and their Kronecker compositions.

Space-time unknowns are ordered time-major: the basis function
``phi_i(t) * psi_j(x)`` has index ``i * N_x + j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .geometry import GeometryMap, eval_map, physical_laplacian
from .linalg.kron import KronOperator
from .splines import SplineSpace, basis_derivs, gauss_rule, uniform_space

__all__ = [
    "DofMap",
    "ObservationSpec",
    "SpaceTimeSpaces",
    "TimeMatrices",
    "SpaceMatrices",
    "SpaceTimeOperators",
    "SpatialAssembler",
    "build_spaces",
    "assemble_univariate",
    "assemble_spatial",
    "assemble_time_matrices",
    "assemble_space_matrices",
    "compose_operators",
    "ynorm_gram",
    "BENCHMARK_OBSERVATION",
]

SPATIAL_FORMS = ("mass", "grad", "laplace_pair", "laplace_cross")


@dataclass(frozen=True)
class DofMap:
    """Tensor-product index map from a reduced basis into the full one.

    ``keep[a]`` lists the retained indices of direction a (increasing).
    """

    dims: tuple
    keep: tuple

    @classmethod
    def full(cls, dims):
        return cls(tuple(dims), tuple(np.arange(n) for n in dims))

    @classmethod
    def dirichlet(cls, dims):
        """Drop the first and last basis function in every direction."""
        return cls(tuple(dims), tuple(np.arange(1, n - 1) for n in dims))

    @classmethod
    def initial(cls, n):
        """Drop the first basis function (the only one nonzero at t=0)."""
        return cls((n,), (np.arange(1, n),))

    @property
    def full_dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def dim(self) -> int:
        return int(np.prod([len(k) for k in self.keep]))

    @property
    def shape(self) -> tuple:
        return tuple(len(k) for k in self.keep)

    @cached_property
    def indices(self) -> np.ndarray:
        grids = np.meshgrid(*self.keep, indexing="ij")
        return np.ravel_multi_index(tuple(g.ravel() for g in grids), self.dims)

    def scatter(self, v):
        out = np.zeros(self.full_dim)
        out[self.indices] = v
        return out

    def gather(self, v):
        return np.asarray(v)[self.indices]

    def restrict(self, A, other: "DofMap" | None = None):
        """Rows restricted by this map, columns by `other` (default: self)."""
        other = self if other is None else other
        return sp.csr_matrix(A)[self.indices][:, other.indices]


@dataclass(frozen=True)
class ObservationSpec:
    """Union of closed time intervals; the spatial part is all of Omega."""

    intervals: tuple = ((0.0, 1.0),)

    def __post_init__(self):
        iv = sorted((float(a), float(b)) for a, b in self.intervals)
        for a, b in iv:
            if not a < b:
                raise ValueError("observation interval (%g, %g) is empty" % (a, b))
        for (a0, b0), (a1, b1) in zip(iv, iv[1:]):
            if a1 < b0:
                raise ValueError("observation intervals overlap")
        object.__setattr__(self, "intervals", tuple(iv))

    def check(self, T: float):
        for a, b in self.intervals:
            if a < 0 or b > T:
                raise ValueError("observation interval (%g, %g) outside [0, %g]" % (a, b, T))

    def is_full(self, T: float) -> bool:
        return self.intervals == ((0.0, float(T)),)


BENCHMARK_OBSERVATION = ObservationSpec(((0.0, 1 / 16), (4 / 16, 5 / 16),
                                         (12 / 16, 13 / 16), (15 / 16, 1.0)))


@dataclass(frozen=True)
class SpaceTimeSpaces:
    """Univariate factors of the state (Y) and control (U) spaces."""

    y_time: SplineSpace
    y_space: tuple
    u_time: SplineSpace
    u_space: tuple

    @cached_property
    def y_time_map(self) -> DofMap:
        return DofMap.initial(self.y_time.dim)

    @cached_property
    def y_space_map(self) -> DofMap:
        return DofMap.dirichlet([s.dim for s in self.y_space])

    @property
    def n_y(self) -> int:
        return self.y_time_map.dim * self.y_space_map.dim

    @property
    def n_u(self) -> int:
        return self.u_time.dim * int(np.prod([s.dim for s in self.u_space]))


def build_spaces(level: int, p: int, control_space: str = "standard", d: int = 2,
                 T: float = 1.0) -> SpaceTimeSpaces:
    """Uniform spaces with 2^level elements per direction.

    State: maximal smoothness S_{p,p-1} in time and space. Control:
    ``"standard"`` gives S_{p,p-2} in time and S_{p,p-3} in space (large enough
    to contain the heat operator applied to the state space); ``"smooth"``
    uses the state smoothness S_{p,p-1} without constraints.
    """
    if p < 2:
        raise ValueError("degree p must be >= 2")
    n = 2 ** level
    yt = uniform_space(p, p - 1, n, 0.0, T)
    ys = tuple(uniform_space(p, p - 1, n) for _ in range(d))
    if control_space == "standard":
        ut = uniform_space(p, p - 2, n, 0.0, T)
        us = tuple(uniform_space(p, p - 3, n) for _ in range(d))
    elif control_space == "smooth":
        ut = uniform_space(p, p - 1, n, 0.0, T)
        us = tuple(uniform_space(p, p - 1, n) for _ in range(d))
    else:
        raise ValueError("control_space must be 'standard' or 'smooth'")
    return SpaceTimeSpaces(yt, ys, ut, us)


def _merged_breakpoints(*spaces):
    lo, hi = spaces[0].interval
    for s in spaces[1:]:
        if s.interval != (lo, hi):
            raise ValueError("spaces live on different intervals")
    return np.unique(np.concatenate([s.breakpoints for s in spaces]))


def assemble_univariate(trial: SplineSpace, test: SplineSpace, a: int = 0, b: int = 0,
                        subdomain=None, n_pts: int | None = None) -> sp.csr_matrix:
    """[A]_ij = integral over `subdomain` of D^a trial_j * D^b test_i.

    `subdomain` is a list of intervals (None = whole interval); quadrature
    cells are split at the interval endpoints so the integral stays exact.
    """
    if not (0 <= a <= trial.degree and 0 <= b <= test.degree):
        raise ValueError("derivative order exceeds degree")
    lo, hi = trial.interval
    bp = _merged_breakpoints(trial, test)
    split = []
    if subdomain is not None:
        for s0, s1 in subdomain:
            if s0 < lo - 1e-14 or s1 > hi + 1e-14:
                raise ValueError("subdomain (%g, %g) outside [%g, %g]" % (s0, s1, lo, hi))
            split += [s0, s1]
    if n_pts is None:
        n_pts = max(trial.degree, test.degree) + 1
    q = gauss_rule(bp, n_pts, split)
    w = q.weights.copy()
    if subdomain is not None:
        mid = 0.5 * (q.cells[:-1] + q.cells[1:])
        inside = np.zeros(len(mid), dtype=bool)
        for s0, s1 in subdomain:
            inside |= (mid > s0) & (mid < s1)
        w[~inside] = 0.0
    x, w = q.points.ravel(), w.ravel()
    keep = w != 0
    x, w = x[keep], w[keep]
    if len(x) == 0:
        return sp.csr_matrix((test.dim, trial.dim))
    st, dt = basis_derivs(trial, x, a)
    ss, ds = basis_derivs(test, x, b)
    vt = dt[:, a, :] * w[:, None]
    vs = ds[:, b, :]
    rows = (ss[:, None] - test.degree + np.arange(test.degree + 1))[:, :, None]
    cols = (st[:, None] - trial.degree + np.arange(trial.degree + 1))[:, None, :]
    vals = vs[:, :, None] * vt[:, None, :]
    rows, cols = np.broadcast_arrays(rows, cols)
    A = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(test.dim, trial.dim))
    return A.tocsr()


class SpatialAssembler:
    """Element-loop assembly over the parameter domain of a geometry.

    All spaces passed to :meth:`assemble` must share the breakpoints used
    to build the quadrature (``grid_spaces``). Integrals carry the weight
    |det grad G| and use physical derivatives.
    """

    def __init__(self, geo: GeometryMap, grid_spaces, n_pts: int):
        self.geo = geo
        d = geo.dim
        if len(grid_spaces) != d:
            raise ValueError("need one space per spatial direction")
        self.rules = []
        for a in range(d):
            bp = np.unique(np.concatenate([grid_spaces[a].breakpoints,
                                           geo.spaces[a].breakpoints]))
            self.rules.append(gauss_rule(bp, n_pts))
        pts = [r.points for r in self.rules]
        wts = [r.weights for r in self.rules]
        P = [pts[0][:, :, None]]
        W = wts[0]
        for a in range(1, d):
            E0, Q0 = W.shape
            E1, Q1 = wts[a].shape
            W = (W[:, None, :, None] * wts[a][None, :, None, :]).reshape(E0 * E1, Q0 * Q1)
            newP = []
            for c in P:
                c = np.broadcast_to(c[:, None, :, None, :], (E0, E1, Q0, Q1, 1))
                newP.append(c.reshape(E0 * E1, Q0 * Q1, 1))
            c = np.broadcast_to(pts[a][None, :, None, :, None], (E0, E1, Q0, Q1, 1))
            newP.append(c.reshape(E0 * E1, Q0 * Q1, 1))
            P = newP
        self.points = np.concatenate(P, axis=2)             # (E, Q, d) parameter points
        E, Q = W.shape
        self.mapped = eval_map(geo, self.points.reshape(-1, d))
        self.weights = W * self.mapped.abs_det.reshape(E, Q)
        self.n_elements, self.n_quad = E, Q
        self._cache = {}

    def _tables(self, spaces, nder):
        """Element index arrays and tensor derivative tables for `spaces`."""
        key = (tuple(spaces), nder)
        if key in self._cache:
            return self._cache[key]
        d = len(spaces)
        uni = []
        for a, S in enumerate(spaces):
            r = self.rules[a]
            nc, nq = r.points.shape
            span, ders = basis_derivs(S, r.points.ravel(), min(nder, S.degree))
            tab = np.zeros((nc, nq, nder + 1, S.degree + 1))
            tab[:, :, :ders.shape[1]] = ders.reshape(nc, nq, -1, S.degree + 1)
            first = span.reshape(nc, nq)[:, 0] - S.degree
            gidx = first[:, None] + np.arange(S.degree + 1)[None, :]
            uni.append((tab, gidx))

        def combine(orders):
            t = uni[0][0][:, :, orders[0], :]
            for a in range(1, d):
                u = uni[a][0][:, :, orders[a], :]
                E0, Q0, L0 = t.shape
                E1, Q1, L1 = u.shape
                t = (t[:, None, :, None, :, None] * u[None, :, None, :, None, :]).reshape(
                    E0 * E1, Q0 * Q1, L0 * L1)
            return t

        gidx = uni[0][1]
        for a in range(1, d):
            E0, L0 = gidx.shape
            E1, L1 = uni[a][1].shape
            n_a = spaces[a].dim
            gidx = (gidx[:, None, :, None] * n_a + uni[a][1][None, :, None, :]).reshape(
                E0 * E1, L0 * L1)

        unit = lambda *ax: tuple(sum(1 for x in ax if x == a) for a in range(d))
        vals = combine((0,) * d)
        out = {"idx": gidx, "val": vals}
        if nder >= 1:
            out["grad_hat"] = np.stack([combine(unit(a)) for a in range(d)], axis=-1)
        if nder >= 2:
            E, Q, L = vals.shape
            H = np.empty((E, Q, L, d, d))
            for a in range(d):
                for b in range(a, d):
                    H[..., a, b] = H[..., b, a] = combine(unit(a, b))
            out["hess_hat"] = H
            E, Q, L = vals.shape
            _, grad, lap = physical_laplacian(
                self.mapped, vals.reshape(E * Q, L), out["grad_hat"].reshape(E * Q, L, d),
                H.reshape(E * Q, L, d, d))
            out["grad"] = grad.reshape(E, Q, L, d)
            out["lap"] = lap.reshape(E, Q, L)
        elif nder == 1:
            E, Q, L = vals.shape
            Jinv = self.mapped.jac_inv.reshape(E, Q, d, d)
            out["grad"] = np.einsum("eqam,eqla->eqlm", Jinv, out["grad_hat"])
        self._cache[key] = out
        return out

    def assemble(self, trial, test, form: str) -> sp.csr_matrix:
        """Matrix with rows = test functions, columns = trial functions.

        Forms: ``mass`` (u, v), ``grad`` (grad u, grad v), ``laplace_pair``
        (lap u, lap v) and ``laplace_cross`` (lap u, v).
        """
        if form not in SPATIAL_FORMS:
            raise ValueError("unknown form %r" % form)
        need_trial = {"mass": 0, "grad": 1, "laplace_pair": 2, "laplace_cross": 2}[form]
        need_test = {"mass": 0, "grad": 1, "laplace_pair": 2, "laplace_cross": 0}[form]
        tt = self._tables(tuple(trial), need_trial)
        ts = self._tables(tuple(test), need_test)
        w = self.weights
        if form == "mass" or form == "laplace_cross":
            fu = tt["val"] if form == "mass" else tt["lap"]
            loc = np.einsum("eqi,eq,eqj->eij", ts["val"], w, fu)
        elif form == "grad":
            loc = np.einsum("eqim,eq,eqjm->eij", ts["grad"], w, tt["grad"])
        else:
            loc = np.einsum("eqi,eq,eqj->eij", ts["lap"], w, tt["lap"])
        rows = np.broadcast_to(ts["idx"][:, :, None], loc.shape)
        cols = np.broadcast_to(tt["idx"][:, None, :], loc.shape)
        n_test = int(np.prod([s.dim for s in test]))
        n_trial = int(np.prod([s.dim for s in trial]))
        A = sp.coo_matrix((loc.ravel(), (rows.ravel(), cols.ravel())), shape=(n_test, n_trial))
        return A.tocsr()


def assemble_spatial(geo: GeometryMap, trial, test, form: str,
                     n_pts: int | None = None) -> sp.csr_matrix:
    if n_pts is None:
        n_pts = max(s.degree for s in tuple(trial) + tuple(test)) + 2
    return SpatialAssembler(geo, tuple(trial), n_pts).assemble(trial, test, form)


@dataclass(frozen=True)
class TimeMatrices:
    """Univariate time matrices on the *full* state time basis.

    M, K: state mass / derivative stiffness; W[i, j] = (phi_j', phi_i);
    Mq: mass restricted to the observation times; MU: control mass;
    D[i, j] = (phi_j', mu_i), G[i, j] = (phi_j, mu_i).
    """

    M: sp.csr_matrix
    K: sp.csr_matrix
    W: sp.csr_matrix
    Mq: sp.csr_matrix
    MU: sp.csr_matrix
    D: sp.csr_matrix
    G: sp.csr_matrix


@dataclass(frozen=True)
class SpaceMatrices:
    """Spatial matrices on the *full* state basis (boundary functions included).

    M, K, B: state mass, gradient stiffness, biharmonic (lap u, lap v);
    MU: control mass; G[i, j] = (psi_j, nu_i); A[i, j] = (lap psi_j, nu_i).
    """

    M: sp.csr_matrix
    K: sp.csr_matrix
    B: sp.csr_matrix
    MU: sp.csr_matrix
    G: sp.csr_matrix
    A: sp.csr_matrix


def assemble_time_matrices(spaces: SpaceTimeSpaces,
                           observation: ObservationSpec | None = None) -> TimeMatrices:
    yt, ut = spaces.y_time, spaces.u_time
    T = yt.interval[1]
    obs = ObservationSpec(((0.0, T),)) if observation is None else observation
    obs.check(T)
    M = assemble_univariate(yt, yt, 0, 0)
    if obs.is_full(T):
        Mq = M.copy()
    else:
        Mq = assemble_univariate(yt, yt, 0, 0, subdomain=list(obs.intervals))
    return TimeMatrices(
        M=M,
        K=assemble_univariate(yt, yt, 1, 1),
        W=assemble_univariate(yt, yt, 1, 0),
        Mq=Mq,
        MU=assemble_univariate(ut, ut, 0, 0),
        D=assemble_univariate(yt, ut, 1, 0),
        G=assemble_univariate(yt, ut, 0, 0),
    )


def assemble_space_matrices(geo: GeometryMap, spaces: SpaceTimeSpaces,
                            n_pts: int | None = None) -> SpaceMatrices:
    ys, us = spaces.y_space, spaces.u_space
    if n_pts is None:
        n_pts = max(s.degree for s in ys + us) + 2
    asm = SpatialAssembler(geo, ys, n_pts)
    return SpaceMatrices(
        M=asm.assemble(ys, ys, "mass"),
        K=asm.assemble(ys, ys, "grad"),
        B=asm.assemble(ys, ys, "laplace_pair"),
        MU=asm.assemble(us, us, "mass"),
        G=asm.assemble(ys, us, "mass"),
        A=asm.assemble(ys, us, "laplace_cross"),
    )


@dataclass(frozen=True)
class SpaceTimeOperators:
    """Space-time operators on the reduced state space and the control space."""

    L: KronOperator
    M: KronOperator
    Mq: KronOperator
    B: KronOperator
    C: KronOperator
    P: KronOperator


def _reduced_factors(tm: TimeMatrices, sm: SpaceMatrices, ymap_t: DofMap, ymap_x: DofMap):
    it, ix = ymap_t.indices, ymap_x.indices
    r = lambda A, i, j: sp.csr_matrix(A)[i][:, j]
    allt = np.arange(tm.MU.shape[0])
    allx = np.arange(sm.MU.shape[0])
    return dict(
        Mt=r(tm.M, it, it), Kt=r(tm.K, it, it), Wt=r(tm.W, it, it), Mqt=r(tm.Mq, it, it),
        MUt=tm.MU, Dt=r(tm.D, allt, it), Gt=r(tm.G, allt, it),
        Mx=r(sm.M, ix, ix), Kx=r(sm.K, ix, ix), Bx=r(sm.B, ix, ix), MUx=sm.MU,
        Gx=r(sm.G, allx, ix), Ax=r(sm.A, allx, ix),
    )


def compose_operators(tm: TimeMatrices, sm: SpaceMatrices, kappa: float, alpha: float,
                      ymap_t: DofMap, ymap_x: DofMap) -> SpaceTimeOperators:
    """Kronecker forms of L_h, M_h, M_{q,h}, B_h, C_h and P_h."""
    f = _reduced_factors(tm, sm, ymap_t, ymap_x)
    if f["Dt"].shape[0] != f["MUt"].shape[0] or f["Gx"].shape[0] != f["MUx"].shape[0]:
        raise ValueError("dimension mismatch between time and space factors")
    L = KronOperator([(1.0, f["Dt"], f["Gx"]), (-kappa, f["Gt"], f["Ax"])])
    M = KronOperator([(1.0, f["MUt"], f["MUx"])])
    Mq = KronOperator([(1.0, f["Mqt"], f["Mx"])])
    B = KronOperator([(1.0, f["Mt"], f["Bx"])])
    C = KronOperator([(1.0, f["Kt"], f["Mx"])])
    P = KronOperator([(1.0, (f["Mqt"] + alpha * f["Kt"]).tocsr(), f["Mx"]),
                      (alpha * kappa ** 2, f["Mt"], f["Bx"])])
    return SpaceTimeOperators(L, M, Mq, B, C, P)


def ynorm_gram(tm: TimeMatrices, sm: SpaceMatrices, kappa: float,
               ymap_t: DofMap, ymap_x: DofMap) -> KronOperator:
    """Gram matrix of ||d_t y - kappa lap y||^2 on the state space.

    Equals C_h + kappa^2 B_h + kappa (W_t + W_t^T) ⊗ K_x; integration by
    parts in space needs the homogeneous Dirichlet condition, so `ymap_x`
    must drop the boundary functions. Pass ``DofMap.full`` as `ymap_t` to
    keep the initial-time function (used for the lift).
    """
    f = _reduced_factors(tm, sm, ymap_t, ymap_x)
    terms = [(1.0, f["Kt"], f["Mx"]), (kappa ** 2, f["Mt"], f["Bx"])]
    if kappa != 0:
        terms.append((kappa, (f["Wt"] + f["Wt"].T).tocsr(), f["Kx"]))
    return KronOperator(terms)
