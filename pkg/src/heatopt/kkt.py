"""Discrete optimality system of the heat-equation tracking problem.

Minimize 1/2 ||y - y_d||^2 on the observation set + alpha/2 ||u||^2 subject
to d_t y - kappa lap y + u = f (f = 0 here), zero Dirichlet data and an
inhomogeneous initial state that is carried by an explicit lift.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .assembly import (BENCHMARK_OBSERVATION, DofMap, ObservationSpec, SpaceMatrices,
                       SpaceTimeOperators, SpaceTimeSpaces, SpatialAssembler, TimeMatrices,
                       assemble_space_matrices, assemble_time_matrices, build_spaces,
                       compose_operators, ynorm_gram)
from .geometry import GeometryMap, _tensor_derivs, eval_map, geometry_by_name
from .linalg.direct import SparseCholesky
from .linalg.kron import BlockOperator
from .linalg.krylov import ConditionEstimate, cg, lanczos_condition, minres
from .multigrid import build_hierarchy
from .precond import BlockDiagPreconditioner, FastDiagSolver, build_fastdiag

__all__ = [
    "ProblemConfig",
    "Discretization",
    "KKTSystem",
    "SolutionFields",
    "SolveReport",
    "discretize",
    "project_initial_state",
    "initial_state_indicator",
    "build_lift",
    "manufacture_desired_state",
    "assemble_kkt",
    "solve",
    "solve_system",
    "estimate_schur_condition",
    "evaluate_cost",
    "sample_field",
]

DISK_RADIUS = 0.2
DISK_CENTERS = np.array([[1.5 * np.cos(i * np.pi / 8), 1.5 * np.sin(i * np.pi / 8)]
                         for i in (1, 2, 3)])


@dataclass
class ProblemConfig:
    """Parameters of one benchmark run.

    ``observation`` is ``"partial"`` (four time windows scaled to [0, T]),
    ``"full"``, ``"none"`` or an explicit list of (start, end) intervals.
    ``n_threads = 0`` takes the thread count from HEATOPT_NUM_THREADS (default 1).
    """

    geometry: str = "quarter_annulus"
    level: int = 4
    degree: int = 2
    alpha: float = 1e-3
    kappa: float = 1e-2
    observation: object = "partial"
    formulation: str = "3x3"
    control_space: str = "standard"
    backend: str = "cholesky"
    tol: float = 1e-6
    maxit: int = 1000
    T: float = 1.0
    pre_smooth: int = 2
    post_smooth: int = 2
    quad_points: int = 0
    n_threads: int = 0
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.level < 0:
            raise ValueError("level must be >= 0")
        if self.degree < 2:
            raise ValueError("degree must be >= 2")
        if self.formulation not in ("3x3", "2x2"):
            raise ValueError("formulation must be '3x3' or '2x2'")
        if self.control_space not in ("standard", "smooth"):
            raise ValueError("control_space must be 'standard' or 'smooth'")
        if self.backend not in ("cholesky", "multigrid"):
            raise ValueError("backend must be 'cholesky' or 'multigrid'")
        if not 0 < self.tol < 1:
            raise ValueError("tol must be in (0, 1)")
        if self.maxit < 1:
            raise ValueError("maxit must be >= 1")
        if self.n_threads < 0:
            raise ValueError("n_threads must be >= 0")
        if not self.T > 0:
            raise ValueError("T must be positive")
        self.observation_spec()

    def observation_spec(self) -> ObservationSpec:
        obs = self.observation
        if isinstance(obs, str):
            if obs == "full":
                return ObservationSpec(((0.0, float(self.T)),))
            if obs == "partial":
                return ObservationSpec(tuple((a * self.T, b * self.T)
                                             for a, b in BENCHMARK_OBSERVATION.intervals))
            if obs == "none":
                return ObservationSpec(())
            raise ValueError("observation must be 'partial', 'full', 'none' or a list of intervals")
        spec = ObservationSpec(tuple(tuple(iv) for iv in obs))
        spec.check(self.T)
        return spec

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Discretization:
    """Parameter-independent discrete data: spaces, geometry, matrices."""

    geometry: GeometryMap
    spaces: SpaceTimeSpaces
    tm: TimeMatrices
    sm: SpaceMatrices
    level: int
    degree: int
    assembly_time: float

    @property
    def ymap_t(self) -> DofMap:
        return self.spaces.y_time_map

    @property
    def ymap_x(self) -> DofMap:
        return self.spaces.y_space_map

    def reduced(self, name: str):
        """Reduced state-space factor: one of Mt, Kt, Mqt, Mx, Bx, Kx."""
        it, ix = self.ymap_t.indices, self.ymap_x.indices
        src = {"Mt": (self.tm.M, it), "Kt": (self.tm.K, it), "Mqt": (self.tm.Mq, it),
               "Mx": (self.sm.M, ix), "Bx": (self.sm.B, ix), "Kx": (self.sm.K, ix)}
        A, i = src[name]
        return A[i][:, i].tocsr()


@lru_cache(maxsize=6)
def _discretize(geometry, level, degree, control_space, intervals, T, quad_points):
    t0 = time.perf_counter()
    geo = geometry_by_name(geometry)
    spaces = build_spaces(level, degree, control_space, d=geo.dim, T=T)
    tm = assemble_time_matrices(spaces, ObservationSpec(intervals))
    sm = assemble_space_matrices(geo, spaces, quad_points or None)
    return Discretization(geo, spaces, tm, sm, level, degree, time.perf_counter() - t0)


def discretize(config: ProblemConfig) -> Discretization:
    """Assemble (or fetch from cache) all univariate and spatial matrices."""
    return _discretize(config.geometry, config.level, config.degree, config.control_space,
                       config.observation_spec().intervals, float(config.T), config.quad_points)


def initial_state_indicator(x) -> np.ndarray:
    """1 inside the three disks of radius 0.2 at radius 1.5, else 0."""
    x = np.atleast_2d(x)
    dist = np.linalg.norm(x[:, None, :] - DISK_CENTERS[None, :, :], axis=2)
    return (dist < DISK_RADIUS).any(axis=1).astype(float)


def project_initial_state(disc: Discretization, func=initial_state_indicator,
                          n_pts: int | None = None) -> np.ndarray:
    """L2 projection of `func` into the Dirichlet-reduced spatial state space.

    `func` maps physical points (n, d) to values.
    """
    ys = disc.spaces.y_space
    if n_pts is None:
        n_pts = max(8, disc.degree + 2)
    asm = SpatialAssembler(disc.geometry, ys, n_pts)
    tab = asm._tables(tuple(ys), 0)
    E, Q, L = tab["val"].shape
    fx = func(asm.mapped.point).reshape(E, Q)
    loc = np.einsum("eql,eq->el", tab["val"], asm.weights * fx)
    b = np.bincount(tab["idx"].ravel(), loc.ravel(), minlength=disc.sm.M.shape[0])
    ix = disc.ymap_x.indices
    if not np.any(b[ix]):
        return np.zeros(len(ix))
    return SparseCholesky(disc.reduced("Mx")).solve(b[ix])


def build_lift(disc: Discretization, y0: np.ndarray) -> dict:
    """Lift theta_0(t) y0(x) and its right-hand-side contributions.

    theta_0 is the first time basis function (value 1 at t=0). Returns the
    spatial coefficients and the actions of L_h and of the full-time
    operators on the lift, computed from the first column of each time
    factor.
    """
    tm, sm = disc.tm, disc.sm
    it, ix = disc.ymap_t.indices, disc.ymap_x.indices
    c0 = lambda A: np.asarray(A[:, [0]].todense()).ravel()
    Gx = sm.G[:, ix]
    Ax = sm.A[:, ix]
    Ly = lambda kappa: (np.kron(c0(tm.D), Gx @ y0) - kappa * np.kron(c0(tm.G), Ax @ y0))
    Mq_lift = np.kron(c0(tm.Mq)[it], disc.reduced("Mx") @ y0)
    return {"y0": np.asarray(y0, dtype=float), "L": Ly, "Mq": Mq_lift}


def _gram_preconditioner(disc: Discretization, kappa: float) -> FastDiagSolver:
    return FastDiagSolver(disc.reduced("Kt"), disc.reduced("Mt"), disc.reduced("Mx"),
                          disc.reduced("Bx"), kappa ** 2)


def manufacture_desired_state(disc: Discretization, y0: np.ndarray, kappa: float,
                              tol: float = 1e-12):
    """Desired state y_d = lift + y~ with y~ minimizing ||(d_t - kappa lap)(lift + y~)||.

    Solves the normal equations N y~ = -N(lift) with CG, preconditioned by
    the exact fast-diagonalization inverse of C_h + kappa^2 B_h (spectrally
    within a factor 2 of N). Returns the reduced coefficients of y~ and the
    CG result.
    """
    nt = disc.tm.M.shape[0]
    N_full = ynorm_gram(disc.tm, disc.sm, kappa, DofMap.full([nt]), disc.ymap_x)
    it = disc.ymap_t.indices
    N = N_full.restrict(rows_t=it, cols_t=it)
    coupling = N_full.restrict(rows_t=it, cols_t=[0])
    rhs = -(coupling @ y0)
    if not np.any(y0):
        return np.zeros(N.shape[0]), None
    prec = _gram_preconditioner(disc, kappa)
    res = cg(N, rhs, prec, tol=tol, maxit=500)
    return res.x, res


@dataclass
class SolveReport:
    iterations: int = 0
    converged: bool = False
    flag: str = ""
    residuals: list = field(default_factory=list)
    condition: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    backend: dict = field(default_factory=dict)
    sizes: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SolutionFields:
    """Coefficients of the computed state, control and multiplier.

    ``y`` lives on the reduced state basis; the full state is
    ``lift + y`` with ``lift = theta_0(t) y0(x)``.
    """

    y: np.ndarray
    u: np.ndarray
    lam: np.ndarray
    y0: np.ndarray
    disc: Discretization = field(repr=False)

    def state_coefficients(self, include_lift: bool = True) -> np.ndarray:
        """Full state coefficients, shape (N_t, N_x) on the unreduced basis."""
        d = self.disc
        nt = d.tm.M.shape[0]
        nx = d.sm.M.shape[0]
        Y = np.zeros((nt, nx))
        Y[np.ix_(d.ymap_t.indices, d.ymap_x.indices)] = self.y.reshape(
            len(d.ymap_t.indices), len(d.ymap_x.indices))
        if include_lift:
            Y[0, d.ymap_x.indices] += self.y0
        return Y


class KKTSystem:
    """Assembled optimality system with its block preconditioner.

    `initial_state` maps physical points (n, d) to initial values; the
    default is the three-disk indicator. `yd` overrides the desired state
    (reduced coefficients, lift excluded).
    """

    def __init__(self, config: ProblemConfig, disc: Discretization | None = None,
                 yd: np.ndarray | None = None, with_data: bool = True, initial_state=None):
        self.config = config
        self.timings = {}
        t0 = time.perf_counter()
        self.disc = disc = discretize(config) if disc is None else disc
        self.timings["assembly"] = disc.assembly_time
        a, k = config.alpha, config.kappa
        self.ops: SpaceTimeOperators = compose_operators(disc.tm, disc.sm, k, a,
                                                         disc.ymap_t, disc.ymap_x)
        self.y0 = project_initial_state(disc, initial_state or initial_state_indicator)
        self.lift = build_lift(disc, self.y0)
        t1 = time.perf_counter()
        if yd is None and with_data:
            yd, _ = manufacture_desired_state(disc, self.y0, k)
        elif yd is None:
            yd = np.zeros(len(disc.ymap_t.indices) * len(disc.ymap_x.indices))
        self.yd = yd
        self.timings["desired_state"] = time.perf_counter() - t1

        ops = self.ops
        ny, nu = ops.L.shape[1], ops.L.shape[0]
        self.n_y, self.n_u = ny, nu
        rhs1 = ops.Mq @ yd
        rhs3 = -self.lift["L"](k)
        if config.formulation == "3x3":
            self.A = BlockOperator([[ops.Mq, None, (ops.L, "T")],
                                    [None, ops.M.scaled(a), ops.M],
                                    [ops.L, ops.M, None]])
            self.rhs = np.concatenate([rhs1, np.zeros(nu), rhs3])
        else:
            self.A = BlockOperator([[ops.Mq, (ops.L, "T")],
                                    [ops.L, ops.M.scaled(-1.0 / a)]])
            self.rhs = np.concatenate([rhs1, rhs3])

        t2 = time.perf_counter()
        backend = "direct" if config.backend == "cholesky" else "multigrid"
        hierarchy = None
        if backend == "multigrid":
            hierarchy = build_hierarchy(config.level, config.degree, disc.reduced("Mx"),
                                        disc.reduced("Bx"), d=disc.geometry.dim)
        self.P_solver = build_fastdiag(disc.tm, disc.sm, a, k, disc.ymap_t, disc.ymap_x,
                                       backend=backend, hierarchy=hierarchy,
                                       smoothing=(config.pre_smooth, config.post_smooth),
                                       n_threads=config.n_threads or None)
        self.precond = BlockDiagPreconditioner(self.P_solver, disc.tm.MU, disc.sm.MU, a,
                                               n_blocks=3 if config.formulation == "3x3" else 2)
        self.timings["preconditioner_setup"] = time.perf_counter() - t2
        self.timings["build_total"] = time.perf_counter() - t0 + disc.assembly_time

    def split(self, x):
        ny, nu = self.n_y, self.n_u
        if self.config.formulation == "3x3":
            return x[:ny], x[ny:ny + nu], x[ny + nu:]
        lam = x[ny:]
        return x[:ny], -lam / self.config.alpha, lam

    def schur_operator(self) -> LinearOperator:
        """S_h = M_q + alpha L^T M^{-1} L with M^{-1} exact."""
        ops, a = self.ops, self.config.alpha
        Minv = self.precond.M_solver
        n = self.n_y

        def matvec(y):
            y = np.ravel(y)
            return ops.Mq @ y + a * (ops.L.T @ Minv(ops.L @ y))

        return LinearOperator((n, n), matvec=matvec, dtype=float)


def assemble_kkt(config: ProblemConfig) -> KKTSystem:
    return KKTSystem(config)


def solve_system(system: KKTSystem, callback=None):
    cfg = system.config
    t0 = time.perf_counter()
    res = minres(system.A, system.rhs, system.precond, tol=cfg.tol, maxit=cfg.maxit,
                 callback=callback)
    tk = time.perf_counter() - t0
    y, u, lam = system.split(res.x)
    fields = SolutionFields(y, u, lam, system.y0, system.disc)
    flag = "converged" if res.converged else ("breakdown" if res.breakdown else "maxit")
    report = SolveReport(
        iterations=res.iterations, converged=res.converged, flag=flag,
        residuals=[float(r) for r in res.residuals],
        timings=dict(system.timings, krylov=tk,
                     eigendecomposition_count=system.P_solver.n_eigendecompositions),
        backend={"spatial": cfg.backend, "cholesky_ordering": "reverse_cuthill_mckee",
                 "smoothing": [cfg.pre_smooth, cfg.post_smooth] if cfg.backend == "multigrid" else None},
        sizes={"n_y": system.n_y, "n_u": system.n_u,
               "n_y_time": len(system.disc.ymap_t.indices),
               "n_y_space": len(system.disc.ymap_x.indices),
               "n_u_time": system.disc.tm.MU.shape[0], "n_u_space": system.disc.sm.MU.shape[0]},
        config=cfg.to_dict(),
    )
    return fields, report


def solve(config: ProblemConfig):
    """Assemble and solve with preconditioned MINRES; returns (fields, report)."""
    return solve_system(KKTSystem(config))


def estimate_schur_condition(config: ProblemConfig, n_iters: int = 60,
                             system: KKTSystem | None = None) -> ConditionEstimate:
    """Lanczos estimate of the extreme eigenvalues of the pencil (S_h, P_h)."""
    if system is None:
        system = KKTSystem(config, with_data=False)
    S = system.schur_operator()
    return lanczos_condition(S, system.P_solver, n_iters=n_iters, rng=config.seed)


def evaluate_cost(fields: SolutionFields, system: KKTSystem):
    """(tracking term, regularization term, J)."""
    e = fields.y - system.yd
    track = 0.5 * float(e @ (system.ops.Mq @ e))
    reg = 0.5 * system.config.alpha * float(fields.u @ (system.ops.M @ fields.u))
    return track, reg, track + reg


def _space_collocation(spaces, xhat):
    idx, tab = _tensor_derivs(spaces, xhat, 0)
    n = idx.shape[0]
    dim = int(np.prod([s.dim for s in spaces]))
    rows = np.repeat(np.arange(n), idx.shape[1])
    return sp.csr_matrix((tab[(0,) * len(spaces)].ravel(), (rows, idx.ravel())), shape=(n, dim))


def sample_field(fields: SolutionFields, points, which: str = "y"):
    """Evaluate a field at space-time parameter points (t, xhat_1, .., xhat_d).

    Returns ``(values, physical_points)`` where physical points are (t, x).
    """
    d = fields.disc
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    T = d.spaces.y_time.interval[1]
    if np.any(pts < -1e-14) or np.any(pts[:, 1:] > 1 + 1e-14) or np.any(pts[:, 0] > T + 1e-14):
        raise ValueError("sample points must lie in [0,T] x [0,1]^d")
    if which == "y":
        C = fields.state_coefficients()
        tsp, xsp = d.spaces.y_time, d.spaces.y_space
    elif which in ("u", "lam"):
        tsp, xsp = d.spaces.u_time, d.spaces.u_space
        v = fields.u if which == "u" else fields.lam
        C = v.reshape(tsp.dim, -1)
    else:
        raise ValueError("which must be 'y', 'u' or 'lam'")
    Ct = tsp.collocation(pts[:, 0])
    Cx = _space_collocation(xsp, pts[:, 1:])
    Z = (Cx @ C.T)                          # (n, N_t)
    vals = np.asarray(Ct.multiply(Z).sum(axis=1)).ravel()
    phys = eval_map(d.geometry, pts[:, 1:]).point
    return vals, np.column_stack([pts[:, 0], phys])
