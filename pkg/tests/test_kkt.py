import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse.linalg import LinearOperator

from heatopt.assembly import BENCHMARK_OBSERVATION, DofMap, build_spaces, compose_operators, ynorm_gram
from heatopt.geometry import eval_map, invert_map, physical_laplacian
from heatopt.linalg import cg, kron_apply, lanczos_condition, minres
from heatopt.kkt import (DISK_CENTERS, DISK_RADIUS, KKTSystem, ProblemConfig, SolutionFields, discretize, evaluate_cost,
                         manufacture_desired_state, project_initial_state, sample_field,
                         solve_system)

from _oracles import basis_matrix, monolithic_operators


@pytest.fixture(scope="module")
def system3():
    return KKTSystem(ProblemConfig(level=2, tol=1e-12))


@pytest.fixture(scope="module")
def solved3(system3):
    return solve_system(system3)


def test_config_validation():
    for kw, key in [({"alpha": 0}, "alpha"), ({"kappa": -1}, "kappa"), ({"degree": 1}, "degree"),
                    ({"formulation": "4x4"}, "formulation"), ({"tol": 2.0}, "tol"),
                    ({"backend": "lu"}, "backend"), ({"observation": "some"}, "observation")]:
        with pytest.raises(ValueError, match=key):
            ProblemConfig(**kw)
    with pytest.raises(ValueError):
        ProblemConfig(observation=[(0.5, 1.5)])
    spec = ProblemConfig(observation="partial", T=2.0).observation_spec()
    assert spec.intervals == tuple((2 * a, 2 * b) for a, b in BENCHMARK_OBSERVATION.intervals)


def test_kkt_matrix_is_symmetric(system3):
    rng = np.random.default_rng(0)
    n = system3.A.shape[0]
    for _ in range(20):
        x, y = rng.standard_normal(n), rng.standard_normal(n)
        lhs, rhs = x @ (system3.A @ y), y @ (system3.A @ x)
        assert abs(lhs - rhs) <= 1e-12 * (abs(lhs) + 1)


@pytest.mark.parametrize("formulation", ["3x3", "2x2"])
def test_kkt_matches_monolithic_oracle(formulation):
    alpha, kappa = 0.3, 0.2
    cfg = ProblemConfig(level=1, alpha=alpha, kappa=kappa, formulation=formulation)
    system = KKTSystem(cfg, with_data=False)
    d = system.disc
    ref = monolithic_operators(d.spaces, d.geometry, kappa, alpha,
                               cfg.observation_spec().intervals, n_t=4, n_x=4)
    L, M, Mq = ref["L"], ref["M"], ref["Mq"]
    ny, nu = L.shape[1], L.shape[0]
    if formulation == "3x3":
        K = np.block([[Mq, np.zeros((ny, nu)), L.T],
                      [np.zeros((nu, ny)), alpha * M, M],
                      [L, M, np.zeros((nu, nu))]])
    else:
        K = np.block([[Mq, L.T], [L, -M / alpha]])
    A = system.A.to_dense()
    assert np.max(np.abs(A - K)) <= 1e-11 * np.abs(K).max()


def test_projection_is_idempotent_on_identity():
    cfg = ProblemConfig(geometry="identity", level=2, degree=3)
    d = discretize(cfg)
    s1, s2 = d.spaces.y_space
    rng = np.random.default_rng(1)
    C = np.zeros((s1.dim, s2.dim))
    C[1:-1, 1:-1] = rng.standard_normal((s1.dim - 2, s2.dim - 2))

    def func(x):
        return np.einsum("ni,ij,nj->n", basis_matrix(s1, x[:, 0]), C, basis_matrix(s2, x[:, 1]))

    c = project_initial_state(d, func)
    np.testing.assert_allclose(c, C[1:-1, 1:-1].ravel(), atol=1e-11)
    assert not np.any(project_initial_state(d, lambda x: np.zeros(len(x))))


def test_initial_state_integral_converges():
    # the exact value assumes disjoint disks inside the annulus
    c, r = DISK_CENTERS, DISK_RADIUS
    gaps = [np.linalg.norm(c[i] - c[j]) for i in range(3) for j in range(i)]
    assert min(gaps) > 2 * r
    assert np.all(np.abs(np.linalg.norm(c, axis=1) - 1.5) + r < 0.5)
    assert np.all(c > r)
    exact = 3 * np.pi * r ** 2
    errs = {}
    for level in (2, 3, 5, 6):
        d = discretize(ProblemConfig(level=level))
        y0 = project_initial_state(d)
        full = d.sm.M[:, d.ymap_x.indices] @ y0
        errs[level] = abs(full.sum() - exact)
    assert max(errs[5], errs[6]) < 1e-3
    assert errs[6] <= 0.05 * exact
    assert max(errs[5], errs[6]) < 0.2 * min(errs[2], errs[3])


def test_lift_action_matches_full_operator(system3):
    # independent route: the operator on the unreduced time basis applied to e_0 ⊗ y0
    d, kappa = system3.disc, system3.config.kappa
    nt = d.tm.M.shape[0]
    ops = compose_operators(d.tm, d.sm, kappa, 1.0, DofMap.full([nt]), d.ymap_x)
    v = np.zeros((nt, len(system3.y0)))
    v[0] = system3.y0
    np.testing.assert_allclose(system3.lift["L"](kappa), ops.L @ v.ravel(), atol=1e-14)


def test_lift_at_initial_time(solved3):
    fields, _ = solved3
    d = fields.disc
    rng = np.random.default_rng(2)
    xh = rng.random((50, 2))
    vals, phys = sample_field(fields, np.column_stack([np.zeros(50), xh]))
    s1, s2 = d.spaces.y_space
    Y0 = np.zeros((s1.dim, s2.dim))
    Y0[1:-1, 1:-1] = fields.y0.reshape(s1.dim - 2, s2.dim - 2)
    ref = np.einsum("ni,ij,nj->n", basis_matrix(s1, xh[:, 0]), Y0, basis_matrix(s2, xh[:, 1]))
    np.testing.assert_allclose(vals, ref, atol=1e-12)
    np.testing.assert_allclose(phys[:, 1:], eval_map(d.geometry, xh).point)


def _field_jet(spaces, Y, xh):
    """Value, parameter gradient and Hessian of a tensor spline field."""
    s1, s2 = spaces
    f = [s1.collocation(xh[:, 0], r).toarray() for r in range(3)]
    g = [s2.collocation(xh[:, 1], r).toarray() for r in range(3)]
    ev = lambda a, b: np.einsum("ni,ij,nj->n", f[a], Y, g[b])
    n = len(xh)
    hess = np.empty((n, 1, 2, 2))
    hess[:, 0, 0, 0], hess[:, 0, 1, 1] = ev(2, 0), ev(0, 2)
    hess[:, 0, 0, 1] = hess[:, 0, 1, 0] = ev(1, 1)
    return ev(0, 0)[:, None], np.stack([ev(1, 0), ev(0, 1)], axis=1)[:, None, :], hess


def test_lift_heat_operator_finite_differences(solved3):
    fields, _ = solved3
    d, kappa = fields.disc, 1e-2
    lift_only = SolutionFields(np.zeros_like(fields.y), fields.u, fields.lam, fields.y0, d)
    s1, s2 = d.spaces.y_space
    Y0 = np.zeros((s1.dim, s2.dim))
    Y0[1:-1, 1:-1] = fields.y0.reshape(s1.dim - 2, s2.dim - 2)
    # element centres keep the stencils inside one polynomial piece
    c = np.array([0.375, 0.625])
    xh = np.array([[a, b] for a in c for b in c])
    md = eval_map(d.geometry, xh)
    val, grad, hess = _field_jet((s1, s2), Y0, xh)
    lap = physical_laplacian(md, val, grad, hess)[2][:, 0]
    t = 0.1
    th = [d.spaces.y_time.collocation([t], r).toarray()[0, 0] for r in (0, 1)]
    exact = th[1] * val[:, 0] - kappa * th[0] * lap

    def lift(tt, x):
        u = invert_map(d.geometry, x, x0=np.tile(xh[k], (len(x), 1)))
        return sample_field(lift_only, np.column_stack([np.full(len(x), tt), u]))[0]

    ht, hx = 1e-4, 1e-3
    for k, x in enumerate(md.point):
        dt = (lift(t + ht, [x]) - lift(t - ht, [x]))[0] / (2 * ht)
        pts = np.array([x + [hx, 0], x - [hx, 0], x + [0, hx], x - [0, hx], x])
        f = lift(t, pts)
        dxx = (f[:4].sum() - 4 * f[4]) / hx ** 2
        fd = dt - kappa * dxx
        assert abs(fd - exact[k]) <= 1e-5 * max(1.0, abs(exact[k]))


def test_zero_initial_state_gives_zero_data():
    zero = lambda x: np.zeros(len(x))
    system = KKTSystem(ProblemConfig(level=2), initial_state=zero)
    assert not np.any(system.y0) and not np.any(system.lift["L"](1e-2))
    assert not np.any(system.lift["Mq"]) and not np.any(system.yd)
    assert not np.any(system.rhs)


def test_desired_state_is_least_squares_solution():
    d = discretize(ProblemConfig(level=3))
    kappa = 1e-2
    y0 = project_initial_state(d)
    yt, res = manufacture_desired_state(d, y0, kappa)
    assert res.converged
    nt = d.tm.M.shape[0]
    Nf = ynorm_gram(d.tm, d.sm, kappa, DofMap.full([nt]), d.ymap_x)
    full = np.concatenate([y0, yt])
    # gradient of the least-squares functional vanishes on the reduced unknowns
    g = (Nf @ full)[len(y0):]
    scale = np.linalg.norm((Nf @ np.concatenate([y0, np.zeros_like(yt)]))[len(y0):])
    assert np.linalg.norm(g) <= 1e-9 * scale


def test_desired_state_energy_decays():
    d = discretize(ProblemConfig(level=3))
    y0 = project_initial_state(d)
    yt, _ = manufacture_desired_state(d, y0, 1e-2)
    C = SolutionFields(yt, np.zeros(0), np.zeros(0), y0, d).state_coefficients()
    V = d.spaces.y_time.collocation(np.linspace(0, 1, 21)).toarray() @ C
    energy = np.einsum("ti,ij,tj->t", V, d.sm.M.toarray(), V)
    assert np.all(np.diff(energy) < 0)


def test_optimality_conditions(system3, solved3):
    fields, report = solved3
    assert report.converged
    ops, a = system3.ops, system3.config.alpha
    nu = system3.n_u
    r_state = ops.L @ fields.y + ops.M @ fields.u - system3.rhs[-nu:]
    r_grad = a * (ops.M @ fields.u) + ops.M @ fields.lam
    r_adj = ops.Mq @ (fields.y - system3.yd) + ops.L.T @ fields.lam
    scale = np.linalg.norm(system3.rhs)
    for r in (r_state, r_grad, r_adj):
        assert np.linalg.norm(r) <= 1e-9 * scale


def test_reduced_problem_oracle(system3, solved3):
    # independent route: CG on the Schur complement of the eliminated control
    fields, _ = solved3
    ops, a = system3.ops, system3.config.alpha
    Minv = system3.precond.M_solver
    f = system3.rhs[-system3.n_u:]
    b = ops.Mq @ system3.yd + a * (ops.L.T @ Minv(f))
    res = cg(system3.schur_operator(), b, system3.P_solver, tol=1e-13, maxit=200)
    assert res.converged
    assert np.linalg.norm(res.x - fields.y) <= 1e-8 * np.linalg.norm(res.x)


def _reduced_cost(system, y):
    ops, a = system.ops, system.config.alpha
    u = system.precond.M_solver(system.rhs[-system.n_u:] - ops.L @ y)
    e = y - system.yd
    return 0.5 * e @ (ops.Mq @ e) + 0.5 * a * u @ (ops.M @ u)


def test_solution_minimizes_cost(system3, solved3):
    fields, _ = solved3
    _, _, J = evaluate_cost(fields, system3)
    assert abs(J - _reduced_cost(system3, fields.y)) <= 1e-10 * J
    rng = np.random.default_rng(3)
    for eps in (1e-2, 1e-4):
        for _ in range(5):
            dy = rng.standard_normal(len(fields.y))
            dy *= eps * np.linalg.norm(fields.y) / np.linalg.norm(dy)
            assert _reduced_cost(system3, fields.y + dy) >= J * (1 - 1e-12)


def test_formulations_agree():
    out = {}
    for form in ("3x3", "2x2"):
        cfg = ProblemConfig(level=3, formulation=form, tol=1e-10)
        out[form] = solve_system(KKTSystem(cfg))[0]
    for name in ("y", "u", "lam"):
        a, b = getattr(out["3x3"], name), getattr(out["2x2"], name)
        assert np.linalg.norm(a - b) <= 1e-6 * np.linalg.norm(a), name


def test_large_alpha_switches_control_off(system3):
    # homogeneous initial state: the target is reachable only through the control
    cfg = ProblemConfig(level=2, alpha=1e6, tol=1e-10)
    system = KKTSystem(cfg, yd=system3.yd, initial_state=lambda x: np.zeros(len(x)))
    fields, _ = solve_system(system)
    d = system.disc
    l2 = lambda M, v: np.sqrt(v @ (M @ v))
    u_norm = l2(system.ops.M, fields.u)
    yd_norm = np.sqrt(system.yd @ kron_apply(d.reduced("Mt"), d.reduced("Mx"), system.yd))
    assert u_norm <= 1e-3 * yd_norm


def test_large_alpha_limit_with_benchmark_data():
    # U is larger than the range of L, so the control cannot vanish: the state
    # tends to the M^{-1}-weighted least-squares solution of L y = f
    system = KKTSystem(ProblemConfig(level=2, alpha=1e6, tol=1e-12))
    fields, _ = solve_system(system)
    ops, Minv = system.ops, system.precond.M_solver
    f = system.rhs[-system.n_u:]
    G = LinearOperator((system.n_y,) * 2, matvec=lambda y: ops.L.T @ Minv(ops.L @ y))
    ref = cg(G, ops.L.T @ Minv(f), system.P_solver, tol=1e-13, maxit=300).x
    assert np.linalg.norm(fields.y - ref) <= 1e-6 * np.linalg.norm(ref)
    np.testing.assert_allclose(fields.u, Minv(f - ops.L @ fields.y), atol=1e-10)


def test_cost_decomposition(system3, solved3):
    fields, _ = solved3
    track, reg, J = evaluate_cost(fields, system3)
    assert track > 0 and reg > 0 and J == track + reg
    # the uncontrolled least-squares trajectory is feasible with a residual control
    assert J <= _reduced_cost(system3, system3.yd)


def test_cost_special_cases(system3, solved3):
    fields, _ = solved3
    at_target = SolutionFields(system3.yd, np.zeros(system3.n_u), fields.lam, fields.y0,
                               fields.disc)
    assert evaluate_cost(at_target, system3) == (0.0, 0.0, 0.0)
    free = SolutionFields(fields.y, np.zeros(system3.n_u), fields.lam, fields.y0, fields.disc)
    e = fields.y - system3.yd
    track, reg, J = evaluate_cost(free, system3)
    assert reg == 0 and J == track == pytest.approx(0.5 * e @ (system3.ops.Mq @ e), rel=1e-14)


def test_state_on_diagonal_cut_in_range():
    fields, report = solve_system(KKTSystem(ProblemConfig(level=5)))
    assert report.converged
    t, v = np.meshgrid(np.linspace(0, 1, 41), np.linspace(0, 1, 41), indexing="ij")
    pts = np.column_stack([t.ravel(), np.full(t.size, 0.5), v.ravel()])
    vals, phys = sample_field(fields, pts)
    # the angular midline of the annulus parameterization is the diagonal x1 = x2
    np.testing.assert_allclose(phys[:, 1], phys[:, 2], atol=1e-12)
    assert np.all(np.isfinite(vals)) and -0.3 <= vals.min() and vals.max() <= 1.3


def test_sample_field_control_constant():
    d = discretize(ProblemConfig(level=2))
    nu = d.tm.MU.shape[0] * d.sm.MU.shape[0]
    f = SolutionFields(np.zeros(0), np.ones(nu), np.zeros(nu), np.zeros(0), d)
    pts = np.random.default_rng(4).random((10, 3))
    vals, phys = sample_field(f, pts, which="u")
    np.testing.assert_allclose(vals, 1.0, atol=1e-13)
    np.testing.assert_allclose(sample_field(f, pts, which="lam")[0], 0.0)
    assert phys.shape == (10, 3)
    with pytest.raises(ValueError):
        sample_field(f, [[0.5, 1.5, 0.5]])
    with pytest.raises(ValueError):
        sample_field(f, pts, which="p")


def test_state_block_as_its_own_preconditioner(system3):
    est = lanczos_condition(system3.ops.P, system3.P_solver, n_iters=20)
    assert abs(est.cond - 1) <= 1e-10


def test_schur_complement_dominates_observation(system3):
    S, Mq = system3.schur_operator(), system3.ops.Mq
    rng = np.random.default_rng(5)
    for _ in range(10):
        y = rng.standard_normal(S.shape[0])
        assert y @ (S @ y) > y @ (Mq @ y) >= 0


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 31), s=st.floats(1e-3, 1e3))
def test_minres_solution_scales_with_data(system3, seed, s):
    # zero start and a relative stopping rule make the iterate homogeneous in b
    b = np.random.default_rng(seed).standard_normal(system3.A.shape[0])
    x1 = minres(system3.A, b, system3.precond, tol=1e-6).x
    x2 = minres(system3.A, s * b, system3.precond, tol=1e-6).x
    assert np.linalg.norm(x2 - s * x1) <= 1e-9 * s * np.linalg.norm(x1)


def test_level_seven_sizes():
    spaces = build_spaces(7, 2)
    ny_t = spaces.y_time.dim - 1
    ny_x = np.prod([s.dim - 2 for s in spaces.y_space])
    assert ny_t == 129 and ny_x == 16384
    assert spaces.u_time.dim == 257
    assert np.prod([s.dim for s in spaces.u_space]) == 147456
    assert ny_t * ny_x == 2113536
    assert spaces.u_time.dim * 147456 == 37896192
    smooth = build_spaces(7, 2, "smooth")
    assert smooth.u_time.dim == 130 and np.prod([s.dim for s in smooth.u_space]) == 130 ** 2


def test_thread_count_from_environment(monkeypatch):
    monkeypatch.setenv("HEATOPT_NUM_THREADS", "3")
    assert KKTSystem(ProblemConfig(level=1), with_data=False).P_solver.n_threads == 3
    assert KKTSystem(ProblemConfig(level=1, n_threads=2), with_data=False).P_solver.n_threads == 2
    with pytest.raises(ValueError, match="n_threads"):
        ProblemConfig(n_threads=-1)
