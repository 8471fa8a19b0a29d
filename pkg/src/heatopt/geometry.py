"""Tensor-product spline parameterizations of the spatial domain.

A geometry maps the parameter domain (0,1)^d onto the physical domain. The
chain rule machinery here turns parameter-space derivatives of pulled-back
basis functions into physical gradients and Laplacians.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from .splines import SplineSpace, basis_derivs, make_space

__all__ = [
    "GeometryMap",
    "MappedPointData",
    "SingularGeometryError",
    "identity",
    "box",
    "quarter_annulus",
    "geometry_by_name",
    "load_geometry",
    "save_geometry",
    "eval_map",
    "physical_laplacian",
    "invert_map",
]


class SingularGeometryError(ValueError):
    """Raised when the Jacobian degenerates at an evaluation point."""


@dataclass(frozen=True, eq=False)
class GeometryMap:
    """Spline map G: (0,1)^d -> R^d.

    ``coefs`` has shape ``(n_1, ..., n_d, d)``; entry ``[i_1, .., i_d, m]`` is
    component m of the control point with multi-index (i_1, .., i_d).
    """

    spaces: tuple[SplineSpace, ...]
    coefs: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        d = len(self.spaces)
        if self.coefs.shape != tuple(s.dim for s in self.spaces) + (d,):
            raise ValueError("control net shape %s does not match spaces" % (self.coefs.shape,))
        for s in self.spaces:
            if s.interval != (0.0, 1.0):
                raise ValueError("geometry spaces must live on [0, 1]")
        self.coefs.setflags(write=False)

    @property
    def dim(self) -> int:
        return len(self.spaces)

    @property
    def orientation(self) -> int:
        """Sign of det(J), checked on a 5^d sample of parameter points."""
        g = np.linspace(0.05, 0.95, 5)
        pts = np.array(list(product(*[g] * self.dim)))
        det = eval_map(self, pts).det
        return int(np.sign(det[0]))


@dataclass(frozen=True)
class MappedPointData:
    """Geometry data at n parameter points (leading axis)."""

    point: np.ndarray      # (n, d) physical points
    jac: np.ndarray        # (n, d, d), jac[:, m, a] = dG_m / dxhat_a
    det: np.ndarray        # (n,) signed determinant
    jac_inv: np.ndarray    # (n, d, d)
    hess: np.ndarray       # (n, d, d, d), hess[:, m, a, b] = d^2 G_m / dxhat_a dxhat_b

    @property
    def abs_det(self) -> np.ndarray:
        return np.abs(self.det)


def identity(d: int = 2) -> GeometryMap:
    return box([(0.0, 1.0)] * d, name="identity")


def box(bounds, name: str = "box") -> GeometryMap:
    """Affine map onto the box prod_i (a_i, b_i), as a degree-1 spline."""
    d = len(bounds)
    spaces = tuple(make_space(1, 0, [0.0, 1.0]) for _ in range(d))
    coefs = np.zeros((2,) * d + (d,))
    for idx in product(range(2), repeat=d):
        coefs[idx] = [bounds[m][idx[m]] for m in range(d)]
    return GeometryMap(spaces, coefs, name)


def quarter_annulus(r_inner: float = 1.0, r_outer: float = 2.0) -> GeometryMap:
    """Non-rational degree-(2,2) approximation of a quarter annulus.

    Direction 1 runs along the arc (quadratic Bezier through (1,0), (1,1),
    (0,1), scaled by the radius), direction 2 runs radially.
    """
    arc = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    radii = np.array([r_inner, 0.5 * (r_inner + r_outer), r_outer])
    coefs = arc[:, None, :] * radii[None, :, None]
    S = make_space(2, 1, [0.0, 1.0])
    return GeometryMap((S, S), coefs, "quarter_annulus")


def geometry_by_name(name: str, **kw) -> GeometryMap:
    if name == "identity":
        return identity(kw.get("d", 2))
    if name == "box":
        return box(kw.get("bounds", [(0.0, 1.0), (0.0, 1.0)]))
    if name == "quarter_annulus":
        return quarter_annulus(kw.get("r_inner", 1.0), kw.get("r_outer", 2.0))
    path = Path(name)
    if path.suffix and path.exists():
        return load_geometry(path)
    raise ValueError("unknown geometry %r" % name)


def load_geometry(path) -> GeometryMap:
    """Read a control net from the plain-text geometry format.

    Format (``#`` starts a comment)::

        dim 2
        degrees 2 2
        knots 0 0 0 1 1 1
        knots 0 0 0 1 1 1
        # one control point per line, last index fastest
        1.0 0.0
        ...
    """
    lines = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line.split())
    if not lines or lines[0][0] != "dim":
        raise ValueError("%s: expected 'dim' header" % path)
    d = int(lines[0][1])
    if lines[1][0] != "degrees" or len(lines[1]) != d + 1:
        raise ValueError("%s: expected 'degrees' with %d entries" % (path, d))
    degrees = [int(v) for v in lines[1][1:]]
    spaces = []
    for i in range(d):
        row = lines[2 + i]
        if row[0] != "knots":
            raise ValueError("%s: expected %d 'knots' lines" % (path, d))
        knots = np.array([float(v) for v in row[1:]])
        p = degrees[i]
        Z, mult = np.unique(knots, return_counts=True)
        k = p - int(mult[1:-1].max()) if len(Z) > 2 else p - 1
        spaces.append(SplineSpace(p, knots, k))
    pts = np.array([[float(v) for v in row] for row in lines[2 + d:]])
    shape = tuple(s.dim for s in spaces)
    if pts.shape != (int(np.prod(shape)), d):
        raise ValueError("%s: expected %d control points of dimension %d"
                         % (path, int(np.prod(shape)), d))
    return GeometryMap(tuple(spaces), pts.reshape(shape + (d,)), Path(path).stem)


def save_geometry(geo: GeometryMap, path) -> None:
    out = ["dim %d" % geo.dim,
           "degrees " + " ".join(str(s.degree) for s in geo.spaces)]
    for s in geo.spaces:
        out.append("knots " + " ".join(repr(float(v)) for v in s.knots))
    for row in geo.coefs.reshape(-1, geo.dim):
        out.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(out) + "\n")


def _tensor_derivs(spaces, xhat, nder):
    """Global indices and local tensor-basis derivative tables.

    Returns ``idx`` (n, nloc) and a dict mapping derivative multi-indices
    (tuples of orders, total <= nder) to arrays (n, nloc).
    """
    xhat = np.atleast_2d(np.asarray(xhat, dtype=float))
    d = len(spaces)
    spans, tabs = [], []
    for a, S in enumerate(spaces):
        s, ders = basis_derivs(S, xhat[:, a], min(nder, S.degree))
        spans.append(s - S.degree)
        pad = np.zeros((len(s), nder + 1, S.degree + 1))
        pad[:, :ders.shape[1]] = ders
        tabs.append(pad)
    n = xhat.shape[0]
    dims = [S.dim for S in spaces]
    loc = [np.arange(S.degree + 1) for S in spaces]
    multi = np.meshgrid(*loc, indexing="ij")
    idx = np.zeros((n,) + multi[0].shape, dtype=np.int64)
    for a in range(d):
        idx = idx * dims[a] + (spans[a][:, None] + multi[a].ravel()[None, :]).reshape(idx.shape)
    idx = idx.reshape(n, -1)
    tables = {}
    for orders in product(range(nder + 1), repeat=d):
        if sum(orders) > nder:
            continue
        t = tabs[0][:, orders[0], :]
        for a in range(1, d):
            t = (t[:, :, None] * tabs[a][:, orders[a], None, :]).reshape(n, -1)
        tables[orders] = t
    return idx, tables


def _unit(d, *axes):
    o = [0] * d
    for a in axes:
        o[a] += 1
    return tuple(o)


def eval_map(geo: GeometryMap, xhat) -> MappedPointData:
    """Point, Jacobian, determinant, inverse Jacobian and Hessians of G."""
    xhat = np.atleast_2d(np.asarray(xhat, dtype=float))
    d = geo.dim
    if xhat.shape[1] != d:
        raise ValueError("expected parameter points of dimension %d" % d)
    if np.any(xhat < -1e-14) or np.any(xhat > 1 + 1e-14):
        raise ValueError("parameter points must lie in [0,1]^%d" % d)
    idx, tab = _tensor_derivs(geo.spaces, xhat, 2)
    C = geo.coefs.reshape(-1, d)[idx]  # (n, nloc, d)
    point = np.einsum("nl,nlm->nm", tab[(0,) * d], C)
    n = len(xhat)
    jac = np.empty((n, d, d))
    hess = np.empty((n, d, d, d))
    for a in range(d):
        jac[:, :, a] = np.einsum("nl,nlm->nm", tab[_unit(d, a)], C)
        for b in range(d):
            hess[:, :, a, b] = np.einsum("nl,nlm->nm", tab[_unit(d, a, b)], C)
    det = np.linalg.det(jac)
    bad = np.abs(det) < 1e-12
    if np.any(bad):
        raise SingularGeometryError("singular Jacobian at parameter point %s" % xhat[bad][0])
    return MappedPointData(point, jac, det, np.linalg.inv(jac), hess)


def physical_laplacian(md: MappedPointData, values, grads, hessians):
    """Physical value, gradient and Laplacian of pulled-back functions.

    Args:
        md: geometry data at n points
        values: (n, m) parameter-space values of m functions
        grads: (n, m, d) parameter gradients
        hessians: (n, m, d, d) parameter Hessians

    Uses grad = J^{-T} grad_hat and
    H = J^{-T} (H_hat - sum_m (grad)_m H(G_m)) J^{-1}.
    """
    Jinv = md.jac_inv
    grad = np.einsum("nam,nla->nlm", Jinv, grads)
    corr = hessians - np.einsum("nlm,nmab->nlab", grad, md.hess)
    metric = np.einsum("nai,nbi->nab", Jinv, Jinv)  # J^{-1} J^{-T}
    lap = np.einsum("nlab,nab->nl", corr, metric)
    return values, grad, lap


def invert_map(geo: GeometryMap, x, x0=None, tol: float = 1e-12, maxit: int = 50):
    """Parameter points mapping to physical points `x` (Newton, clipped to the unit box)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xh = np.full_like(x, 0.5) if x0 is None else np.atleast_2d(np.array(x0, dtype=float))
    for _ in range(maxit):
        md = eval_map(geo, np.clip(xh, 0.0, 1.0))
        res = md.point - x
        if np.max(np.abs(res)) < tol:
            return xh
        step = np.einsum("nam,nm->na", md.jac_inv, res)
        xh = np.clip(xh - step, 0.0, 1.0)
    raise RuntimeError("Newton inversion of geometry map did not converge")
