"""Field export (legacy ASCII VTK) and matrix debug dumps."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .kkt import KKTSystem, SolutionFields, sample_field
from .linalg.direct import write_matrix_market

__all__ = ["parameter_grid", "export_vtk", "read_vtk_point_data", "dump_matrices"]


def parameter_grid(fields: SolutionFields, res) -> np.ndarray:
    """Tensor grid in (t, xhat_1, xhat_2), first spatial index fastest."""
    nt, nx, ny = (int(r) for r in res)
    if min(nt, nx, ny) < 2:
        raise ValueError("each resolution must be >= 2")
    T = fields.disc.spaces.y_time.interval[1]
    t, a, b = np.linspace(0, T, nt), np.linspace(0, 1, nx), np.linspace(0, 1, ny)
    tt, bb, aa = np.meshgrid(t, b, a, indexing="ij")
    return np.column_stack([tt.ravel(), aa.ravel(), bb.ravel()])


def export_vtk(fields: SolutionFields, path, res=(17, 17, 17)) -> Path:
    """Write y, u and lambda on a structured space-time grid.

    Points are (x, y, t) so the file shows the space-time cylinder.
    """
    if fields.disc.geometry.dim != 2:
        raise ValueError("VTK export supports two spatial dimensions")
    pts = parameter_grid(fields, res)
    data = {}
    for name in ("y", "u", "lam"):
        data[name], phys = sample_field(fields, pts, name)
    nt, nx, ny = (int(r) for r in res)
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("space-time optimal control fields\nASCII\nDATASET STRUCTURED_GRID\n")
        fh.write("DIMENSIONS %d %d %d\n" % (nx, ny, nt))
        fh.write("POINTS %d double\n" % len(pts))
        np.savetxt(fh, phys[:, [1, 2, 0]], fmt="%.10g")
        fh.write("POINT_DATA %d\n" % len(pts))
        for name, v in data.items():
            fh.write("SCALARS %s double 1\nLOOKUP_TABLE default\n" % name)
            np.savetxt(fh, v, fmt="%.12g")
    return path


def read_vtk_point_data(path) -> tuple[np.ndarray, dict]:
    """Minimal reader for files written by `export_vtk`."""
    lines = Path(path).read_text().split("\n")
    i = next(k for k, ln in enumerate(lines) if ln.startswith("POINTS"))
    n = int(lines[i].split()[1])
    pts = np.loadtxt(lines[i + 1:i + 1 + n]).reshape(n, 3)
    data = {}
    k = i + 1 + n
    while k < len(lines):
        if lines[k].startswith("SCALARS"):
            name = lines[k].split()[1]
            data[name] = np.loadtxt(lines[k + 2:k + 2 + n]).reshape(n)
            k += 2 + n
        else:
            k += 1
    return pts, data


def dump_matrices(system: KKTSystem, directory) -> list[Path]:
    """Matrix Market dumps of the univariate and spatial factors."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tm, sm = system.disc.tm, system.disc.sm
    out = []
    for prefix, mats in (("time", tm), ("space", sm)):
        for name in mats.__dataclass_fields__:
            p = d / ("%s_%s.mtx" % (prefix, name))
            write_matrix_market(p, getattr(mats, name))
            out.append(p)
    return out
