"""Parameter sweeps that regenerate the benchmark tables as CSV.

Each table is swept at ``min(level, max_level)``; when the level is capped
the reference value of the uncapped cell is kept for comparison and the
``reference_level`` column says which level it belongs to.
"""

from __future__ import annotations

import csv
import io
import time
from importlib import resources

from .kkt import KKTSystem, ProblemConfig, estimate_schur_condition, solve_system

__all__ = ["TABLES", "TableIncomplete", "load_reference", "run_table", "write_table"]

COLUMNS = ["table", "formulation", "backend", "variant", "degree", "level", "alpha", "kappa",
           "observation", "control_space", "value", "converged", "reference",
           "reference_level", "seconds"]

_VARIANTS = {"partial_standard": ("partial", "standard"), "full_standard": ("full", "standard"),
             "partial_smooth": ("partial", "smooth")}


def load_reference(table: int) -> list[dict]:
    text = resources.files("heatopt.data").joinpath("table%d.csv" % table).read_text()
    rows = csv.DictReader(ln for ln in io.StringIO(text) if not ln.startswith("#"))
    return list(rows)


def _cells(table: int):
    """Yield (config kwargs, kind, reference value) per reference cell."""
    for r in load_reference(table):
        ref, lvl = float(r["reference"]), int(r.get("level", 0))
        kw = dict(degree=int(r["degree"]), level=lvl, alpha=float(r["alpha"]),
                  kappa=float(r["kappa"]))
        if table in (1, 2):
            kw["formulation"] = r["formulation"]
            yield kw, "iterations", ref
        elif table in (3, 4):
            kw["observation"], kw["control_space"] = _VARIANTS[r["variant"]]
            yield dict(kw, variant=r["variant"]), "condition", ref
        else:
            kw["backend"] = r["backend"]
            yield kw, "iterations", ref


TABLES = (1, 2, 3, 4, 5)


class TableIncomplete(RuntimeError):
    """A sweep stopped early; `rows` holds the cells finished so far."""

    def __init__(self, rows, reason):
        super().__init__("table incomplete: %s" % reason)
        self.rows, self.reason = rows, reason


def run_table(table: int, max_level: int = 4, max_degree: int = 5,
              progress=None) -> list[dict]:
    if table not in TABLES:
        raise ValueError("table must be one of 1..5")
    out, cache = [], {}
    for kw, kind, ref in _cells(table):
        ref_level = kw["level"]
        if kw["degree"] > max_degree:
            continue
        level = min(ref_level, max_level)
        variant = kw.pop("variant", "")
        cfg = ProblemConfig(**dict(kw, level=level))
        key = repr(cfg.to_dict())
        t0 = time.perf_counter()
        if key not in cache:
            try:
                if kind == "iterations":
                    _, rep = solve_system(KKTSystem(cfg))
                    cache[key] = (rep.iterations, rep.converged)
                else:
                    cache[key] = (round(estimate_schur_condition(cfg).cond, 4), True)
            except MemoryError:
                raise TableIncomplete(out, "out of memory at level %d, degree %d"
                                      % (level, cfg.degree)) from None
        value, conv = cache[key]
        row = dict(table=table, formulation=cfg.formulation, backend=cfg.backend,
                   variant=variant, degree=cfg.degree, level=level, alpha=cfg.alpha,
                   kappa=cfg.kappa, observation=cfg.observation,
                   control_space=cfg.control_space, value=value, converged=conv,
                   reference=ref, reference_level=ref_level,
                   seconds=round(time.perf_counter() - t0, 3))
        out.append(row)
        if progress is not None:
            progress(row)
    return out


def write_table(rows, path_or_file, incomplete: str | None = None) -> None:
    """CSV with COLUMNS; a partial sweep ends with a ``# incomplete: ...`` line."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.DictWriter(fh, fieldnames=COLUMNS)
        w.writeheader()
        w.writerows(rows)
        if incomplete:
            fh.write("# incomplete: %s\n" % incomplete)
    finally:
        if own:
            fh.close()
