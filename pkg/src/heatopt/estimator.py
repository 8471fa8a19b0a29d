"""Estimator-style front end.

``fit`` assembles and solves the optimality system for the benchmark data;
``predict`` evaluates the optimal state at space-time parameter points.
There is no training data: ``X`` in ``fit`` is accepted and ignored.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .kkt import (KKTSystem, ProblemConfig, estimate_schur_condition, evaluate_cost,
                  sample_field, solve_system)

__all__ = ["HeatTrackingControl"]


class HeatTrackingControl(BaseEstimator):
    """Optimal control of the heat equation with a tracking-type cost.

    Parameters mirror :class:`heatopt.kkt.ProblemConfig`.

    Attributes after ``fit``: ``fields_`` (SolutionFields), ``report_``
    (SolveReport), ``n_iter_``, ``cost_`` (tracking, regularization, total)
    and ``system_``.
    """

    def __init__(self, geometry="quarter_annulus", level=4, degree=2, alpha=1e-3,
                 kappa=1e-2, observation="partial", formulation="3x3",
                 control_space="standard", backend="cholesky", tol=1e-6, maxit=1000):
        self.geometry = geometry
        self.level = level
        self.degree = degree
        self.alpha = alpha
        self.kappa = kappa
        self.observation = observation
        self.formulation = formulation
        self.control_space = control_space
        self.backend = backend
        self.tol = tol
        self.maxit = maxit

    def _config(self) -> ProblemConfig:
        return ProblemConfig(**self.get_params())

    def fit(self, X=None, y=None):
        self.system_ = KKTSystem(self._config())
        self.fields_, self.report_ = solve_system(self.system_)
        self.n_iter_ = self.report_.iterations
        self.cost_ = evaluate_cost(self.fields_, self.system_)
        return self

    def predict(self, X, field: str = "y"):
        """Values at points X with columns (t, xhat_1, ..., xhat_d)."""
        check_is_fitted(self, "fields_")
        X = check_array(X, ensure_min_features=2)
        return sample_field(self.fields_, X, field)[0]

    def score(self, X=None, y=None):
        """Negative cost functional (larger is better)."""
        check_is_fitted(self, "cost_")
        return -self.cost_[2]

    def condition_number(self, n_iters: int = 60) -> float:
        return estimate_schur_condition(self._config(), n_iters=n_iters).cond

    @property
    def converged_(self) -> bool:
        check_is_fitted(self, "report_")
        return bool(self.report_.converged)

    def state_coefficients(self) -> np.ndarray:
        check_is_fitted(self, "fields_")
        return self.fields_.state_coefficients()
