"""Scikit-learn style wrappers around the extrapolation and constant-fitting routines.

Both estimators follow the usual ``fit`` / ``predict`` / ``get_params``
protocol so they can be cross-validated over levels or instances with the
standard model-selection tools.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .gff import _design, extrapolate_limit

__all__ = ["SurfaceTensionExtrapolator", "EnvelopeConstant"]


def _levels(X) -> np.ndarray:
    X = check_array(X, ensure_2d=False, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError(f"expected a single column of levels, got shape {X.shape}")
        X = X[:, 0]
    return X


class SurfaceTensionExtrapolator(RegressorMixin, BaseEstimator):
    """Fit ``value_n = limit + c 3^{-alpha n}`` (plus lattice corrections) over levels ``n``.

    Parameters
    ----------
    model : {"geometric", "lattice"}
        ``lattice`` adds the ``9^{-n}`` and ``n 9^{-n}`` corner corrections.
    alpha_bounds : tuple of float
        Search interval for the rate ``alpha``.

    Attributes
    ----------
    limit_, rate_, amplitude_ : float
        Fitted infinite-volume limit, geometric rate and leading amplitude.
    result_ : Extrapolation
        The full fit record, including diagnostic flags.
    """

    def __init__(self, model: str = "geometric", alpha_bounds: tuple[float, float] = (0.05, 4.0)):
        self.model = model
        self.alpha_bounds = alpha_bounds

    def fit(self, X, y):
        levels = _levels(X)
        _, y = check_X_y(levels.reshape(-1, 1), y, y_numeric=True)
        if not np.allclose(levels, np.round(levels)):
            raise ValueError("levels must be integers")
        res = extrapolate_limit(levels.astype(int), y, model=self.model, alpha_bounds=tuple(self.alpha_bounds))
        self.result_ = res
        self.limit_ = res.limit
        self.rate_ = res.rate
        self.amplitude_ = res.amplitude
        self.coef_ = np.array([res.limit, res.amplitude, *res.extra])
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        levels = _levels(X)
        return _design(levels, self.rate_, self.model) @ self.coef_


class EnvelopeConstant(RegressorMixin, BaseEstimator):
    """Smallest ``C`` with ``x_i <= C w_i`` on the training instances.

    ``X`` holds the envelope shapes ``w_i > 0`` (one column) and ``y`` the
    measured quantities ``x_i``.  ``predict`` returns the envelope ``C w``;
    :meth:`violations` lists held-out instances exceeding it.

    Parameters
    ----------
    slack : float
        Relative safety factor applied to the fitted constant.
    """

    def __init__(self, slack: float = 0.0):
        self.slack = slack

    def fit(self, X, y):
        w = _levels(X)
        _, y = check_X_y(w.reshape(-1, 1), y, y_numeric=True)
        if np.any(w <= 0):
            raise ValueError("envelope shapes must be positive")
        self.C_ = float(max(np.max(y / w), 0.0)) * (1.0 + self.slack)
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "C_")
        return self.C_ * _levels(X)

    def violations(self, X, y, tol: float = 0.0) -> np.ndarray:
        """Indices of instances with ``y > C w + tol``."""
        check_is_fitted(self, "C_")
        w = _levels(X)
        return np.nonzero(np.asarray(y, dtype=float) > self.C_ * w + tol)[0]

    def margin(self, X, y) -> float:
        """Smallest relative slack ``(C w - y) / (C w)`` over the instances."""
        env = self.predict(X)
        return float(np.min((env - np.asarray(y, dtype=float)) / env))
