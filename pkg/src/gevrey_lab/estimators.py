"""scikit-learn style wrappers around the exponential and Gevrey fits.

Each estimator takes X as a column of |eps| values (plus N for the remainder
fit) and stores fitted constants in trailing-underscore attributes, so they
compose with sklearn tooling such as clone and cross validation.
"""

from __future__ import annotations

from math import lgamma

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

from .gevrey import cover_fit, fit_flatness


def _r2(y, pred):
    tot = float(np.sum((y - y.mean()) ** 2))
    return 1 - float(np.sum((y - pred) ** 2)) / tot if tot > 0 else 1.0


class FlatnessRegressor(RegressorMixin, BaseEstimator):
    """delta(eps) ~ K exp(-M |eps|^{-s}).

    With `exponent=None` s is fitted; otherwise s is held at `exponent`.
    `score` is r^2 of log delta, the quantity the fit minimizes.
    """

    def __init__(self, exponent: float | None = None, s_bounds=(0.05, 3.0)):
        self.exponent = exponent
        self.s_bounds = s_bounds

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_min_samples=3)
        self.n_features_in_ = X.shape[1]
        ref = 1.0 if self.exponent is None else self.exponent
        f = fit_flatness(X[:, 0], y, ref, self.s_bounds)
        if self.exponent is None:
            self.K_, self.M_, self.s_ = f.K_free, f.M_free, f.s_fit
        else:
            self.K_, self.M_, self.s_ = f.K, f.M, float(self.exponent)
        self.degenerate_ = f.degenerate
        return self

    def predict(self, X):
        check_is_fitted(self, "K_")
        X = validate_data(self, X, reset=False)
        return self.K_ * np.exp(-self.M_ * X[:, 0] ** (-self.s_))

    def score(self, X, y, sample_weight=None):
        y = np.asarray(y, float)
        return _r2(np.log(y), np.log(self.predict(X)))


class GevreyRemainderRegressor(RegressorMixin, BaseEstimator):
    """Tightest C M^N N!^s |eps|^N covering remainders; X columns are (N, |eps|)."""

    def __init__(self, s: float = 2.0):
        self.s = s

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.n_features_in_ = X.shape[1]
        N, e = X[:, 0], X[:, 1]
        ok = y > 0
        lg = np.array([lgamma(n + 1) for n in N[ok]])
        c0, c1 = cover_fit(N[ok], np.log(y[ok]) - self.s * lg - N[ok] * np.log(e[ok]))
        self.C_, self.M_ = float(np.exp(c0)), float(np.exp(c1))
        return self

    def predict(self, X):
        check_is_fitted(self, "C_")
        X = validate_data(self, X, reset=False)
        N, e = X[:, 0], X[:, 1]
        lg = np.array([lgamma(n + 1) for n in N])
        return self.C_ * np.exp(N * np.log(self.M_) + self.s * lg + N * np.log(e))


class ExponentialBoundRegressor(RegressorMixin, BaseEstimator):
    """Tightest K exp(-M |eps|^{-p}) lying above every sample, p fixed."""

    def __init__(self, power: float = 0.5):
        self.power = power

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.n_features_in_ = X.shape[1]
        c0, c1 = cover_fit(-X[:, 0] ** (-self.power), np.log(y))
        self.K_, self.M_ = float(np.exp(c0)), float(c1)
        return self

    def predict(self, X):
        check_is_fitted(self, "K_")
        X = validate_data(self, X, reset=False)
        return self.K_ * np.exp(-self.M_ * X[:, 0] ** (-self.power))
