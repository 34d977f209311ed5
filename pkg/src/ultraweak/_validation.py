"""Input checking shared by the estimators and the CLI."""

import numbers

import numpy as np
from sklearn.utils import check_array

from .exceptions import ConfigError


def check_points(X, dim):
    """Coerce to a finite float ``(k, dim)`` array; 1D input is a column in 1D."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if dim == 1 else X[None, :]
    try:
        X = check_array(X, dtype=np.float64, ensure_min_samples=1)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if X.shape[1] != dim:
        raise ConfigError(f"expected points with {dim} coordinates, got {X.shape[1]}")
    return X


def check_positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_parameters(mu, n_params):
    """Parameter samples as a ``(k, n_params)`` float array."""
    mu = np.asarray(mu, dtype=float)
    if mu.ndim == 0:
        mu = mu.reshape(1, 1)
    elif mu.ndim == 1:
        mu = mu[:, None] if n_params == 1 else mu[None, :]
    try:
        mu = check_array(mu, dtype=np.float64, ensure_min_samples=1)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if mu.shape[1] != n_params:
        raise ConfigError(f"expected {n_params} parameter(s) per sample, got {mu.shape[1]}")
    return mu
