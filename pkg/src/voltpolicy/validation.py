"""Input checks shared by the estimator and the evaluation harness."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .scenarios import ScenarioSet

__all__ = ["check_theta_matrix", "check_scenarios"]


def check_theta_matrix(X, n_buses: int | None = None) -> np.ndarray:
    """Validate an ``(n, 3N)`` grid-conditions array."""
    X = check_array(X, dtype=np.float64, ensure_min_samples=0)
    if X.shape[1] % 3:
        raise ValueError(f"grid conditions need 3N columns, got {X.shape[1]}")
    if n_buses is not None and X.shape[1] != 3 * n_buses:
        raise ValueError(f"expected {3 * n_buses} columns for N={n_buses}, got {X.shape[1]}")
    n = X.shape[1] // 3
    if np.any(X[:, :n] < 0) or np.any(X[:, 2 * n :] < 0):
        raise ValueError("active loads and solar generation must be nonnegative")
    return X


def check_scenarios(X, n_buses: int) -> ScenarioSet:
    """Coerce ``X`` to a :class:`ScenarioSet` aligned with an N-bus feeder."""
    if isinstance(X, ScenarioSet):
        if X.n_buses != n_buses:
            raise ValueError(f"scenarios cover {X.n_buses} buses, feeder has {n_buses}")
        if np.any(X.p_c < 0) or np.any(X.p_g < 0):
            raise ValueError("active loads and solar generation must be nonnegative")
        return X
    return ScenarioSet.from_theta_matrix(check_theta_matrix(X, n_buses))
