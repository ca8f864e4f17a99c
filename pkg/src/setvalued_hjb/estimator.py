"""scikit-learn style wrapper around the Hopf-Lax value function."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .config import load_scenario
from .exceptions import DomainError
from .hopflax import value_surface
from .problem import Scenario
from .quadrature import DEFAULT_PANELS


class HopfLaxValueFunction(BaseEstimator):
    """Evaluate ``U(t, x)`` at rows ``(t, x_1, ..., x_n)``.

    Nothing is learned: ``fit`` validates the scenario and checks that the
    hypotheses behind the representation hold.  ``predict`` returns the
    per-direction thresholds, one column per base direction.

    Parameters
    ----------
    scenario : Scenario or path
        Problem instance, or a scenario file to load.
    k_grid : int, optional
        Override the number of base directions.
    n_panels : int
        Quadrature panels on ``[t, T]``.
    n_jobs : int
        Worker processes for ``predict``.
    """

    def __init__(self, scenario=None, k_grid=None, n_panels=DEFAULT_PANELS, n_jobs=1):
        self.scenario = scenario
        self.k_grid = k_grid
        self.n_panels = n_panels
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        scn = self.scenario
        if scn is None:
            raise ValueError("scenario is required")
        if not isinstance(scn, Scenario):
            scn = load_scenario(scn).scenario
        if self.k_grid is not None:
            scn = scn.with_k_grid(int(self.k_grid))
        if int(self.n_panels) < 1:
            raise ValueError("n_panels must be ≥ 1")
        if int(self.n_jobs) < 1:
            raise ValueError("n_jobs must be ≥ 1")
        scn.require("h1", "h2", "h3", "h5")
        self.scenario_ = scn
        self.cone_ = scn.cone
        self.n_features_in_ = 1 + scn.n
        if X is not None:
            self._validate(X)
        return self

    def _validate(self, X):
        X = check_array(X, dtype=float, ensure_min_samples=1)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns; expected {self.n_features_in_} (t, x...)")
        t = X[:, 0]
        if np.any(t < 0) or np.any(t > self.scenario_.T):
            raise DomainError(f"time column must lie in [0, {self.scenario_.T}]")
        return X

    def _surface(self, X):
        check_is_fitted(self, "scenario_")
        X = self._validate(X)
        return value_surface(self.scenario_, X[:, 0], X[:, 1:], jobs=int(self.n_jobs), panels=int(self.n_panels))

    def predict(self, X):
        """Thresholds ``v_k``, shape ``(n_samples, K)``."""
        return self._surface(X).thresholds

    def predict_p(self, X):
        """Solved costates ``p(t, x, ζ_k)``, shape ``(n_samples, K, n)``."""
        return self._surface(X).p_star

    def base_directions(self):
        check_is_fitted(self, "scenario_")
        return self.cone_.base_grid.copy()
