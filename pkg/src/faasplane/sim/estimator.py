"""scikit-learn style wrapper around the routing simulator.

Hyperparameters go in the constructor, ``fit`` runs the batch and stores
fitted attributes with a trailing underscore. ``X`` is optional: when given it
is an arrival table, one row per call, with columns ``tick`` and optionally
``receiving_dc`` (negative means "let the beacon choose").
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .config import ScenarioConfig
from .engine import BatchResult, run, run_batch


def _arrivals(X) -> list[tuple[int, int | None]]:
    X = check_array(X, dtype=np.int64, ensure_min_samples=1)
    if X.shape[1] not in (1, 2):
        raise ValueError("arrival table needs 1 (tick) or 2 (tick, receiving_dc) columns")
    if (X[:, 0] < 0).any() or (np.diff(X[:, 0]) < 0).any():
        raise ValueError("arrival ticks must be non-negative and non-decreasing")
    if X.shape[1] == 1:
        return [(int(t), None) for t in X[:, 0]]
    return [(int(t), None if d < 0 else int(d)) for t, d in X]


class LoadBalancingSimulator(BaseEstimator):
    def __init__(
        self,
        policy="default",
        num_data_centers=6,
        gateways_per_dc=3,
        capacity=1,
        arrival_mode="random",
        total_calls=10_000,
        runs=5,
        load_factor=0.95,
        refresh_period=1,
        seed="faasplane",
        n_jobs=1,
    ):
        self.policy = policy
        self.num_data_centers = num_data_centers
        self.gateways_per_dc = gateways_per_dc
        self.capacity = capacity
        self.arrival_mode = arrival_mode
        self.total_calls = total_calls
        self.runs = runs
        self.load_factor = load_factor
        self.refresh_period = refresh_period
        self.seed = seed
        self.n_jobs = n_jobs

    def to_config(self) -> ScenarioConfig:
        p = self.get_params()
        sim = {k: p[k] for k in ("policy", "num_data_centers", "gateways_per_dc", "capacity", "arrival_mode",
                                 "total_calls", "runs", "load_factor", "refresh_period")}
        return ScenarioConfig.from_dict({"seed": str(self.seed), "sim": sim})

    def fit(self, X=None, y=None):
        config = self.to_config()
        if X is None:
            self.batch_ = run_batch(config, n_jobs=self.n_jobs)
        else:
            arrivals = _arrivals(X)
            config = config.with_overrides([f"sim.total_calls={len(arrivals)}"])
            self.batch_ = BatchResult(config, [run(config, i, arrivals) for i in range(config.sim.runs)])
        self.metrics_ = self.batch_.metrics
        self.average_queue_time_ = self.batch_.average_queue_time
        self.dc_counts_ = np.asarray(self.batch_.dc_counts)
        return self

    def predict(self, X):
        """Chosen data center for each call of the arrival table (run 0)."""
        check_is_fitted(self, "batch_")
        arrivals = _arrivals(X)
        config = self.to_config().with_overrides([f"sim.total_calls={len(arrivals)}"])
        final = {}
        for d in run(config, 0, arrivals).decisions:
            final[d.call_id] = d.chosen_dc  # later hops override earlier ones
        return np.array([final[i] for i in range(len(arrivals))])

    def score(self, X=None, y=None):
        """Negative average queue time, so larger is better."""
        check_is_fitted(self, "batch_")
        return -float(self.average_queue_time_)
