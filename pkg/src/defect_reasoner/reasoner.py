"""scikit-learn style front end chaining plant, validate, climb, analyse and summarise."""
from __future__ import annotations

import time
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted, check_X_y

from .analysis import analyse_forest, summary_forest
from .features import DC_NAMES, DCMatrix, FeatureRange
from .forest import ForestConfig, ReasoningForest, climb_forest, val_forest
from .report import ReportBundle, explain_forest


class DefectReasoner(ClassifierMixin, BaseEstimator):
    """Explain one reasoning target from defect characteristics.

    ``fit`` trains the forest on ``(X, y)`` and keeps every intermediate
    result: ``forest_``, ``validation_``, ``paths_``, ``nodes_``,
    ``routes_``, ``analysed_``, ``summary_`` and ``feature_range_``.
    ``timings_`` holds the wall time of each step in milliseconds.

    Examples
    --------
    >>> reasoner = DefectReasoner(n_tree=20).fit(matrix.values, y, target="undetected")  # doctest: +SKIP
    >>> reasoner.summary_.ranked()[:3]  # doctest: +SKIP
    """

    STEPS = ("plant", "validate", "climb", "analyse", "summarise")

    def __init__(
        self,
        n_tree=200,
        max_depth=10,
        min_samples_leaf=2,
        features_per_split=ForestConfig.features_per_split,
        seed=0,
        balance_classes=True,
        good_learned_threshold=0.9,
        top_k=5,
        feature_list=None,
        n_jobs=None,
    ):
        self.n_tree = n_tree
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.features_per_split = features_per_split
        self.seed = seed
        self.balance_classes = balance_classes
        self.good_learned_threshold = good_learned_threshold
        self.top_k = top_k
        self.feature_list = feature_list
        self.n_jobs = n_jobs

    def _features(self, n_features: int) -> tuple[str, ...]:
        if self.feature_list is not None:
            names = tuple(self.feature_list)
        elif n_features == len(DC_NAMES):
            names = DC_NAMES
        else:
            names = tuple(f"x{k}" for k in range(n_features))
        if len(names) != n_features:
            raise ValueError(f"{len(names)} feature names for {n_features} columns")
        return names

    def fit(self, X, y, target: Optional[str] = None, feature_range: Optional[FeatureRange] = None):
        if isinstance(X, DCMatrix):
            names = tuple(X.feature_list) if self.feature_list is None else self._features(X.values.shape[1])
            X = X.values
        else:
            names = None
        X, y = check_X_y(X, y, dtype=np.float64)
        names = names or self._features(X.shape[1])
        self.feature_names_ = names
        self.target_ = target
        self.feature_range_ = feature_range or FeatureRange(names, X.min(axis=0), X.max(axis=0))
        timings: dict[str, float] = {}

        def timed(step, fn, *args, **kwargs):
            start = time.perf_counter()
            result = fn(*args, **kwargs)
            timings[step] = (time.perf_counter() - start) * 1000.0
            return result

        config = ForestConfig(
            self.n_tree, self.max_depth, self.min_samples_leaf, self.features_per_split,
            self.seed, self.balance_classes, self.good_learned_threshold,
        )
        self.forest_ = timed("plant", ReasoningForest.from_config(config, n_jobs=self.n_jobs).fit, X, y)
        self.validation_ = timed("validate", val_forest, self.forest_, X, y, names)
        self.paths_, self.nodes_, self.routes_ = timed("climb", climb_forest, self.forest_, names)
        self.analysed_ = timed("analyse", analyse_forest, self.nodes_, self.paths_, self.validation_.error_features)
        self.summary_ = timed(
            "summarise", summary_forest, self.analysed_, self.routes_, names, self.feature_range_,
            top_k=self.top_k, target=target,
        )
        self.timings_ = timings
        self.classes_ = self.forest_.classes_
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "forest_")
        return self.forest_.predict(X)

    def predict_proba(self, X):
        check_is_fitted(self, "forest_")
        return self.forest_.predict_proba(X)

    def explain(self, out_dir, route_plot: bool = False) -> ReportBundle:
        check_is_fitted(self, "summary_")
        start = time.perf_counter()
        bundle = explain_forest(self.summary_, self.feature_names_, out_dir, route_plot, self.target_)
        self.timings_["explain"] = (time.perf_counter() - start) * 1000.0
        return bundle

