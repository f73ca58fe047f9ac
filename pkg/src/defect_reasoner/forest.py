"""Ensemble of binary CART trees trained to reproduce one reasoning target.

The forest is a reasoner, not a predictor: it is trained and evaluated on
the same defects, and its value lies in the splits it learns. Each tree is
grown on a bootstrap sample with Gini splits over a random subset of the
characteristics at every node. Trees are stored as flat arrays (pre-order
node ids) and can be unrolled into :class:`TreeNode` records and
root-to-leaf :class:`Route` objects.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import ConfigError, DegenerateTarget
from .features import DC_NAMES, N_DC

GAIN_TOL = 1e-12


@dataclass(frozen=True)
class ForestConfig:
    n_tree: int = 200
    max_depth: int = 10
    min_samples_leaf: int = 2
    features_per_split: int = math.ceil(math.sqrt(N_DC))
    seed: int = 0
    balance_classes: bool = True
    good_learned_threshold: float = 0.9

    def validate(self, n_features: int = N_DC) -> "ForestConfig":
        if self.n_tree < 1:
            raise ConfigError(f"n_tree must be >= 1, got {self.n_tree}")
        if self.max_depth < 1:
            raise ConfigError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_samples_leaf < 1:
            raise ConfigError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")
        if not 1 <= self.features_per_split <= n_features:
            raise ConfigError(f"features_per_split must be in [1, {n_features}], got {self.features_per_split}")
        if not 0.0 <= self.good_learned_threshold <= 1.0:
            raise ConfigError("good_learned_threshold must be in [0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        return self


@dataclass(frozen=True)
class Split:
    dc_index: int
    threshold: float
    gain: float


def gini(w_neg: float, w_pos: float) -> float:
    total = w_neg + w_pos
    if total <= 0:
        return 0.0
    p = w_pos / total
    return 2.0 * p * (1.0 - p)


def best_split(
    X: np.ndarray,
    y: np.ndarray,
    candidate_dcs: Sequence[int],
    weights: Optional[np.ndarray] = None,
    min_samples_leaf: int = 1,
) -> Optional[Split]:
    """Best weighted-Gini threshold split over the candidate columns.

    Thresholds are midpoints between consecutive distinct values and both
    children must keep ``min_samples_leaf`` rows. Among splits whose gain is
    within ``GAIN_TOL`` of the maximum, the lowest column index and then the
    lowest threshold wins. Returns None when no split improves impurity.
    """
    n = len(y)
    if n < 2 * min_samples_leaf:
        return None
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    pos = w * (y == 1)
    total_w = float(w.sum())
    total_pos = float(pos.sum())
    parent = gini(total_w - total_pos, total_pos)
    if parent <= 0.0:
        return None

    sizes = np.arange(1, n)
    size_ok = (sizes >= min_samples_leaf) & (n - sizes >= min_samples_leaf)
    found = []  # (dc, thresholds, gains) per column
    for dc in sorted(candidate_dcs):
        x = X[:, dc]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        valid = (xs[:-1] != xs[1:]) & size_ok
        if not valid.any():
            continue
        cw = np.cumsum(w[order])[:-1]
        cp = np.cumsum(pos[order])[:-1]
        wl, pl = cw[valid], cp[valid]
        wr, pr = total_w - wl, total_pos - pl
        with np.errstate(divide="ignore", invalid="ignore"):
            fl = np.where(wl > 0, pl / wl, 0.0)
            fr = np.where(wr > 0, pr / wr, 0.0)
        child = (wl * 2.0 * fl * (1.0 - fl) + wr * 2.0 * fr * (1.0 - fr)) / total_w
        gains = parent - child
        lo, hi = xs[:-1][valid], xs[1:][valid]
        thresholds = (lo + hi) / 2.0
        thresholds = np.where(thresholds >= hi, lo, thresholds)
        found.append((dc, thresholds, gains))
    if not found:
        return None
    top = max(float(g.max()) for _, _, g in found)
    if top <= GAIN_TOL:
        return None
    for dc, thresholds, gains in found:
        near = np.flatnonzero(gains >= top - GAIN_TOL)
        if near.size:
            k = near[np.argmin(thresholds[near])]
            return Split(int(dc), float(thresholds[k]), float(gains[k]))
    return None  # pragma: no cover


@dataclass
class Tree:
    """Flat binary tree; leaves have ``left == right == -1`` and ``feature == -1``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # weighted (neg, pos) per node
    n_samples: np.ndarray
    depth: np.ndarray
    parent: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.left < 0

    @property
    def leaf_class(self) -> np.ndarray:
        # ties go to the positive class
        return (self.counts[:, 1] >= self.counts[:, 0]).astype(np.int8)

    @property
    def proba(self) -> np.ndarray:
        total = self.counts.sum(axis=1)
        return np.divide(self.counts[:, 1], total, out=np.zeros(len(total)), where=total > 0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = ~self.is_leaf[node]
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active[idx] = ~self.is_leaf[node[idx]]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.leaf_class[self.apply(X)]

    def decision_path(self, x: np.ndarray) -> list[int]:
        path = [0]
        while not self.is_leaf[path[-1]]:
            k = path[-1]
            path.append(int(self.left[k] if x[self.feature[k]] <= self.threshold[k] else self.right[k]))
        return path


def _grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    sample_weight: np.ndarray,
    rows: np.ndarray,
    rng: np.random.Generator,
    max_depth: int,
    min_samples_leaf: int,
    features_per_split: int,
) -> tuple[Tree, np.ndarray]:
    """Grow one tree over ``rows`` (a bootstrap draw); returns it with its MDI vector."""
    n_features = X.shape[1]
    keys = ("feature", "threshold", "left", "right", "counts", "n_samples", "depth", "parent")
    cols: dict[str, list] = {k: [] for k in keys}
    mdi = np.zeros(n_features)
    root_weight = float(sample_weight[rows].sum())

    def build(idx: np.ndarray, d: int, par: int) -> int:
        w = sample_weight[idx]
        is_pos = y[idx] == 1
        pos, neg = float(w[is_pos].sum()), float(w[~is_pos].sum())
        node = len(cols["feature"])
        for key, value in (("feature", -1), ("threshold", np.nan), ("left", -1), ("right", -1),
                           ("counts", (neg, pos)), ("n_samples", len(idx)), ("depth", d), ("parent", par)):
            cols[key].append(value)
        if d >= max_depth or neg <= 0 or pos <= 0 or len(idx) < 2 * min_samples_leaf:
            return node
        candidates = rng.choice(n_features, size=features_per_split, replace=False)
        split = best_split(X[idx], y[idx], candidates, w, min_samples_leaf)
        if split is None:
            return node
        cols["feature"][node] = split.dc_index
        cols["threshold"][node] = split.threshold
        mdi[split.dc_index] += (neg + pos) / root_weight * split.gain
        go_left = X[idx, split.dc_index] <= split.threshold
        cols["left"][node] = build(idx[go_left], d + 1, node)
        cols["right"][node] = build(idx[~go_left], d + 1, node)
        return node

    build(rows, 0, -1)
    tree = Tree(
        feature=np.asarray(cols["feature"], dtype=np.int64),
        threshold=np.asarray(cols["threshold"], dtype=np.float64),
        left=np.asarray(cols["left"], dtype=np.int64),
        right=np.asarray(cols["right"], dtype=np.int64),
        counts=np.asarray(cols["counts"], dtype=np.float64).reshape(-1, 2),
        n_samples=np.asarray(cols["n_samples"], dtype=np.int64),
        depth=np.asarray(cols["depth"], dtype=np.int64),
        parent=np.asarray(cols["parent"], dtype=np.int64),
    )
    return tree, mdi


def tree_rng(seed: int, index: int) -> np.random.Generator:
    """Random stream of tree ``index``, derived only from ``(seed, index)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def class_weights(y: np.ndarray, balance: bool) -> np.ndarray:
    """Per-row weights; balanced weights give class ``c`` the weight ``n / (2 n_c)``."""
    if not balance:
        return np.ones(len(y))
    n = len(y)
    n_pos = int(np.sum(y == 1))
    return np.where(y == 1, n / (2.0 * n_pos), n / (2.0 * (n - n_pos)))


def _fit_one(X, y, weights, seed, index, max_depth, min_samples_leaf, features_per_split):
    rng = tree_rng(seed, index)
    rows = rng.integers(0, len(y), size=len(y))
    tree, mdi = _grow_tree(X, y, weights, rows, rng, max_depth, min_samples_leaf, features_per_split)
    return tree, rows, mdi


class ReasoningForest(ClassifierMixin, BaseEstimator):
    """Bagged Gini CART ensemble over defect characteristics.

    Parameters mirror :class:`ForestConfig`; ``n_jobs`` only changes how many
    trees are grown at once, never the result.

    Attributes
    ----------
    trees_ : list of Tree
    bootstrap_indices_ : list of ndarray
        Row indices drawn (with replacement) for each tree.
    mdi_ : ndarray
        Mean-decrease-impurity per column, accumulated while growing, summed over trees.
    feature_importances_ : ndarray
        ``mdi_`` normalised to sum to one (zeros when no tree split).
    """

    def __init__(
        self,
        n_tree=200,
        max_depth=10,
        min_samples_leaf=2,
        features_per_split=ForestConfig.features_per_split,
        seed=0,
        balance_classes=True,
        good_learned_threshold=0.9,
        n_jobs=None,
    ):
        self.n_tree = n_tree
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.features_per_split = features_per_split
        self.seed = seed
        self.balance_classes = balance_classes
        self.good_learned_threshold = good_learned_threshold
        self.n_jobs = n_jobs

    @classmethod
    def from_config(cls, config: ForestConfig, n_jobs=None) -> "ReasoningForest":
        return cls(**{f: getattr(config, f) for f in ForestConfig.__dataclass_fields__}, n_jobs=n_jobs)

    @property
    def config(self) -> ForestConfig:
        return ForestConfig(**{f: getattr(self, f) for f in ForestConfig.__dataclass_fields__})

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        config = self.config.validate(X.shape[1])
        y = np.asarray(y)
        if not np.isin(y, (0, 1)).all():
            raise ValueError("targets must be binary 0/1")
        y = y.astype(np.int8)
        n_pos = int(y.sum())
        if n_pos < 2 or len(y) - n_pos < 2:
            raise DegenerateTarget(f"need >= 2 samples of each class, got {n_pos} positive / {len(y) - n_pos} negative")
        weights = class_weights(y, config.balance_classes)
        grown = Parallel(n_jobs=self.n_jobs, prefer="threads")(
            delayed(_fit_one)(X, y, weights, config.seed, t, config.max_depth,
                              config.min_samples_leaf, config.features_per_split)
            for t in range(config.n_tree)
        )
        self.trees_ = [tree for tree, _, _ in grown]
        self.bootstrap_indices_ = [rows for _, rows, _ in grown]
        self.mdi_ = np.sum([mdi for _, _, mdi in grown], axis=0)
        total = self.mdi_.sum()
        self.feature_importances_ = self.mdi_ / total if total > 0 else np.zeros_like(self.mdi_)
        self.sample_weight_ = weights
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def _votes(self, X) -> np.ndarray:
        check_is_fitted(self, "trees_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return np.vstack([tree.predict(X) for tree in self.trees_])

    def predict_proba(self, X):
        frac = self._votes(X).mean(axis=0)
        return np.column_stack([1.0 - frac, frac])

    def predict(self, X):
        votes = self._votes(X)
        # majority vote, ties to the positive class
        return (2 * votes.sum(axis=0) >= len(self.trees_)).astype(np.int8)


def plant_forest(X, y, config: ForestConfig = ForestConfig(), n_jobs=None) -> ReasoningForest:
    """Train a forest with ``config``; raises :class:`DegenerateTarget` on too few samples of a class."""
    return ReasoningForest.from_config(config, n_jobs=n_jobs).fit(X, y)


@dataclass
class ValidationReport:
    good_learned: bool
    learning_score: float
    tpr: float
    tnr: float
    error_features: list[str] = field(default_factory=list)

    @property
    def eval_(self) -> list[float]:
        return [self.learning_score, self.tpr, self.tnr]


def val_forest(forest: ReasoningForest, X, y, feature_list: Sequence[str] = DC_NAMES) -> ValidationReport:
    """Score how well the forest reproduces the target on its own training set.

    The learning score is balanced accuracy of the majority vote. Error
    features count every split on the decision path of each tree that voted
    wrongly on a misjudged sample; characteristics counted at least the mean
    count are returned, most frequent first (ties in ``feature_list`` order).
    """
    X = check_array(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int8)
    pred = forest.predict(X)
    pos, neg = y == 1, y == 0
    tpr = float(np.mean(pred[pos] == 1)) if pos.any() else 0.0
    tnr = float(np.mean(pred[neg] == 0)) if neg.any() else 0.0
    score = (tpr + tnr) / 2.0

    tally = np.zeros(len(feature_list), dtype=np.int64)
    for i in np.flatnonzero(pred != y):
        for tree in forest.trees_:
            path = tree.decision_path(X[i])
            if tree.leaf_class[path[-1]] != y[i]:
                for node in path[:-1]:
                    tally[tree.feature[node]] += 1
    errors: list[str] = []
    seen = tally > 0
    if seen.any():
        mean = tally[seen].mean()
        ranked = sorted(np.flatnonzero(tally >= mean), key=lambda k: (-tally[k], k))
        errors = [feature_list[k] for k in ranked]
    return ValidationReport(score >= forest.good_learned_threshold, score, tpr, tnr, errors)


@dataclass
class TreeNode:
    tree_id: int
    node_id: int
    depth: int
    counts: tuple[float, float]
    n_samples: int
    parent: int
    dc_index: int = -1
    dc_name: Optional[str] = None
    threshold: Optional[float] = None
    left: int = -1
    right: int = -1
    predicted_class: Optional[int] = None
    proba: Optional[float] = None

    @property
    def is_leaf(self) -> bool:
        return self.left < 0


@dataclass
class Route:
    """Conditions from root to one leaf; relations are ``"<="`` (left) or ``">"`` (right)."""

    tree_id: int
    leaf_id: int
    conditions: list[tuple[str, str, float]]
    leaf_class: int
    support: int
    purity: float

    @property
    def score(self) -> float:
        return self.support * self.purity

    def satisfied_by(self, row: np.ndarray, feature_list: Sequence[str]) -> bool:
        for name, rel, thr in self.conditions:
            value = row[feature_list.index(name)]
            if (value <= thr) != (rel == "<="):
                return False
        return True


def climb_forest(
    forest: ReasoningForest, feature_list: Sequence[str] = DC_NAMES
) -> tuple[list[tuple[int, list[int]]], list[TreeNode], list[Route]]:
    """Unroll every tree into node records, root-to-leaf paths and routes.

    ``paths[k]`` and ``routes[k]`` describe the same leaf; both are listed per
    tree in pre-order leaf order.
    """
    check_is_fitted(forest, "trees_")
    paths: list[tuple[int, list[int]]] = []
    nodes: list[TreeNode] = []
    routes: list[Route] = []
    for t, tree in enumerate(forest.trees_):
        leaf_class, proba = tree.leaf_class, tree.proba
        for k in range(tree.node_count):
            node = TreeNode(t, k, int(tree.depth[k]), (float(tree.counts[k, 0]), float(tree.counts[k, 1])),
                            int(tree.n_samples[k]), int(tree.parent[k]))
            if tree.is_leaf[k]:
                node.predicted_class = int(leaf_class[k])
                node.proba = float(proba[k])
            else:
                node.dc_index = int(tree.feature[k])
                node.dc_name = feature_list[node.dc_index]
                node.threshold = float(tree.threshold[k])
                node.left, node.right = int(tree.left[k]), int(tree.right[k])
            nodes.append(node)

        def walk(k: int, trail: list[int], conds: list[tuple[str, str, float]]):
            trail = trail + [k]
            if tree.is_leaf[k]:
                cls = int(leaf_class[k])
                purity = float(proba[k]) if cls == 1 else 1.0 - float(proba[k])
                paths.append((t, trail))
                routes.append(Route(t, k, conds, cls, int(tree.n_samples[k]), purity))
                return
            name, thr = feature_list[tree.feature[k]], float(tree.threshold[k])
            walk(int(tree.left[k]), trail, conds + [(name, "<=", thr)])
            walk(int(tree.right[k]), trail, conds + [(name, ">", thr)])

        walk(0, [], [])
    return paths, nodes, routes


def tree_to_dict(tree: Tree, feature_list: Sequence[str] = DC_NAMES, k: int = 0) -> dict:
    counts = [float(c) for c in tree.counts[k]]
    if tree.is_leaf[k]:
        return {"leaf": int(tree.leaf_class[k]), "proba": float(tree.proba[k]), "counts": counts}
    return {
        "dc": feature_list[tree.feature[k]],
        "threshold": float(tree.threshold[k]),
        "counts": counts,
        "left": tree_to_dict(tree, feature_list, int(tree.left[k])),
        "right": tree_to_dict(tree, feature_list, int(tree.right[k])),
    }


def dump_forest(forest: ReasoningForest, path: Path | str, feature_list: Sequence[str] = DC_NAMES) -> None:
    check_is_fitted(forest, "trees_")
    doc = [tree_to_dict(tree, feature_list) for tree in forest.trees_]
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")
