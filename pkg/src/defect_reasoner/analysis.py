"""Node scoring, per-characteristic importance and value-range aggregation.

Node importance is coverage times Gini gain, so summing it per
characteristic gives mean-decrease-impurity. Value ranges come from the
routes: each route's conditions on a characteristic define an interval,
intervals are deposited into a weighted histogram over the observed range,
and the bins near the peak form the reported ranges.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import NoRoutes
from .features import FeatureRange
from .forest import Route, TreeNode, gini

N_BINS = 64
PEAK_FRACTION = 0.5


@dataclass
class NodeAnalysis:
    tree_id: int
    node_id: int
    dc_name: Optional[str]
    depth: int
    coverage: float
    gini_gain: float
    error_flag: bool
    importance: float


def analyse_forest(
    nodes: Sequence[TreeNode],
    paths: Sequence[tuple[int, Sequence[int]]],
    error_features: Sequence[str] = (),
) -> list[NodeAnalysis]:
    """Score every node: coverage of the tree's root weight, Gini gain, and their product."""
    by_key = {(n.tree_id, n.node_id): n for n in nodes}
    for tree_id, path in paths:
        missing = [k for k in path if (tree_id, k) not in by_key]
        if missing:
            raise ValueError(f"path of tree {tree_id} references unknown nodes {missing}")
    errors = set(error_features)
    out = []
    for n in nodes:
        root = by_key[(n.tree_id, 0)]
        coverage = sum(n.counts) / sum(root.counts)
        gain = 0.0
        if not n.is_leaf:
            total = sum(n.counts)
            gain = gini(*n.counts)
            for child in (by_key[(n.tree_id, n.left)], by_key[(n.tree_id, n.right)]):
                gain -= sum(child.counts) / total * gini(*child.counts)
            gain = max(0.0, gain)
        out.append(
            NodeAnalysis(
                tree_id=n.tree_id,
                node_id=n.node_id,
                dc_name=n.dc_name,
                depth=n.depth,
                coverage=coverage,
                gini_gain=gain,
                error_flag=n.dc_name in errors,
                importance=coverage * gain,
            )
        )
    return out


def route_interval(route: Route, name: str, lo: float, hi: float) -> Optional[tuple[float, float]]:
    """Interval of ``name`` admitted by the route, clipped to ``[lo, hi]``.

    None when the route does not constrain ``name``.
    """
    constrained = False
    for dc, rel, thr in route.conditions:
        if dc != name:
            continue
        constrained = True
        if rel == "<=":
            hi = min(hi, thr)
        else:
            lo = max(lo, thr)
    return (lo, hi) if constrained else None


def binned_ranges(
    intervals: Sequence[tuple[float, float, float]],
    lo: float,
    hi: float,
    n_bins: int = N_BINS,
    level: float = PEAK_FRACTION,
) -> list[tuple[float, float]]:
    """Merge weighted intervals into the bin runs holding at least ``level`` of the peak weight.

    Each ``(a, b, weight)`` adds ``weight`` to every bin it touches; a
    zero-width interval touches the bin containing it. Returned endpoints are
    bin edges.
    """
    if hi <= lo or not intervals:
        return []
    edges = np.linspace(lo, hi, n_bins + 1)
    hist = np.zeros(n_bins)
    for a, b, weight in intervals:
        if a > b:
            continue
        if a == b:
            k = min(n_bins - 1, int((a - lo) / (hi - lo) * n_bins))
            hist[k] += weight
        else:
            hist[(edges[:-1] < b) & (edges[1:] > a)] += weight
    peak = hist.max()
    if peak <= 0:
        return []
    hot = hist >= level * peak
    runs = []
    k = 0
    while k < n_bins:
        if hot[k]:
            start = k
            while k + 1 < n_bins and hot[k + 1]:
                k += 1
            runs.append((float(edges[start]), float(edges[k + 1])))
        k += 1
    return runs


@dataclass
class DCSummary:
    """Per-characteristic importance and value ranges for one target."""

    feature_list: tuple[str, ...]
    importance: np.ndarray
    failure_ranges: dict[str, list[tuple[float, float]]]
    success_ranges: dict[str, list[tuple[float, float]]]
    feature_range: FeatureRange
    route_to_1: list[Route] = field(default_factory=list)
    route_to_0: list[Route] = field(default_factory=list)
    error_flags: dict[str, bool] = field(default_factory=dict)
    target: Optional[str] = None

    def ranked(self) -> list[str]:
        """Characteristics by descending importance, ties in feature-list order."""
        order = sorted(range(len(self.feature_list)), key=lambda k: (-self.importance[k], k))
        return [self.feature_list[k] for k in order]

    def importance_of(self, name: str) -> float:
        return float(self.importance[self.feature_list.index(name)])

    def to_dict(self) -> dict:
        def route_doc(r: Route) -> dict:
            return {
                "tree": r.tree_id,
                "leaf": r.leaf_id,
                "conditions": [[dc, rel, thr] for dc, rel, thr in r.conditions],
                "leaf_class": r.leaf_class,
                "support": r.support,
                "purity": r.purity,
            }

        return {
            "target": self.target,
            "dc": [
                {
                    "name": name,
                    "importance": float(self.importance[k]),
                    "failure_ranges": [list(r) for r in self.failure_ranges[name]],
                    "success_ranges": [list(r) for r in self.success_ranges[name]],
                    "error_flag": bool(self.error_flags.get(name, False)),
                }
                for k, name in enumerate(self.feature_list)
            ],
            "routes_to_1": [route_doc(r) for r in self.route_to_1],
            "routes_to_0": [route_doc(r) for r in self.route_to_0],
        }


def top_routes(routes: Sequence[Route], leaf_class: int, top_k: int) -> list[Route]:
    chosen = [r for r in routes if r.leaf_class == leaf_class]
    chosen.sort(key=lambda r: (-r.score, r.tree_id, r.leaf_id))
    return chosen[:top_k]


def summary_forest(
    analysed: Sequence[NodeAnalysis],
    routes: Sequence[Route],
    feature_list: Sequence[str],
    ranges: FeatureRange,
    top_k: int = 5,
    target: Optional[str] = None,
) -> DCSummary:
    """Aggregate analysed nodes and routes into a per-characteristic summary.

    Importance is the normalised sum of node importances per characteristic.
    Failure ranges aggregate the intervals of class-1 routes that constrain
    the characteristic, each weighted by support x purity; success ranges do
    the same for class-0 routes.
    """
    feature_list = tuple(feature_list)
    raw = np.zeros(len(feature_list))
    index = {name: k for k, name in enumerate(feature_list)}
    for node in analysed:
        if node.dc_name is not None:
            raw[index[node.dc_name]] += node.importance
    if not any(r.conditions for r in routes):
        raise NoRoutes("the forest holds no split; nothing to summarise")
    total = raw.sum()
    importance = raw / total if total > 0 else raw

    failure: dict[str, list[tuple[float, float]]] = {}
    success: dict[str, list[tuple[float, float]]] = {}
    for name in feature_list:
        lo, hi = ranges[name]
        per_class: dict[int, list[tuple[float, float, float]]] = {0: [], 1: []}
        for r in routes:
            span = route_interval(r, name, lo, hi)
            if span is not None:
                per_class[r.leaf_class].append((span[0], span[1], r.score))
        failure[name] = binned_ranges(per_class[1], lo, hi)
        success[name] = binned_ranges(per_class[0], lo, hi)

    flags = {n.dc_name: True for n in analysed if n.error_flag and n.dc_name is not None}
    return DCSummary(
        feature_list=feature_list,
        importance=importance,
        failure_ranges=failure,
        success_ranges=success,
        feature_range=ranges,
        route_to_1=top_routes(routes, 1, top_k),
        route_to_0=top_routes(routes, 0, top_k),
        error_flags={name: flags.get(name, False) for name in feature_list},
        target=target,
    )
