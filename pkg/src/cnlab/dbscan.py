"""Density-based clustering with noise (Euclidean metric).

A point is a core point when its eps-neighborhood (itself included)
holds at least ``min_points`` members. Clusters are the maximal sets of
density-connected points grown from core points; non-core points
reachable from a core point become border points of the first cluster
that claims them; everything else is noise (-1).

Seeds are scanned in ascending index order and expansion is FIFO, so the
labeling is deterministic for fixed data and parameters. The eps chooser
replaces visual inspection of the sorted k-th-nearest-neighbor distance
curve with its maximum-chord-distance elbow.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import CurveTooShort, IndexOutOfRange, TooFewPoints
from .labels import NOISE, ClusterLabels


@dataclass(frozen=True)
class DbscanParams:
    eps: float
    min_points: int

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.min_points < 1:
            raise ValueError("min_points must be at least 1")


def eps_neighborhood(data: np.ndarray, point_index: int, eps: float) -> np.ndarray:
    """Sorted indices q (the point itself included) with
    ``dist(p, q) <= eps``; exact Euclidean distances."""
    X = np.asarray(data, dtype=float)
    if not 0 <= point_index < X.shape[0]:
        raise IndexOutOfRange(f"index {point_index} outside [0, {X.shape[0]})")
    d2 = np.sum((X - X[point_index]) ** 2, axis=1)
    return np.flatnonzero(d2 <= eps * eps)


def dbscan(data: np.ndarray, params: DbscanParams) -> ClusterLabels:
    """Label every row with its cluster id or the noise sentinel."""
    X = np.asarray(data, dtype=float)
    n = X.shape[0]
    if n == 0:
        return ClusterLabels(labels=np.empty(0, dtype=int), n_clusters=0)

    tree = cKDTree(X)
    counts = tree.query_ball_point(X, r=params.eps, return_length=True)
    core = counts >= params.min_points
    core_idx = np.flatnonzero(core)
    labels = np.full(n, NOISE, dtype=int)
    if core_idx.size == 0:
        return ClusterLabels(labels=labels, n_clusters=0)

    raw_neighbors = tree.query_ball_point(X[core_idx], r=params.eps)
    neighbors = {
        int(i): np.sort(np.asarray(nb, dtype=int)) for i, nb in zip(core_idx, raw_neighbors)
    }

    cluster = 0
    for seed in core_idx:
        if labels[seed] != NOISE:
            continue
        labels[seed] = cluster
        queue = deque([int(seed)])
        while queue:
            p = queue.popleft()
            nb = neighbors[p]
            unclaimed = nb[labels[nb] == NOISE]
            labels[unclaimed] = cluster
            queue.extend(int(q) for q in unclaimed[core[unclaimed]])
        cluster += 1
    return ClusterLabels(labels=labels, n_clusters=cluster)


def kth_nn_distances(data: np.ndarray, k: int) -> np.ndarray:
    """Each point's Euclidean distance to its k-th nearest other point,
    sorted ascending."""
    X = np.asarray(data, dtype=float)
    n = X.shape[0]
    if k >= n:
        raise TooFewPoints(f"k={k} requires more than k points, got {n}")
    tree = cKDTree(X)
    # k+1 neighbors include the query point itself at distance 0.
    dists, _ = tree.query(X, k=k + 1)
    return np.sort(dists[:, k])


def choose_eps(curve: np.ndarray, plateau: float = 0.06, noise_budget: float = 0.07) -> float:
    """Elbow of an ascending distance curve.

    Perpendicular distances to the chord joining the curve's endpoints
    are computed for every interior point; the elbow is the right edge
    of the near-maximal plateau, i.e. the argmax extended rightward
    while the distance stays within ``plateau`` (fractionally) of the
    maximum. A sharply kinked curve keeps its argmax; on the smooth
    knees of real k-distance curves the extension compensates for the
    argmax's systematic undershoot, which otherwise fragments clusters.

    The result is floored at the curve's ``1 - noise_budget`` quantile,
    which caps the points that can sit outside dense regions the way a
    human reading the plot would refuse a radius that strands a large
    share of the data. A zero value at the elbow falls back to the
    smallest positive curve value."""
    y = np.asarray(curve, dtype=float)
    m = y.size
    if m < 3:
        raise CurveTooShort("elbow detection needs at least 3 curve values")
    x = np.arange(m, dtype=float)
    dx, dy = m - 1.0, y[-1] - y[0]
    norm = np.hypot(dx, dy)
    dist = np.abs(dy * x - dx * (y - y[0])) / norm
    idx = 1 + int(np.argmax(dist[1:-1]))
    floor = dist[idx] * (1.0 - plateau)
    while idx < m - 2 and dist[idx + 1] >= floor:
        idx += 1
    quantile_idx = min(int(round((1.0 - noise_budget) * (m - 1))), m - 2)
    eps = float(max(y[idx], y[quantile_idx]))
    if eps == 0.0:
        positive = y[y > 0]
        if positive.size == 0:
            raise ValueError("distance curve has no positive values")
        eps = float(positive[0])
    return eps


def fit_auto(data: np.ndarray, min_points: int) -> tuple[DbscanParams, ClusterLabels]:
    """Cluster with eps chosen from the min_points-th nearest-neighbor
    distance curve; returns the parameters (for reuse, e.g. by the
    stability bootstrap) along with the labels."""
    X = np.asarray(data, dtype=float)
    if X.shape[0] <= min_points:
        raise TooFewPoints(f"need more than min_points={min_points} rows, got {X.shape[0]}")
    eps = choose_eps(kth_nn_distances(X, min_points))
    params = DbscanParams(eps=eps, min_points=min_points)
    return params, dbscan(X, params)
