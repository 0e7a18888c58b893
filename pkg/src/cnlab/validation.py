"""Partition-similarity indices and bootstrap cluster stability.

The Rand and adjusted Rand indices are computed from the contingency
table of two labelings in O(n + cells); pair counts follow the classic
combinatorial identities. Noise labels (-1) participate as an ordinary
group, so every point contributes to the pair counts.

Stability follows the cluster-wise bootstrap scheme: resample rows with
replacement, recluster the deduplicated resample with the same
hyperparameters, and score each reference cluster by its best Jaccard
match among the bootstrap clusters, restricted to the original indices
present in the resample. A cluster is stable when its mean Jaccard over
all bootstrap iterations exceeds the threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Collection

import numpy as np

from .exceptions import BothEmpty, InvalidB, LengthMismatch, TooFewPoints
from .labels import NOISE, ClusterLabels


@dataclass(frozen=True)
class ContingencyTable:
    """Joint label counts of two labelings plus derived pair counts."""

    counts: np.ndarray
    row_sums: np.ndarray
    col_sums: np.ndarray
    n: int
    agree_same: int
    agree_different: int
    total_pairs: int

    @classmethod
    def from_labels(cls, a_labels: np.ndarray, b_labels: np.ndarray) -> "ContingencyTable":
        a = np.asarray(a_labels).reshape(-1)
        b = np.asarray(b_labels).reshape(-1)
        if a.size != b.size:
            raise LengthMismatch(f"label lengths differ: {a.size} vs {b.size}")
        if a.size < 2:
            raise TooFewPoints("need at least two points to count pairs")
        _, a_codes = np.unique(a, return_inverse=True)
        _, b_codes = np.unique(b, return_inverse=True)
        n_rows = int(a_codes.max()) + 1
        n_cols = int(b_codes.max()) + 1
        counts = np.bincount(a_codes * n_cols + b_codes, minlength=n_rows * n_cols)
        counts = counts.reshape(n_rows, n_cols)
        row_sums = counts.sum(axis=1)
        col_sums = counts.sum(axis=0)
        n = int(counts.sum())
        pairs = lambda v: int(np.sum(v.astype(np.int64) * (v.astype(np.int64) - 1) // 2))
        same_both = pairs(counts.reshape(-1))
        same_a = pairs(row_sums)
        same_b = pairs(col_sums)
        total = n * (n - 1) // 2
        # Pairs separated by both labelings, by inclusion-exclusion.
        diff_both = total - same_a - same_b + same_both
        return cls(
            counts=counts,
            row_sums=row_sums,
            col_sums=col_sums,
            n=n,
            agree_same=same_both,
            agree_different=diff_both,
            total_pairs=total,
        )


def _label_vector(labels: ClusterLabels | np.ndarray) -> np.ndarray:
    if isinstance(labels, ClusterLabels):
        return labels.labels
    return np.asarray(labels)


def rand_index(a_labels, b_labels) -> float:
    """(a + b) / C(n, 2): the fraction of point pairs treated alike."""
    t = ContingencyTable.from_labels(_label_vector(a_labels), _label_vector(b_labels))
    return (t.agree_same + t.agree_different) / t.total_pairs


def adjusted_rand_index(a_labels, b_labels) -> float:
    """Chance-corrected Rand index, bounded in [-1, 1].

    When the adjustment denominator degenerates to zero (both labelings
    trivial), returns 1.0 if they are identical as partitions, else 0.0.
    """
    t = ContingencyTable.from_labels(_label_vector(a_labels), _label_vector(b_labels))
    same_a = int(np.sum(t.row_sums.astype(np.int64) * (t.row_sums.astype(np.int64) - 1) // 2))
    same_b = int(np.sum(t.col_sums.astype(np.int64) * (t.col_sums.astype(np.int64) - 1) // 2))
    index = t.agree_same
    expected = same_a * same_b / t.total_pairs
    max_index = 0.5 * (same_a + same_b)
    denom = max_index - expected
    if denom == 0:
        return 1.0 if _same_partition(_label_vector(a_labels), _label_vector(b_labels)) else 0.0
    return (index - expected) / denom


def _same_partition(a: np.ndarray, b: np.ndarray) -> bool:
    t = ContingencyTable.from_labels(a, b)
    return bool(np.sum(t.counts > 0) == max(len(t.row_sums), len(t.col_sums)))


def jaccard(a: Collection[int], b: Collection[int]) -> float:
    """|a & b| / |a | b| for two index sets."""
    sa, sb = set(a), set(b)
    if not sa and not sb:
        raise BothEmpty("Jaccard similarity is undefined for two empty sets")
    return len(sa & sb) / len(sa | sb)


@dataclass(frozen=True)
class StabilityReport:
    """Mean bootstrap Jaccard per reference cluster, with stability flags.

    ``cluster_ids`` lists the assessed groups; the noise group, when the
    reference contains noise points, appears as id -1.
    """

    cluster_ids: tuple[int, ...]
    mean_jaccard: np.ndarray
    stable: np.ndarray
    n_bootstraps: int
    threshold: float

    def mean_for(self, cluster_id: int) -> float:
        return float(self.mean_jaccard[self.cluster_ids.index(cluster_id)])

    def is_stable(self, cluster_id: int) -> bool:
        return bool(self.stable[self.cluster_ids.index(cluster_id)])

    def n_stable_clusters(self) -> int:
        """Stable substantive (non-noise) clusters."""
        return int(sum(bool(s) for cid, s in zip(self.cluster_ids, self.stable) if cid != NOISE))

    def to_json_dict(self) -> dict:
        return {
            "cluster_ids": list(self.cluster_ids),
            "mean_jaccard": [float(v) for v in self.mean_jaccard],
            "stable": [bool(v) for v in self.stable],
            "n_bootstraps": self.n_bootstraps,
            "threshold": self.threshold,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2))


def assess_stability(
    data: np.ndarray,
    reference: ClusterLabels,
    clusterer: Callable[[np.ndarray], ClusterLabels],
    B: int = 50,
    threshold: float = 0.7,
    rng=None,
) -> StabilityReport:
    """Bootstrap the rows of ``data`` B times and score each reference
    cluster by its best Jaccard match in each reclustered resample.

    ``clusterer`` must apply the same hyperparameters that produced
    ``reference`` (for DBSCAN, the recorded eps and min_points). Each
    bootstrap draws n indices with replacement and clusters the
    deduplicated rows; Jaccard is computed over original indices present
    in the resample. Results do not depend on iteration interleaving:
    iteration b always uses the derived stream ("boot", b).
    """
    if B < 1:
        raise InvalidB("B must be at least 1")
    if reference.n_clusters < 1:
        raise ValueError("reference must contain at least one non-noise cluster")
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    if reference.n != n:
        raise LengthMismatch("reference labels do not match data rows")

    assessed = list(range(reference.n_clusters))
    if reference.noise_size() > 0:
        assessed.append(NOISE)
    ref_sets = {cid: set(map(int, reference.members(cid))) for cid in assessed}

    totals = np.zeros(len(assessed))
    for b in range(B):
        gen = rng.child("boot", b).generator
        drawn = gen.integers(0, n, size=n)
        uidx = np.unique(drawn)
        result = clusterer(data[uidx])
        groups = []
        for cid in range(result.n_clusters):
            groups.append(set(map(int, uidx[result.labels == cid])))
        noise_members = uidx[result.labels == NOISE]
        if noise_members.size:
            groups.append(set(map(int, noise_members)))
        present = set(map(int, uidx))
        for pos, cid in enumerate(assessed):
            ref_present = ref_sets[cid] & present
            if not ref_present or not groups:
                continue
            totals[pos] += max(jaccard(ref_present, g) for g in groups)

    means = totals / B
    return StabilityReport(
        cluster_ids=tuple(assessed),
        mean_jaccard=means,
        stable=means > threshold,
        n_bootstraps=B,
        threshold=threshold,
    )


def stable_subset_labels(reference: ClusterLabels, report: StabilityReport) -> ClusterLabels:
    """Relabel points of unstable clusters as noise; renumber the stable
    clusters contiguously (ascending original id)."""
    stable_ids = [
        cid for cid, s in zip(report.cluster_ids, report.stable) if cid != NOISE and bool(s)
    ]
    if any(cid >= reference.n_clusters for cid in stable_ids):
        raise ValueError("report is not aligned with the reference clustering")
    remap = {cid: new for new, cid in enumerate(sorted(stable_ids))}
    labels = np.full(reference.n, NOISE, dtype=int)
    for cid, new in remap.items():
        labels[reference.labels == cid] = new
    return ClusterLabels(labels=labels, n_clusters=len(remap))
