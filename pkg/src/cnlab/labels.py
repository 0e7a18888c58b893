"""Cluster label vectors with a noise sentinel."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

NOISE = -1


@dataclass(frozen=True)
class ClusterLabels:
    """Integer partition of rows; ids are 0..n_clusters-1, noise is -1."""

    labels: np.ndarray
    n_clusters: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int).reshape(-1)
        object.__setattr__(self, "labels", labels)
        if labels.size:
            if labels.min() < NOISE:
                raise ValueError("labels below the noise sentinel are not allowed")
            if labels.max() >= self.n_clusters:
                raise ValueError("label ids must lie in [0, n_clusters)")

    @classmethod
    def from_array(cls, labels: np.ndarray) -> "ClusterLabels":
        """Build from a raw vector, inferring a contiguous cluster count."""
        labels = np.asarray(labels, dtype=int)
        n_clusters = int(labels.max()) + 1 if labels.size and labels.max() >= 0 else 0
        return cls(labels=labels, n_clusters=n_clusters)

    @property
    def n(self) -> int:
        return self.labels.size

    def noise_size(self) -> int:
        return int(np.sum(self.labels == NOISE))

    def members(self, cluster_id: int) -> np.ndarray:
        """Row indices assigned to ``cluster_id`` (-1 selects noise)."""
        return np.flatnonzero(self.labels == cluster_id)

    def to_csv(self, path: str | Path) -> None:
        """Write (row_index, label) rows; -1 denotes noise."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row_index", "label"])
            for i, lab in enumerate(self.labels):
                writer.writerow([i, int(lab)])
