"""Sampling of labeled multivariate normal mixtures.

Provides the three-component reference population used throughout the
simulation harness plus generic, seed-derived mixture sampling. All
sampling is driven by an :class:`~cnlab.rng.RngStream`, so a fixed
``(master_seed, path)`` reproduces a dataset bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import NotPositiveDefinite
from .rng import RngStream

BASELINE_CONFIG_RESOURCE = "data/baseline_mixture.json"


def cholesky_factor(covariance: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T == covariance.

    Raises
    ------
    NotPositiveDefinite
        If the (symmetric) input has a non-positive pivot, i.e. is not
        positive definite. This is how an invalid covariance or a
        degenerate EM update surfaces.
    """
    cov = np.asarray(covariance, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"matrix is not positive definite: {exc}") from exc


@dataclass(frozen=True)
class GaussianSpec:
    """Population parameters of one multivariate normal component."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean length {mean.size}")
        if not np.allclose(cov, cov.T):
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        # Fails fast on non-SPD input.
        cholesky_factor(cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class MixtureSpec:
    """A mixture with deterministic per-component sample counts."""

    components: tuple[GaussianSpec, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        components = tuple(self.components)
        counts = tuple(int(c) for c in self.counts)
        if len(components) == 0 or len(components) != len(counts):
            raise ValueError("components and counts must have equal, nonzero length")
        if any(c <= 0 for c in counts):
            raise ValueError("all component counts must be positive")
        dims = {c.dim for c in components}
        if len(dims) != 1:
            raise ValueError("all components must share one dimension")
        object.__setattr__(self, "components", components)
        object.__setattr__(self, "counts", counts)

    @property
    def n_total(self) -> int:
        return sum(self.counts)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def to_json_dict(self) -> dict:
        return {
            "components": [
                {"mean": c.mean.tolist(), "covariance": c.covariance.tolist()}
                for c in self.components
            ],
            "counts": list(self.counts),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "MixtureSpec":
        components = tuple(
            GaussianSpec(np.asarray(c["mean"]), np.asarray(c["covariance"]))
            for c in doc["components"]
        )
        return cls(components=components, counts=tuple(doc["counts"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "MixtureSpec":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class LabeledDataset:
    """An (n, d) value matrix plus the generating component of each row."""

    values: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        labels = np.asarray(self.labels, dtype=int).reshape(-1)
        if values.ndim != 2:
            raise ValueError("values must be a 2-D matrix")
        if values.shape[0] != labels.size:
            raise ValueError("row count of values must equal label count")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def sample_mvn(spec: GaussianSpec, n: int, rng: RngStream) -> np.ndarray:
    """Draw ``n`` rows from N(mean, covariance) as ``mean + z @ L.T``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    L = cholesky_factor(spec.covariance)
    z = rng.generator.standard_normal(size=(n, spec.dim))
    return spec.mean + z @ L.T


def sample_mixture(spec: MixtureSpec, rng: RngStream) -> LabeledDataset:
    """Sample each component's block in order; rows stay in component order."""
    blocks = [sample_mvn(comp, count, rng) for comp, count in zip(spec.components, spec.counts)]
    labels = np.repeat(np.arange(len(spec.counts)), spec.counts)
    return LabeledDataset(values=np.vstack(blocks), labels=labels)


def baseline_spec() -> MixtureSpec:
    """The bundled three-component reference population (n=1000, d=3)."""
    doc = json.loads(resources.files("cnlab").joinpath(BASELINE_CONFIG_RESOURCE).read_text())
    return MixtureSpec.from_json_dict(doc)


def generate_baseline(rng: RngStream) -> LabeledDataset:
    """Sample the reference dataset: 400, 350 and 250 rows from the three
    bundled components, in component order."""
    return sample_mixture(baseline_spec(), rng)
