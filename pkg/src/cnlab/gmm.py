"""Gaussian mixture estimation by EM, BIC model selection, and merging
of overlapping components into clusters.

The mixture density is ``p(x) = sum_k w_k N(x; mu_k, Sigma_k)`` with full,
unconstrained covariances. Fitting alternates the posterior-responsibility
E-step with the weighted-moment M-step, restarted from several seedings
and keeping the best final log-likelihood. Component counts are chosen by
the Bayesian information criterion (lower is better).

Components whose overlap similarity ``rho = exp(-bhattacharyya_distance)``
reaches a cutoff are merged hierarchically into clusters, each merged pair
being replaced by its moment-matched single Gaussian.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from . import _em_kernel as _kernel
from .datagen import cholesky_factor
from .exceptions import (
    AllRestartsDegenerate,
    DegenerateComponent,
    InvalidWeights,
    NotPositiveDefinite,
    TooFewPoints,
)
from .labels import ClusterLabels
from .rng import RngStream

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class EmConfig:
    max_iterations: int = 500
    rel_tolerance: float = 1e-8
    restarts: int = 5
    ridge: float = 1e-6

    def __post_init__(self):
        if min(self.max_iterations, self.restarts) < 1 or min(self.rel_tolerance, self.ridge) <= 0:
            raise ValueError("all EmConfig fields must be positive")


@dataclass(frozen=True)
class GaussianComponent:
    """One weighted Gaussian with its Cholesky factor and log-determinant
    cached for repeated density evaluation."""

    weight: float
    mean: np.ndarray
    covariance: np.ndarray
    chol: np.ndarray = None
    log_det: float = None

    def __post_init__(self):
        if not 0.0 < self.weight <= 1.0:
            raise ValueError("component weight must lie in (0, 1]")
        if self.chol is None:
            object.__setattr__(self, "chol", cholesky_factor(self.covariance))
        if self.log_det is None:
            object.__setattr__(self, "log_det", 2.0 * float(np.sum(np.log(np.diag(self.chol)))))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class GmmModel:
    components: tuple[GaussianComponent, ...]
    log_likelihood: float
    bic: float
    n: int
    d: int
    responsibilities: np.ndarray = field(repr=False)
    # Largest single-iteration log-likelihood decrease seen while fitting;
    # stays 0.0 for models built outside the fit loop.
    max_ll_drop: float = 0.0

    def __post_init__(self):
        w = self.weights
        if abs(w.sum() - 1.0) > 1e-9:
            raise InvalidWeights(f"weights sum to {w.sum()}, expected 1")
        rows = self.responsibilities.sum(axis=1)
        if rows.size and np.max(np.abs(rows - 1.0)) > 1e-9:
            raise ValueError("responsibility rows must sum to 1")

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def means(self) -> np.ndarray:
        return np.stack([c.mean for c in self.components])

    @property
    def covariances(self) -> np.ndarray:
        return np.stack([c.covariance for c in self.components])

    def to_json_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "log_likelihood": self.log_likelihood,
            "bic": self.bic,
            "n": self.n,
            "d": self.d,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2))


def n_free_parameters(K: int, d: int) -> int:
    """Free weights, means and covariance entries of a K-component model."""
    return (K - 1) + K * d + K * d * (d + 1) // 2


def mvn_logpdf(x: np.ndarray, mean: np.ndarray, covariance: np.ndarray) -> float | np.ndarray:
    """Log density of N(mean, covariance), via the Cholesky factor.

    Accepts a single length-d vector (returns a float) or an (n, d)
    matrix (returns a length-n array). The quadratic form is evaluated
    by triangular solve; the covariance is never inverted explicitly.
    """
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float).reshape(-1)
    single = x.ndim == 1
    rows = x.reshape(1, -1) if single else x
    if rows.shape[1] != mean.size:
        raise ValueError("x and mean dimensions differ")
    L = cholesky_factor(covariance)
    log_det = 2.0 * float(np.sum(np.log(np.diag(L))))
    sol = solve_triangular(L, (rows - mean).T, lower=True, check_finite=False)
    quad = np.einsum("ij,ij->j", sol, sol)
    out = -0.5 * (mean.size * _LOG_2PI + log_det + quad)
    return float(out[0]) if single else out


def mixture_logpdf(x: np.ndarray, model: GmmModel) -> float | np.ndarray:
    """Log of the weighted component-density sum, stabilized by
    log-sum-exp."""
    w = model.weights
    if abs(w.sum() - 1.0) > 1e-8 or np.any(w <= 0):
        raise InvalidWeights("component weights must be positive and sum to 1")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    rows = x.reshape(1, -1) if single else x
    chols = np.stack([c.chol for c in model.components])
    log_dets = np.array([c.log_det for c in model.components])
    weighted = _weighted_log_densities(rows, np.log(w), model.means, chols, log_dets)
    mx = weighted.max(axis=0)
    out = mx + np.log(np.sum(np.exp(weighted - mx), axis=0))
    return float(out[0]) if single else out


# --- internal EM kernels (shared by em_step and the fit loop) ---------------


def _batched_cholesky(covs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    try:
        chols = np.linalg.cholesky(covs)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"component covariance not positive definite: {exc}") from exc
    log_dets = 2.0 * np.sum(np.log(np.diagonal(chols, axis1=1, axis2=2)), axis=1)
    return chols, log_dets


def _weighted_log_densities(
    X: np.ndarray, log_w: np.ndarray, means: np.ndarray, chols: np.ndarray, log_dets: np.ndarray
) -> np.ndarray:
    """(K, n) matrix of log(w_k) + log N(x_i; mu_k, Sigma_k)."""
    d = X.shape[1]
    diff = X[None, :, :] - means[:, None, :]
    sol = np.linalg.solve(chols, diff.transpose(0, 2, 1))
    quad = np.einsum("kdn,kdn->kn", sol, sol)
    return (log_w - 0.5 * (d * _LOG_2PI + log_dets))[:, None] - 0.5 * quad


def _soft_assign(weighted: np.ndarray) -> tuple[float, np.ndarray]:
    """Log-likelihood and (n, K) responsibilities from weighted log
    densities."""
    mx = weighted.max(axis=0)
    ex = np.exp(weighted - mx)
    total = ex.sum(axis=0)
    ll = float(np.sum(mx + np.log(total)))
    return ll, (ex / total).T


def _augmented_data(X: np.ndarray) -> np.ndarray:
    """Columns [x, vec(x x')] so one matmul yields both weighted first and
    second moments in the M-step."""
    n, d = X.shape
    outer = np.einsum("ni,nj->nij", X, X).reshape(n, d * d)
    return np.hstack([X, outer])


def _m_step_arrays(
    Z: np.ndarray, resp: np.ndarray, d: int, ridge: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weighted-moment updates; raises DegenerateComponent on a collapsed
    weight."""
    n = Z.shape[0]
    K = resp.shape[1]
    nk = resp.sum(axis=0)
    if nk.min() < K / 10.0:  # weight w_k below K/(10n)
        raise DegenerateComponent(f"component weight collapsed below {K}/(10n)")
    weights = nk / n
    moments = resp.T @ Z
    means = moments[:, :d] / nk[:, None]
    second = moments[:, d:].reshape(K, d, d) / nk[:, None, None]
    covs = second - np.einsum("kd,ke->kde", means, means)
    covs = 0.5 * (covs + covs.transpose(0, 2, 1))
    traces = np.trace(covs, axis1=1, axis2=2) / d
    covs = covs + (ridge * traces)[:, None, None] * np.eye(d)
    return weights, means, covs


def _evaluate(X: np.ndarray, weights: np.ndarray, means: np.ndarray, covs: np.ndarray,
              max_ll_drop: float = 0.0) -> GmmModel:
    """Build a model: E-step responsibilities, log-likelihood and BIC for
    the given parameters."""
    n, d = X.shape
    K = weights.size
    chols, log_dets = _batched_cholesky(covs)
    weighted = _weighted_log_densities(X, np.log(weights), means, chols, log_dets)
    ll, resp = _soft_assign(weighted)
    bic = -2.0 * ll + n_free_parameters(K, d) * math.log(n)
    components = tuple(
        GaussianComponent(float(weights[k]), means[k], covs[k], chols[k], float(log_dets[k]))
        for k in range(K)
    )
    return GmmModel(
        components=components, log_likelihood=ll, bic=bic, n=n, d=d,
        responsibilities=resp, max_ll_drop=max_ll_drop,
    )


def em_step(data: np.ndarray, model: GmmModel, ridge: float) -> GmmModel:
    """One EM update: M-step from the model's responsibilities, then the
    E-step evaluation of the new parameters. Log-likelihood is
    non-decreasing up to float noise.

    Raises
    ------
    DegenerateComponent
        If an updated component weight falls below K/(10n).
    """
    X = np.asarray(data, dtype=float)
    weights, means, covs = _m_step_arrays(_augmented_data(X), model.responsibilities, X.shape[1], ridge)
    return _evaluate(X, weights, means, covs)


def _seed_means(X: np.ndarray, K: int, gen: np.random.Generator) -> np.ndarray:
    """Distance-weighted (k-means++ style) seeding of component means from
    data points."""
    n = X.shape[0]
    means = np.empty((K, X.shape[1]))
    means[0] = X[gen.integers(n)]
    d2 = np.sum((X - means[0]) ** 2, axis=1)
    for j in range(1, K):
        total = d2.sum()
        if total <= 0:
            means[j] = X[gen.integers(n)]
        else:
            means[j] = X[gen.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((X - means[j]) ** 2, axis=1))
    return means


def _pooled_covariance(X: np.ndarray, ridge: float) -> np.ndarray:
    d = X.shape[1]
    centered = X - X.mean(axis=0)
    cov = (centered.T @ centered) / X.shape[0]
    return cov + (ridge * np.trace(cov) / d) * np.eye(d)


def fit_gmm(data: np.ndarray, K: int, config: EmConfig = EmConfig(), rng: RngStream | None = None) -> GmmModel:
    """Fit a K-component mixture, keeping the best of several restarts.

    Each restart seeds means from data points (distance-weighted), uses
    the pooled sample covariance for every component and equal weights,
    then iterates EM until the relative log-likelihood change drops below
    ``config.rel_tolerance`` or ``config.max_iterations`` is reached.

    Raises
    ------
    TooFewPoints
        If n < K * (d + 1).
    AllRestartsDegenerate
        If every restart collapsed a component or produced a singular
        covariance.
    """
    X = np.asarray(data, dtype=float)
    n, d = X.shape
    if n < K * (d + 1):
        raise TooFewPoints(f"need at least K*(d+1)={K * (d + 1)} points, got {n}")

    if K == 1:
        mean = X.mean(axis=0)
        cov = _pooled_covariance(X, config.ridge)
        return _evaluate(X, np.array([1.0]), mean[None, :], cov[None, :, :])

    X = np.ascontiguousarray(X)
    pooled = _pooled_covariance(X, config.ridge)
    gen = rng.generator if rng is not None else np.random.default_rng()
    best: tuple[float, np.ndarray, np.ndarray, np.ndarray, float] | None = None
    for _ in range(config.restarts):
        means = _seed_means(X, K, gen)
        covs = np.broadcast_to(pooled, (K, d, d)).copy()
        weights = np.full(K, 1.0 / K)
        status, ll, _, worst_drop, weights, means, covs, _ = _kernel.em_loop(
            X, weights, means, covs, config.ridge, config.max_iterations, config.rel_tolerance
        )
        if status != _kernel.OK:
            continue
        if best is None or ll > best[0]:
            best = (ll, weights, means, covs, worst_drop)
    if best is None:
        raise AllRestartsDegenerate(f"all {config.restarts} restarts degenerated for K={K}")
    ll, weights, means, covs, worst_drop = best
    return _evaluate(X, weights, means, covs, max_ll_drop=worst_drop)


def select_k(
    data: np.ndarray,
    k_min: int = 1,
    k_max: int = 10,
    config: EmConfig = EmConfig(),
    rng: RngStream | None = None,
) -> GmmModel:
    """Fit every K in [k_min, k_max] and return the lowest-BIC model,
    breaking ties toward smaller K. K values where every restart
    degenerates are skipped; raises only if every K fails."""
    if not 1 <= k_min <= k_max:
        raise ValueError("need 1 <= k_min <= k_max")
    best: GmmModel | None = None
    last_error: Exception | None = None
    for K in range(k_min, k_max + 1):
        try:
            model = fit_gmm(data, K, config, rng)
        except AllRestartsDegenerate as exc:
            last_error = exc
            continue
        if best is None or model.bic < best.bic:
            best = model
    if best is None:
        raise AllRestartsDegenerate("every candidate K degenerated") from last_error
    return best


def bhattacharyya_distance(a: GaussianComponent, b: GaussianComponent) -> float:
    """Bhattacharyya distance between two Gaussians:
    ``(1/8) dm' S~^-1 dm + (1/2) ln(det S~ / sqrt(det Sa det Sb))`` with
    ``S~ = (Sa + Sb) / 2``. Symmetric and zero for identical components."""
    if a.dim != b.dim:
        raise ValueError("components have different dimensions")
    avg = 0.5 * (a.covariance + b.covariance)
    L = cholesky_factor(avg)
    log_det_avg = 2.0 * float(np.sum(np.log(np.diag(L))))
    sol = solve_triangular(L, a.mean - b.mean, lower=True, check_finite=False)
    quad = float(sol @ sol)
    return 0.125 * quad + 0.5 * (log_det_avg - 0.5 * (a.log_det + b.log_det))


@dataclass(frozen=True)
class MergeResult:
    """Outcome of hierarchical component merging.

    ``cluster_of_component[k]`` is the merged-cluster id of original
    component k; ids are contiguous. ``trace`` records each merge as
    ``((kept_id, absorbed_id), rho)`` using pre-merge group ids (a group
    is identified by its smallest original component index).
    """

    cluster_of_component: np.ndarray
    n_merged_clusters: int
    trace: tuple[tuple[tuple[int, int], float], ...]


def merge_components(model: GmmModel, cutoff: float = 0.1) -> MergeResult:
    """Merge components hierarchically while the largest pairwise overlap
    similarity ``rho = exp(-bhattacharyya_distance)`` is at least
    ``cutoff``.

    The most-similar pair is replaced by its moment-matched Gaussian
    (mixture mean and covariance, weights summed) and similarities are
    recomputed against the merged representative, until the maximum rho
    falls below the cutoff or a single cluster remains.
    """
    K = model.n_components
    reps = {
        k: (c.weight, c.mean.copy(), c.covariance.copy()) for k, c in enumerate(model.components)
    }
    members: dict[int, list[int]] = {k: [k] for k in range(K)}
    active = list(range(K))
    trace: list[tuple[tuple[int, int], float]] = []

    while len(active) > 1:
        best_rho, best_pair = -1.0, None
        for ai in range(len(active)):
            for aj in range(ai + 1, len(active)):
                i, j = active[ai], active[aj]
                ci = GaussianComponent(reps[i][0], reps[i][1], reps[i][2])
                cj = GaussianComponent(reps[j][0], reps[j][1], reps[j][2])
                rho = math.exp(-bhattacharyya_distance(ci, cj))
                if rho > best_rho:
                    best_rho, best_pair = rho, (i, j)
        if best_rho < cutoff:
            break
        i, j = best_pair
        wi, mi, si = reps[i]
        wj, mj, sj = reps[j]
        w = wi + wj
        pi, pj = wi / w, wj / w
        mean = pi * mi + pj * mj
        cov = pi * (si + np.outer(mi - mean, mi - mean)) + pj * (sj + np.outer(mj - mean, mj - mean))
        reps[i] = (w, mean, cov)
        members[i].extend(members[j])
        del reps[j], members[j]
        active.remove(j)
        trace.append(((i, j), best_rho))

    cluster_of_component = np.empty(K, dtype=int)
    for new_id, gid in enumerate(sorted(active)):
        for comp in members[gid]:
            cluster_of_component[comp] = new_id
    return MergeResult(
        cluster_of_component=cluster_of_component,
        n_merged_clusters=len(active),
        trace=tuple(trace),
    )


def map_assign(model: GmmModel, data: np.ndarray, merge: MergeResult | None = None) -> ClusterLabels:
    """Hard labels by maximum posterior responsibility (ties to the lower
    index); with a merge result, labels are mapped to merged-cluster ids."""
    X = np.asarray(data, dtype=float)
    chols = np.stack([c.chol for c in model.components])
    log_dets = np.array([c.log_det for c in model.components])
    weighted = _weighted_log_densities(X, np.log(model.weights), model.means, chols, log_dets)
    labels = np.argmax(weighted, axis=0)
    if merge is not None:
        return ClusterLabels(
            labels=merge.cluster_of_component[labels], n_clusters=merge.n_merged_clusters
        )
    return ClusterLabels(labels=labels, n_clusters=model.n_components)
