"""Monte Carlo harness over the 36-condition error grid.

The study design crosses error type (random, systematic) x affected
variables (one, all) x magnitude (low, medium, high) x error rate (0.1,
0.2, 0.4). A clean reference dataset is generated once per master seed
and clustered; every replication injects error into a copy of it,
reclusters, and compares the result to the clean clustering of the same
algorithm. Per-condition means are written as CSV tables, one row per
condition, alongside the raw per-replication records and summary
figures.

All randomness flows through streams derived from
``(master_seed, ("cond", i), ("rep", r), ("use", code))``, so results are
identical regardless of worker count or execution order.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy
from scipy.optimize import linear_sum_assignment

from . import __version__
from .datagen import LabeledDataset, generate_baseline
from .dbscan import DbscanParams, dbscan, fit_auto
from .exceptions import CnlabError
from .gmm import EmConfig, GmmModel, MergeResult, map_assign, merge_components, select_k
from .labels import NOISE, ClusterLabels
from .measurement_error import (
    ErrorCondition,
    ErrorType,
    Magnitude,
    VariablesAffected,
    inject,
    resolve_noise_params,
)
from .rng import RngStream
from .validation import adjusted_rand_index, assess_stability, stable_subset_labels

logger = logging.getLogger("cnlab")

GRID_RATES = (0.1, 0.2, 0.4)
USE_INJECT, USE_GMM, USE_BOOT = 0, 1, 2


@dataclass(frozen=True)
class ConditionId:
    """One cell of the study grid, with its row position in the tables."""

    error_type: ErrorType
    variables: VariablesAffected
    magnitude: Magnitude
    rate: float
    index: int

    def to_error_condition(self) -> ErrorCondition:
        return ErrorCondition(
            error_type=self.error_type,
            variables=self.variables,
            magnitude=self.magnitude,
            rate=self.rate,
        )

    def describe(self) -> str:
        return (
            f"{self.error_type.value}/{self.variables.value}/"
            f"{self.magnitude.value}/{self.rate:g}"
        )


def enumerate_conditions() -> list[ConditionId]:
    """The 36 grid cells in table row order: random before systematic,
    one before all, low/medium/high, rate ascending."""
    out = []
    for et in (ErrorType.RANDOM_IID, ErrorType.SYSTEMATIC_SHIFT):
        for vars_ in (VariablesAffected.ONE, VariablesAffected.ALL):
            for mag in (Magnitude.LOW, Magnitude.MEDIUM, Magnitude.HIGH):
                for rate in GRID_RATES:
                    out.append(
                        ConditionId(
                            error_type=et,
                            variables=vars_,
                            magnitude=mag,
                            rate=rate,
                            index=len(out),
                        )
                    )
    return out


@dataclass(frozen=True)
class RunConfig:
    """Settings of one harness run; serializes losslessly to JSON."""

    master_seed: int
    replications: int = 100
    stability_bootstraps: int = 50
    algorithms: tuple[str, ...] = ("gmm", "dbscan")
    k_min: int = 1
    k_max: int = 10
    merge_cutoff: float = 0.1
    stability_threshold: float = 0.7
    eps_override: float | None = None
    output_directory: str | None = None
    worker_count: int = 1
    condition_indices: tuple[int, ...] | None = None
    figures: bool = True

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if not 1 <= self.k_min <= self.k_max:
            raise ValueError("need 1 <= k_min <= k_max")
        unknown = set(self.algorithms) - {"gmm", "dbscan"}
        if unknown or not self.algorithms:
            raise ValueError(f"algorithms must be a nonempty subset of gmm,dbscan: {unknown}")
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        if self.condition_indices is not None:
            object.__setattr__(self, "condition_indices", tuple(int(i) for i in self.condition_indices))

    def to_json_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["algorithms"] = list(self.algorithms)
        doc["condition_indices"] = (
            list(self.condition_indices) if self.condition_indices is not None else None
        )
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        doc["algorithms"] = tuple(doc["algorithms"])
        if doc.get("condition_indices") is not None:
            doc["condition_indices"] = tuple(doc["condition_indices"])
        return cls(**doc)


@dataclass(frozen=True)
class GmmRepMetrics:
    failed: bool
    n_clusters: int
    ari: float
    n_merged: int
    ari_merged: float
    # Worst per-iteration log-likelihood decrease seen by the selected fit;
    # kept so reruns can audit the EM ascent property.
    ll_drop: float = 0.0


@dataclass(frozen=True)
class DbscanRepMetrics:
    failed: bool
    n_clusters: int
    ari: float
    n_stable: int
    ari_stable: float
    noise_size: int
    noise_stable: bool | None
    eps: float


@dataclass(frozen=True)
class ReplicationRecord:
    condition_index: int
    replication: int
    gmm: GmmRepMetrics | None
    dbscan: DbscanRepMetrics | None


@dataclass(frozen=True)
class ConditionReport:
    """Per-condition means over the non-failed replications."""

    condition: ConditionId
    replications: int
    gmm_n_clusters: float | None = None
    gmm_ari: float | None = None
    gmm_n_merged: float | None = None
    gmm_ari_merged: float | None = None
    gmm_failures: int = 0
    dbscan_n_clusters: float | None = None
    dbscan_ari: float | None = None
    dbscan_n_stable: float | None = None
    dbscan_ari_stable: float | None = None
    dbscan_noise_size: float | None = None
    dbscan_noise_stable_rate: float | None = None
    dbscan_failures: int = 0


@dataclass(frozen=True)
class BaselineArtifacts:
    """Clean-data artifacts shared by every condition of a run."""

    dataset: LabeledDataset
    gmm_model: GmmModel | None
    gmm_merge: MergeResult | None
    gmm_labels: ClusterLabels | None
    dbscan_params: DbscanParams | None
    dbscan_labels: ClusterLabels | None


def classification_rate(labels: ClusterLabels, true_labels: np.ndarray) -> float:
    """Fraction of all points whose cluster maps to their generating
    component under the best one-to-one cluster/component matching;
    noise points count as misclassified."""
    true_labels = np.asarray(true_labels)
    n = true_labels.size
    if labels.n_clusters == 0:
        return 0.0
    comps = np.unique(true_labels)
    table = np.zeros((labels.n_clusters, comps.size), dtype=int)
    for cid in range(labels.n_clusters):
        members = labels.members(cid)
        for j, comp in enumerate(comps):
            table[cid, j] = int(np.sum(true_labels[members] == comp))
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum()) / n


def run_baseline(config: RunConfig) -> BaselineArtifacts:
    """Generate and cluster the clean reference dataset for a master seed.

    The dataset, the BIC-selected mixture fit with its merge result and
    hard labels, and the DBSCAN parameters (auto-chosen or overridden
    eps) with labels are all reused by every condition.
    """
    root = RngStream(config.master_seed)
    base = root.child("baseline")
    dataset = generate_baseline(base.child("use", USE_INJECT))

    gmm_model = gmm_merge = gmm_labels = None
    if "gmm" in config.algorithms:
        gmm_model = select_k(
            dataset.values, config.k_min, config.k_max, EmConfig(), base.child("use", USE_GMM)
        )
        gmm_merge = merge_components(gmm_model, config.merge_cutoff)
        gmm_labels = map_assign(gmm_model, dataset.values)

    dbscan_params = dbscan_labels = None
    if "dbscan" in config.algorithms:
        min_points = dataset.dim + 1
        if config.eps_override is not None:
            dbscan_params = DbscanParams(eps=config.eps_override, min_points=min_points)
            dbscan_labels = dbscan(dataset.values, dbscan_params)
        else:
            dbscan_params, dbscan_labels = fit_auto(dataset.values, min_points)

    return BaselineArtifacts(
        dataset=dataset,
        gmm_model=gmm_model,
        gmm_merge=gmm_merge,
        gmm_labels=gmm_labels,
        dbscan_params=dbscan_params,
        dbscan_labels=dbscan_labels,
    )


def _gmm_replication(
    noisy: LabeledDataset, baseline: BaselineArtifacts, config: RunConfig, rng: RngStream
) -> GmmRepMetrics:
    try:
        model = select_k(noisy.values, config.k_min, config.k_max, EmConfig(), rng)
    except CnlabError as exc:
        logger.warning("GMM fit failed: %s", exc)
        return GmmRepMetrics(True, 0, math.nan, 0, math.nan)
    labels = map_assign(model, noisy.values)
    ari = adjusted_rand_index(labels, baseline.gmm_labels)
    merge = merge_components(model, config.merge_cutoff)
    merged = map_assign(model, noisy.values, merge)
    ari_merged = adjusted_rand_index(merged, baseline.gmm_labels)
    return GmmRepMetrics(
        False, model.n_components, ari, merge.n_merged_clusters, ari_merged, model.max_ll_drop
    )


def _dbscan_replication(
    noisy: LabeledDataset, baseline: BaselineArtifacts, config: RunConfig, rng: RngStream
) -> DbscanRepMetrics:
    min_points = noisy.dim + 1
    if config.eps_override is not None:
        params = DbscanParams(eps=config.eps_override, min_points=min_points)
        labels = dbscan(noisy.values, params)
    else:
        params, labels = fit_auto(noisy.values, min_points)
    ari = adjusted_rand_index(labels, baseline.dbscan_labels)
    noise_size = labels.noise_size()

    if labels.n_clusters == 0:
        stable_labels = ClusterLabels(labels=np.full(noisy.n, NOISE), n_clusters=0)
        ari_stable = adjusted_rand_index(stable_labels.labels, baseline.dbscan_labels.labels)
        return DbscanRepMetrics(False, 0, ari, 0, ari_stable, noise_size, None, params.eps)

    report = assess_stability(
        noisy.values,
        labels,
        clusterer=lambda sub: dbscan(sub, params),
        B=config.stability_bootstraps,
        threshold=config.stability_threshold,
        rng=rng,
    )
    stable = stable_subset_labels(labels, report)
    ari_stable = adjusted_rand_index(stable, baseline.dbscan_labels)
    noise_stable = report.is_stable(NOISE) if NOISE in report.cluster_ids else None
    return DbscanRepMetrics(
        False, labels.n_clusters, ari, report.n_stable_clusters(), ari_stable,
        noise_size, noise_stable, params.eps,
    )


def run_replication(
    condition: ConditionId,
    replication: int,
    baseline: BaselineArtifacts,
    config: RunConfig,
) -> ReplicationRecord:
    """Inject error into the clean dataset and recluster once.

    Comparisons are against the clean clustering of the same algorithm,
    not the generating labels. A failed fit records sentinel metrics
    (zero clusters, NaN similarity) and the condition continues.
    """
    rep_stream = RngStream(config.master_seed).child("cond", condition.index).child("rep", replication)
    noise_params = resolve_noise_params(condition.to_error_condition(), baseline.dataset.dim)
    noisy = inject(
        baseline.dataset,
        condition.to_error_condition(),
        noise_params,
        rep_stream.child("use", USE_INJECT),
    )
    gmm_metrics = (
        _gmm_replication(noisy, baseline, config, rep_stream.child("use", USE_GMM))
        if "gmm" in config.algorithms
        else None
    )
    dbscan_metrics = (
        _dbscan_replication(noisy, baseline, config, rep_stream.child("use", USE_BOOT))
        if "dbscan" in config.algorithms
        else None
    )
    return ReplicationRecord(
        condition_index=condition.index,
        replication=replication,
        gmm=gmm_metrics,
        dbscan=dbscan_metrics,
    )


def _mean(values: Iterable[float]) -> float | None:
    vals = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    return float(np.mean(vals)) if vals else None


def aggregate_condition(
    condition: ConditionId, records: Sequence[ReplicationRecord], config: RunConfig
) -> ConditionReport:
    """Means over the condition's non-failed replications, with failure
    counts kept alongside."""
    fields: dict = {"condition": condition, "replications": len(records)}
    if "gmm" in config.algorithms:
        ok = [r.gmm for r in records if r.gmm is not None and not r.gmm.failed]
        fields.update(
            gmm_n_clusters=_mean(m.n_clusters for m in ok),
            gmm_ari=_mean(m.ari for m in ok),
            gmm_n_merged=_mean(m.n_merged for m in ok),
            gmm_ari_merged=_mean(m.ari_merged for m in ok),
            gmm_failures=sum(1 for r in records if r.gmm is not None and r.gmm.failed),
        )
    if "dbscan" in config.algorithms:
        ok = [r.dbscan for r in records if r.dbscan is not None and not r.dbscan.failed]
        fields.update(
            dbscan_n_clusters=_mean(m.n_clusters for m in ok),
            dbscan_ari=_mean(m.ari for m in ok),
            dbscan_n_stable=_mean(m.n_stable for m in ok),
            dbscan_ari_stable=_mean(m.ari_stable for m in ok),
            dbscan_noise_size=_mean(m.noise_size for m in ok),
            dbscan_noise_stable_rate=_mean(
                (1.0 if m.noise_stable else 0.0) for m in ok if m.noise_stable is not None
            ),
            dbscan_failures=sum(1 for r in records if r.dbscan is not None and r.dbscan.failed),
        )
    return ConditionReport(**fields)


_WORKER: dict = {}


def _init_worker(config: RunConfig) -> None:
    _WORKER["config"] = config
    _WORKER["baseline"] = run_baseline(config)
    _WORKER["conditions"] = enumerate_conditions()


def _grid_task(task: tuple[int, int]) -> ReplicationRecord:
    cond_index, rep = task
    condition = _WORKER["conditions"][cond_index]
    return run_replication(condition, rep, _WORKER["baseline"], _WORKER["config"])


def run_grid(config: RunConfig) -> tuple[list[ConditionReport], list[ReplicationRecord]]:
    """Execute every (condition, replication) cell and aggregate.

    Replications are independent work units; with ``worker_count > 1``
    they are distributed over a process pool. Streams are pre-derived
    per cell and aggregation follows condition/replication order, so the
    outputs are byte-identical for any worker count. When the config
    names an output directory, reports are written there (CSV tables,
    raw records, manifest and, unless disabled, figures).
    """
    all_conditions = enumerate_conditions()
    if config.condition_indices is not None:
        conditions = [all_conditions[i] for i in config.condition_indices]
    else:
        conditions = all_conditions
    tasks = [(c.index, rep) for c in conditions for rep in range(config.replications)]

    if config.worker_count <= 1:
        _init_worker(config)
        records = [_grid_task(t) for t in tasks]
    else:
        chunksize = max(1, len(tasks) // (config.worker_count * 8))
        with ProcessPoolExecutor(
            max_workers=config.worker_count, initializer=_init_worker, initargs=(config,)
        ) as pool:
            records = list(pool.map(_grid_task, tasks, chunksize=chunksize))

    reports = []
    for i, condition in enumerate(conditions):
        chunk = records[i * config.replications : (i + 1) * config.replications]
        reports.append(aggregate_condition(condition, chunk, config))

    if config.output_directory is not None:
        write_report(reports, records, config.output_directory, config)
    return reports, records


def _fmt_mean(value: float | None) -> str:
    return "" if value is None else f"{value:.3f}"


def _fmt_float(value: float | None) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return f"{value:.6f}"


def write_report(
    reports: Sequence[ConditionReport],
    records: Sequence[ReplicationRecord],
    output_directory: str | Path,
    config: RunConfig,
) -> list[Path]:
    """Write the per-condition CSV tables, the raw replication records,
    the run manifest, and (unless disabled) the figures."""
    if not reports:
        raise ValueError("reports must be nonempty")
    out = Path(output_directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written: list[Path] = []

    def _open(name: str):
        path = out / name
        written.append(path)
        return open(path, "w", newline="", encoding="utf-8")

    shared = lambda r: [
        r.condition.error_type.value,
        r.condition.variables.value,
        r.condition.magnitude.value,
        f"{r.condition.rate:g}",
    ]

    if "gmm" in config.algorithms:
        with _open("gmm_results.csv") as fh:
            w = csv.writer(fh)
            w.writerow(["error_type", "vars", "magnitude", "rate", "n_clusters", "ari", "n_merged", "ari_merged"])
            for r in reports:
                w.writerow(
                    shared(r)
                    + [_fmt_mean(r.gmm_n_clusters), _fmt_mean(r.gmm_ari),
                       _fmt_mean(r.gmm_n_merged), _fmt_mean(r.gmm_ari_merged)]
                )

    if "dbscan" in config.algorithms:
        with _open("dbscan_results.csv") as fh:
            w = csv.writer(fh)
            w.writerow(["error_type", "vars", "magnitude", "rate", "n_clusters", "ari", "n_stable", "ari_stable", "noise_size"])
            for r in reports:
                w.writerow(
                    shared(r)
                    + [_fmt_mean(r.dbscan_n_clusters), _fmt_mean(r.dbscan_ari),
                       _fmt_mean(r.dbscan_n_stable), _fmt_mean(r.dbscan_ari_stable),
                       _fmt_mean(r.dbscan_noise_size)]
                )

    conditions = enumerate_conditions()
    with _open("replications.csv") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["condition_index", "error_type", "vars", "magnitude", "rate", "replication",
             "algorithm", "failed", "n_clusters", "ari", "n_merged", "ari_merged", "gmm_ll_drop",
             "n_stable", "ari_stable", "noise_size", "noise_stable", "eps"]
        )
        for rec in records:
            cond = conditions[rec.condition_index]
            prefix = [
                rec.condition_index, cond.error_type.value, cond.variables.value,
                cond.magnitude.value, f"{cond.rate:g}", rec.replication,
            ]
            if rec.gmm is not None:
                m = rec.gmm
                w.writerow(
                    prefix + ["gmm", int(m.failed), m.n_clusters, _fmt_float(m.ari),
                              m.n_merged, _fmt_float(m.ari_merged), f"{m.ll_drop:.3e}",
                              "", "", "", "", ""]
                )
            if rec.dbscan is not None:
                m = rec.dbscan
                noise_stable = "" if m.noise_stable is None else int(m.noise_stable)
                w.writerow(
                    prefix + ["dbscan", int(m.failed), m.n_clusters, _fmt_float(m.ari), "", "", "",
                              m.n_stable, _fmt_float(m.ari_stable), m.noise_size, noise_stable,
                              _fmt_float(m.eps)]
                )

    manifest = {
        "config": config.to_json_dict(),
        "versions": {
            "cnlab": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "failed_replications": {
            str(r.condition.index): {"gmm": r.gmm_failures, "dbscan": r.dbscan_failures}
            for r in reports
        },
    }
    path = out / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    written.append(path)

    if config.figures:
        from .figures import write_figures

        written.extend(write_figures(reports, out))
    return written


def failure_rate_exceeded(reports: Sequence[ConditionReport], limit: float = 0.1) -> bool:
    """True when any condition lost more than ``limit`` of its
    replications to failed fits."""
    for r in reports:
        if max(r.gmm_failures, r.dbscan_failures) > limit * r.replications:
            return True
    return False
