"""cnlab: a laboratory for probing clustering robustness to measurement error.

Gaussian mixture modeling (EM, BIC selection, component merging) and
DBSCAN (automated eps, bootstrap stability) run inside a seeded Monte
Carlo harness that injects parameterized random or systematic error into
a reference mixture dataset and reports how the clusterings degrade.
"""

__version__ = "0.1.0"

from .datagen import (
    GaussianSpec,
    LabeledDataset,
    MixtureSpec,
    baseline_spec,
    cholesky_factor,
    generate_baseline,
    sample_mixture,
    sample_mvn,
)
from .dbscan import DbscanParams, choose_eps, dbscan, eps_neighborhood, fit_auto, kth_nn_distances
from .gmm import (
    EmConfig,
    GaussianComponent,
    GmmModel,
    MergeResult,
    bhattacharyya_distance,
    em_step,
    fit_gmm,
    map_assign,
    merge_components,
    mixture_logpdf,
    mvn_logpdf,
    select_k,
)
from .harness import (
    BaselineArtifacts,
    ConditionId,
    ConditionReport,
    ReplicationRecord,
    RunConfig,
    classification_rate,
    enumerate_conditions,
    run_baseline,
    run_grid,
    run_replication,
    write_report,
)
from .labels import NOISE, ClusterLabels
from .measurement_error import (
    CovariateShiftParams,
    ErrorCondition,
    ErrorType,
    Magnitude,
    NoiseParams,
    ValueDependentParams,
    VariablesAffected,
    inject,
    resolve_noise_params,
    select_affected,
)
from .rng import RngStream
from .validation import (
    ContingencyTable,
    StabilityReport,
    adjusted_rand_index,
    assess_stability,
    jaccard,
    rand_index,
    stable_subset_labels,
)
