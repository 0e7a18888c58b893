import numpy as np
import pytest
from scipy.stats import ks_2samp

from cnlab import (
    CovariateShiftParams,
    ErrorCondition,
    ErrorType,
    GaussianSpec,
    LabeledDataset,
    Magnitude,
    NoiseParams,
    RngStream,
    ValueDependentParams,
    VariablesAffected,
    generate_baseline,
    inject,
    resolve_noise_params,
    sample_mvn,
    select_affected,
)
from cnlab.exceptions import InvalidParams, UnsupportedCondition


def cond(error_type, variables, magnitude, rate):
    return ErrorCondition(error_type=error_type, variables=variables, magnitude=magnitude, rate=rate)


RANDOM, SYSTEMATIC = ErrorType.RANDOM_IID, ErrorType.SYSTEMATIC_SHIFT
ONE, ALL = VariablesAffected.ONE, VariablesAffected.ALL
LOW, MEDIUM, HIGH = Magnitude.LOW, Magnitude.MEDIUM, Magnitude.HIGH


# --- grid lookup -------------------------------------------------------------

def test_resolve_random_one_low():
    p = resolve_noise_params(cond(RANDOM, ONE, LOW, 0.1))
    assert np.array_equal(p.shift_means, [0.0, 0.0, 0.0])
    assert np.array_equal(p.shift_sds, [4.0, 0.0, 0.0])


def test_resolve_systematic_all_high():
    p = resolve_noise_params(cond(SYSTEMATIC, ALL, HIGH, 0.4))
    assert np.array_equal(p.shift_means, [10.0, -10.0, 5.0])
    assert np.array_equal(p.shift_sds, [2.0, 2.0, 2.0])


def test_resolve_systematic_one_medium():
    p = resolve_noise_params(cond(SYSTEMATIC, ONE, MEDIUM, 0.2))
    assert np.array_equal(p.shift_means, [5.0, 0.0, 0.0])
    assert np.array_equal(p.shift_sds, [2.0, 0.0, 0.0])


def test_resolve_random_all_grid():
    expected_sds = {LOW: [4.0, 2.0, 6.0], MEDIUM: [8.0, 4.0, 12.0], HIGH: [16.0, 16.0, 24.0]}
    for mag, sds in expected_sds.items():
        p = resolve_noise_params(cond(RANDOM, ALL, mag, 0.1))
        assert np.array_equal(p.shift_sds, sds)
        assert np.array_equal(p.shift_means, [0.0, 0.0, 0.0])


def test_resolve_rejects_parameterized_modes_and_wrong_dim():
    with pytest.raises(UnsupportedCondition):
        resolve_noise_params(cond(ErrorType.COVARIATE_DEPENDENT, ONE, LOW, 0.1))
    with pytest.raises(UnsupportedCondition):
        resolve_noise_params(cond(ErrorType.VALUE_DEPENDENT, ONE, LOW, 0.1))
    with pytest.raises(UnsupportedCondition):
        resolve_noise_params(cond(RANDOM, ONE, LOW, 0.1), d=2)


# --- affected-row selection ---------------------------------------------------

def test_select_affected_extremes():
    rng = RngStream(1).child("mask")
    assert not select_affected(500, 0.0, rng).any()
    assert select_affected(500, 1.0, RngStream(1).child("mask2")).all()


def test_select_affected_binomial_count():
    mask = select_affected(10_000, 0.1, RngStream(2).child("mask"))
    # central 99.9% interval of Binomial(10000, 0.1)
    assert 903 <= mask.sum() <= 1100


# --- injection ----------------------------------------------------------------

def _small_dataset(seed=0, n=200):
    rng = RngStream(seed).child("data")
    values = sample_mvn(GaussianSpec(np.array([1.0, 2.0, 3.0]), np.eye(3)), n, rng)
    return LabeledDataset(values=values, labels=np.zeros(n, dtype=int))


def test_inject_rate_zero_is_identity():
    ds = _small_dataset()
    c = cond(RANDOM, ONE, HIGH, 0.0)
    out = inject(ds, c, resolve_noise_params(c), RngStream(3).child("use", 0))
    assert np.array_equal(out.values, ds.values)
    assert np.array_equal(out.labels, ds.labels)


def test_inject_does_not_mutate_input():
    ds = _small_dataset()
    before = ds.values.copy()
    c = cond(SYSTEMATIC, ALL, HIGH, 0.8)
    inject(ds, c, resolve_noise_params(c), RngStream(4).child("use", 0))
    assert np.array_equal(ds.values, before)


def test_inject_unmasked_rows_bit_identical():
    ds = _small_dataset()
    c = cond(RANDOM, ALL, HIGH, 0.5)
    stream_path = ("use", 5)
    out = inject(ds, c, resolve_noise_params(c), RngStream(9).child(*stream_path))
    # Identical stream replays the mask that inject drew internally.
    mask = select_affected(ds.n, c.rate, RngStream(9).child(*stream_path))
    assert np.array_equal(out.values[~mask], ds.values[~mask])
    assert not np.array_equal(out.values[mask], ds.values[mask])


def test_inject_systematic_shift_magnitude():
    n = 10_000
    ds = LabeledDataset(values=np.zeros((n, 3)), labels=np.zeros(n, dtype=int))
    c = cond(SYSTEMATIC, ONE, HIGH, 1.0)
    out = inject(ds, c, resolve_noise_params(c), RngStream(6).child("use", 0))
    delta = out.values - ds.values
    # mean of N(10, 2) over 1e4 draws, 3 standard errors
    assert abs(delta[:, 0].mean() - 10.0) < 0.06
    assert np.array_equal(out.values[:, 1:], ds.values[:, 1:])


def test_covariate_mode_collapses_to_plain_shift():
    n = 10_000
    ds = LabeledDataset(values=np.zeros((n, 1)), labels=np.zeros(n, dtype=int))
    shift = ErrorCondition(error_type=SYSTEMATIC, variables=ONE, magnitude=None, rate=1.0)
    covar = ErrorCondition(
        error_type=ErrorType.COVARIATE_DEPENDENT, variables=ONE, magnitude=None, rate=1.0
    )
    a = inject(ds, shift, NoiseParams(np.array([3.0]), np.array([2.0])), RngStream(7).child("a"))
    b = inject(
        ds,
        covar,
        CovariateShiftParams(variables=(0,), mu0=3.0, sigma0=2.0, mu1=3.0, sigma1=2.0),
        RngStream(8).child("b"),
    )
    stat = ks_2samp(a.values[:, 0], b.values[:, 0]).statistic
    # two-sample KS critical value at alpha=0.01 for n=m=1e4
    assert stat < 1.628 * np.sqrt(2.0 / n)


def test_random_error_preserves_column_means():
    ds = generate_baseline(RngStream(10).child("baseline").child("use", 0))
    c = cond(RANDOM, ALL, HIGH, 0.4)
    params = resolve_noise_params(c)
    deviations = []
    for rep in range(100):
        out = inject(ds, c, params, RngStream(10).child("rep", rep))
        deviations.append(out.values[:, 0].mean() - ds.values[:, 0].mean())
    assert abs(np.mean(deviations)) < 0.25


def test_systematic_error_shifts_mean_by_rate_times_mu():
    n = 10_000
    ds = LabeledDataset(values=np.zeros((n, 3)), labels=np.zeros(n, dtype=int))
    c = cond(SYSTEMATIC, ONE, HIGH, 0.4)
    out = inject(ds, c, resolve_noise_params(c), RngStream(11).child("use", 0))
    shift = out.values[:, 0].mean()
    assert abs(shift - 0.4 * 10.0) < 0.1 * 4.0  # within 10% relative


def test_value_dependent_shift_tracks_value():
    n = 5000
    gen = RngStream(12).child("vals").generator
    values = gen.normal(0.0, 3.0, size=(n, 1))
    ds = LabeledDataset(values=values, labels=np.zeros(n, dtype=int))
    c = ErrorCondition(
        error_type=ErrorType.VALUE_DEPENDENT, variables=ONE, magnitude=None, rate=1.0
    )
    out = inject(
        ds, c, ValueDependentParams(variables=(0,), slope=0.5, sigma=0.1), RngStream(13).child("u")
    )
    delta = out.values[:, 0] - ds.values[:, 0]
    expected = 0.5 * (ds.values[:, 0] - np.median(ds.values[:, 0]))
    assert np.corrcoef(delta, expected)[0, 1] > 0.99
    assert abs((delta - expected).mean()) < 0.01


def test_inject_parameter_validation():
    ds = _small_dataset()
    c = cond(RANDOM, ONE, LOW, 0.5)
    with pytest.raises(InvalidParams):
        NoiseParams(np.zeros(3), np.array([-1.0, 0.0, 0.0]))
    with pytest.raises(InvalidParams):
        inject(ds, c, NoiseParams(np.array([1.0, 0, 0]), np.array([2.0, 0, 0])),
               RngStream(14).child("u"))  # random error with nonzero mean
    with pytest.raises(InvalidParams):
        inject(ds, c, CovariateShiftParams(variables=(0,), mu0=0, sigma0=1, mu1=1, sigma1=1),
               RngStream(15).child("u"))  # wrong params type for the mode


def test_error_condition_json_round_trip():
    c = cond(SYSTEMATIC, ALL, MEDIUM, 0.2)
    doc = c.to_json_dict()
    assert doc == {"type": "systematic", "variables": "all", "magnitude": "medium", "rate": 0.2}
    assert ErrorCondition.from_json_dict(doc) == c
    free = ErrorCondition(error_type=ErrorType.COVARIATE_DEPENDENT, variables=ONE,
                          magnitude=None, rate=0.35)
    assert ErrorCondition.from_json_dict(free.to_json_dict()) == free
