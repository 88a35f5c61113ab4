import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import stats

from selective_eval.errors import DomainError, SchemaError
from selective_eval.risk import (
    ALWAYS_ABSTAIN,
    EvalRecord,
    JudgeThreshold,
    RiskPoint,
    ThresholdSet,
    binomial_cdf,
    binomial_cdf_all,
    binomial_upper_bound,
    calibrate_single,
    empirical_risk,
    fixed_sequence_threshold,
    max_passing_errors,
    minimum_testable_count,
    point_estimate_threshold,
)

from _support import A, B, binom_cdf_oracle, bound_oracle


def rec(i, conf, correct):
    return EvalRecord(f"r{i}", A, conf, A if correct else B)


# -- binomial tail -------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 7, 50, 400, 1000, 1001, 5000])
def test_cdf_matches_scipy(n):
    for p in (1e-4, 0.03, 0.1, 0.5, 0.97):
        for k in sorted({0, 1, n // 3, n // 2, n - 1}):
            assert binomial_cdf(k, n, p) == pytest.approx(stats.binom.cdf(k, n, p), rel=1e-9, abs=1e-13)


@pytest.mark.parametrize("n, p", [(30, 0.2), (1000, 0.1), (1500, 0.07)])
def test_cdf_vector_matches_pointwise(n, p):
    vec = binomial_cdf_all(n, p)
    assert vec[-1] == 1.0 and np.all(np.diff(vec) >= -1e-15)
    for k in (0, 3, n // 4, n - 1):
        assert vec[k] == pytest.approx(binomial_cdf(k, n, p), rel=1e-9, abs=1e-14)


def test_cdf_edges():
    assert binomial_cdf(-1, 5, 0.3) == 0.0
    assert binomial_cdf(5, 5, 0.3) == 1.0
    assert binomial_cdf(2, 5, 0.0) == 1.0
    assert binomial_cdf(2, 5, 1.0) == 0.0


@pytest.mark.parametrize("n", [1, 5, 10, 100])
def test_zero_error_bound_closed_form(n):
    assert binomial_upper_bound(0, n, 0.1) == pytest.approx(1 - 0.1 ** (1 / n), abs=1e-9)


def test_spot_values():
    assert binomial_upper_bound(10, 10, 0.1) == 1.0
    assert binomial_upper_bound(0, 10, 0.1) == pytest.approx(0.20567, abs=1e-5)
    b = binomial_upper_bound(1, 10, 0.1)
    assert b == pytest.approx(0.337, abs=5e-4)
    assert (1 - b) ** 10 + 10 * b * (1 - b) ** 9 == pytest.approx(0.1, abs=1e-9)


def test_bound_agrees_with_beta_quantile():
    # the one-sided Clopper-Pearson upper limit is a Beta(k+1, n-k) quantile
    for n, k, d in [(20, 3, 0.05), (500, 40, 0.1), (3000, 100, 0.01)]:
        assert binomial_upper_bound(k, n, d) == pytest.approx(stats.beta.ppf(1 - d, k + 1, n - k), abs=1e-8)


@pytest.mark.parametrize("args", [(0, 0, 0.1), (3, 2, 0.1), (-1, 5, 0.1), (1, 5, 0.0), (1, 5, 1.0)])
def test_bound_domain(args):
    with pytest.raises(DomainError):
        binomial_upper_bound(*args)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 300), st.data(), st.sampled_from([0.01, 0.05, 0.1, 0.3]))
def test_bound_sup_property_and_oracle(n, data, delta):
    k = data.draw(st.integers(0, n - 1))
    b = binomial_upper_bound(k, n, delta)
    assert binom_cdf_oracle(k, n, b) >= delta - 1e-12
    assert binom_cdf_oracle(k, n, min(1.0, b + 1e-6)) < delta
    assert b >= k / n


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 200), st.data(), st.sampled_from([0.05, 0.1]))
def test_bound_monotone(n, data, delta):
    k = data.draw(st.integers(0, n - 2))
    assert binomial_upper_bound(k, n, delta) <= binomial_upper_bound(k + 1, n, delta)
    assert binomial_upper_bound(k, n + 1, delta) <= binomial_upper_bound(k, n, delta)
    assert binomial_upper_bound(k, n, delta) <= binomial_upper_bound(k, n, delta / 2)


@pytest.mark.parametrize("alpha, level", [(0.1, 0.1), (0.05, 0.0333), (0.3, 0.01), (0.2, 0.5)])
def test_passing_table_matches_bound(alpha, level):
    t = max_passing_errors(300, alpha, level)
    for n in range(1, 301):
        k = int(t[n])
        if k >= 0:
            assert binomial_upper_bound(k, n, level) <= alpha
        assert binomial_upper_bound(k + 1, n, level) > alpha


@pytest.mark.parametrize("alpha, level", [(0.1, 0.1), (0.05, 0.01), (0.3, 0.3), (0.01, 0.5)])
def test_minimum_testable_count(alpha, level):
    n = minimum_testable_count(alpha, level)
    assert binomial_upper_bound(0, n, level) <= alpha
    if n > 1:
        assert binomial_upper_bound(0, n - 1, level) > alpha


# -- empirical risk ------------------------------------------------------------

RECS = [rec(0, 0.9, True), rec(1, 0.8, False), rec(2, 0.7, True)]


def test_empirical_risk_examples():
    p = empirical_risk(RECS, 0.75, 0.1)
    assert (p.n, p.k, p.risk_hat) == (2, 1, 0.5)
    p = empirical_risk(RECS, 0.95, 0.1)
    assert (p.n, p.k, p.risk_hat, p.risk_bound) == (0, 0, 0.0, 1.0)
    p = empirical_risk(RECS, 0.0, 0.1)
    assert (p.n, p.k) == (3, 1) and p.risk_hat == pytest.approx(1 / 3)


def test_unknown_human_counts_as_error():
    assert EvalRecord("x", A, 0.9, None).error
    with pytest.raises(DomainError):
        EvalRecord("x", A, 1.5, A)


# -- fixed-sequence calibration --------------------------------------------------


def scan_oracle(records, alpha, delta, min_count):
    """Threshold from checking every grid point independently.

    lambda is admissible when it and every testable grid point above it has
    a bound <= alpha; the answer is the smallest admissible grid point.
    """
    grid = sorted({r.confidence for r in records}, reverse=True)
    rows = []
    for lam in grid:
        cov = [r for r in records if r.confidence >= lam]
        if len(cov) < min_count:
            continue
        k = sum(r.error for r in cov)
        rows.append((lam, bound_oracle(k, len(cov), delta) <= alpha))
    best = ALWAYS_ABSTAIN
    for lam, ok in rows:
        if not ok:
            break
        best = lam
    return best


def random_records(rng, size):
    levels = rng.integers(2, 12)
    conf = np.round(rng.uniform(0.5, 1.0, size), int(rng.integers(1, 3)))
    p_err = rng.uniform(0, 0.6) * (1.0 - conf) * 2
    err = rng.random(size) < p_err
    del levels
    return [rec(i, float(c), not e) for i, (c, e) in enumerate(zip(conf, err))]


@pytest.mark.parametrize("min_count", [1, None])
def test_calibrate_single_matches_scan(min_count):
    rng = np.random.default_rng(3)
    for _ in range(60):
        records = random_records(rng, int(rng.integers(1, 101)))
        alpha = float(rng.choice([0.1, 0.2, 0.3, 0.5]))
        delta = float(rng.choice([0.05, 0.1, 0.3]))
        mc = minimum_testable_count(alpha, delta) if min_count is None else min_count
        assert calibrate_single(records, alpha, delta, min_count=min_count).threshold == scan_oracle(
            records, alpha, delta, mc
        )


def test_five_correct_records_abstain():
    records = [rec(i, 0.9, True) for i in range(5)]
    for mc in (None, 1):
        cal = calibrate_single(records, 0.1, 0.1, min_count=mc)
        assert cal.threshold is ALWAYS_ABSTAIN
    assert calibrate_single(records, 0.1, 0.1, min_count=1).trace[0].risk_bound == pytest.approx(1 - 0.1 ** 0.2, abs=1e-9)


def test_all_correct_spread_confidences():
    records = [rec(i, 0.5 + 0.5 * i / 199, True) for i in range(200)]
    cal = calibrate_single(records, 0.1, 0.1, min_count=1)
    # smallest n with 1 - 0.1**(1/n) <= 0.1 is 22; all-correct means every later point passes
    n_first = next(n for n in range(1, 201) if 1 - 0.1 ** (1 / n) <= 0.1)
    assert n_first == 22
    assert cal.threshold is ALWAYS_ABSTAIN  # n=1 already fails under the literal walk
    cal = calibrate_single(records, 0.1, 0.1)
    assert cal.threshold == records[0].confidence
    assert cal.threshold == scan_oracle(records, 0.1, 0.1, minimum_testable_count(0.1, 0.1))


def test_top_record_wrong_abstains():
    records = [rec(0, 0.99, False)] + [rec(i, 0.9 - i / 1000, True) for i in range(1, 300)]
    for mc in (None, 1):
        assert calibrate_single(records, 0.05, 0.1, min_count=mc).threshold is ALWAYS_ABSTAIN


def test_trace_stops_after_first_failure():
    rng = np.random.default_rng(0)
    conf = rng.uniform(0.5, 1, 400)
    err = rng.random(400) < (1 - conf)
    cal = fixed_sequence_threshold(conf, err, 0.1, 0.1)
    assert cal.threshold is not ALWAYS_ABSTAIN
    *passed, last = cal.trace
    assert all(p.risk_bound <= 0.1 for p in passed)
    assert last.risk_bound > 0.1 or last.lam == cal.threshold
    assert min(p.lam for p in passed + [last]) <= cal.threshold
    lams = [p.lam for p in cal.trace]
    assert lams == sorted(lams, reverse=True)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=80), st.sampled_from([0.1, 0.2, 0.3]))
def test_accepted_subset_risk_bounded(data, alpha):
    records = [rec(i, c, ok) for i, (c, ok) in enumerate(data)]
    cal = calibrate_single(records, alpha, 0.1)
    if cal.threshold is not ALWAYS_ABSTAIN:
        p = empirical_risk(records, cal.threshold, 0.1)
        assert p.risk_bound <= alpha
        assert cal.threshold in {r.confidence for r in records}


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.booleans()), min_size=1, max_size=100))
def test_threshold_nonincreasing_in_alpha_for_fixed_min_count(data):
    records = [rec(i, c / 20, ok) for i, (c, ok) in enumerate(data)]
    prev = None
    for alpha in (0.05, 0.1, 0.2, 0.3, 0.5):
        thr = calibrate_single(records, alpha, 0.1, min_count=10).threshold
        t = math.inf if thr is ALWAYS_ABSTAIN else thr
        if prev is not None:
            assert t <= prev
        prev = t


def test_calibration_rejects_bad_inputs():
    with pytest.raises(DomainError):
        calibrate_single([], 0.1, 0.1)
    with pytest.raises(DomainError):
        calibrate_single(RECS, 1.5, 0.1)


def test_point_estimate_threshold():
    conf = np.array([0.95, 0.9, 0.8, 0.7, 0.6])
    err = np.array([False, False, True, False, True])
    # k/n along the grid: 0, 0, 1/3, 1/4, 2/5
    assert point_estimate_threshold(conf, err, 0.25) == 0.7
    assert point_estimate_threshold(conf, err, 0.1) == 0.9
    assert point_estimate_threshold(conf[:1], np.array([True]), 0.1) is ALWAYS_ABSTAIN


# -- threshold sets ---------------------------------------------------------------


def test_threshold_set_roundtrip_and_validation():
    ts = ThresholdSet(
        0.1,
        0.1,
        (
            JudgeThreshold("a", ALWAYS_ABSTAIN, (RiskPoint(0.9, 3, 1, 1 / 3, 0.8),)),
            JudgeThreshold("b", 0.8, (RiskPoint(0.9, 40, 0, 0.0, 0.056), RiskPoint(0.8, 80, 2, 0.025, 0.065))),
        ),
    )
    again = ThresholdSet.from_json(ts.to_json())
    assert again == ts
    again.validate()
    bad = ts.to_json()
    bad["judges"][1]["trace"][0]["risk_bound"] = 0.5
    with pytest.raises(SchemaError):
        ThresholdSet.from_json(bad).validate()
    bad = ts.to_json()
    bad["judges"][0]["threshold"] = 0.5
    with pytest.raises(SchemaError):
        ThresholdSet.from_json(bad)
    with pytest.raises(SchemaError):
        ThresholdSet.from_json({"alpha": 0.1})
