import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qtemplate.actions import AffineTranslationAction, CyclicShiftAction, RotationAction, TrivialAction
from qtemplate.bias import (
    BiasReport,
    cb_bounds,
    chi_mean,
    clamp_lower,
    empirical_bias,
    estimate_K,
    linearity_check,
    mean_knowing_transformations,
    rotation_bias_closed_form,
)
from qtemplate.errors import ContractViolation, UnsupportedAction
from qtemplate.model import NoiseSpec, TransformationLaw, rng_stream, sample_observations
from qtemplate.quotient import quotient_distance

from oracles import K_finite_exact, K_finite_grid, chi_mean_gamma

ASYM_ATOMS = [
    [0.6651378631256462, 0.3581511570676556, -0.051164451009665074, -0.4093156080773207],
    [-0.8697956671643065, -0.15349335302899525, 0.4604800590869858, 0.10232890201933015],
    [-0.3581511570676556, -0.6651378631256462, -0.562808961106316, 0.8697956671643065],
]
ASYM_PROBS = [0.5, 0.3, 0.2]


def test_chi_mean_matches_gamma_form():
    for n in (1, 2, 5, 16, 64, 100):
        assert chi_mean(n) == pytest.approx(chi_mean_gamma(n), rel=1e-13)
    assert chi_mean(64) == pytest.approx(0.9961015277498284, rel=1e-14)


def test_exact_K_oracles_agree():
    exact = K_finite_exact(ASYM_ATOMS, ASYM_PROBS)
    assert exact == pytest.approx(0.8617831264697997, abs=1e-15)
    grid = K_finite_grid(ASYM_ATOMS, ASYM_PROBS)
    assert grid <= exact + 1e-12 and exact - grid < 1e-3


@pytest.mark.parametrize("atoms,probs,exact", [
    (ASYM_ATOMS, ASYM_PROBS, 0.8617831264697997),
    ([[1.0, 0, 0, 0], [-1.0, 0, 0, 0]], [0.5, 0.5], 0.7071067811865476),
])
def test_K_on_finite_support(atoms, probs, exact):
    assert K_finite_exact(atoms, probs) == pytest.approx(exact, abs=1e-15)
    est = estimate_K(NoiseSpec.finite(atoms, probs), CyclicShiftAction(4), 5000, seed=1)
    tol = max(4 * est.std_error, 1e-3)
    assert abs(est.value - exact) < tol
    assert est.method == "maxmax_on_noise" and est.reps == 8


def test_K_rotation_is_chi_mean():
    est = estimate_K(NoiseSpec.gaussian(16), RotationAction(16), 5000, seed=2)
    assert abs(est.value - chi_mean(16)) < 4 * est.std_error


def test_K_trivial_is_zero():
    est = estimate_K(NoiseSpec.gaussian(16), TrivialAction(16), 5000, seed=2)
    assert abs(est.value) < 4 * est.std_error
    # the in-sample norm is biased upward
    assert est.plugin > est.value


def test_K_cross_check_is_close():
    est = estimate_K(NoiseSpec.finite(ASYM_ATOMS, ASYM_PROBS), CyclicShiftAction(4), 5000, seed=3,
                     cross_check=True)
    assert abs(est.sphere_search - est.value) < 4 * math.hypot(est.std_error,
                                                               est.sphere_search_std_error)


def test_K_unpacks_and_reproduces():
    a = estimate_K(NoiseSpec.gaussian(6), CyclicShiftAction(6), 500, seed=4, reps=3)
    b = estimate_K(NoiseSpec.gaussian(6), CyclicShiftAction(6), 500, seed=4, reps=3)
    k, se = a
    assert (k, se) == (b.value, b.std_error)


def test_K_needs_isometry():
    with pytest.raises(UnsupportedAction):
        estimate_K(NoiseSpec.gaussian(2), AffineTranslationAction(2), 10, seed=0)


@pytest.mark.parametrize("sigma,t0,K,expected", [
    (10.0, 1.0, 0.5, (3.0, 7.0)),
    (0.0, 2.0, 0.9, (-4.0, 4.0)),
    (4.0, 0.0, 0.25, (1.0, 1.0)),
])
def test_cb_bounds(sigma, t0, K, expected):
    assert cb_bounds(sigma, t0, K) == pytest.approx(expected)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 100), st.floats(0, 10), st.floats(0, 1))
def test_cb_bounds_width(sigma, t0, K):
    lo, hi = cb_bounds(sigma, t0, K)
    assert hi - lo == pytest.approx(4 * t0, abs=1e-9)
    assert clamp_lower(lo) >= 0


def test_cb_bounds_rejects_negative():
    with pytest.raises(ContractViolation):
        cb_bounds(-1.0, 1.0, 0.5)


def test_rotation_bias_noiseless_is_zero():
    t0 = np.array([3.0, 0.0])
    act = RotationAction(2)
    law = TransformationLaw.custom([act.random_element(rng_stream(0, "g", j)) for j in range(8)], np.full(8, 0.125))
    s = sample_observations(t0, 0.0, law, NoiseSpec.gaussian(2), 100, seed=0, action=act)
    assert rotation_bias_closed_form(t0, s) == pytest.approx(0.0, abs=1e-12)


def test_rotation_bias_against_monte_carlo():
    t0 = np.array([3.0, 0.0])
    sigma = 4.0
    s = sample_observations(t0, sigma, TransformationLaw.fixed(), NoiseSpec.gaussian(2), 100000,
                            seed=1, action=RotationAction(2))
    got = rotation_bias_closed_form(t0, s)
    # independent estimate of E||t0 + sigma eps|| - ||t0||
    rng = np.random.default_rng(77)
    norms = []
    for _ in range(10):
        z = t0 + sigma * rng.standard_normal((10**6, 2)) / math.sqrt(2)
        norms.append(np.linalg.norm(z, axis=1))
    norms = np.concatenate(norms)
    ref = norms.mean() - 3.0
    se = norms.std() * math.sqrt(1 / len(norms) + 1 / 100000)
    assert abs(got - ref) < 4 * se
    assert got > 0


def test_mean_knowing_transformations_noiseless():
    act = CyclicShiftAction(6)
    t0 = np.arange(6.0)
    s = sample_observations(t0, 0.0, TransformationLaw.uniform(act), NoiseSpec.gaussian(6), 50,
                            seed=3, action=act)
    np.testing.assert_array_equal(mean_knowing_transformations(s, act), t0)


def test_mean_knowing_transformations_rate():
    act = CyclicShiftAction(16)
    t0 = np.zeros(16)
    t0[4:12] = 1.0
    law = TransformationLaw.uniform(act)
    d = {}
    for I in (1000, 4000):
        vals = []
        for rep in range(20):
            s = sample_observations(t0, 5.0, law, NoiseSpec.gaussian(16), I, seed=100 * rep + 1,
                                    action=act)
            vals.append(quotient_distance(t0, mean_knowing_transformations(s, act), act).distance)
        d[I] = np.mean(vals)
    assert 0.4 < d[4000] / d[1000] < 0.6


def test_empirical_bias_forms():
    act = CyclicShiftAction(4)
    t0 = np.array([1.0, 0, 0, 0])
    m = np.array([0.0, 0, 2.0, 0])
    assert empirical_bias(t0, m, act) == pytest.approx(1.0)
    assert empirical_bias(t0, m, act, sigma=4.0) == pytest.approx((1.0, 0.25))
    with pytest.raises(ContractViolation):
        empirical_bias(t0, m, act, sigma=0.0)


def test_bias_report():
    act = CyclicShiftAction(4)
    t0 = np.array([1.0, 0, 0, 0])
    rep = BiasReport.build(0.5, 0.01, 10.0, t0, np.array([0.0, 5.0, 0, 0]), act, "maxmax_on_noise")
    assert (rep.cb_lower, rep.cb_upper) == pytest.approx((3.0, 7.0))
    assert rep.EB == pytest.approx(4.0) and rep.EB_over_sigma == pytest.approx(0.4)
    assert rep.in_envelope()
    assert set(rep.to_dict()) >= {"K_estimate", "EB", "cb_lower", "cb_upper"}


def test_linearity_small():
    act = CyclicShiftAction(8)
    t0 = np.ones(8) / math.sqrt(8)
    res = linearity_check(t0, NoiseSpec.gaussian(8), act, [1.0, 4.0], I=400, seed=5, reps=3)
    assert [r.sigma for r in res.rows] == [1.0, 4.0]
    assert all(len(r.per_rep) == 3 for r in res.rows)
    for r in res.rows:
        assert r.lower == pytest.approx(r.sigma * res.K - 2 * res.t0_norm)
        assert r.lower - 4 * r.EB_std_error <= r.EB <= r.upper + 4 * r.EB_std_error
    lo, hi = res.envelope_slopes()
    assert lo - 0.05 <= res.slope <= hi + 0.05


def test_linearity_rejects_nonpositive_sigma():
    with pytest.raises(ContractViolation):
        linearity_check(np.ones(3), NoiseSpec.gaussian(3), CyclicShiftAction(3), [0.0, 1.0], 10,
                        seed=0, K=(0.5, 0.0))


def test_rng_stream_feeds_K():
    # different seeds give different but close estimates
    a = estimate_K(NoiseSpec.gaussian(6), CyclicShiftAction(6), 800, seed=10, reps=3)
    b = estimate_K(NoiseSpec.gaussian(6), CyclicShiftAction(6), 800, seed=11, reps=3)
    assert a.value != b.value
    assert abs(a.value - b.value) < 4 * math.hypot(a.std_error, b.std_error) + 0.02
    assert rng_stream(10, "k_train", 0) is not None
