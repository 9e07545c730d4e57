import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qtemplate.actions import CyclicShift, CyclicShiftAction, Identity
from qtemplate.errors import ContractViolation
from qtemplate.model import (
    NoiseSpec,
    TransformationLaw,
    derive_seed,
    rng_stream,
    sample_observations,
    standardize_noise,
)

from oracles import shift


def test_fixed_law_without_noise_repeats_template():
    act = CyclicShiftAction(4)
    t0 = np.array([1.0, 2.0, 3.0, 4.0])
    s = sample_observations(t0, 0.0, TransformationLaw.fixed(Identity()), NoiseSpec.gaussian(4),
                            10, seed=0, action=act)
    assert np.all(s.observations == t0)


def test_uniform_law_without_noise_stays_in_orbit():
    act = CyclicShiftAction(6)
    t0 = np.arange(6.0)
    s = sample_observations(t0, 0.0, TransformationLaw.uniform(act), NoiseSpec.gaussian(6), 40,
                            seed=2, action=act)
    orbit = [shift(t0, k) for k in range(6)]
    for y, g in zip(s.observations, s.true_transforms()):
        assert any(np.array_equal(y, o) for o in orbit)
        np.testing.assert_array_equal(y, shift(t0, g.k))


def test_per_coordinate_noise_std():
    # sigma = 10 in R^64 means a per-pixel standard deviation of 1.25
    act = CyclicShiftAction(64)
    s = sample_observations(np.zeros(64), 10.0, TransformationLaw.fixed(), NoiseSpec.gaussian(64),
                            4000, seed=1, action=act)
    sd = s.observations.std()
    n = s.observations.size
    assert NoiseSpec.gaussian(64).w * 10 == 1.25
    assert abs(sd - 1.25) < 4 * 1.25 / np.sqrt(2 * n)


def test_bitwise_reproducible():
    act = CyclicShiftAction(8)
    args = (np.arange(8.0), 3.0, TransformationLaw.uniform(act), NoiseSpec.gaussian(8), 100)
    a = sample_observations(*args, seed=11, action=act)
    b = sample_observations(*args, seed=11, action=act)
    assert a.observations.tobytes() == b.observations.tobytes()
    c = sample_observations(*args, seed=12, action=act)
    assert not np.array_equal(a.observations, c.observations)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 50), st.integers(1, 50))
def test_growing_I_keeps_earlier_draws(seed, i1, extra):
    act = CyclicShiftAction(5)
    args = (np.arange(5.0), 2.0, TransformationLaw.uniform(act), NoiseSpec.gaussian(5))
    small = sample_observations(*args, i1, seed=seed, action=act)
    big = sample_observations(*args, i1 + extra, seed=seed, action=act)
    np.testing.assert_array_equal(big.observations[:i1], small.observations)
    np.testing.assert_array_equal(big.phi_indices[:i1], small.phi_indices)


def test_streams_are_independent_by_label():
    a = rng_stream(5, "phi").standard_normal(4)
    b = rng_stream(5, "eps").standard_normal(4)
    assert not np.array_equal(a, b)
    assert derive_seed(5, 1) != derive_seed(5, 2)


def test_noise_moments():
    noise = NoiseSpec.gaussian(16)
    eps = noise.sample(rng_stream(0, "eps"), 20000)
    sq = np.sum(eps**2, axis=1)
    se_sq = sq.std(ddof=1) / np.sqrt(len(sq))
    assert abs(sq.mean() - 1.0) < 4 * se_sq
    se_mean = eps.std(axis=0, ddof=1) / np.sqrt(len(eps))
    assert np.all(np.abs(eps.mean(axis=0)) < 4 * se_mean)


def test_standardize_gaussian():
    assert standardize_noise(NoiseSpec("gaussian_iid", 4, w=3.0)).w == 0.5


def test_standardize_two_atoms():
    spec = NoiseSpec.finite([[2.0, 0.0], [-2.0, 0.0]], check=False)
    out = standardize_noise(spec)
    # E||eps||^2 = 4, so the atoms are halved
    np.testing.assert_allclose(out.atoms, [[1.0, 0.0], [-1.0, 0.0]])
    out.check()


def test_standardize_recentres():
    spec = NoiseSpec.finite([[1.0, 1.0], [3.0, 1.0]], [0.25, 0.75], check=False)
    out = standardize_noise(spec)
    mean, second = out.moments()
    assert np.max(np.abs(mean)) < 1e-12 and abs(second - 1) < 1e-12


def test_standardize_is_idempotent():
    spec = NoiseSpec.finite([[1.0, 0.0], [-1.0, 0.0]])
    assert standardize_noise(spec) is spec


def test_degenerate_noise_rejected():
    with pytest.raises(ContractViolation):
        standardize_noise(NoiseSpec.finite([[0.0, 0.0]], check=False))


def test_unstandardized_noise_rejected():
    act = CyclicShiftAction(2)
    bad = NoiseSpec.finite([[2.0, 0.0], [-2.0, 0.0]], check=False)
    with pytest.raises(ContractViolation):
        sample_observations(np.zeros(2), 1.0, TransformationLaw.fixed(), bad, 3, seed=0, action=act)


def test_law_validation():
    with pytest.raises(ContractViolation):
        TransformationLaw.custom([CyclicShift(0), CyclicShift(1)], [0.7, 0.7])


def test_custom_law_frequencies():
    law = TransformationLaw.custom([CyclicShift(0), CyclicShift(1)], [0.2, 0.8])
    idx = law.draw_indices(rng_stream(0, "phi"), 20000)
    p = idx.mean()
    assert abs(p - 0.8) < 4 * np.sqrt(0.16 / 20000)


def test_noise_spec_roundtrip():
    spec = NoiseSpec.finite([[1.0, 0.0], [-1.0, 0.0]])
    again = NoiseSpec.from_dict(spec.to_dict())
    np.testing.assert_array_equal(again.atoms, spec.atoms)
    assert NoiseSpec.from_dict(NoiseSpec.gaussian(3).to_dict()).w == NoiseSpec.gaussian(3).w


def test_prefix():
    act = CyclicShiftAction(3)
    s = sample_observations(np.ones(3), 1.0, TransformationLaw.uniform(act), NoiseSpec.gaussian(3),
                            10, seed=0, action=act)
    p = s.prefix(4)
    assert len(p) == 4 and p.meta["I"] == 4
    assert len(p.true_transforms()) == 4
