import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qtemplate.actions import (
    AffineTranslation,
    AffineTranslationAction,
    ConjugatedCyclicAction,
    CyclicShift,
    CyclicShiftAction,
    Identity,
    Rotation,
    RotationAction,
    TrivialAction,
    action_from_dict,
    apply,
    is_fixed_point,
    make_action,
    orbit,
    register,
    register_fft,
)
from qtemplate.errors import ContractViolation, UnsupportedAction

from oracles import register_by_roll, shift

finite_floats = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


def vectors(n):
    return arrays(np.float64, n, elements=finite_floats)


# --- apply -----------------------------------------------------------------


def test_cyclic_shift_definition():
    act = CyclicShiftAction(4)
    np.testing.assert_array_equal(act.apply(CyclicShift(1), [1, 2, 3, 4]), [2, 3, 4, 1])


def test_identity_is_neutral(rng):
    x = rng.standard_normal(7)
    for act in (CyclicShiftAction(7), RotationAction(7), TrivialAction(7)):
        np.testing.assert_array_equal(act.apply(Identity(), x), x)


def test_composition_of_shifts_matches_sum(rng):
    act = CyclicShiftAction(8)
    x = rng.standard_normal(8)
    two_then_three = act.apply(CyclicShift(2), act.apply(CyclicShift(3), x))
    np.testing.assert_array_equal(two_then_three, act.apply(CyclicShift(5), x))
    np.testing.assert_array_equal(act.apply(act.compose(CyclicShift(2), CyclicShift(3)), x),
                                  two_then_three)


def test_dimension_mismatch_raises():
    with pytest.raises(ContractViolation):
        CyclicShiftAction(4).apply(CyclicShift(1), np.ones(5))
    with pytest.raises(ContractViolation):
        CyclicShiftAction(4).apply(CyclicShift(4), np.ones(4))


@pytest.mark.parametrize("n", [3, 8, 17])
@settings(max_examples=30, deadline=None)
@given(data=st.data())
def test_group_axioms_cyclic(n, data):
    act = CyclicShiftAction(n)
    x = data.draw(vectors(n))
    g = CyclicShift(data.draw(st.integers(0, n - 1)))
    h = CyclicShift(data.draw(st.integers(0, n - 1)))
    lhs = act.apply(h, act.apply(g, x))
    np.testing.assert_allclose(lhs, act.apply(act.compose(h, g), x), atol=1e-12)
    np.testing.assert_allclose(act.apply(act.inverse(g), act.apply(g, x)), x, atol=1e-12)
    assert abs(np.linalg.norm(act.apply(g, x)) - np.linalg.norm(x)) <= 1e-12 * max(1, np.linalg.norm(x))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 6))
def test_group_axioms_rotation(seed, n):
    rng = np.random.default_rng(seed)
    act = RotationAction(n)
    g, h = act.random_element(rng), act.random_element(rng)
    x = rng.standard_normal(n)
    np.testing.assert_allclose(act.apply(h, act.apply(g, x)), act.apply(act.compose(h, g), x),
                               atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(act.apply(g, x)), np.linalg.norm(x), rtol=1e-12)
    np.testing.assert_allclose(act.apply(act.inverse(g), act.apply(g, x)), x, atol=1e-12)


def test_rotation_rejects_non_orthogonal():
    with pytest.raises(ContractViolation):
        Rotation(matrix=np.array([[1.0, 0.1], [0.0, 1.0]]))


def test_householder_rotation_matches_its_matrix(rng):
    u, w = rng.standard_normal(5), rng.standard_normal(5)
    g = Rotation.aligning(u / np.linalg.norm(u), w / np.linalg.norm(w))
    q = g.as_matrix(5)
    np.testing.assert_allclose(q.T @ q, np.eye(5), atol=1e-12)
    assert np.linalg.det(q) == pytest.approx(1.0)
    np.testing.assert_allclose(g.apply(u / np.linalg.norm(u)), w / np.linalg.norm(w), atol=1e-12)


def test_affine_translation_axioms(rng):
    basis = np.linalg.qr(rng.standard_normal((6, 2)))[0].T
    act = AffineTranslationAction(6, basis)
    g, h = act.random_element(rng), act.random_element(rng)
    x = rng.standard_normal(6)
    np.testing.assert_allclose(act.apply(h, act.apply(g, x)), act.apply(act.compose(h, g), x),
                               atol=1e-12)
    with pytest.raises(ContractViolation):
        act.apply(AffineTranslation(np.eye(6)[0] - basis.T @ (basis @ np.eye(6)[0]) + 1.0), x)


def test_module_level_apply():
    np.testing.assert_array_equal(apply(CyclicShift(3), [1.0, 2, 3, 4]), [4.0, 1, 2, 3])


# --- register ----------------------------------------------------------------


def test_register_exact_orbit_match():
    r = register([1, 0, 0, 0], [0, 0, 1, 0], CyclicShiftAction(4))
    assert r.element == CyclicShift(2)
    assert r.distance == 0.0


def test_rotation_registration_of_planar_points():
    r = register([0.0, 1.0], [-2.0, 0.0], RotationAction(2))
    assert r.distance == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(r.registered, [0.0, 2.0], atol=1e-15)
    np.testing.assert_allclose(r.element.apply([-2.0, 0.0]), [0.0, 2.0], atol=1e-12)


def test_rotation_registration_at_zero_is_not_unique():
    r = register(np.zeros(3), [1.0, 2.0, 2.0], RotationAction(3))
    assert r.element == Identity() and not r.unique
    assert r.distance == pytest.approx(3.0)


def test_register_matches_enumeration_n8(rng):
    act = CyclicShiftAction(8)
    for _ in range(100):
        x, y = rng.standard_normal(8), rng.standard_normal(8)
        r = register(x, y, act)
        k, d = register_by_roll(x, y)
        assert r.element == CyclicShift(k)
        assert r.distance == pytest.approx(d, rel=1e-12)
        assert all(r.distance <= np.linalg.norm(x - shift(y, j)) + 1e-12 for j in range(8))


def test_affine_registration_formula(rng):
    basis = np.array([[1.0, 0.0, 0.0]])
    act = AffineTranslationAction(3, basis)
    x, y = rng.standard_normal(3), rng.standard_normal(3)
    r = register(x, y, act)
    np.testing.assert_allclose(r.registered, y + np.array([x[0] - y[0], 0, 0]))
    assert r.distance == pytest.approx(np.linalg.norm((x - y)[1:]))


def test_tie_break_smallest_shift():
    # (1,0,1,0) registers onto (0,1,0,1) equally well by k=1 and k=3
    r = register([0.0, 1, 0, 1], [1.0, 0, 1, 0], CyclicShiftAction(4))
    assert r.element == CyclicShift(1) and not r.unique


# --- register_fft ---------------------------------------------------------------


@pytest.mark.parametrize("n", [4, 8, 64])
def test_fft_matches_exhaustive(n):
    rng = np.random.default_rng(n)
    act = CyclicShiftAction(n)
    for _ in range(1000):
        x, y = rng.standard_normal(n), rng.standard_normal(n)
        a, b = register_fft(x, y, act), register(x, y, act)
        assert a.element == b.element
        assert abs(a.distance - b.distance) <= 1e-9 * max(1.0, b.distance)
        assert a.unique == b.unique


def test_fft_identical_inputs():
    x = np.arange(6.0)
    r = register_fft(x, x, CyclicShiftAction(6))
    assert r.element == CyclicShift(0) and r.distance == 0.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-3, 3), min_size=6, max_size=6),
       st.lists(st.integers(-3, 3), min_size=6, max_size=6))
def test_fft_tie_breaking_on_integer_vectors(xs, ys):
    # integer inputs produce many exact ties; both paths must pick the same shift
    act = CyclicShiftAction(6)
    a, b = register_fft(xs, ys, act), register(xs, ys, act)
    assert (a.element, a.unique) == (b.element, b.unique)
    assert a.distance == b.distance


def test_fft_requires_cyclic_action():
    with pytest.raises(UnsupportedAction):
        register_fft([1.0, 0.0], [0.0, 1.0], RotationAction(2))


def test_batch_registration_agrees_with_single(rng):
    act = CyclicShiftAction(16)
    x, Y = rng.standard_normal(16), rng.standard_normal((50, 16))
    batch = act.register_batch(x, Y)
    for i, y in enumerate(Y):
        r = act.register(x, y)
        assert batch.indices[i] == r.element.k
        assert batch.distances[i] == r.distance
        np.testing.assert_array_equal(batch.registered[i], r.registered)


# --- fixed points and orbits ----------------------------------------------------


@pytest.mark.parametrize("x,action,expected", [
    ([2.5] * 5, CyclicShiftAction(5), True),
    ([1.0, 0, 0, 0, 0], CyclicShiftAction(5), False),
    ([0.0, 0.0], RotationAction(2), True),
    ([0.0, 1e-300], RotationAction(2), False),
    ([3.0, -1.0], TrivialAction(2), True),
])
def test_is_fixed_point(x, action, expected):
    assert is_fixed_point(x, action) is expected


def test_affine_fixed_points():
    assert not is_fixed_point([1.0, 2.0], AffineTranslationAction(2, [[1.0, 0.0]]))
    assert is_fixed_point([1.0, 2.0], AffineTranslationAction(2))


@pytest.mark.parametrize("x,size", [
    ([1.0, 0, 0, 0], 4),
    ([1.0, 1, 1, 1], 1),
    ([1.0, 0, 1, 0, 1, 0], 2),
])
def test_orbit_cardinality(x, size):
    pts = orbit(x, CyclicShiftAction(len(x)))
    assert len(pts) == size
    for p in pts:
        assert any(np.array_equal(p, shift(x, k)) for k in range(len(x)))


def test_orbit_of_infinite_group_is_unsupported():
    with pytest.raises(UnsupportedAction):
        orbit([1.0, 0.0], RotationAction(2))


# --- descriptors ---------------------------------------------------------------


@pytest.mark.parametrize("kind,isometric,invariant", [
    ("cyclic_shift", True, True),
    ("rotation", True, True),
    ("trivial", True, True),
    ("affine_translation", False, True),
])
def test_descriptor_flags_and_roundtrip(kind, isometric, invariant):
    act = make_action(kind, 3, [[0.0, 0.0, 1.0]] if kind == "affine_translation" else None)
    assert (act.isometric, act.invariant) == (isometric, invariant)
    again = action_from_dict(act.to_dict())
    assert again.to_dict() == act.to_dict()


def test_conjugated_action_is_a_group_action(rng):
    act = ConjugatedCyclicAction.random(6, rng)
    x = rng.standard_normal(6)
    g, h = CyclicShift(2), CyclicShift(5)
    np.testing.assert_allclose(act.apply(h, act.apply(g, x)), act.apply(act.compose(h, g), x),
                               atol=1e-12)
    assert not act.isometric and not act.invariant
    # adjoint identity <v, g.e> = <g^T v, e>
    v, e = rng.standard_normal(6), rng.standard_normal(6)
    assert np.dot(v, act.apply(g, e)) == pytest.approx(np.dot(act._adjoint(g, v), e))
