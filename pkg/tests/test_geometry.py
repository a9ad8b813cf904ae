import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from ctin.geometry import (
    IDENTITY,
    matrix_to_quat,
    quat_conj,
    quat_exp,
    quat_log,
    quat_mul,
    quat_normalize,
    quat_to_matrix,
    quat_to_yaw,
    random_quat,
    rotate_vec,
    yaw_rotation,
)

Z90 = np.array([np.cos(np.pi / 4), 0.0, 0.0, np.sin(np.pi / 4)])

seeds = st.integers(0, 2**32 - 1)
vec3 = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=3, max_size=3).map(np.array)


def _scipy(q):
    # scipy stores quaternions scalar-last
    q = np.atleast_2d(q)
    return Rotation.from_quat(q[:, [1, 2, 3, 0]])


def test_identity_element(rng):
    q = random_quat(rng)
    np.testing.assert_array_equal(quat_mul(IDENTITY, q), q)


def test_inverse(rng):
    q = random_quat(rng, 100)
    np.testing.assert_allclose(quat_mul(q, quat_conj(q)), np.tile(IDENTITY, (100, 1)), atol=1e-9)


def test_quarter_turns_compose_to_half_turn():
    np.testing.assert_allclose(quat_mul(Z90, Z90), [0, 0, 0, 1], atol=1e-12)


def test_quat_mul_matches_scipy(rng):
    a, b = random_quat(rng, 200), random_quat(rng, 200)
    expected = (_scipy(a) * _scipy(b)).as_matrix()
    np.testing.assert_allclose(quat_to_matrix(quat_mul(a, b)), expected, atol=1e-12)


def test_conj_identity_and_involution(rng):
    np.testing.assert_array_equal(quat_conj(IDENTITY), IDENTITY)
    q = random_quat(rng)
    np.testing.assert_array_equal(quat_conj(quat_conj(q)), q)


def test_rotate_round_trip(rng):
    q, v = random_quat(rng, 50), rng.standard_normal((50, 3))
    np.testing.assert_allclose(rotate_vec(quat_conj(q), rotate_vec(q, v)), v, atol=1e-9)


@pytest.mark.parametrize("dt", [0.0, 0.005, 1.0, 17.0])
def test_exp_of_zero_rate(dt):
    np.testing.assert_array_equal(quat_exp([0, 0, 0], dt), IDENTITY)


def test_exp_half_turn():
    np.testing.assert_allclose(quat_exp([0, 0, np.pi], 1.0), [0, 0, 0, 1], atol=1e-15)


def test_exp_small_angle_yaw():
    assert abs(quat_to_yaw(quat_exp([0, 0, 0.1], 0.005)) - 5e-4) < 1e-12


def test_exp_below_threshold_is_finite():
    q = quat_exp([1e-14, 0, 0], 1.0)
    assert np.all(np.isfinite(q))
    assert abs(np.linalg.norm(q) - 1) < 1e-12


def test_exp_matches_rotvec_oracle(rng):
    w = rng.standard_normal((100, 3))
    expected = Rotation.from_rotvec(w * 0.3).as_matrix()
    np.testing.assert_allclose(quat_to_matrix(quat_exp(w, 0.3)), expected, atol=1e-12)


def test_log_inverts_exp(rng):
    w = rng.uniform(-1, 1, (20, 3))
    np.testing.assert_allclose(quat_log(quat_exp(w, 1.0)), w, atol=1e-12)


@pytest.mark.parametrize(
    "q, v, expected",
    [
        (IDENTITY, [1.0, 2.0, 3.0], [1.0, 2.0, 3.0]),
        (Z90, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
        (Z90, [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]),
    ],
)
def test_rotate_vec_cases(q, v, expected):
    np.testing.assert_allclose(rotate_vec(q, v), expected, atol=1e-9)


@pytest.mark.parametrize("theta, expected", [(0.0, IDENTITY), (np.pi, [0, 0, 0, 1])])
def test_yaw_rotation_closed_form(theta, expected):
    np.testing.assert_allclose(yaw_rotation(theta), expected, atol=1e-15)


def test_yaw_quarter_turn_rotates_x_to_y():
    np.testing.assert_allclose(rotate_vec(yaw_rotation(np.pi / 2), [1, 0, 0]), [0, 1, 0], atol=1e-9)


def test_matrix_cases():
    np.testing.assert_array_equal(quat_to_matrix(IDENTITY), np.eye(3))
    np.testing.assert_allclose(quat_to_matrix(Z90), [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)


def test_matrix_orthonormal(rng):
    m = quat_to_matrix(random_quat(rng, 1000))
    np.testing.assert_allclose(np.einsum("nji,njk->nik", m, m), np.broadcast_to(np.eye(3), m.shape), atol=1e-9)


def test_matrix_round_trip_up_to_sign(rng):
    q = random_quat(rng, 100)
    back = np.array([matrix_to_quat(m) for m in quat_to_matrix(q)])
    np.testing.assert_allclose(np.abs(np.einsum("ni,ni->n", q, back)), 1.0, atol=1e-12)


@given(seeds)
def test_product_stays_unit(seed):
    rng = np.random.default_rng(seed)
    p = quat_mul(random_quat(rng), random_quat(rng))
    assert abs(np.linalg.norm(p) - 1) < 1e-9


@given(seeds, vec3)
def test_rotation_preserves_norm(seed, v):
    q = random_quat(np.random.default_rng(seed))
    assert abs(np.linalg.norm(rotate_vec(q, v)) - np.linalg.norm(v)) <= 1e-9 * max(1.0, np.linalg.norm(v))


@given(vec3.map(lambda v: v / 1e3), st.floats(0, 2), st.floats(0, 2))
def test_one_parameter_subgroup(w, t1, t2):
    lhs = quat_mul(quat_exp(w, t1), quat_exp(w, t2))
    np.testing.assert_allclose(lhs, quat_exp(w, t1 + t2), atol=1e-9)


@given(seeds)
def test_matrix_homomorphism(seed):
    rng = np.random.default_rng(seed)
    a, b = random_quat(rng), random_quat(rng)
    np.testing.assert_allclose(quat_to_matrix(quat_mul(a, b)), quat_to_matrix(a) @ quat_to_matrix(b), atol=1e-8)


def test_normalize_unit(rng):
    q = quat_normalize(rng.standard_normal((10, 4)) * 7)
    np.testing.assert_allclose(np.linalg.norm(q, axis=1), 1.0, atol=1e-12)
