"""Screw-motion math against series-expansion and ODE-integration oracles."""

import numpy as np
import pytest

from imface.geometry.se3 import SE3Param, apply_se3, se3_exp, se3_translation, skew


def series_matrix_exponential(omega, terms=30):
    """Oracle: truncated power series of exp(skew(omega))."""
    w = np.asarray(skew(omega), dtype=np.float64)
    out = np.eye(3)
    acc = np.eye(3)
    for n in range(1, terms):
        acc = acc @ w / n
        out = out + acc
    return out


def integrate_screw(omega, v, steps=2000):
    """Oracle: RK4 integration of dx/dt = omega x x + v from x(0) = 0 to t = 1."""
    omega = np.asarray(omega, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x = np.zeros(3)
    h = 1.0 / steps

    def f(y):
        return np.cross(omega, y) + v

    for _ in range(steps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def test_zero_rotation_is_identity():
    assert np.allclose(se3_exp(np.zeros(3)), np.eye(3), atol=1e-15)


def test_quarter_turn_about_x():
    r = se3_exp(np.array([np.pi / 2, 0.0, 0.0]))
    expected = np.array([[1, 0, 0], [0, 0, -1], [0, 1, 0]], dtype=float)
    assert np.allclose(r, expected, atol=1e-12)


def test_rotation_matches_series_exponential():
    r = se3_exp(np.array([0.3, -0.2, 0.1]))
    assert np.max(np.abs(r - series_matrix_exponential(np.array([0.3, -0.2, 0.1])))) < 1e-10


def test_rotation_series_oracle_random():
    rng = np.random.default_rng(0)
    for _ in range(300):
        omega = rng.normal(size=3)
        omega *= rng.uniform(0, np.pi) / max(np.linalg.norm(omega), 1e-12)
        r = se3_exp(omega)
        assert np.max(np.abs(r - series_matrix_exponential(omega))) < 1e-10
        assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-9
        assert abs(np.linalg.det(r) - 1.0) < 1e-9


def branch_jump(f, n0, eps=1e-9):
    """Centered second difference: a smooth function contributes O(eps^2),
    while any branch discontinuity shows up at full size."""
    return np.max(np.abs(f(n0 + eps) + f(n0 - eps) - 2.0 * f(n0)))


def test_small_angle_continuity():
    axis = np.array([0.6, -0.64, 0.48])
    axis /= np.linalg.norm(axis)
    v = np.array([1.0, 2.0, 3.0])
    from imface.geometry.se3 import SMALL_ANGLE

    for n0 in (1e-4, SMALL_ANGLE):
        assert branch_jump(lambda n: se3_exp(axis * n), n0) < 1e-12
        assert branch_jump(lambda n: se3_translation(axis * n, v), n0) < 1e-12


def test_translation_zero_rotation_limit():
    v = np.array([0.4, -0.1, 2.0])
    assert np.allclose(se3_translation(np.zeros(3), v), v, atol=1e-15)


def test_translation_matches_screw_integration():
    omega = np.array([0.3, -0.2, 0.1])
    v = np.array([1.0, 0.0, 0.0])
    t = se3_translation(omega, v)
    assert np.max(np.abs(t - integrate_screw(omega, v))) < 1e-10


def test_translation_linear_in_v():
    rng = np.random.default_rng(1)
    omega = rng.normal(size=3)
    v1, v2 = rng.normal(size=3), rng.normal(size=3)
    a, b = rng.normal(), rng.normal()
    lhs = se3_translation(omega, a * v1 + b * v2)
    rhs = a * se3_translation(omega, v1) + b * se3_translation(omega, v2)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_apply_identity_param():
    param = SE3Param(np.zeros(3), np.zeros(3))
    x = np.array([0.2, 0.5, -0.3])
    assert np.allclose(apply_se3(param, x), x, atol=1e-15)


def test_apply_quarter_turn():
    param = SE3Param(np.array([np.pi / 2, 0, 0]), np.zeros(3))
    assert np.allclose(apply_se3(param, np.array([0.0, 1.0, 0.0])), [0, 0, 1], atol=1e-12)


def test_apply_preserves_distances():
    rng = np.random.default_rng(2)
    for _ in range(50):
        param = SE3Param(rng.normal(size=3), rng.normal(size=3))
        x1, x2 = rng.normal(size=3), rng.normal(size=3)
        d_before = np.linalg.norm(x1 - x2)
        d_after = np.linalg.norm(apply_se3(param, x1) - apply_se3(param, x2))
        assert abs(d_before - d_after) < 1e-9


def test_batched_matches_single():
    rng = np.random.default_rng(3)
    omegas = rng.normal(size=(10, 3))
    vs = rng.normal(size=(10, 3))
    xs = rng.normal(size=(10, 3))
    rot = se3_exp(omegas)
    trans = se3_translation(omegas, vs)
    for i in range(10):
        assert np.allclose(rot[i], se3_exp(omegas[i]), atol=1e-14)
        assert np.allclose(trans[i], se3_translation(omegas[i], vs[i]), atol=1e-14)
        expected = se3_exp(omegas[i]) @ xs[i] + se3_translation(omegas[i], vs[i])
        got = apply_se3(SE3Param(omegas[i], vs[i]), xs[i])
        assert np.allclose(got, expected, atol=1e-13)


def test_param_validation():
    with pytest.raises(ValueError):
        SE3Param(np.array([np.inf, 0, 0]), np.zeros(3))
    with pytest.raises(ValueError):
        SE3Param(np.zeros(2), np.zeros(3))
