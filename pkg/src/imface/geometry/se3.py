"""SE(3) screw-motion math: Rodrigues exponential map and screw translation.

The functions are written against the autodiff op set, so they work on plain
numpy arrays and on graph nodes alike, with arbitrary batch dimensions
(``omega`` of shape (..., 3) gives rotations of shape (..., 3, 3)).

Near ``|omega| = 0`` the three trigonometric coefficients degenerate to 0/0;
below SMALL_ANGLE the code switches to sixth-order series.  The threshold
sits at 0.05 rad rather than machine-level because the closed form of
(n - sin n)/n^3 loses ~8 digits to cancellation for small n; at 0.05 both
branches agree to ~1e-13, keeping values and gradients continuous across
the switch.  (1 - cos n)/n^2 uses the half-angle form, which never cancels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from imface import autodiff as ad

SMALL_ANGLE = 5e-2


@dataclass(frozen=True)
class SE3Param:
    """Screw parameters of a rigid motion: rotation vector and translation generator."""

    omega: np.ndarray  # (3,) rotation axis times angle, radians
    v: np.ndarray  # (3,) translation generator, normalized units

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=np.float64))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=np.float64))
        if self.omega.shape != (3,) or self.v.shape != (3,):
            raise ValueError("SE3Param expects two 3-vectors")
        if not (np.all(np.isfinite(self.omega)) and np.all(np.isfinite(self.v))):
            raise ValueError("SE3Param components must be finite")


def skew(omega):
    """Cross-product matrix of (..., 3) -> (..., 3, 3)."""
    x = omega[..., 0]
    y = omega[..., 1]
    z = omega[..., 2]
    zero = ad.mul(x, 0.0)
    row0 = ad.stack([zero, ad.neg(z), y], axis=-1)
    row1 = ad.stack([z, zero, ad.neg(x)], axis=-1)
    row2 = ad.stack([ad.neg(y), x, zero], axis=-1)
    return ad.stack([row0, row1, row2], axis=-2)


def _rotation_coefficients(omega):
    """The three scalar series of the screw motion, with the small-angle guard.

    Returns (A, B, C) with A = sin n / n, B = (1 - cos n) / n^2,
    C = (n - sin n) / n^3 for n = |omega|.
    """
    n2 = ad.sum_(ad.mul(omega, omega), axis=-1)
    small = ad.value_of(n2) < SMALL_ANGLE**2
    n2_safe = ad.where(small, np.ones_like(ad.value_of(n2)), n2)
    n = ad.sqrt(n2_safe)
    sin_n = ad.sine(n)
    sin_half = ad.sine(ad.mul(0.5, n))
    n4 = ad.mul(n2, n2)
    n6 = ad.mul(n4, n2)

    def series(c0, c2, c4, c6):
        return ad.add(
            ad.sub(c0, ad.mul(n2, c2)), ad.sub(ad.mul(n4, c4), ad.mul(n6, c6))
        )

    a_taylor = series(1.0, 1.0 / 6.0, 1.0 / 120.0, 1.0 / 5040.0)
    b_taylor = series(0.5, 1.0 / 24.0, 1.0 / 720.0, 1.0 / 40320.0)
    c_taylor = series(1.0 / 6.0, 1.0 / 120.0, 1.0 / 5040.0, 1.0 / 362880.0)

    a = ad.where(small, a_taylor, ad.div(sin_n, n))
    b = ad.where(small, b_taylor, ad.div(ad.mul(2.0, ad.mul(sin_half, sin_half)), n2_safe))
    c = ad.where(small, c_taylor, ad.div(ad.sub(n, sin_n), ad.mul(n2_safe, n)))
    return a, b, c


def _expand(coef, ndim_extra=2):
    shape = tuple(np.shape(ad.value_of(coef))) + (1,) * ndim_extra
    return ad.reshape(coef, shape)


def se3_exp(omega):
    """Rotation matrix e^omega via the exponential-map form of Rodrigues' formula.

    (..., 3) -> (..., 3, 3); orthonormal with determinant +1 for any finite input.
    """
    a, b, _ = _rotation_coefficients(omega)
    w = skew(omega)
    w2 = ad.matmul(w, w)
    eye = np.eye(3)
    return ad.add(eye, ad.add(ad.mul(_expand(a), w), ad.mul(_expand(b), w2)))


def se3_translation(omega, v):
    """Screw translation t = [I + B w^ + C (w^)^2] v, (..., 3) pairs -> (..., 3)."""
    _, b, c = _rotation_coefficients(omega)
    w = skew(omega)
    w2 = ad.matmul(w, w)
    wv = ad.matvec(w, v)
    w2v = ad.matvec(w2, v)
    return ad.add(v, ad.add(ad.mul(_expand(b, 1), wv), ad.mul(_expand(c, 1), w2v)))


def se3_apply(omega, v, x):
    """Rigid motion of points: e^omega x + t, all arguments batched (..., 3)."""
    rot = ad.matvec(se3_exp(omega), x)
    return ad.add(rot, se3_translation(omega, v))


def apply_se3(param: SE3Param, x):
    """Apply one screw motion to a point (or an (N, 3) batch of points)."""
    x = np.asarray(x, dtype=np.float64) if not isinstance(x, ad.Node) else x
    if np.shape(ad.value_of(x)) == (3,):
        return se3_apply(param.omega, param.v, x)
    n = np.shape(ad.value_of(x))[0]
    omega = np.broadcast_to(param.omega, (n, 3))
    v = np.broadcast_to(param.v, (n, 3))
    return se3_apply(omega, v, x)
