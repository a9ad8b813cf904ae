"""Quaternion and rotation algebra.

Quaternions are plain numpy arrays of shape ``(..., 4)`` in Hamilton
convention, scalar first ``(w, x, y, z)``, right-handed frames. A quaternion
``q`` describes the body-to-navigation rotation, so ``rotate_vec(q, v)`` maps
a body-frame vector into the navigation frame and ``quat_conj(q)`` plays the
role of the transposed rotation matrix.

All functions broadcast over leading axes and never mutate their inputs.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike, NDArray

SMALL_ANGLE = 1e-12

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: ArrayLike) -> NDArray[np.float64]:
    """Return ``q`` scaled to unit norm."""
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a: ArrayLike, b: ArrayLike) -> NDArray[np.float64]:
    """Hamilton product ``a ⊗ b``, renormalized to remove drift."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    out = np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )
    return quat_normalize(out)


def quat_conj(q: ArrayLike) -> NDArray[np.float64]:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_exp(omega: ArrayLike, dt: float | ArrayLike) -> NDArray[np.float64]:
    """Exponential of the pure quaternion ``(0, dt * omega / 2)``.

    The result is a rotation by ``|omega| * dt`` about ``omega / |omega|``.
    Below :data:`SMALL_ANGLE` the second-order Taylor form is used so that a
    zero rate maps cleanly to the identity.
    """
    omega = np.asarray(omega, dtype=np.float64)
    dt = np.asarray(dt, dtype=np.float64)
    if np.any(dt < 0):
        raise ValueError("dt must be non-negative")
    rotvec = omega * dt[..., None] if dt.ndim else omega * dt
    angle = np.linalg.norm(rotvec, axis=-1)
    half = 0.5 * angle
    small = angle < SMALL_ANGLE
    safe = np.where(small, 1.0, angle)
    # sin(a/2)/a -> 1/2 - a^2/48 as a -> 0
    coef = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / safe)
    w = np.where(small, 1.0 - angle**2 / 8.0, np.cos(half))
    out = np.concatenate([w[..., None], coef[..., None] * rotvec], axis=-1)
    return quat_normalize(out)


def quat_log(q: ArrayLike) -> NDArray[np.float64]:
    """Rotation vector (axis * angle) of a unit quaternion, inverse of ``quat_exp(., 1)``."""
    q = quat_normalize(q)
    # pick the representative with w >= 0 so the angle lies in [0, pi]
    q = np.where(q[..., :1] < 0, -q, q)
    w = q[..., 0]
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1)
    angle = 2.0 * np.arctan2(s, w)
    small = s < SMALL_ANGLE
    scale = np.where(small, 2.0 / np.where(small, w, 1.0), angle / np.where(small, 1.0, s))
    return scale[..., None] * v


def rotate_vec(q: ArrayLike, v: ArrayLike) -> NDArray[np.float64]:
    """Rotate ``v`` by ``q``, i.e. ``q ⊗ (0, v) ⊗ q*``."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    w = q[..., :1]
    u = q[..., 1:]
    # Rodrigues form of the sandwich product, cheaper than two Hamilton products
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def yaw_rotation(theta: float | ArrayLike) -> NDArray[np.float64]:
    """Quaternion for a rotation by ``theta`` radians about +Z."""
    theta = np.asarray(theta, dtype=np.float64)
    zeros = np.zeros_like(theta)
    return np.stack([np.cos(theta / 2), zeros, zeros, np.sin(theta / 2)], axis=-1)


def quat_to_yaw(q: ArrayLike) -> NDArray[np.float64] | float:
    """Heading of the body x-axis in the navigation frame, in ``(-pi, pi]``."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


def quat_to_matrix(q: ArrayLike) -> NDArray[np.float64]:
    """Rotation matrix ``M`` with ``M @ v == rotate_vec(q, v)``."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(m: ArrayLike) -> NDArray[np.float64]:
    """Inverse of :func:`quat_to_matrix` for a single 3x3 rotation, with ``w >= 0``."""
    m = np.asarray(m, dtype=np.float64)
    tr = np.trace(m)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = quat_normalize(q)
    return -q if q[0] < 0 else q


def random_quat(rng: np.random.Generator, size: int | tuple | None = None) -> NDArray[np.float64]:
    """Uniformly distributed unit quaternions."""
    shape = (size,) if isinstance(size, int) else tuple(size or ())
    return quat_normalize(rng.standard_normal(shape + (4,)))
