"""Quaternion, vector, and rotation-matrix algebra.

Conventions used throughout the package:

- Quaternions are scalar-first ``[w, x, y, z]`` arrays of shape ``(..., 4)``.
  All public functions accept batched input and broadcast over leading axes.
- ``q`` and ``-q`` encode the same rotation; outputs are canonicalized to
  ``w >= 0`` (lexicographic tie-break at ``w == 0``) so tests can compare
  components directly.
- ``rotate(q, v)`` applies the rotation to a vector: ``q [0,v] q^-1``.
  If ``q`` maps frame A coordinates to frame B coordinates, then
  ``rotate(q, v_A) == v_B``.
- Rotation matrices are ``(..., 3, 3)`` with columns equal to the images of
  the basis vectors, i.e. ``to_rot_matrix(q) @ v == rotate(q, v)``.
- Euler decomposition is fixed to the X-Y-Z sequence: ``q`` equals the
  composition ``X(ax) * Y(ay) * Z(az)``.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateAxis

_EPS = 1e-12


def identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def normalize(q: np.ndarray) -> np.ndarray:
    """Scale to unit norm. Raises DegenerateAxis on a zero quaternion."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < _EPS):
        raise DegenerateAxis("cannot normalize zero-norm quaternion")
    return q / n


def canonicalize(q: np.ndarray) -> np.ndarray:
    """Flip sign so w >= 0; at w == 0 the first nonzero component is positive."""
    q = np.asarray(q, dtype=float)
    flip = q[..., 0] < 0
    for i in range(1, 4):
        on_edge = np.ones(q.shape[:-1], dtype=bool)
        for j in range(i):
            on_edge &= q[..., j] == 0
        flip = flip | (on_edge & (q[..., i] < 0))
    return np.where(flip[..., None], -q, q)


def conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def compose(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Hamilton product q1 * q2, renormalized and sign-canonical.

    ``rotate(compose(q1, q2), v) == rotate(q1, rotate(q2, v))``.
    """
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    w1, x1, y1, z1 = (q1[..., i] for i in range(4))
    w2, x2, y2, z2 = (q2[..., i] for i in range(4))
    out = np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )
    return canonicalize(normalize(out))


def rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) v by quaternion(s) q (broadcasting over leading axes)."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    qv = q[..., 1:]
    t = 2.0 * np.cross(qv, v)
    return v + q[..., 0, None] * t + np.cross(qv, t)


def from_axis_angle(axis: np.ndarray, angle) -> np.ndarray:
    """Unit quaternion for a rotation of ``angle`` radians about ``axis``."""
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    n = np.linalg.norm(axis, axis=-1, keepdims=True)
    if np.any(n < _EPS):
        raise DegenerateAxis("rotation axis has zero norm")
    u = axis / n
    half = 0.5 * angle
    w = np.cos(half)
    xyz = np.sin(half)[..., None] * u
    return canonicalize(np.concatenate([w[..., None], xyz], axis=-1))


def rotation_angle(q: np.ndarray) -> np.ndarray:
    """Total rotation angle in [0, pi] after sign canonicalization."""
    q = canonicalize(np.asarray(q, dtype=float))
    w = np.clip(q[..., 0], -1.0, 1.0)
    return 2.0 * np.arccos(w)


def rotation_axis(q: np.ndarray) -> np.ndarray:
    """Unit rotation axis; arbitrary (+x) for the identity rotation."""
    q = canonicalize(np.asarray(q, dtype=float))
    xyz = q[..., 1:]
    n = np.linalg.norm(xyz, axis=-1, keepdims=True)
    safe = np.where(n < _EPS, 1.0, n)
    axis = xyz / safe
    fallback = np.zeros_like(axis)
    fallback[..., 0] = 1.0
    return np.where(n < _EPS, fallback, axis)


def to_rot_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix with ``to_rot_matrix(q) @ v == rotate(q, v)``."""
    q = normalize(q)
    w, x, y, z = (q[..., i] for i in range(4))
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def from_rot_matrix(m: np.ndarray) -> np.ndarray:
    """Quaternion of a single 3x3 rotation matrix (Shepperd's method)."""
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise ValueError(f"expected (3, 3) matrix, got {m.shape}")
    tr = np.trace(m)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return canonicalize(normalize(q))


_X = np.array([1.0, 0.0, 0.0])
_Y = np.array([0.0, 1.0, 0.0])
_Z = np.array([0.0, 0.0, 1.0])


def from_euler_xyz(ax, ay, az) -> np.ndarray:
    """Quaternion of the X(ax) * Y(ay) * Z(az) rotation sequence."""
    return compose(
        compose(from_axis_angle(_X, ax), from_axis_angle(_Y, ay)),
        from_axis_angle(_Z, az),
    )


# |sin(ay) - 1| below this counts as gimbal lock (ay within ~1e-6 of +-pi/2)
_LOCK_TOL = 1e-6


def decompose_euler_xyz(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split q into X-Y-Z Euler angles.

    Parameters
    ----------
    q : ndarray, shape (..., 4)

    Returns
    -------
    angles : ndarray, shape (..., 3)
        (ax, ay, az) such that ``from_euler_xyz(ax, ay, az)`` reproduces q
        up to sign.
    gimbal_lock : ndarray of bool, shape (...)
        True where |ay| is within ~1e-6 rad of pi/2. There the X/Z split is
        degenerate; the combined rotation is assigned to ax and az is 0.
    """
    m = to_rot_matrix(q)
    s = np.clip(m[..., 0, 2], -1.0, 1.0)
    lock = np.abs(np.abs(s) - 1.0) < _LOCK_TOL
    ay = np.arcsin(s)
    # regular branch
    ax = np.arctan2(-m[..., 1, 2], m[..., 2, 2])
    az = np.arctan2(-m[..., 0, 1], m[..., 0, 0])
    # locked branch: only ax +- az observable; fold everything into ax
    ax_lock = np.arctan2(m[..., 1, 0], m[..., 1, 1])
    ax = np.where(lock, ax_lock, ax)
    az = np.where(lock, 0.0, az)
    angles = np.stack([ax, ay, az], axis=-1)
    return angles, lock


def twist_about(q: np.ndarray, axis: np.ndarray) -> np.ndarray:
    """Signed twist angle of q about a unit axis (swing-twist split).

    Returns the angle in (-pi, pi] of the component of the rotation about
    ``axis``; zero when the rotation is entirely orthogonal to it.
    """
    q = canonicalize(np.asarray(q, dtype=float))
    axis = np.asarray(axis, dtype=float)
    proj = np.sum(q[..., 1:] * axis, axis=-1)
    return 2.0 * np.arctan2(proj, q[..., 0])


def angle_between(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Angle between two vectors via atan2(|u x v|, u . v), in [0, pi]."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    c = np.linalg.norm(np.cross(u, v), axis=-1)
    d = np.sum(u * v, axis=-1)
    return np.arctan2(c, d)


def unit(v: np.ndarray) -> np.ndarray:
    """Normalize vector(s); raises DegenerateAxis on zero norm."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n < _EPS):
        raise DegenerateAxis("zero-norm vector")
    return v / n
