"""Joint geometry identification from windows of paired IMU data.

Three estimators, each driven by a kinematic constraint that holds for
rigid segments coupled by a joint:

- hinge axes: the angular-rate components perpendicular to a shared 1-DoF
  axis have equal magnitude on both sides of the joint;
- joint position vectors: both sensors observe the same acceleration at
  the joint center once their own lever-arm terms are removed;
- 3-DoF secondary axes: the relative angular rate decomposes over the
  three joint axes, so its component along the mutual normal of the two
  segment-fixed axes is carried entirely by the main axis.

Unit axes are parameterized by spherical coordinates (inclination from +Z,
azimuth from +X), which removes the norm constraint from the solvers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quat
from .errors import DegenerateAxisPair, EmptyWindow, InsufficientMotion
from .solvers import SolverOptions, SolverResult, gauss_newton, secant_lm

#: default excitation gate for the hinge/position solves (rad/s RMS)
MIN_GYRO_RMS = 0.3
#: default excitation gate for the secondary-axis solve (rad/s RMS,
#: relative rate orthogonal to the main axis)
MIN_PERP_RMS = 0.05
#: anatomical sanity bound on joint position vectors (m)
MAX_LEVER = 2.0


def sph_to_unit(angles: np.ndarray) -> np.ndarray:
    """(inclination, azimuth) -> unit vector; broadcasts over leading axes."""
    angles = np.asarray(angles, dtype=float)
    inc, az = angles[..., 0], angles[..., 1]
    si = np.sin(inc)
    return np.stack([si * np.cos(az), si * np.sin(az), np.cos(inc)], axis=-1)


def unit_to_sph(v: np.ndarray) -> np.ndarray:
    v = quat.unit(v)
    return np.array([np.arccos(np.clip(v[..., 2], -1, 1)),
                     np.arctan2(v[..., 1], v[..., 0])]).T


def canonical_sign(v: np.ndarray, prev: np.ndarray | None = None) -> np.ndarray:
    """Resolve the +-v ambiguity.

    With ``prev`` given, keep the sign closest to the previous estimate;
    otherwise make the largest-magnitude component positive.
    """
    v = np.asarray(v, dtype=float)
    if prev is not None:
        return -v if float(v @ prev) < 0 else v
    return -v if v[np.argmax(np.abs(v))] < 0 else v


@dataclass
class HingeEstimate:
    j1_2d: np.ndarray   # unit axis in [s1]
    j2_2d: np.ndarray   # unit axis in [s2]
    sph1: np.ndarray
    sph2: np.ndarray
    residual_rms: float  # rad/s
    converged: bool = True


@dataclass
class JointPositionEstimate:
    o1: np.ndarray      # m, sensor-frame coordinates
    o2: np.ndarray
    residual_rms: float  # m/s^2
    converged: bool = True


@dataclass
class ThreeDofAxes:
    j1_3d: np.ndarray   # unit axis in [s1]
    j2_3d: np.ndarray   # unit axis in [s2]
    j3_g: np.ndarray    # unit main axis in [g1]
    converged: bool = True
    secondary_excited: bool = True


def hinge_residual(w1, w2, j1, j2):
    """||w1 x j1|| - ||w2 x j2||; broadcasts to (n,) for stacked rates."""
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    r = (np.linalg.norm(np.cross(w1, j1), axis=-1)
         - np.linalg.norm(np.cross(w2, j2), axis=-1))
    return float(r) if r.ndim == 0 else r


def estimate_hinge(w1: np.ndarray, w2: np.ndarray,
                   opts: SolverOptions | None = None, *,
                   min_gyro_rms: float = MIN_GYRO_RMS,
                   prev: HingeEstimate | None = None) -> HingeEstimate:
    """Fit the shared hinge axis in both sensor frames (Gauss-Newton).

    Raises
    ------
    EmptyWindow
        For a zero-length window.
    InsufficientMotion
        When the window's gyro RMS is below ``min_gyro_rms``.
    """
    w1 = np.atleast_2d(np.asarray(w1, dtype=float))
    w2 = np.atleast_2d(np.asarray(w2, dtype=float))
    if w1.shape[0] == 0:
        raise EmptyWindow("hinge window is empty")
    rms = np.sqrt(np.mean(w1 ** 2 + w2 ** 2))
    if rms < min_gyro_rms:
        raise InsufficientMotion(
            f"gyro RMS {rms:.3f} rad/s below hinge gate {min_gyro_rms}"
        )
    opts = opts or SolverOptions(max_iter=50, tol_step=1e-10, tol_grad=1e-12,
                                 finite_diff_h=1e-6)

    def residual(x):
        return hinge_residual(w1, w2, sph_to_unit(x[0:2]), sph_to_unit(x[2:4]))

    if prev is not None:
        x0 = np.concatenate([prev.sph1, prev.sph2])
    else:
        x0 = np.array([np.pi / 4, np.pi / 4, np.pi / 4, np.pi / 4])
    result = gauss_newton(residual, x0, opts)

    j1 = sph_to_unit(result.x[0:2])
    j2 = sph_to_unit(result.x[2:4])
    j1 = canonical_sign(j1, prev.j1_2d if prev is not None else None)
    j2 = canonical_sign(j2, prev.j2_2d if prev is not None else None)
    rms = float(np.sqrt(np.mean(residual(result.x) ** 2)))
    return HingeEstimate(j1_2d=j1, j2_2d=j2,
                         sph1=unit_to_sph(j1), sph2=unit_to_sph(j2),
                         residual_rms=rms, converged=result.converged)


def position_residual(w1, wd1, a1, w2, wd2, a2, o1, o2):
    """Joint-position constraint residual in m/s^2.

    ``||a - dw x o - w x (w x o)||`` evaluated on both sides and
    differenced. Zero at the true lever arms (joint center to sensor
    origin, sensor coordinates) for rigid motion about a fixed center.
    """
    def side(w, wd, a, o):
        return np.linalg.norm(
            np.asarray(a, float)
            - np.cross(np.asarray(wd, float), o)
            - np.cross(np.asarray(w, float), np.cross(np.asarray(w, float), o)),
            axis=-1,
        )

    r = side(w1, wd1, a1, np.asarray(o1, float)) - side(w2, wd2, a2, np.asarray(o2, float))
    return float(r) if np.ndim(r) == 0 else r


def central_diff(x: np.ndarray, dt: float) -> np.ndarray:
    """Central differences with one-sided stencils at the window edges."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 2:
        return np.zeros_like(x)
    d = np.empty_like(x)
    d[1:-1] = (x[2:] - x[:-2]) / (2.0 * dt)
    d[0] = (x[1] - x[0]) / dt
    d[-1] = (x[-1] - x[-2]) / dt
    return d


def estimate_positions(w1, wd1, a1, w2, wd2, a2,
                       opts: SolverOptions | None = None, *,
                       min_gyro_rms: float = MIN_GYRO_RMS,
                       max_lever: float = MAX_LEVER,
                       ridge: float = 0.05,
                       prev: JointPositionEstimate | None = None) -> JointPositionEstimate:
    """Fit both joint position vectors (Gauss-Newton, 6 parameters).

    A small ridge penalty pins the lever components the motion leaves
    unobservable (e.g. along the axis of a pure hinge) at the minimum-norm
    solution; its bias on observable components is negligible. An estimate
    outside ``max_lever`` is returned with ``converged=False``.
    """
    w1 = np.atleast_2d(np.asarray(w1, dtype=float))
    if w1.shape[0] == 0:
        raise EmptyWindow("position window is empty")
    w2 = np.atleast_2d(np.asarray(w2, dtype=float))
    rms = np.sqrt(np.mean(w1 ** 2 + w2 ** 2))
    if rms < min_gyro_rms:
        raise InsufficientMotion(
            f"gyro RMS {rms:.3f} rad/s below position gate {min_gyro_rms}"
        )
    opts = opts or SolverOptions(max_iter=50, tol_step=1e-10, tol_grad=1e-12,
                                 finite_diff_h=1e-6)

    def physical(x):
        return position_residual(w1, wd1, a1, w2, wd2, a2, x[0:3], x[3:6])

    def residual(x):
        return np.concatenate([physical(x), ridge * x])

    x0 = np.concatenate([prev.o1, prev.o2]) if prev is not None else np.zeros(6)
    result = gauss_newton(residual, x0, opts)
    o1, o2 = result.x[0:3], result.x[3:6]
    rms = float(np.sqrt(np.mean(physical(result.x) ** 2)))
    sane = max(np.linalg.norm(o1), np.linalg.norm(o2)) <= max_lever
    return JointPositionEstimate(o1=o1, o2=o2, residual_rms=rms,
                                 converged=result.converged and sane)


@dataclass
class ThreeDofContext:
    """Per-sample quantities the 3-DoF constraint is evaluated against.

    ``q1`` maps [s1] -> [g1]; ``q2`` maps [s2] -> [g1] (the reference
    correction already composed in). ``dw_g`` is the globalized relative
    rate ``[w2]_g - [w1]_g`` and ``j3_g`` the globalized main axis.
    """

    q1: np.ndarray     # (n, 4)
    q2: np.ndarray     # (n, 4)
    dw_g: np.ndarray   # (n, 3)
    j3_g: np.ndarray   # (n, 3)

    def __len__(self):
        return self.dw_g.shape[0]


def threedof_rate(w1_g, w2_g, j3_g):
    """Main-axis angular rate: projection of the relative rate onto j3."""
    r = np.sum((np.asarray(w2_g, float) - np.asarray(w1_g, float))
               * np.asarray(j3_g, float), axis=-1)
    return float(r) if np.ndim(r) == 0 else r


def threedof_residual(ctx: ThreeDofContext, j1: np.ndarray, j2: np.ndarray) -> np.ndarray:
    """3-DoF constraint residual per sample.

    The relative rate minus its main-axis part must have no component
    along the mutual normal of the globalized segment-fixed axes.
    """
    j1_g = quat.rotate(ctx.q1, np.asarray(j1, float))
    j2_g = quat.rotate(ctx.q2, np.asarray(j2, float))
    normal = np.cross(j1_g, j2_g)
    if np.min(np.linalg.norm(normal, axis=-1)) < 1e-9:
        raise DegenerateAxisPair("globalized j1 and j2 are (anti)parallel")
    w_j3 = np.sum(ctx.dw_g * ctx.j3_g, axis=-1)
    return (np.sum(ctx.dw_g * normal, axis=-1)
            - w_j3 * np.sum(ctx.j3_g * normal, axis=-1))


def _orthogonal_to(v: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Gram-Schmidt: component of ``reference`` orthogonal to unit ``v``."""
    res = reference - (reference @ v) * v
    n = np.linalg.norm(res)
    if n < 1e-9:
        alt = np.array([0.0, 1.0, 0.0]) if abs(v[0]) > 0.9 else np.array([1.0, 0.0, 0.0])
        res = alt - (alt @ v) * v
        n = np.linalg.norm(res)
    return res / n


def estimate_secondary_axes(ctx: ThreeDofContext,
                            opts: SolverOptions | None = None, *,
                            min_perp_rms: float = MIN_PERP_RMS,
                            prev: ThreeDofAxes | None = None) -> ThreeDofAxes:
    """Fit the two segment-fixed axes by secant L-M over spherical angles.

    The main axis enters as the known third axis; only relative-rate
    content orthogonal to it makes the secondary axes identifiable, so
    windows below ``min_perp_rms`` raise :class:`InsufficientMotion`.
    """
    if len(ctx) == 0:
        raise EmptyWindow("3-DoF window is empty")
    perp = ctx.dw_g - np.sum(ctx.dw_g * ctx.j3_g, axis=-1, keepdims=True) * ctx.j3_g
    perp_rms = float(np.sqrt(np.mean(np.sum(perp ** 2, axis=-1))))
    if perp_rms < min_perp_rms:
        raise InsufficientMotion(
            f"off-axis rate RMS {perp_rms:.4f} rad/s below gate {min_perp_rms}"
        )
    opts = opts or SolverOptions(max_iter=60, tol_step=1e-9, tol_grad=1e-11,
                                 finite_diff_h=1e-5)

    j3_mean = quat.unit(ctx.j3_g.mean(axis=0))
    if prev is not None:
        # re-orthogonalize the previous axes against the current main axis
        j3_s1 = quat.unit(quat.rotate(quat.conjugate(ctx.q1), ctx.j3_g).mean(axis=0))
        j3_s2 = quat.unit(quat.rotate(quat.conjugate(ctx.q2), ctx.j3_g).mean(axis=0))
        init1 = _orthogonal_to(j3_s1, prev.j1_3d)
        init2 = _orthogonal_to(j3_s2, prev.j2_3d)
    else:
        j3_s1 = quat.unit(quat.rotate(quat.conjugate(ctx.q1), ctx.j3_g).mean(axis=0))
        j3_s2 = quat.unit(quat.rotate(quat.conjugate(ctx.q2), ctx.j3_g).mean(axis=0))
        init1 = _orthogonal_to(j3_s1, np.array([1.0, 0.0, 0.0]))
        init2 = _orthogonal_to(j3_s2, np.array([0.0, 0.0, 1.0]))

    def residual(x):
        return threedof_residual(ctx, sph_to_unit(x[0:2]), sph_to_unit(x[2:4]))

    x0 = np.concatenate([unit_to_sph(init1), unit_to_sph(init2)])
    result: SolverResult = secant_lm(residual, x0, opts)
    j1 = canonical_sign(sph_to_unit(result.x[0:2]),
                        prev.j1_3d if prev is not None else None)
    j2 = canonical_sign(sph_to_unit(result.x[2:4]),
                        prev.j2_3d if prev is not None else None)
    return ThreeDofAxes(j1_3d=j1, j2_3d=j2, j3_g=j3_mean,
                        converged=result.converged)
