"""Pointwise calibration of the deviation between two IMU reference frames.

The orientation filters express each IMU in its own reference frame
``[g_1]``, ``[g_2]``. Features that should coincide in a shared frame —
the globalized gravity vectors and the globalized magnetic field vectors —
yield two per-sample correction quaternions. Their weighted (chordal)
fusion gives the pointwise correction ``q_corr`` mapping ``[g_2]`` into
``[g_1]``; the two fusion weights are tuned per window by driving the
globalized hinge-axis estimates of the two sensors into agreement.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import quat
from .errors import DegenerateFusion, EmptyWindow
from .solvers import SolverOptions, secant_lm


class PairFlag(enum.IntEnum):
    """Outcome of a vector-pair alignment."""

    OK = 0
    PARALLEL = 1       # already aligned; identity correction
    ANTIPARALLEL = 2   # rotation axis undefined; identity returned


@dataclass
class ReferenceFrameCorrection:
    """Fusion weights plus a representative correction quaternion."""

    k_mag: float
    k_acc: float
    q_corr: np.ndarray
    converged: bool = True

    def __post_init__(self):
        if self.k_mag < 0 or self.k_acc < 0 or self.k_mag + self.k_acc <= 0:
            raise ValueError("weights must be >= 0 and not both zero")


def correction_series(q1: np.ndarray, v1: np.ndarray,
                      q2: np.ndarray, v2: np.ndarray
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample correction quaternions aligning globalized vector pairs.

    Rotates ``rotate(q2, v2)`` onto ``rotate(q1, v1)`` about their mutual
    normal. All arguments broadcast over leading axes; returns the
    corrections ``(..., 4)`` and a :class:`PairFlag` array. Degenerate
    (anti)parallel pairs yield the identity quaternion with the
    corresponding flag.
    """
    g1 = quat.rotate(q1, v1)
    g2 = quat.rotate(q2, v2)
    axis = np.cross(g2, g1)
    s = np.linalg.norm(axis, axis=-1)
    c = np.sum(g1 * g2, axis=-1)
    degenerate = s < 1e-12
    flags = np.where(degenerate,
                     np.where(c >= 0, int(PairFlag.PARALLEL), int(PairFlag.ANTIPARALLEL)),
                     int(PairFlag.OK))
    angle = np.arctan2(s, c)
    safe_axis = np.where(degenerate[..., None], np.array([1.0, 0.0, 0.0]), axis)
    q = quat.from_axis_angle(safe_axis, np.where(degenerate, 0.0, angle))
    return q, flags


def correction_from_pair(q1, v1, q2, v2) -> tuple[np.ndarray, PairFlag]:
    """Single-sample form of :func:`correction_series`."""
    q, flag = correction_series(np.asarray(q1, float), np.asarray(v1, float),
                                np.asarray(q2, float), np.asarray(v2, float))
    return q, PairFlag(int(flag))


def fuse(q_mag: np.ndarray, q_acc: np.ndarray, k_mag: float, k_acc: float) -> np.ndarray:
    """Weighted chordal sum of the two corrections, renormalized to unit.

    The operands are sign-aligned before summing so the blend is taken on
    the same quaternion hemisphere. Exact for corrections about a common
    axis; a first-order blend otherwise.
    """
    if k_mag < 0 or k_acc < 0:
        raise DegenerateFusion("fusion weights must be non-negative")
    q_mag = np.asarray(q_mag, dtype=float)
    q_acc = np.asarray(q_acc, dtype=float)
    dot = np.sum(q_mag * q_acc, axis=-1, keepdims=True)
    q_acc = np.where(dot < 0, -q_acc, q_acc)
    total = k_mag * q_mag + k_acc * q_acc
    norm = np.linalg.norm(total, axis=-1)
    if np.any(norm < 1e-12):
        raise DegenerateFusion("weighted quaternion sum has zero norm")
    return quat.canonicalize(total / norm[..., None])


@dataclass
class CalibrationWindow:
    """Per-sample inputs the coefficient optimization needs.

    ``q1``/``q2`` are the per-sample orientations, ``q_acc``/``q_mag`` the
    per-sample corrections, and ``j1``/``j2`` the hinge-axis estimate in
    each sensor frame.
    """

    q1: np.ndarray      # (n, 4)
    q2: np.ndarray      # (n, 4)
    q_acc: np.ndarray   # (n, 4)
    q_mag: np.ndarray   # (n, 4)
    j1: np.ndarray      # (3,)
    j2: np.ndarray      # (3,)

    @classmethod
    def from_measurements(cls, q1, accel1, mag1, q2, accel2, mag2, j1, j2):
        q_acc, _ = correction_series(q1, accel1, q2, accel2)
        q_mag, _ = correction_series(q1, mag1, q2, mag2)
        return cls(q1=np.asarray(q1, float), q2=np.asarray(q2, float),
                   q_acc=q_acc, q_mag=q_mag,
                   j1=np.asarray(j1, float), j2=np.asarray(j2, float))

    def __len__(self):
        return self.q1.shape[0]


def _axis_gap(window: CalibrationWindow, k_mag: float, k_acc: float) -> np.ndarray:
    """Per-sample norm of the globalized hinge-axis disagreement."""
    q_corr = fuse(window.q_mag, window.q_acc, k_mag, k_acc)
    j1_g = quat.rotate(window.q1, window.j1)
    j2_g = quat.rotate(quat.compose(q_corr, window.q2), window.j2)
    return np.linalg.norm(j1_g - j2_g, axis=-1)


def coefficient_cost(k_mag: float, k_acc: float, window: CalibrationWindow) -> float:
    """Mean globalized hinge-axis disagreement for the given weights."""
    if len(window) == 0:
        raise EmptyWindow("calibration window is empty")
    return float(np.mean(_axis_gap(window, k_mag, k_acc)))


def optimize_coefficients(window: CalibrationWindow,
                          initial: tuple[float, float] = (0.5, 0.5),
                          opts: SolverOptions | None = None) -> ReferenceFrameCorrection:
    """Tune (k_mag, k_acc) by secant L-M on the axis-disagreement residuals.

    Only the weight ratio is identified (fusion renormalizes); raw weights
    are reported. The returned cost never exceeds the cost at ``initial``.
    """
    if len(window) == 0:
        raise EmptyWindow("calibration window is empty")
    opts = opts or SolverOptions(max_iter=40, tol_step=1e-8, tol_grad=1e-10,
                                 finite_diff_h=1e-5)

    def residual(x):
        return _axis_gap(window, max(x[0], 0.0), max(x[1], 0.0))

    result = secant_lm(residual, np.asarray(initial, dtype=float), opts)
    k_mag, k_acc = np.maximum(result.x, 0.0)
    if k_mag + k_acc <= 0:
        k_mag, k_acc = initial
    # damped acceptance already guarantees this; guard against clamping
    if coefficient_cost(k_mag, k_acc, window) > coefficient_cost(*initial, window):
        k_mag, k_acc = initial
    q_corr = fuse(window.q_mag, window.q_acc, k_mag, k_acc)
    return ReferenceFrameCorrection(
        k_mag=float(k_mag), k_acc=float(k_acc),
        q_corr=_chordal_mean(q_corr), converged=result.converged,
    )


def apply_weights(window: CalibrationWindow, corr: ReferenceFrameCorrection) -> np.ndarray:
    """Pointwise corrections (n, 4) for a window under fixed weights."""
    return fuse(window.q_mag, window.q_acc, corr.k_mag, corr.k_acc)


def _chordal_mean(q: np.ndarray) -> np.ndarray:
    q = np.atleast_2d(q)
    ref = q[0]
    dots = q @ ref
    aligned = np.where(dots[:, None] < 0, -q, q)
    return quat.canonicalize(quat.normalize(aligned.mean(axis=0)))
