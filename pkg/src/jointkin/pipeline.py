"""Streaming estimation: windows, feedback iteration, safeguard, angles.

The stream is consumed as alternating spans (Fig.-7-style): a sliding
window of ``window_len`` samples is solved for joint geometry, then the
following ``interval_len`` samples get per-sample angles computed from the
last window's estimates while a short detection estimate watches for
sensor movement. When the detection axes disagree with the window axes
beyond a threshold, the interval is cut short, angles fall back to the
detection estimates, and a fresh window is filled from the detection
point.

Each window is solved by a fixed number of feedback passes: the
angular rates are stripped of their projections onto the current
segment-fixed axes, the main (hinge) axis is re-estimated, the reference
frame correction is re-fused, and the segment-fixed axes are re-estimated
against the 3-DoF constraint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quat, refcal
from .axes import (HingeEstimate, JointPositionEstimate, ThreeDofAxes,
                   ThreeDofContext, canonical_sign, central_diff,
                   estimate_hinge, estimate_positions, estimate_secondary_axes,
                   unit_to_sph)
from .errors import (DegenerateGeometry, EstimationError, InsufficientMotion,
                     ShapeError)
from .orientation import ComplementaryFilter, ImuStream
from .solvers import SolverOptions

_X = np.array([1.0, 0.0, 0.0])
_Z = np.array([0.0, 0.0, 1.0])

SOURCE_NORMAL = "normal"
SOURCE_FALLBACK = "fallback"

EVENT_WINDOW_SOLVED = "window_solved"
EVENT_MOVEMENT_DETECTED = "movement_detected"
EVENT_FALLBACK_ENGAGED = "fallback_engaged"
EVENT_WINDOW_RESTARTED = "window_restarted"
EVENT_STREAM_GAP = "stream_gap"


@dataclass
class WindowConfig:
    window_len: int = 300      # samples per sliding window (W_n)
    interval_len: int = 300    # samples per interval (I_n)
    feedback_iters: int = 6
    detection_len: int = 50
    max_interval: int = 800

    def __post_init__(self):
        if self.window_len < 2 or self.interval_len < 1 or self.detection_len < 2:
            raise ValueError("window/interval/detection lengths too small")
        if self.feedback_iters < 1:
            raise ValueError("feedback_iters must be >= 1")
        if self.interval_len > self.max_interval:
            raise ValueError(
                f"interval_len {self.interval_len} above cap {self.max_interval}"
            )


#: movement-detection thresholds by joint (sign-aligned axis differences;
#: see MovementDetectorConfig.threshold)
JOINT_THRESHOLDS = {"hip": 1.5, "knee": 1.5, "ankle": 2.0}


@dataclass
class MovementDetectorConfig:
    v1: float = 0.4
    v2: float = 0.4
    v3: float = 0.2
    threshold: float = 1.5
    enabled: bool = True

    def __post_init__(self):
        if min(self.v1, self.v2, self.v3) <= 0 or self.threshold <= 0:
            raise ValueError("detector weights and threshold must be positive")

    @classmethod
    def for_joint(cls, joint: str, **kw) -> "MovementDetectorConfig":
        return cls(threshold=JOINT_THRESHOLDS[joint], **kw)


@dataclass
class PipelineConfig:
    window: WindowConfig = field(default_factory=WindowConfig)
    detector: MovementDetectorConfig = field(default_factory=MovementDetectorConfig)
    use_refcal: bool = True
    #: extract the main-axis angle as the twist about the joint axis instead
    #: of the total rotation angle (extension; off for parity with the
    #: published extraction)
    twist_mode: bool = False
    initial_weights: tuple[float, float] = (0.5, 0.5)
    min_gyro_rms: float = 0.3
    min_perp_rms: float = 0.05
    gap_limit: float = 0.5     # seconds; larger gaps reset the estimator
    solver_opts: SolverOptions | None = None
    filter: ComplementaryFilter = field(default_factory=ComplementaryFilter)


@dataclass
class JointAngles:
    """Per-sample angle series about the three joint axes.

    ``angles`` columns are (j1, j2, j3) = (segment-1 axis, segment-2 axis,
    main axis), radians. ``source`` marks each sample 'normal' (axes from
    the last full window) or 'fallback' (detection axes after a movement).
    """

    t: np.ndarray
    angles: np.ndarray
    source: np.ndarray

    def __len__(self):
        return self.t.size

    @classmethod
    def empty(cls) -> "JointAngles":
        return cls(t=np.empty(0), angles=np.empty((0, 3)),
                   source=np.empty(0, dtype="U8"))


@dataclass
class PipelineEvent:
    t: float
    kind: str
    v_value: float | None = None


# -- elementary operations -------------------------------------------------

def subtract_axis_projection(w: np.ndarray, axis: np.ndarray) -> np.ndarray:
    """Remove the component of w along a unit axis; broadcasts over rows."""
    w = np.asarray(w, dtype=float)
    axis = np.asarray(axis, dtype=float)
    return w - np.sum(w * axis, axis=-1, keepdims=True) * axis


def body_frame_from_hinge(j: np.ndarray, o: np.ndarray) -> np.ndarray:
    """Body frame (columns x, y, z in sensor coords) from axis and lever.

    x is the joint axis, z the unit normal of the axis/lever plane, y
    completes the right-handed set.
    """
    x = quat.unit(np.asarray(j, float))
    z_raw = np.cross(x, np.asarray(o, float))
    n = np.linalg.norm(z_raw)
    if n < 1e-9:
        raise DegenerateGeometry("lever arm is parallel to the joint axis")
    z = z_raw / n
    return np.column_stack([x, np.cross(z, x), z])


def align_vectors(ref: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Minimal rotation taking unit ``ref`` onto unit ``target``."""
    ref = quat.unit(np.asarray(ref, float))
    target = quat.unit(np.asarray(target, float))
    axis = np.cross(ref, target)
    s = np.linalg.norm(axis)
    c = float(ref @ target)
    if s < 1e-12:
        if c > 0:
            return quat.identity()
        ortho = np.cross(ref, _Z if abs(ref[2]) < 0.9 else _X)
        return quat.from_axis_angle(ortho / np.linalg.norm(ortho), np.pi)
    return quat.from_axis_angle(axis / s, np.arctan2(s, c))


def main_axis_angle(q_rel: np.ndarray, axis: np.ndarray = _X,
                    twist: bool = False):
    """Main-axis angle of a relative body-frame rotation.

    Default: the total rotation angle ``2 acos(w)`` signed by the rotation
    axis' alignment with the joint axis (exact when the rotation is purely
    about it). With ``twist=True``: the swing-twist angle about ``axis``.
    """
    q_rel = quat.canonicalize(np.asarray(q_rel, dtype=float))
    if twist:
        out = quat.twist_about(q_rel, axis)
    else:
        ang = 2.0 * np.arccos(np.clip(q_rel[..., 0], -1.0, 1.0))
        sign = np.where(np.sum(q_rel[..., 1:] * axis, axis=-1) < 0, -1.0, 1.0)
        out = sign * ang
    return float(out) if np.ndim(out) == 0 else out


def secondary_angles(q_s1_b1, q_s1_g1, q_corr, q_j3, q_s2_g2, q_s2_b2):
    """Angles about the two segment-fixed axes after main-axis removal.

    Builds the pseudo relative orientation (main rotation taken out at the
    reference-frame stage) and splits it into X-Y-Z Euler angles; the X
    and Z angles are the segment-1-axis and segment-2-axis angles.

    Returns (angle_j1, angle_j2, gimbal_lock_mask).
    """
    q_tilde = quat.compose(
        quat.conjugate(q_s1_b1),
        quat.compose(
            quat.conjugate(q_s1_g1),
            quat.compose(quat.conjugate(q_j3),
                         quat.compose(q_corr, quat.compose(q_s2_g2, q_s2_b2))),
        ),
    )
    angles, lock = quat.decompose_euler_xyz(q_tilde)
    return angles[..., 0], angles[..., 2], lock


def movement_metric(axes_iter: ThreeDofAxes, axes_det: ThreeDofAxes,
                    cfg: MovementDetectorConfig) -> float:
    """Weighted norm of sign-aligned axis differences between estimates."""
    total = 0.0
    for w, a, b in ((cfg.v1, axes_iter.j1_3d, axes_det.j1_3d),
                    (cfg.v2, axes_iter.j2_3d, axes_det.j2_3d),
                    (cfg.v3, axes_iter.j3_g, axes_det.j3_g)):
        b = canonical_sign(np.asarray(b, float), prev=np.asarray(a, float))
        total += w * float(np.linalg.norm(np.asarray(a, float) - b))
    return total


# -- window estimation -------------------------------------------------------

@dataclass
class WindowData:
    """Immutable per-window snapshot of everything the solvers consume."""

    t: np.ndarray
    gyro1: np.ndarray
    gyro2: np.ndarray
    accel1: np.ndarray
    accel2: np.ndarray
    mag1: np.ndarray
    mag2: np.ndarray
    q1: np.ndarray
    q2: np.ndarray

    def __len__(self):
        return self.t.size


@dataclass
class WindowEstimate:
    """Joint geometry identified from one window."""

    hinge: HingeEstimate
    axes: ThreeDofAxes
    corr: refcal.ReferenceFrameCorrection
    positions: JointPositionEstimate


def _identity_corr(weights=(0.5, 0.5)) -> refcal.ReferenceFrameCorrection:
    return refcal.ReferenceFrameCorrection(k_mag=weights[0], k_acc=weights[1],
                                           q_corr=quat.identity())


def _corr_series(win: WindowData, cfg: PipelineConfig,
                 corr: refcal.ReferenceFrameCorrection) -> np.ndarray:
    """Pointwise corrections for a window under fixed fusion weights."""
    if not cfg.use_refcal:
        return np.broadcast_to(quat.identity(), (len(win), 4))
    q_acc, _ = refcal.correction_series(win.q1, win.accel1, win.q2, win.accel2)
    q_mag, _ = refcal.correction_series(win.q1, win.mag1, win.q2, win.mag2)
    return refcal.fuse(q_mag, q_acc, corr.k_mag, corr.k_acc)


def feedback_iteration(win: WindowData, cfg: PipelineConfig,
                       prev: WindowEstimate | None = None) -> WindowEstimate:
    """Run the fixed-pass feedback loop on one window.

    Raises :class:`InsufficientMotion` when the hinge gate fails. A window
    without enough off-axis excitation keeps the hinge result and carries
    unconverged placeholder secondary axes.
    """
    if cfg.use_refcal:
        q_acc, _ = refcal.correction_series(win.q1, win.accel1, win.q2, win.accel2)
        q_mag, _ = refcal.correction_series(win.q1, win.mag1, win.q2, win.mag2)
    weights = ((prev.corr.k_mag, prev.corr.k_acc) if prev is not None
               else cfg.initial_weights)
    corr = (prev.corr if prev is not None and cfg.use_refcal
            else _identity_corr(weights))
    hinge_prev = prev.hinge if prev is not None else None
    axes3 = prev.axes if prev is not None else None
    hinge = None

    for _ in range(cfg.window.feedback_iters):
        # project out the secondary-axis content only once those axes are
        # actually identified; arbitrary placeholders would corrupt the
        # hinge fit
        if axes3 is not None and axes3.secondary_excited:
            w1_eff = subtract_axis_projection(win.gyro1, axes3.j1_3d)
            w2_eff = subtract_axis_projection(win.gyro2, axes3.j2_3d)
        else:
            w1_eff, w2_eff = win.gyro1, win.gyro2
        hinge = estimate_hinge(w1_eff, w2_eff, cfg.solver_opts,
                               min_gyro_rms=cfg.min_gyro_rms, prev=hinge_prev)

        if cfg.use_refcal:
            calwin = refcal.CalibrationWindow(
                q1=win.q1, q2=win.q2, q_acc=q_acc, q_mag=q_mag,
                j1=hinge.j1_2d, j2=hinge.j2_2d)
            # the shared axis must globalize consistently from both sides
            _align_hinge_sign(hinge, calwin, weights)
            calwin.j2 = hinge.j2_2d
            corr = refcal.optimize_coefficients(calwin, initial=weights)
            weights = (corr.k_mag, corr.k_acc)
            qc = refcal.apply_weights(calwin, corr)
        else:
            qc = np.broadcast_to(quat.identity(), (len(win), 4))
            _align_hinge_sign(hinge, refcal.CalibrationWindow(
                q1=win.q1, q2=win.q2, q_acc=qc, q_mag=qc,
                j1=hinge.j1_2d, j2=hinge.j2_2d), (0.5, 0.5))

        q2_g1 = quat.compose(qc, win.q2)
        dw_g = quat.rotate(q2_g1, win.gyro2) - quat.rotate(win.q1, win.gyro1)
        j3_g = quat.rotate(win.q1, hinge.j1_2d)
        ctx = ThreeDofContext(q1=win.q1, q2=q2_g1, dw_g=dw_g, j3_g=j3_g)
        try:
            axes3 = estimate_secondary_axes(ctx, cfg.solver_opts,
                                            min_perp_rms=cfg.min_perp_rms,
                                            prev=axes3)
        except InsufficientMotion:
            axes3 = _fallback_axes(ctx, axes3)
            break
        hinge_prev = hinge

    dt = float(np.median(np.diff(win.t))) if len(win) > 1 else 1.0
    wd1 = central_diff(win.gyro1, dt)
    wd2 = central_diff(win.gyro2, dt)
    # one-sided edge stencils are an order worse; drop them from the fit
    tr = slice(2, -2) if len(win) > 8 else slice(None)
    try:
        positions = estimate_positions(
            win.gyro1[tr], wd1[tr], win.accel1[tr],
            win.gyro2[tr], wd2[tr], win.accel2[tr],
            cfg.solver_opts, min_gyro_rms=cfg.min_gyro_rms,
            prev=prev.positions if prev is not None else None)
    except InsufficientMotion:
        if prev is None:
            raise
        positions = prev.positions

    return WindowEstimate(hinge=hinge, axes=axes3, corr=corr, positions=positions)


def _align_hinge_sign(hinge: HingeEstimate, calwin: refcal.CalibrationWindow,
                      weights) -> None:
    qc = refcal.fuse(calwin.q_mag, calwin.q_acc, *weights)
    j1_g = quat.rotate(calwin.q1, hinge.j1_2d)
    j2_g = quat.rotate(quat.compose(qc, calwin.q2), hinge.j2_2d)
    if float(np.mean(np.sum(j1_g * j2_g, axis=-1))) < 0:
        hinge.j2_2d = -hinge.j2_2d
        hinge.sph2 = unit_to_sph(hinge.j2_2d)


def _fallback_axes(ctx: ThreeDofContext, prev: ThreeDofAxes | None) -> ThreeDofAxes:
    """Placeholder secondary axes for windows without off-axis excitation."""
    from .axes import _orthogonal_to
    j3_mean = quat.unit(ctx.j3_g.mean(axis=0))
    if prev is not None:
        return ThreeDofAxes(j1_3d=prev.j1_3d, j2_3d=prev.j2_3d, j3_g=j3_mean,
                            converged=False, secondary_excited=False)
    j3_s1 = quat.unit(quat.rotate(quat.conjugate(ctx.q1), ctx.j3_g).mean(axis=0))
    j3_s2 = quat.unit(quat.rotate(quat.conjugate(ctx.q2), ctx.j3_g).mean(axis=0))
    return ThreeDofAxes(j1_3d=_orthogonal_to(j3_s1, _X),
                        j2_3d=_orthogonal_to(j3_s2, _Z),
                        j3_g=j3_mean, converged=False, secondary_excited=False)


@dataclass
class DetectionResult:
    estimate: WindowEstimate | None
    stale: bool


def run_detection_window(win: WindowData, cfg: PipelineConfig,
                         prev: WindowEstimate | None,
                         prev_det: DetectionResult | None = None) -> DetectionResult:
    """Short-window re-estimate used by the movement detector.

    Runs the same solve chain as a full window on ``detection_len``
    samples. Insufficient motion is tolerated: the previous detection
    estimate is returned with ``stale=True``.
    """
    try:
        est = feedback_iteration(win, cfg, prev=prev)
        return DetectionResult(estimate=est, stale=False)
    except EstimationError:
        if prev_det is not None and prev_det.estimate is not None:
            return DetectionResult(estimate=prev_det.estimate, stale=True)
        return DetectionResult(estimate=None, stale=True)


# -- per-sample angle extraction --------------------------------------------

class _AngleState:
    """Carries unwrap continuity across chunk boundaries."""

    def __init__(self):
        self.last_j3: float | None = None


def _chunk_angles(win: WindowData, est: WindowEstimate, cfg: PipelineConfig,
                  state: _AngleState) -> np.ndarray:
    """Vectorized 3-axis angle extraction for a span of samples."""
    qc = _corr_series(win, cfg, est.corr)
    q2_g1 = quat.compose(qc, win.q2)

    qb1 = quat.from_rot_matrix(body_frame_from_hinge(est.hinge.j1_2d, est.positions.o1))
    qb2 = quat.from_rot_matrix(body_frame_from_hinge(est.hinge.j2_2d, est.positions.o2))
    q_rel = quat.compose(quat.conjugate(qb1),
                         quat.compose(quat.conjugate(win.q1),
                                      quat.compose(q2_g1, qb2)))
    raw3 = np.atleast_1d(main_axis_angle(q_rel, twist=cfg.twist_mode))
    ang3 = _unwrap(raw3, state.last_j3)
    state.last_j3 = float(ang3[-1])

    j3_g = quat.rotate(win.q1, est.hinge.j1_2d)
    q_j3 = quat.from_axis_angle(j3_g, ang3)
    qb1_3 = align_vectors(_X, est.axes.j1_3d)
    qb2_3 = align_vectors(_Z, est.axes.j2_3d)
    ang1, ang2, _ = secondary_angles(qb1_3, win.q1, qc, q_j3, win.q2, qb2_3)
    return np.stack([np.atleast_1d(ang1), np.atleast_1d(ang2), ang3], axis=1)


def _unwrap(raw: np.ndarray, last: float | None) -> np.ndarray:
    out = np.empty_like(raw)
    prev = raw[0] if last is None else last
    for i, v in enumerate(raw):
        d = (v - prev + np.pi) % (2.0 * np.pi) - np.pi
        out[i] = prev + d
        prev = out[i]
    return out


# -- stream orchestration -----------------------------------------------------

def process_stream(stream1: ImuStream, stream2: ImuStream,
                   cfg: PipelineConfig | None = None,
                   orientations: tuple[np.ndarray, np.ndarray] | None = None,
                   ) -> tuple[JointAngles, list[PipelineEvent]]:
    """Run the full estimator over two time-aligned IMU streams.

    ``orientations`` may supply precomputed per-sample orientation
    quaternions for both IMUs (e.g. simulator ground truth); otherwise the
    complementary filter runs on each stream.
    """
    cfg = cfg or PipelineConfig()
    n = len(stream1)
    if len(stream2) != n:
        raise ShapeError("streams have different lengths")
    if n == 0:
        return JointAngles.empty(), []
    if not np.allclose(stream1.t, stream2.t, atol=1e-9):
        raise ShapeError("streams are not time-aligned")

    if orientations is None:
        filt = cfg.filter
        q1 = filt.batch_estimate(stream1)
        q2 = filt.batch_estimate(stream2)
    else:
        q1, q2 = (np.asarray(q, dtype=float) for q in orientations)
        if q1.shape != (n, 4) or q2.shape != (n, 4):
            raise ShapeError("orientation arrays must be (n, 4)")

    def window(a: int, b: int) -> WindowData:
        return WindowData(t=stream1.t[a:b],
                          gyro1=stream1.gyro[a:b], gyro2=stream2.gyro[a:b],
                          accel1=stream1.accel[a:b], accel2=stream2.accel[a:b],
                          mag1=stream1.mag[a:b], mag2=stream2.mag[a:b],
                          q1=q1[a:b], q2=q2[a:b])

    events: list[PipelineEvent] = []
    t_chunks: list[np.ndarray] = []
    a_chunks: list[np.ndarray] = []
    s_chunks: list[np.ndarray] = []

    def emit(a: int, b: int, est: WindowEstimate, source: str,
             state: _AngleState) -> None:
        if b <= a:
            return
        t_chunks.append(stream1.t[a:b])
        a_chunks.append(_chunk_angles(window(a, b), est, cfg, state))
        s_chunks.append(np.full(b - a, source, dtype="U8"))

    # split at stream gaps; each segment restarts with fresh state
    gaps = np.nonzero(np.diff(stream1.t) > cfg.gap_limit)[0]
    seg_starts = [0] + [int(g) + 1 for g in gaps]
    seg_ends = [int(g) + 1 for g in gaps] + [n]
    for g in gaps:
        events.append(PipelineEvent(t=float(stream1.t[g + 1]), kind=EVENT_STREAM_GAP))

    for seg_a, seg_b in zip(seg_starts, seg_ends):
        _process_segment(seg_a, seg_b, window, cfg, events, emit)

    events.sort(key=lambda e: e.t)
    if not t_chunks:
        return JointAngles.empty(), events
    return JointAngles(t=np.concatenate(t_chunks),
                       angles=np.concatenate(a_chunks),
                       source=np.concatenate(s_chunks)), events


def _process_segment(seg_a: int, seg_b: int, window, cfg: PipelineConfig,
                     events: list[PipelineEvent], emit) -> None:
    wcfg = cfg.window
    w_len, i_len, d_len = wcfg.window_len, wcfg.interval_len, wcfg.detection_len
    state = _AngleState()
    bundle: WindowEstimate | None = None
    last_det: DetectionResult | None = None
    restarted = False

    b = seg_a + w_len
    while b <= seg_b:
        win = window(b - w_len, b)
        t_solved = float(win.t[-1])
        try:
            bundle = feedback_iteration(win, cfg, prev=bundle)
            events.append(PipelineEvent(t=t_solved, kind=EVENT_WINDOW_SOLVED))
            if restarted:
                events.append(PipelineEvent(t=t_solved, kind=EVENT_WINDOW_RESTARTED))
                restarted = False
        except EstimationError:
            if bundle is None:
                # nothing usable yet (e.g. stationary warmup); slide onward
                b += i_len
                continue

        # interval: angles from the last window's geometry, detection in
        # detection_len chunks
        e = min(b + i_len, seg_b)
        moved_at: int | None = None
        c = b
        while c < e:
            c_end = min(c + d_len, e)
            emit(c, c_end, bundle, SOURCE_NORMAL, state)
            if (cfg.detector.enabled and c_end - c == d_len):
                det = run_detection_window(window(c_end - d_len, c_end), cfg,
                                           prev=bundle, prev_det=last_det)
                last_det = det
                if det.estimate is not None and not det.stale:
                    v = movement_metric(bundle.axes, det.estimate.axes, cfg.detector)
                    if v > cfg.detector.threshold:
                        t_det = float(window(c_end - 1, c_end).t[0])
                        events.append(PipelineEvent(
                            t=t_det, kind=EVENT_MOVEMENT_DETECTED, v_value=v))
                        events.append(PipelineEvent(
                            t=t_det, kind=EVENT_FALLBACK_ENGAGED))
                        moved_at = c_end
                        break
            c = c_end

        if moved_at is None:
            if e >= seg_b:
                break
            # the next window's trailing samples end where this interval does
            b = e
        else:
            # safeguard: fallback angles from the detection estimate while a
            # fresh window fills from the detection point
            fb = last_det.estimate
            fill_end = min(moved_at + w_len, seg_b)
            emit(moved_at, fill_end, fb, SOURCE_FALLBACK, state)
            bundle = fb
            restarted = True
            b = moved_at + w_len
    return
