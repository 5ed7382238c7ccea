"""Rigid 3-DoF gimbal and IMU signal simulator.

Two segments meet at a fixed center; the rotation of segment 2 relative to
segment 1 is a sequence of three elementary rotations about unit axes that
are mutually perpendicular in the neutral pose:

    R(seg1 <- seg2) = R(u1, th1) * R(u3, th3) * R(u2, th2)

``u1`` is fixed in segment 1, ``u2`` is fixed in segment 2, and ``u3`` is
the middle (main) axis, perpendicular to both at all times. Segment 1
itself moves through a base rotation (tilt + twist sinusoids), so both
sensors see rich motion. Angle profiles are smooth sums of sinusoids with
an optional C2 lead-in envelope; angular rates are closed-form and their
derivatives are obtained by complex-step differentiation, so simulated
signals satisfy the rigid-body constraints to machine precision.

Accelerometers measure specific force: the lever-arm (centripetal and
tangential) terms for a sensor displaced from the fixed center, plus
gravity reaction. Lever arms ``lever1``/``lever2`` point from the joint
center to the sensor origin, in sensor coordinates.

Ground truth includes per-sample joint angles, sensor orientations both in
the world frame and in each IMU's (optionally offset) reference frame, the
injected reference correction, and all axis/lever coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import quat
from .errors import EventOutOfRange
from .orientation import GRAVITY, ImuStream

_COMPLEX_H = 1e-30

Term = tuple[float, float, float]  # amplitude (rad), frequency (Hz), phase (rad)


@dataclass
class TrajectorySpec:
    """Sinusoid sums driving each gimbal angle plus the base motion."""

    main: list[Term]
    seg1: list[Term] = field(default_factory=list)
    seg2: list[Term] = field(default_factory=list)
    base_tilt: list[Term] = field(default_factory=list)
    base_twist: list[Term] = field(default_factory=list)
    duration: float = 60.0
    sample_rate: float = 100.0
    lead_in: float = 0.0  # seconds of smooth ramp-up from rest

    @staticmethod
    def _peak(terms) -> float:
        return float(sum(abs(a) for a, _, _ in terms))

    def main_dominant(self) -> bool:
        peak = self._peak(self.main)
        return peak >= self._peak(self.seg1) and peak >= self._peak(self.seg2)


@dataclass
class NoiseSpec:
    """Additive sensor corruption; identical seeds give identical streams."""

    gyro_noise: float = 0.005   # rad/s RMS per axis
    gyro_bias: float = 0.0      # rad/s magnitude, random direction
    accel_noise: float = 0.05   # m/s^2 RMS per axis
    accel_bias: float = 0.0
    mag_noise: float = 0.01     # fraction of field magnitude, per axis
    mag_bias: float = 0.0
    seed: int = 0

    @classmethod
    def none(cls, seed: int = 0) -> "NoiseSpec":
        return cls(gyro_noise=0.0, gyro_bias=0.0, accel_noise=0.0,
                   accel_bias=0.0, mag_noise=0.0, mag_bias=0.0, seed=seed)


@dataclass
class SensorMovementEvent:
    """Re-mounting of one IMU at time t.

    ``rotation`` maps new-sensor-frame coordinates to old-sensor-frame
    coordinates; readings after ``t`` are re-expressed through its inverse.
    """

    t: float
    imu: int  # 1 or 2
    rotation: np.ndarray


@dataclass
class GimbalSpec:
    axis_seg1: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    axis_main: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    axis_seg2: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    lever1: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.25]))
    lever2: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.20]))
    mount1: np.ndarray = field(default_factory=quat.identity)
    mount2: np.ndarray = field(default_factory=quat.identity)
    #: true reference deviation q(g1 <- g2); identity means both filters
    #: agree on the reference frame
    ref_offset: np.ndarray = field(default_factory=quat.identity)
    #: optional (time, quaternion) keyframes overriding ref_offset
    ref_offset_keys: list[tuple[float, np.ndarray]] | None = None
    #: extra rotation of the field seen by IMU2 ("realistic" deviation mode:
    #: the orientation filter itself converges to a warped reference)
    mag_warp2: np.ndarray = field(default_factory=quat.identity)
    mag_field: np.ndarray = field(default_factory=lambda: np.array([0.6, 0.0, -0.8]))
    base_tilt_axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    base_twist_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        self.axis_seg1 = quat.unit(np.asarray(self.axis_seg1, float))
        self.axis_main = quat.unit(np.asarray(self.axis_main, float))
        self.axis_seg2 = quat.unit(np.asarray(self.axis_seg2, float))
        for a, b in ((self.axis_seg1, self.axis_main),
                     (self.axis_main, self.axis_seg2),
                     (self.axis_seg1, self.axis_seg2)):
            if abs(float(a @ b)) > 1e-6:
                raise ValueError("gimbal axes must be mutually perpendicular")


@dataclass
class GroundTruth:
    t: np.ndarray          # (n,)
    angles: np.ndarray     # (n, 3): about j1 (seg1), j2 (seg2), j3 (main)
    rates: np.ndarray      # (n, 3) matching column order
    q_w_s1: np.ndarray     # (n, 4) sensor 1 in the world frame
    q_w_s2: np.ndarray
    q_g1_s1: np.ndarray    # (n, 4) what an ideal filter reports for IMU1
    q_g2_s2: np.ndarray    # (n, 4) ditto IMU2, in its offset reference frame
    q_corr: np.ndarray     # (n, 4) true correction [g2] -> [g1]
    j1_s1: np.ndarray      # (n, 3) secondary axis of segment 1, in [s1]
    j2_s2: np.ndarray      # (n, 3)
    j3_s1: np.ndarray      # (n, 3) main axis in [s1] (varies with th1)
    j3_s2: np.ndarray      # (n, 3)
    j3_g1: np.ndarray      # (n, 3) main axis in [g1] (= world)
    o1: np.ndarray         # (n, 3) joint-center-to-sensor levers, [s_i]
    o2: np.ndarray
    omega1: np.ndarray     # (n, 3) noise-free sensor-frame angular rates
    omega2: np.ndarray
    omega_dot1: np.ndarray  # (n, 3) analytic derivatives
    omega_dot2: np.ndarray
    spec: GimbalSpec | None = None


def _angle_and_rate(terms, lead_in: float, t: np.ndarray):
    """Evaluate a sinusoid sum and its time derivative; complex-capable."""
    base = np.zeros_like(t)
    rate = np.zeros_like(t)
    for amp, freq, phase in terms:
        w = 2.0 * np.pi * freq
        base = base + amp * np.sin(w * t + phase)
        rate = rate + amp * w * np.cos(w * t + phase)
    if lead_in <= 0:
        return base, rate
    s = t / lead_in
    mid = (np.real(s) > 0) & (np.real(s) < 1)
    env = np.where(np.real(s) <= 0, 0.0, np.ones_like(s))
    denv = np.zeros_like(s)
    p = s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
    dp = (s * s * (30.0 + s * (-60.0 + 30.0 * s))) / lead_in
    env = np.where(mid, p, env)
    denv = np.where(mid, dp, denv)
    return env * base, denv * base + env * rate


def _skew(u: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -u[2], u[1]],
                     [u[2], 0.0, -u[0]],
                     [-u[1], u[0], 0.0]])


def _rot_about(u: np.ndarray, th: np.ndarray) -> np.ndarray:
    """Rodrigues rotation matrices (n, 3, 3); complex-capable in th."""
    k = _skew(u)
    kk = k @ k
    s = np.sin(th)[:, None, None]
    c = np.cos(th)[:, None, None]
    return np.eye(3) + s * k + (1.0 - c) * kk


def _chain_body_rate(items) -> np.ndarray:
    """Body angular rate of a product of elementary rotations.

    ``items`` is a sequence of (axis, angle(n,), rate(n,)) applied left to
    right; uses omega_AB = R_B^T omega_A + omega_B.
    """
    omega = None
    for u, th, thd in items:
        r = _rot_about(u, th)
        if omega is None:
            omega = thd[:, None] * u
        else:
            omega = np.einsum("nji,nj->ni", r, omega) + thd[:, None] * u
    return omega


def _slerp(q0: np.ndarray, q1: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Geodesic interpolation between two quaternions at fractions u (n,)."""
    d = quat.compose(quat.conjugate(q0), q1)
    angle = quat.rotation_angle(d)
    if angle < 1e-12:
        return np.broadcast_to(q0, (u.size, 4)).copy()
    axis = quat.rotation_axis(d)
    return quat.compose(q0, quat.from_axis_angle(axis, u * angle))


def _offset_series(spec: GimbalSpec, t: np.ndarray) -> np.ndarray:
    if not spec.ref_offset_keys:
        return np.broadcast_to(quat.canonicalize(spec.ref_offset), (t.size, 4)).copy()
    keys = sorted(spec.ref_offset_keys, key=lambda kv: kv[0])
    times = np.array([k for k, _ in keys])
    out = np.empty((t.size, 4))
    out[t <= times[0]] = keys[0][1]
    out[t >= times[-1]] = keys[-1][1]
    for (t0, qa), (t1, qb) in zip(keys[:-1], keys[1:]):
        sel = (t > t0) & (t < t1)
        if np.any(sel):
            u = (t[sel] - t0) / (t1 - t0)
            out[sel] = _slerp(np.asarray(qa, float), np.asarray(qb, float), u)
    return quat.canonicalize(out)


def simulate(spec: GimbalSpec, traj: TrajectorySpec,
             noise: NoiseSpec | None = None,
             events: tuple[SensorMovementEvent, ...] = (),
             check_amplitudes: bool = True,
             ) -> tuple[ImuStream, ImuStream, GroundTruth]:
    """Generate both IMU streams and the ground truth for one trial."""
    if check_amplitudes and not traj.main_dominant():
        raise ValueError(
            "main-axis amplitude must dominate (pass check_amplitudes=False "
            "for deliberately degenerate trajectories)"
        )
    noise = noise or NoiseSpec()
    n = int(round(traj.duration * traj.sample_rate))
    t = np.arange(n) / traj.sample_rate

    def angles_rates(tt):
        th1, r1 = _angle_and_rate(traj.seg1, traj.lead_in, tt)
        th2, r2 = _angle_and_rate(traj.seg2, traj.lead_in, tt)
        th3, r3 = _angle_and_rate(traj.main, traj.lead_in, tt)
        phi1, p1 = _angle_and_rate(traj.base_tilt, traj.lead_in, tt)
        phi2, p2 = _angle_and_rate(traj.base_twist, traj.lead_in, tt)
        return (th1, r1), (th2, r2), (th3, r3), (phi1, p1), (phi2, p2)

    def body_rates(tt):
        (th1, r1), (th2, r2), (th3, r3), (phi1, p1), (phi2, p2) = angles_rates(tt)
        base = [(spec.base_tilt_axis, phi1, p1), (spec.base_twist_axis, phi2, p2)]
        joint = [(spec.axis_seg1, th1, r1), (spec.axis_main, th3, r3),
                 (spec.axis_seg2, th2, r2)]
        return _chain_body_rate(base), _chain_body_rate(base + joint)

    w_seg1, w_seg2 = body_rates(t)
    wd_seg1, wd_seg2 = (np.imag(w) / _COMPLEX_H
                        for w in body_rates(t + 1j * _COMPLEX_H))

    (th1, r1), (th2, r2), (th3, r3), (phi1, _), (phi2, _) = angles_rates(t)
    q_base = quat.compose(quat.from_axis_angle(spec.base_tilt_axis, phi1),
                          quat.from_axis_angle(spec.base_twist_axis, phi2))
    q_rel = quat.compose(
        quat.compose(quat.from_axis_angle(spec.axis_seg1, th1),
                     quat.from_axis_angle(spec.axis_main, th3)),
        quat.from_axis_angle(spec.axis_seg2, th2),
    )
    q_w_seg2 = quat.compose(q_base, q_rel)
    q_w_s1 = quat.compose(q_base, spec.mount1)
    q_w_s2 = quat.compose(q_w_seg2, spec.mount2)

    m1c = quat.conjugate(spec.mount1)
    m2c = quat.conjugate(spec.mount2)
    w1 = quat.rotate(m1c, w_seg1)
    w2 = quat.rotate(m2c, w_seg2)
    wd1 = quat.rotate(m1c, wd_seg1)
    wd2 = quat.rotate(m2c, wd_seg2)

    grav = np.array([0.0, 0.0, GRAVITY])

    def accel(w, wd, lever, q_w_s):
        return (np.cross(w, np.cross(w, lever)) + np.cross(wd, lever)
                + quat.rotate(quat.conjugate(q_w_s), grav))

    a1 = accel(w1, wd1, spec.lever1, q_w_s1)
    a2 = accel(w2, wd2, spec.lever2, q_w_s2)
    mag1 = quat.rotate(quat.conjugate(q_w_s1), spec.mag_field)
    mag2 = quat.rotate(quat.conjugate(q_w_s2),
                       quat.rotate(spec.mag_warp2, spec.mag_field))

    q_off = _offset_series(spec, t)
    truth = GroundTruth(
        t=t,
        angles=np.stack([th1, th2, th3], axis=1),
        rates=np.stack([r1, r2, r3], axis=1),
        q_w_s1=q_w_s1,
        q_w_s2=q_w_s2,
        q_g1_s1=q_w_s1.copy(),
        q_g2_s2=quat.compose(quat.conjugate(q_off), q_w_s2),
        q_corr=q_off,
        j1_s1=np.broadcast_to(quat.rotate(m1c, spec.axis_seg1), (n, 3)).copy(),
        j2_s2=np.broadcast_to(quat.rotate(m2c, spec.axis_seg2), (n, 3)).copy(),
        j3_s1=quat.rotate(m1c, quat.rotate(quat.from_axis_angle(spec.axis_seg1, th1),
                                           spec.axis_main)),
        j3_s2=quat.rotate(m2c, quat.rotate(quat.conjugate(
            quat.from_axis_angle(spec.axis_seg2, th2)), spec.axis_main)),
        j3_g1=quat.rotate(quat.compose(q_base, quat.from_axis_angle(spec.axis_seg1, th1)),
                          spec.axis_main),
        o1=np.broadcast_to(np.asarray(spec.lever1, float), (n, 3)).copy(),
        o2=np.broadcast_to(np.asarray(spec.lever2, float), (n, 3)).copy(),
        omega1=w1,
        omega2=w2,
        omega_dot1=wd1,
        omega_dot2=wd2,
        spec=spec,
    )

    rng = np.random.default_rng(noise.seed)

    def corrupt(gyro, acc, mag):
        unit3 = lambda: quat.unit(rng.standard_normal(3))
        gyro = gyro + noise.gyro_bias * unit3() + rng.normal(0, noise.gyro_noise, (n, 3)) \
            if (noise.gyro_bias or noise.gyro_noise) else gyro
        acc = acc + noise.accel_bias * unit3() + rng.normal(0, noise.accel_noise, (n, 3)) \
            if (noise.accel_bias or noise.accel_noise) else acc
        scale = float(np.linalg.norm(spec.mag_field))
        mag = mag + noise.mag_bias * scale * unit3() \
            + rng.normal(0, noise.mag_noise * scale, (n, 3)) \
            if (noise.mag_bias or noise.mag_noise) else mag
        return gyro, acc, mag

    g1n, a1n, m1n = corrupt(w1, a1, mag1)
    g2n, a2n, m2n = corrupt(w2, a2, mag2)
    stream1 = ImuStream(t=t.copy(), gyro=g1n, accel=a1n, mag=m1n)
    stream2 = ImuStream(t=t.copy(), gyro=g2n, accel=a2n, mag=m2n)

    for ev in events:
        if ev.imu == 1:
            stream1 = apply_event(stream1, ev)
        else:
            stream2 = apply_event(stream2, ev)
        _apply_event_truth(truth, ev)

    return stream1, stream2, truth


def apply_event(stream: ImuStream, event: SensorMovementEvent) -> ImuStream:
    """Re-express a stream's readings after a sensor re-mounting."""
    if not (stream.t[0] <= event.t <= stream.t[-1]):
        raise EventOutOfRange(
            f"event at t={event.t} outside stream span "
            f"[{stream.t[0]}, {stream.t[-1]}]"
        )
    out = stream.copy()
    sel = out.t >= event.t
    rot = quat.conjugate(np.asarray(event.rotation, float))
    out.gyro[sel] = quat.rotate(rot, out.gyro[sel])
    out.accel[sel] = quat.rotate(rot, out.accel[sel])
    out.mag[sel] = quat.rotate(rot, out.mag[sel])
    return out


def _apply_event_truth(truth: GroundTruth, event: SensorMovementEvent) -> None:
    sel = truth.t >= event.t
    q_ev = np.asarray(event.rotation, float)
    rot = quat.conjugate(q_ev)
    if event.imu == 1:
        for name in ("j1_s1", "j3_s1", "o1", "omega1", "omega_dot1"):
            arr = getattr(truth, name)
            arr[sel] = quat.rotate(rot, arr[sel])
        truth.q_w_s1[sel] = quat.compose(truth.q_w_s1[sel], q_ev)
        truth.q_g1_s1[sel] = quat.compose(truth.q_g1_s1[sel], q_ev)
    else:
        for name in ("j2_s2", "j3_s2", "o2", "omega2", "omega_dot2"):
            arr = getattr(truth, name)
            arr[sel] = quat.rotate(rot, arr[sel])
        truth.q_w_s2[sel] = quat.compose(truth.q_w_s2[sel], q_ev)
        truth.q_g2_s2[sel] = quat.compose(truth.q_g2_s2[sel], q_ev)


# -- named scenarios -------------------------------------------------------

@dataclass
class Scenario:
    spec: GimbalSpec
    traj: TrajectorySpec
    noise: NoiseSpec
    events: tuple[SensorMovementEvent, ...] = ()

    def run(self):
        return simulate(self.spec, self.traj, self.noise, self.events)


def _traj_hinge(duration, sample_rate):
    return TrajectorySpec(
        main=[(0.60, 0.80, 0.0), (0.15, 1.70, 0.9)],
        base_tilt=[(0.20, 0.35, 0.4)],
        base_twist=[(0.15, 0.23, 1.3)],
        duration=duration, sample_rate=sample_rate, lead_in=1.0,
    )


def _traj_threedof(duration, sample_rate):
    return TrajectorySpec(
        main=[(0.60, 0.80, 0.0), (0.12, 1.60, 0.7)],
        seg1=[(0.16, 0.50, 0.3)],
        seg2=[(0.14, 0.65, 1.1)],
        base_tilt=[(0.20, 0.40, 0.0)],
        base_twist=[(0.17, 0.27, 0.8)],
        duration=duration, sample_rate=sample_rate, lead_in=1.0,
    )


def _traj_walk(duration, sample_rate):
    return TrajectorySpec(
        main=[(0.50, 0.90, 0.0), (0.14, 1.80, 0.6)],
        seg1=[(0.10, 0.45, 0.2)],
        seg2=[(0.09, 0.62, 1.0)],
        base_tilt=[(0.15, 0.45, 0.9)],
        base_twist=[(0.12, 0.30, 0.5)],
        duration=duration, sample_rate=sample_rate, lead_in=2.0,
    )


def _traj_squat(duration, sample_rate):
    return TrajectorySpec(
        main=[(0.90, 0.35, 0.0)],
        seg1=[(0.10, 0.25, 0.5)],
        seg2=[(0.08, 0.30, 1.2)],
        base_tilt=[(0.12, 0.20, 0.3)],
        base_twist=[(0.10, 0.15, 0.9)],
        duration=duration, sample_rate=sample_rate, lead_in=2.0,
    )


_TRAJECTORIES = {
    "hinge": _traj_hinge,
    "threedof": _traj_threedof,
    "walk": _traj_walk,
    "squat": _traj_squat,
}

SCENARIO_NAMES = tuple(_TRAJECTORIES) + ("movement",)


def scenario(name: str, duration: float = 60.0, sample_rate: float = 100.0,
             seed: int = 0, noise: NoiseSpec | str = "default",
             ref_offset_deg: float = 0.0,
             ref_offset_axis: np.ndarray | None = None,
             event_time: float | None = None,
             event_deg: float = 30.0) -> Scenario:
    """Build one of the named simulation scenarios.

    ``movement`` is the 3-DoF trajectory with a mount-shift event on IMU2
    (default 30 degrees at mid-stream). A nonzero ``ref_offset_deg``
    injects a constant reference-frame deviation about ``ref_offset_axis``
    (default: world X).
    """
    base = "threedof" if name == "movement" else name
    if base not in _TRAJECTORIES:
        raise ValueError(f"unknown scenario '{name}'; choose from {SCENARIO_NAMES}")
    if isinstance(noise, str):
        noise = NoiseSpec(seed=seed) if noise == "default" else NoiseSpec.none(seed)
    else:
        noise = replace(noise, seed=seed)

    spec = GimbalSpec()
    if ref_offset_deg:
        axis = np.array([1.0, 0.0, 0.0]) if ref_offset_axis is None else ref_offset_axis
        spec.ref_offset = quat.from_axis_angle(axis, np.deg2rad(ref_offset_deg))

    events: tuple[SensorMovementEvent, ...] = ()
    if name == "movement":
        t_ev = duration / 2.0 if event_time is None else event_time
        events = (SensorMovementEvent(
            t=t_ev, imu=2,
            rotation=quat.from_axis_angle(quat.unit(np.array([0.3, 1.0, 0.5])),
                                          np.deg2rad(event_deg)),
        ),)

    return Scenario(spec=spec, traj=_TRAJECTORIES[base](duration, sample_rate),
                    noise=noise, events=events)
