"""Per-IMU absolute orientation estimation.

Each IMU stream is fused independently into a unit quaternion mapping the
sensor frame into that IMU's own reference frame ``[g_i]``: gravity along
+Z and the initial horizontal magnetic field component along +X. No
cross-IMU information is used here; the residual deviation between the two
reference frames is what :mod:`jointkin.refcal` estimates downstream.

The filter integrates the gyroscope (trapezoidal rate with a coning
correction term) and applies proportional corrections from the
accelerometer (tilt) and magnetometer (heading only). Both correction
gains are attenuated when the measured vector magnitude departs from its
reference value, so transient accelerations and magnetic disturbances are
partially rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import quat
from .errors import InvalidSample, TimeOrderError

GRAVITY = 9.80665

_Z = np.array([0.0, 0.0, 1.0])


@dataclass
class ImuSample:
    """One timestamped 9-axis reading in the sensor-fixed frame."""

    t: float
    gyro: np.ndarray   # rad/s
    accel: np.ndarray  # m/s^2
    mag: np.ndarray    # arbitrary but consistent units; ~unit after calibration


@dataclass
class ImuStream:
    """Column-array view of an IMU recording.

    Iterating or indexing yields :class:`ImuSample`; slicing returns a new
    stream sharing the underlying arrays.
    """

    t: np.ndarray      # (n,)
    gyro: np.ndarray   # (n, 3)
    accel: np.ndarray  # (n, 3)
    mag: np.ndarray    # (n, 3)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.gyro = np.asarray(self.gyro, dtype=float)
        self.accel = np.asarray(self.accel, dtype=float)
        self.mag = np.asarray(self.mag, dtype=float)

    def __len__(self) -> int:
        return self.t.size

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return ImuStream(self.t[idx], self.gyro[idx], self.accel[idx], self.mag[idx])
        return ImuSample(float(self.t[idx]), self.gyro[idx], self.accel[idx], self.mag[idx])

    def validate(self, mag_norm_range=(0.2, 5.0)) -> None:
        """Check invariants: finite values, strictly increasing time, sane mag."""
        for name in ("t", "gyro", "accel", "mag"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidSample(f"non-finite values in '{name}'")
        if len(self) > 1 and np.any(np.diff(self.t) <= 0):
            raise TimeOrderError("timestamps are not strictly increasing")
        if len(self):
            norms = np.linalg.norm(self.mag, axis=1)
            lo, hi = mag_norm_range
            if norms.min() < lo or norms.max() > hi:
                raise InvalidSample(
                    f"magnetometer norm outside sanity range [{lo}, {hi}]"
                )

    def copy(self) -> "ImuStream":
        return ImuStream(self.t.copy(), self.gyro.copy(), self.accel.copy(), self.mag.copy())


@dataclass
class OrientationState:
    """Filter state for one IMU: q maps sensor coordinates into [g_i]."""

    q: np.ndarray
    gain_acc: float
    gain_mag: float
    last_t: float
    prev_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mag_ref_norm: float = 1.0


@dataclass
class ComplementaryFilter:
    """Gyro integration with gated accelerometer/magnetometer corrections.

    ``gain_acc`` / ``gain_mag`` are the per-sample correction fractions at
    rest; the ``*_gate`` pairs give the (full-trust, zero-trust) bounds on
    the measured-magnitude discrepancy used to attenuate them.
    """

    gain_acc: float = 0.02
    gain_mag: float = 0.01
    acc_gate: tuple[float, float] = (0.05, 0.4)    # |  ||a|| - g  | in m/s^2
    mag_gate: tuple[float, float] = (0.02, 0.3)    # |  ||m||/ref - 1  |
    gravity: float = GRAVITY

    def init_state(self, sample: ImuSample) -> OrientationState:
        """Initial orientation from the first sample's gravity and heading.

        Approximate unless the sensor is at rest; the correction feedback
        removes the remaining error within a few seconds.
        """
        a = np.asarray(sample.accel, dtype=float)
        m = np.asarray(sample.mag, dtype=float)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(m))):
            raise InvalidSample("non-finite values in initial sample")
        up = a / np.linalg.norm(a) if np.linalg.norm(a) > 1e-9 else _Z.copy()
        m_h = m - (m @ up) * up
        if np.linalg.norm(m_h) < 1e-9:
            # field (anti)parallel to gravity: pick any horizontal direction
            m_h = np.cross(up, np.array([0.0, 1.0, 0.0]))
            if np.linalg.norm(m_h) < 1e-9:
                m_h = np.cross(up, np.array([1.0, 0.0, 0.0]))
        x = m_h / np.linalg.norm(m_h)
        y = np.cross(up, x)
        rot = np.stack([x, y, up])  # rows: reference axes in sensor coords
        return OrientationState(
            q=quat.from_rot_matrix(rot),
            gain_acc=self.gain_acc,
            gain_mag=self.gain_mag,
            last_t=sample.t,
            prev_gyro=np.asarray(sample.gyro, dtype=float).copy(),
            mag_ref_norm=float(np.linalg.norm(m)) or 1.0,
        )

    @staticmethod
    def _gate(discrepancy: float, gate: tuple[float, float]) -> float:
        lo, hi = gate
        return float(np.clip((hi - discrepancy) / (hi - lo), 0.0, 1.0))

    def update(self, state: OrientationState, sample: ImuSample) -> OrientationState:
        """Advance the state by one sample; returns a new state."""
        g = np.asarray(sample.gyro, dtype=float)
        a = np.asarray(sample.accel, dtype=float)
        m = np.asarray(sample.mag, dtype=float)
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(a))
                and np.all(np.isfinite(m)) and np.isfinite(sample.t)):
            raise InvalidSample(f"non-finite sample at t={sample.t}")
        dt = sample.t - state.last_t
        if dt <= 0:
            raise TimeOrderError(
                f"sample time {sample.t} not after state time {state.last_t}"
            )

        # gyro propagation: trapezoidal rate plus second-order coning term
        dtheta = 0.5 * (state.prev_gyro + g) * dt \
            + (dt * dt / 12.0) * np.cross(state.prev_gyro, g)
        q = quat.compose(state.q, _small_rotation(dtheta))

        # accelerometer tilt correction, attenuated by |  ||a|| - g  |
        eff_acc = 0.0
        a_norm = np.linalg.norm(a)
        if a_norm > 1e-9:
            eff_acc = self.gain_acc * self._gate(abs(a_norm - self.gravity), self.acc_gate)
            if eff_acc > 0.0:
                a_unit = a / a_norm
                up_pred = quat.rotate(quat.conjugate(q), _Z)
                axis = np.cross(a_unit, up_pred)
                s = np.linalg.norm(axis)
                c = float(a_unit @ up_pred)
                if s > 1e-12:
                    q = quat.compose(q, quat.from_axis_angle(axis / s, eff_acc * np.arctan2(s, c)))

        # magnetometer heading correction about the reference Z axis only
        eff_mag = 0.0
        m_norm = np.linalg.norm(m)
        if m_norm > 1e-9 and state.mag_ref_norm > 0:
            disc = abs(m_norm / state.mag_ref_norm - 1.0)
            eff_mag = self.gain_mag * self._gate(disc, self.mag_gate)
            if eff_mag > 0.0:
                m_g = quat.rotate(q, m / m_norm)
                h = np.hypot(m_g[0], m_g[1])
                if h > 1e-9:
                    psi = -np.arctan2(m_g[1], m_g[0])
                    q = quat.compose(quat.from_axis_angle(_Z, eff_mag * psi), q)

        return replace(
            state,
            q=quat.canonicalize(quat.normalize(q)),
            gain_acc=eff_acc,
            gain_mag=eff_mag,
            last_t=sample.t,
            prev_gyro=g.copy(),
        )

    def batch_estimate(self, stream: ImuStream,
                       initial: OrientationState | None = None) -> np.ndarray:
        """Run the filter over a stream; returns (n, 4) quaternions.

        The first output row is the (initial) state's orientation.
        """
        n = len(stream)
        out = np.empty((n, 4))
        if n == 0:
            return out
        state = initial if initial is not None else self.init_state(stream[0])
        out[0] = state.q
        for i in range(1, n):
            try:
                state = self.update(state, stream[i])
            except (TimeOrderError, InvalidSample) as exc:
                raise type(exc)(f"sample {i}: {exc}") from exc
            out[i] = state.q
        return out


def _small_rotation(dtheta: np.ndarray) -> np.ndarray:
    angle = np.linalg.norm(dtheta)
    if angle < 1e-12:
        return quat.identity()
    return quat.from_axis_angle(dtheta / angle, angle)
