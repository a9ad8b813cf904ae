"""Strapdown double integration and step-based dead reckoning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy import signal

from .dataio import ImuSequence, OrientationSource, integrate_gyro, orientations_for
from .errors import ConfigError, DataError
from .geometry import quat_exp, quat_mul, quat_normalize, quat_to_yaw, rotate_vec

STRIDE_M = 0.67


@dataclass
class Trajectory:
    """Navigation-frame positions ``(L, 3)``; 2D trajectories carry ``z = 0``."""

    timestamps: NDArray[np.float64]
    positions: NDArray[np.float64]

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim == 2 and pos.shape[1] == 2:
            pos = np.column_stack([pos, np.zeros(len(pos))])
        if pos.shape != (len(self.timestamps), 3):
            raise DataError(f"positions shape {pos.shape} does not match {len(self.timestamps)} timestamps")
        if np.any(np.diff(self.timestamps) <= 0):
            raise DataError("trajectory timestamps must be strictly increasing")
        self.positions = pos

    def __len__(self):
        return len(self.timestamps)

    @property
    def xy(self) -> NDArray[np.float64]:
        return self.positions[:, :2]


@dataclass
class KinematicState:
    orientation: NDArray[np.float64]
    velocity: NDArray[np.float64]
    position: NDArray[np.float64]

    def __post_init__(self):
        self.orientation = quat_normalize(self.orientation)
        self.velocity = np.asarray(self.velocity, dtype=np.float64)
        self.position = np.asarray(self.position, dtype=np.float64)


def initial_state(seq: ImuSequence, orientation=None) -> KinematicState:
    """State at the first sample, velocity from the first position difference."""
    q = seq.orientations[0] if orientation is None else orientation
    vel = (seq.gt_positions[1] - seq.gt_positions[0]) / seq.dt
    return KinematicState(q, vel, seq.gt_positions[0].copy())


def gravity_vector(g: float) -> NDArray[np.float64]:
    return np.array([0.0, 0.0, g])


def sins_step(state: KinematicState, gyro, accel, dt: float, g) -> KinematicState:
    """One forward-Euler strapdown step.

    Orientation is propagated with ``quat_exp(gyro, dt)``, velocity with the
    gravity-compensated acceleration rotated by the *previous* orientation, and
    position with the *previous* velocity.
    """
    if not dt > 0:
        raise ConfigError("dt must be positive")
    q = state.orientation
    delta = (rotate_vec(q, accel) - np.asarray(g, dtype=np.float64)) * dt
    return KinematicState(
        orientation=quat_mul(q, quat_exp(gyro, dt)),
        velocity=state.velocity + delta,
        position=state.position + state.velocity * dt,
    )


def sins_integrate(
    seq: ImuSequence,
    source: OrientationSource = OrientationSource.GROUND_TRUTH,
    initial: KinematicState | None = None,
    gyro=None,
) -> Trajectory:
    """Double-integrate ``seq`` into a trajectory of the same length.

    With ``GROUND_TRUTH`` or ``DEVICE_ESTIMATED`` the per-sample orientation
    replaces gyro propagation. ``gyro`` overrides the sequence's gyro channel
    (used to inject bias without copying the sequence).
    """
    if initial is None:
        initial = initial_state(seq)
    dt = seq.dt
    gyro = seq.gyro if gyro is None else np.asarray(gyro, dtype=np.float64)
    if source is OrientationSource.IMU_INTEGRATED:
        q = integrate_gyro(initial.orientation, gyro, dt)
    else:
        q = orientations_for(seq, source)
    delta = (rotate_vec(q, seq.accel) - gravity_vector(seq.gravity)) * dt
    # cumsum over [start, increments...] keeps the strictly sequential summation order of sins_step
    vel = np.cumsum(np.vstack([initial.velocity, delta[:-1]]), axis=0)
    pos = np.cumsum(np.vstack([initial.position, vel[:-1] * dt]), axis=0)
    return Trajectory(seq.timestamps.copy(), pos)


@dataclass
class StepParams:
    cutoff_hz: float = 3.0
    order: int = 2
    threshold: float = 0.5
    min_gap_s: float = 0.3


def detect_steps(accel, rate_hz: float, params: StepParams | None = None) -> NDArray[np.int64]:
    """Indices of step peaks in the low-passed acceleration magnitude.

    A peak is accepted when it exceeds ``mean + threshold * std`` of the
    filtered magnitude and lies at least ``min_gap_s`` after the previous one.
    """
    params = params or StepParams()
    if rate_hz < 20:
        raise ConfigError("step detection needs a sample rate of at least 20 Hz")
    mag = np.linalg.norm(np.asarray(accel, dtype=np.float64), axis=1)
    b, a = signal.butter(params.order, params.cutoff_hz, fs=rate_hz)
    padlen = min(3 * max(len(a), len(b)), len(mag) - 1)
    smooth = signal.filtfilt(b, a, mag, padlen=padlen)
    std = smooth.std()
    if std < 1e-9:
        return np.zeros(0, dtype=np.int64)
    height = smooth.mean() + params.threshold * std
    distance = max(1, int(round(params.min_gap_s * rate_hz)))
    peaks, _ = signal.find_peaks(smooth, height=height, distance=distance)
    return peaks.astype(np.int64)


def pdr_positions(step_indices, headings, length: int, stride_m: float = STRIDE_M, p0=(0.0, 0.0)):
    """Piecewise-constant 2D positions advancing ``stride_m`` along each step heading."""
    pos = np.tile(np.asarray(p0, dtype=np.float64), (length, 1))
    for idx, psi in zip(step_indices, headings):
        pos[idx:] += stride_m * np.array([np.cos(psi), np.sin(psi)])
    return pos


def pdr_track(
    seq: ImuSequence,
    stride_m: float = STRIDE_M,
    source: OrientationSource = OrientationSource.GROUND_TRUTH,
    params: StepParams | None = None,
) -> Trajectory:
    steps = detect_steps(seq.accel, seq.sample_rate_hz, params)
    q = orientations_for(seq, source)
    headings = quat_to_yaw(q[steps]) if len(steps) else []
    pos = pdr_positions(steps, headings, len(seq), stride_m, seq.gt_positions[0, :2])
    return Trajectory(seq.timestamps.copy(), pos)
