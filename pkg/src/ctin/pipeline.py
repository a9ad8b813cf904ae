"""Windowing, frame rotation and augmentation of IMU sequences."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray

from .dataio import ImuSequence, OrientationSource, orientations_for
from .errors import ConfigError, DataError
from .geometry import quat_mul, rotate_vec, yaw_rotation

WINDOW_LEN = 200

#: sliding-window step per dataset kind; everything else uses 10
WINDOW_STEP = {"oxiod": 20, "ridi": 50}

ACCEL_BIAS_RANGE = 0.2  # m/s^2
GYRO_BIAS_RANGE = 0.05  # rad/s


def window_step_for(dataset_kind: str) -> int:
    return WINDOW_STEP.get(dataset_kind.lower(), 10)


@dataclass
class Window:
    """One training/evaluation slice.

    ``imu`` is ``(m, 6)`` with gyro xyz then accel xyz, rotated into the
    navigation frame by ``anchor_orientation``; ``gt_vel`` and ``gt_pos`` are
    ``(m, 2)`` horizontal velocity and position.
    """

    imu: NDArray[np.float64]
    gt_vel: NDArray[np.float64]
    gt_pos: NDArray[np.float64]
    dt: float
    origin_index: int
    anchor_orientation: NDArray[np.float64]

    def __len__(self):
        return self.imu.shape[0]


def rotate_to_nav_frame(gyro_body, accel_body, q0) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Rotate body-frame gyro and accel rows with the single anchor ``q0``."""
    return rotate_vec(q0, gyro_body), rotate_vec(q0, accel_body)


def window_ground_truth(seq: ImuSequence, start: int, m: int, dt: float | None = None):
    """Horizontal ground truth for ``seq[start:start + m]``.

    Velocities are forward differences ``(p[t+1] - p[t]) / dt`` with the last
    row repeated, so forward-Euler integration of ``gt_vel`` from ``gt_pos[0]``
    reproduces ``gt_pos``.
    """
    if start < 0 or m < 1 or start + m > len(seq):
        raise DataError(f"window [{start}, {start + m}) outside sequence of length {len(seq)}")
    dt = seq.dt if dt is None else dt
    pos = seq.gt_positions[start : start + m, :2].copy()
    vel = np.empty_like(pos)
    if m > 1:
        vel[:-1] = np.diff(pos, axis=0) / dt
        vel[-1] = vel[-2]
    else:
        vel[:] = 0.0
    return vel, pos


def extract_window(seq: ImuSequence, start: int, window_len: int, orientations=None) -> Window:
    if orientations is None:
        orientations = seq.orientations
    end = start + window_len
    if start < 0 or end > len(seq):
        raise DataError(f"window [{start}, {end}) outside sequence of length {len(seq)}")
    q0 = orientations[start]
    gyro, accel = rotate_to_nav_frame(seq.gyro[start:end], seq.accel[start:end], q0)
    vel, pos = window_ground_truth(seq, start, window_len)
    return Window(np.hstack([gyro, accel]), vel, pos, seq.dt, start, q0.copy())


def window_starts(length: int, window_len: int, step: int, random_shift_max: int = 0, rng=None) -> NDArray[np.int64]:
    if window_len > length:
        raise DataError(f"window length {window_len} exceeds sequence length {length}")
    if step < 1:
        raise ConfigError("window step must be >= 1")
    if random_shift_max < 0 or (random_shift_max and random_shift_max >= step):
        raise ConfigError("random_shift_max must satisfy 0 <= shift < step")
    count = (length - window_len) // step + 1
    starts = np.arange(count) * step
    if random_shift_max:
        rng = np.random.default_rng(rng)
        starts = starts + rng.integers(0, random_shift_max + 1, size=count)
        starts = np.minimum(starts, length - window_len)
    return starts


def make_windows(
    seq: ImuSequence,
    window_len: int = WINDOW_LEN,
    step: int = 10,
    random_shift_max: int = 0,
    rng=None,
    source: OrientationSource = OrientationSource.GROUND_TRUTH,
) -> list[Window]:
    """Slide a window over ``seq`` and rotate each slice to the navigation frame.

    Window ``i`` starts at ``i * step + shift_i`` with ``shift_i`` drawn
    uniformly from ``[0, random_shift_max]`` and clipped so that the window
    fits. Without shift there are ``(L - window_len) // step + 1`` windows.
    """
    starts = window_starts(len(seq), window_len, step, random_shift_max, rng)
    q = orientations_for(seq, source)
    return [extract_window(seq, int(s), window_len, q) for s in starts]


def _rot2(theta: float) -> NDArray[np.float64]:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def augment_yaw(w: Window, theta: float) -> Window:
    """Rotate every vector quantity of ``w`` by ``theta`` about +Z."""
    q = yaw_rotation(theta)
    imu = np.hstack([rotate_vec(q, w.imu[:, :3]), rotate_vec(q, w.imu[:, 3:])])
    r = _rot2(theta)
    return replace(
        w,
        imu=imu,
        gt_vel=w.gt_vel @ r.T,
        gt_pos=w.gt_pos @ r.T,
        anchor_orientation=quat_mul(q, w.anchor_orientation),
    )


def draw_bias(rng: np.random.Generator) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """One (gyro, accel) bias pair drawn uniformly per axis."""
    gyro = rng.uniform(-GYRO_BIAS_RANGE, GYRO_BIAS_RANGE, size=3)
    accel = rng.uniform(-ACCEL_BIAS_RANGE, ACCEL_BIAS_RANGE, size=3)
    return gyro, accel


def perturb_bias(w: Window, rng: np.random.Generator, frame: str = "nav") -> Window:
    """Add one constant random gyro/accel bias to every row of ``w``.

    With ``frame="body"`` the bias is treated as a body-frame offset applied
    before rotation, i.e. rotated by the window's anchor orientation first.
    """
    gyro, accel = draw_bias(rng)
    if frame == "body":
        gyro = rotate_vec(w.anchor_orientation, gyro)
        accel = rotate_vec(w.anchor_orientation, accel)
    elif frame != "nav":
        raise ConfigError(f"unknown bias frame '{frame}'")
    return replace(w, imu=w.imu + np.concatenate([gyro, accel]))


def stack_windows(windows: list[Window]):
    """Batch arrays ``(B, m, 6)``, ``(B, m, 2)``, ``(B, m, 2)``."""
    imu = np.stack([w.imu for w in windows])
    vel = np.stack([w.gt_vel for w in windows])
    pos = np.stack([w.gt_pos for w in windows])
    return imu, vel, pos
