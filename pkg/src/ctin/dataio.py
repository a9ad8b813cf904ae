"""IMU sequences: canonical CSV storage, orientation-source policy and a
synthetic generator with exact ground truth.

The generator builds a horizontal path out of constant-curvature segments
(lines and circular arcs), walks along it with an optional gait surge and a
vertical bounce, and derives the IMU channels from the analytic poses. The
measured rates are the exact discrete increments between consecutive samples
(quaternion log of the relative orientation, second difference of the
positions), so strapdown integration of a noise-free sequence reproduces the
ground truth to rounding error.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError, DataError, FormatError
from .geometry import (
    IDENTITY,
    quat_conj,
    quat_exp,
    quat_log,
    quat_mul,
    quat_normalize,
    rotate_vec,
    yaw_rotation,
)

GRAVITY = 9.81

CSV_COLUMNS = ("t", "gx", "gy", "gz", "ax", "ay", "az", "qw", "qx", "qy", "qz", "px", "py", "pz")
DEVICE_COLUMNS = ("dqw", "dqx", "dqy", "dqz")

TRAJECTORY_KINDS = ("line", "circle", "figure-eight", "random-heading-walk")


class OrientationSource(enum.Enum):
    GROUND_TRUTH = "GroundTruth"
    DEVICE_ESTIMATED = "DeviceEstimated"
    IMU_INTEGRATED = "ImuIntegrated"


@dataclass
class ImuSequence:
    """Uniformly sampled IMU stream with ground-truth poses.

    ``gyro`` and ``accel`` are body-frame ``(L, 3)`` arrays (accelerometer
    includes gravity), ``orientations`` are body-to-navigation quaternions
    ``(L, 4)`` and ``gt_positions`` are navigation-frame positions ``(L, 3)``
    in a frame whose Z axis points against gravity. ``device_orientations``
    is an optional second, noisier orientation channel.
    """

    sample_rate_hz: float
    timestamps: NDArray[np.float64]
    gyro: NDArray[np.float64]
    accel: NDArray[np.float64]
    orientations: NDArray[np.float64]
    gt_positions: NDArray[np.float64]
    dataset_kind: str = "synthetic"
    subject: str = ""
    gravity: float = GRAVITY
    device_orientations: NDArray[np.float64] | None = None

    def __post_init__(self):
        if not self.sample_rate_hz > 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate_hz}")
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        n = len(self.timestamps)
        if n < 2:
            raise DataError(f"a sequence needs at least 2 samples, got {n}")
        for name, width in (("gyro", 3), ("accel", 3), ("orientations", 4), ("gt_positions", 3)):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n, width):
                raise DataError(f"{name} has shape {arr.shape}, expected {(n, width)}")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} has a non-finite value at row {int(np.argwhere(~np.isfinite(arr))[0, 0]) + 1}")
            setattr(self, name, arr)
        if not np.all(np.isfinite(self.timestamps)):
            raise DataError("timestamps contain non-finite values")
        steps = np.diff(self.timestamps)
        bad = np.flatnonzero(steps <= 0)
        if bad.size:
            raise DataError(f"timestamps not strictly increasing at row {bad[0] + 2}")
        dt = 1.0 / self.sample_rate_hz
        bad = np.flatnonzero(np.abs(steps - dt) > 1e-9)
        if bad.size:
            raise DataError(f"timestamps not uniformly spaced at {dt} s at row {bad[0] + 2}")
        self.orientations = _checked_unit(self.orientations, "orientations")
        if self.device_orientations is not None:
            arr = np.asarray(self.device_orientations, dtype=np.float64)
            if arr.shape != (n, 4):
                raise DataError(f"device_orientations has shape {arr.shape}, expected {(n, 4)}")
            self.device_orientations = _checked_unit(arr, "device_orientations")

    def __len__(self):
        return len(self.timestamps)

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate_hz

    def head(self, n: int) -> "ImuSequence":
        """First ``n`` samples as a new sequence."""
        dev = None if self.device_orientations is None else self.device_orientations[:n]
        return replace(
            self,
            timestamps=self.timestamps[:n],
            gyro=self.gyro[:n],
            accel=self.accel[:n],
            orientations=self.orientations[:n],
            gt_positions=self.gt_positions[:n],
            device_orientations=dev,
        )


def _checked_unit(q, name):
    norms = np.linalg.norm(q, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-3)
    if bad.size:
        raise DataError(f"{name} row {bad[0] + 1} is not a unit quaternion (norm {norms[bad[0]]:.6g})")
    return q / norms[:, None]


# ---------------------------------------------------------------------------
# canonical file format


def _meta_path(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def save_sequence(seq: ImuSequence, path) -> None:
    """Write ``seq`` as canonical CSV plus a ``<name>.meta.json`` sidecar."""
    path = Path(path)
    if len(seq) < 2:
        raise DataError("refusing to save a sequence with fewer than 2 samples")
    cols = [seq.timestamps[:, None], seq.gyro, seq.accel, seq.orientations, seq.gt_positions]
    header = list(CSV_COLUMNS)
    if seq.device_orientations is not None:
        cols.append(seq.device_orientations)
        header += DEVICE_COLUMNS
    data = np.hstack(cols)
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(header), comments="")
    meta = {
        "sample_rate_hz": float(seq.sample_rate_hz),
        "dataset_kind": seq.dataset_kind,
        "subject": seq.subject,
        "gravity": float(seq.gravity),
    }
    _meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_sequence(path) -> ImuSequence:
    """Read a sequence written by :func:`save_sequence`.

    Raises
    ------
    FormatError
        Header or row layout does not match the canonical columns.
    DataError
        Timestamps are not strictly increasing and uniform, or a quaternion is
        off unit norm by more than 1e-3 (smaller deviations are renormalized).
    """
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    expected = list(CSV_COLUMNS)
    has_device = len(header) == len(CSV_COLUMNS) + len(DEVICE_COLUMNS)
    if has_device:
        expected += DEVICE_COLUMNS
    for i, name in enumerate(expected):
        if i >= len(header) or header[i] != name:
            got = header[i] if i < len(header) else "<missing>"
            raise FormatError(f"{path}: column {i + 1} should be '{name}', found '{got}'")
    if len(header) != len(expected):
        raise FormatError(f"{path}: unexpected column '{header[len(expected)]}'")
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.shape[1] != len(expected):
        raise FormatError(f"{path}: rows have {data.shape[1]} fields, header has {len(expected)}")
    meta_file = _meta_path(path)
    if not meta_file.exists():
        raise FormatError(f"missing sidecar {meta_file}")
    meta = json.loads(meta_file.read_text())
    for key in ("sample_rate_hz", "dataset_kind", "subject", "gravity"):
        if key not in meta:
            raise FormatError(f"{meta_file}: missing key '{key}'")
    return ImuSequence(
        sample_rate_hz=float(meta["sample_rate_hz"]),
        timestamps=data[:, 0],
        gyro=data[:, 1:4],
        accel=data[:, 4:7],
        orientations=data[:, 7:11],
        gt_positions=data[:, 11:14],
        dataset_kind=str(meta["dataset_kind"]),
        subject=str(meta["subject"]),
        gravity=float(meta["gravity"]),
        device_orientations=data[:, 14:18] if has_device else None,
    )


def load_dataset(directory) -> list[tuple[str, ImuSequence]]:
    """Load every ``*.csv`` sequence in ``directory`` sorted by file name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"data directory {directory} does not exist")
    paths = sorted(directory.glob("*.csv"))
    if not paths:
        raise DataError(f"no *.csv sequences in {directory}")
    return [(p.stem, load_sequence(p)) for p in paths]


# ---------------------------------------------------------------------------
# orientation source policy

_KINDS = ("ridi", "oxiod", "ronin", "idol", "ctin", "synthetic")
_PHASES = ("train", "validate", "test")


def select_orientation(dataset_kind: str, phase: str, alignment_error_deg: float | None = None) -> OrientationSource:
    """Orientation source used to rotate IMU windows for a dataset and phase.

    RoNIN train/validate data use the device orientation only when its
    end-of-sequence alignment error is known and below 20 degrees; otherwise
    the ground truth is used.
    """
    kind = dataset_kind.lower()
    if kind not in _KINDS:
        raise ConfigError(f"unknown dataset kind '{dataset_kind}', expected one of {_KINDS}")
    if phase not in _PHASES:
        raise ConfigError(f"unknown phase '{phase}', expected one of {_PHASES}")
    if kind == "ridi":
        return OrientationSource.IMU_INTEGRATED
    if kind == "oxiod":
        return OrientationSource.DEVICE_ESTIMATED if phase == "test" else OrientationSource.GROUND_TRUTH
    if kind == "ronin":
        if phase == "test":
            return OrientationSource.DEVICE_ESTIMATED
        if alignment_error_deg is not None and alignment_error_deg < 20.0:
            return OrientationSource.DEVICE_ESTIMATED
        return OrientationSource.GROUND_TRUTH
    return OrientationSource.GROUND_TRUTH


def integrate_gyro(q0, gyro, dt: float) -> NDArray[np.float64]:
    """Orientation history from ``q0`` by chaining ``quat_exp(gyro[k], dt)``."""
    increments = quat_exp(np.asarray(gyro, dtype=np.float64), dt)
    out = np.empty((len(increments), 4))
    q = quat_normalize(q0)
    for k in range(len(increments)):
        out[k] = q
        q = quat_mul(q, increments[k])
    return out


def orientations_for(seq: ImuSequence, source: OrientationSource) -> NDArray[np.float64]:
    if source is OrientationSource.GROUND_TRUTH:
        return seq.orientations
    if source is OrientationSource.DEVICE_ESTIMATED:
        if seq.device_orientations is None:
            raise DataError("sequence has no device-estimated orientation channel")
        return seq.device_orientations
    return integrate_gyro(seq.orientations[0], seq.gyro, seq.dt)


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass
class SyntheticSpec:
    """Parameters of one synthetic walk.

    The gait terms are optional: ``surge_amplitude`` is the peak forward
    acceleration along the path and ``bounce_amplitude`` the peak vertical
    acceleration, both at ``step_frequency``. ``mount`` is a fixed
    device-to-heading rotation (device tilt). ``device_yaw_walk_std`` is the
    yaw random-walk density (rad/sqrt(s)) of the device-estimated orientation.
    """

    trajectory_kind: str = "line"
    duration: float = 60.0
    sample_rate_hz: float = 200.0
    speed: float = 1.0
    gyro_bias: tuple = (0.0, 0.0, 0.0)
    accel_bias: tuple = (0.0, 0.0, 0.0)
    gyro_noise_std: float = 0.0
    accel_noise_std: float = 0.0
    rng_seed: int = 0
    radius: float = 5.0
    heading: float = 0.0
    surge_amplitude: float = 0.0
    bounce_amplitude: float = 0.0
    step_frequency: float = 2.0
    mount: tuple = (1.0, 0.0, 0.0, 0.0)
    device_yaw_walk_std: float = 0.0
    gravity: float = GRAVITY
    subject: str = ""

    def __post_init__(self):
        if self.trajectory_kind not in TRAJECTORY_KINDS:
            raise ConfigError(f"unknown trajectory kind '{self.trajectory_kind}', expected one of {TRAJECTORY_KINDS}")
        if not self.duration > 0 or not self.sample_rate_hz > 0:
            raise ConfigError("duration and sample rate must be positive")
        if self.gyro_noise_std < 0 or self.accel_noise_std < 0 or self.device_yaw_walk_std < 0:
            raise ConfigError("noise standard deviations must be non-negative")
        if self.speed < 0:
            raise ConfigError("speed must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synthetic spec fields: {sorted(unknown)}")
        d = dict(d)
        for key in ("gyro_bias", "accel_bias", "mount"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class _Segment:
    s0: float
    length: float
    curvature: float
    p0: NDArray[np.float64] = field(repr=False)
    psi0: float = 0.0


def _build_path(spec: SyntheticSpec, total_length: float, rng: np.random.Generator) -> list[_Segment]:
    kind = spec.trajectory_kind
    if kind == "line":
        plan = [(np.inf, 0.0)]
    elif kind == "circle":
        plan = [(np.inf, 1.0 / spec.radius)]
    elif kind == "figure-eight":
        lap = 2.0 * np.pi * spec.radius
        n = int(np.ceil(total_length / lap)) + 1
        plan = [(lap, (1.0 if i % 2 == 0 else -1.0) / spec.radius) for i in range(n)]
    else:
        plan = []
        covered = 0.0
        while covered <= total_length:
            length = rng.uniform(3.0, 10.0)
            kappa = 0.0 if rng.random() < 0.4 else rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 0.5)
            plan.append((length, kappa))
            covered += length
        plan[-1] = (np.inf, plan[-1][1])

    segments = []
    s0, p0, psi0 = 0.0, np.zeros(2), spec.heading
    for length, kappa in plan:
        seg = _Segment(s0, length, kappa, p0, psi0)
        segments.append(seg)
        if np.isfinite(length):
            p0, psi0 = _segment_pose(seg, np.array([length]))
            p0, psi0 = p0[0], float(psi0[0])
            s0 += length
    return segments


def _segment_pose(seg: _Segment, sigma):
    psi = seg.psi0 + seg.curvature * sigma
    if seg.curvature == 0.0:
        xy = seg.p0 + sigma[:, None] * np.array([np.cos(seg.psi0), np.sin(seg.psi0)])
    else:
        k = seg.curvature
        xy = seg.p0 + np.stack(
            [(np.sin(psi) - np.sin(seg.psi0)) / k, (np.cos(seg.psi0) - np.cos(psi)) / k], axis=1
        )
    return xy, psi


def _path_pose(segments: list[_Segment], s):
    xy = np.empty((len(s), 2))
    psi = np.empty(len(s))
    starts = np.array([seg.s0 for seg in segments])
    idx = np.searchsorted(starts, s, side="right") - 1
    for i, seg in enumerate(segments):
        sel = idx == i
        if np.any(sel):
            xy[sel], psi[sel] = _segment_pose(seg, s[sel] - seg.s0)
    return xy, psi


def gen_synthetic(spec: SyntheticSpec) -> ImuSequence:
    """Simulate one IMU sequence following ``spec``.

    Measured channels follow ``measured = true + bias + N(0, std^2)``. Two
    calls with the same spec return bit-identical sequences.
    """
    rng = np.random.default_rng(spec.rng_seed)
    rate = float(spec.sample_rate_hz)
    dt = 1.0 / rate
    n = int(round(spec.duration * rate))
    if n < 2:
        raise ConfigError("duration too short for two samples")
    # two extra samples so the last rows still have forward differences
    t_ext = np.arange(n + 2) / rate
    w = 2.0 * np.pi * spec.step_frequency
    s = spec.speed * t_ext
    z = np.zeros_like(t_ext)
    if spec.surge_amplitude:
        s = s - spec.surge_amplitude / w**2 * np.sin(w * t_ext)
    if spec.bounce_amplitude:
        z = -spec.bounce_amplitude / w**2 * np.sin(w * t_ext)

    segments = _build_path(spec, float(np.max(s)) + 1.0, rng)
    xy, psi = _path_pose(segments, s)
    pos = np.column_stack([xy, z])
    q = quat_mul(yaw_rotation(psi), quat_normalize(spec.mount))

    rel = quat_mul(quat_conj(q[:-1]), q[1:])
    gyro_true = quat_log(rel)[:n] / dt
    acc_nav = (pos[2:] - 2.0 * pos[1:-1] + pos[:-2]) / dt**2
    specific = acc_nav + np.array([0.0, 0.0, spec.gravity])
    accel_true = rotate_vec(quat_conj(q[:n]), specific)

    gyro_noise = rng.standard_normal((n, 3)) * spec.gyro_noise_std
    accel_noise = rng.standard_normal((n, 3)) * spec.accel_noise_std
    yaw_err = np.cumsum(rng.standard_normal(n)) * spec.device_yaw_walk_std * np.sqrt(dt)
    yaw_err -= yaw_err[0]

    return ImuSequence(
        sample_rate_hz=rate,
        timestamps=t_ext[:n],
        gyro=gyro_true + np.asarray(spec.gyro_bias, dtype=np.float64) + gyro_noise,
        accel=accel_true + np.asarray(spec.accel_bias, dtype=np.float64) + accel_noise,
        orientations=q[:n],
        gt_positions=pos[:n],
        dataset_kind="synthetic",
        subject=spec.subject,
        gravity=spec.gravity,
        device_orientations=quat_mul(yaw_rotation(yaw_err), q[:n]),
    )


def corpus_specs(
    n_sequences: int,
    duration: float = 60.0,
    seed: int = 0,
    sample_rate_hz: float = 200.0,
    kinds: tuple[str, ...] = ("circle", "line", "random-heading-walk"),
) -> list[SyntheticSpec]:
    """Seeded specs for a mixed corpus of walks with realistic bias and noise.

    Kinds cycle through ``kinds``. Gait amplitudes and cadence grow with the
    walking speed, as they do for people, which is what makes speed
    observable from a short IMU window.
    """
    if n_sequences < 1:
        raise ConfigError("n_sequences must be positive")
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(n_sequences):
        speed = rng.uniform(0.6, 1.5)
        jitter = rng.uniform(0.9, 1.1, size=3)
        tilt = rng.normal(0.0, 0.05, size=3)
        specs.append(
            SyntheticSpec(
                trajectory_kind=kinds[i % len(kinds)],
                duration=duration,
                sample_rate_hz=sample_rate_hz,
                speed=float(speed),
                gyro_bias=tuple(rng.uniform(-0.005, 0.005, size=3)),
                accel_bias=tuple(rng.uniform(-0.05, 0.05, size=3)),
                gyro_noise_std=0.005,
                accel_noise_std=0.05,
                rng_seed=int(rng.integers(2**31)),
                radius=float(rng.uniform(3.0, 8.0)),
                heading=float(rng.uniform(0.0, 2.0 * np.pi)),
                surge_amplitude=float(1.5 * speed * jitter[0]),
                bounce_amplitude=float(2.0 * speed * jitter[1]),
                step_frequency=float((1.4 + 0.6 * speed) * jitter[2]),
                mount=tuple(quat_exp(tilt, 1.0)),
                device_yaw_walk_std=0.01,
                subject=f"s{i:03d}",
            )
        )
    return specs


def true_imu(spec: SyntheticSpec) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Noise- and bias-free gyro and accel channels for ``spec``."""
    clean = replace(
        spec, gyro_bias=(0.0, 0.0, 0.0), accel_bias=(0.0, 0.0, 0.0), gyro_noise_std=0.0, accel_noise_std=0.0
    )
    seq = gen_synthetic(clean)
    return seq.gyro, seq.accel


def stationary_sequence(n: int, rate: float = 200.0, q=IDENTITY, gravity: float = GRAVITY) -> ImuSequence:
    """A device at rest: zero rates, accelerometer reading gravity only."""
    q = quat_normalize(q)
    return ImuSequence(
        sample_rate_hz=rate,
        timestamps=np.arange(n) / rate,
        gyro=np.zeros((n, 3)),
        accel=np.tile(rotate_vec(quat_conj(q), [0.0, 0.0, gravity]), (n, 1)),
        orientations=np.tile(q, (n, 1)),
        gt_positions=np.zeros((n, 3)),
        gravity=gravity,
    )
