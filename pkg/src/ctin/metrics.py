"""Trajectory reconstruction and the trajectory-error metric suite.

Errors are reported as true RMSE, ``sqrt(mean ||E||^2)``. Every metric takes
``squared=False`` to switch to ``sqrt(mean ||E||)`` for sensitivity checks.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .baselines import Trajectory
from .errors import DataError

T_RTE_SECONDS = 60.0
D_RTE_METERS = 1.0


class MetricError(DataError):
    """A metric precondition failed (too short, zero length, mismatched sizes)."""


def _xy(traj) -> NDArray[np.float64]:
    arr = traj.xy if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise MetricError(f"expected an (n, 2) or (n, 3) trajectory, got shape {arr.shape}")
    return arr[:, :2]


def _pair(gt, pred):
    g, p = _xy(gt), _xy(pred)
    if len(g) != len(p):
        raise MetricError(f"trajectory lengths differ: {len(g)} vs {len(p)}")
    if len(g) == 0:
        raise MetricError("empty trajectory")
    return g, p


def _rmse(err: NDArray[np.float64], squared: bool) -> float:
    sq = np.einsum("ij,ij->i", err, err)
    return float(np.sqrt(sq.mean() if squared else np.sqrt(sq).mean()))


def integrate_velocity(vel, p0, dt: float) -> Trajectory:
    """Forward-Euler positions ``p_t = p_{t-1} + v_{t-1} dt`` starting at ``p0``."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    vel = np.asarray(vel, dtype=np.float64)
    pos = np.empty_like(vel)
    pos[0] = p0
    np.cumsum(vel[:-1] * dt, axis=0, out=pos[1:])
    pos[1:] += np.asarray(p0, dtype=np.float64)
    return Trajectory(np.arange(len(vel)) * dt, pos)


def stitch_velocities(window_vels, origins, length: int) -> NDArray[np.float64]:
    """Per-timestamp mean of all window predictions covering it."""
    acc = np.zeros((length, 2))
    count = np.zeros(length)
    for v, o in zip(window_vels, origins):
        v = np.asarray(v)
        if o < 0 or o + len(v) > length:
            raise MetricError(f"window at {o} of length {len(v)} falls outside sequence of length {length}")
        acc[o : o + len(v)] += v
        count[o : o + len(v)] += 1
    gaps = np.flatnonzero(count == 0)
    if gaps.size:
        raise MetricError(f"windows leave {gaps.size} samples uncovered, first at index {gaps[0]}")
    return acc / count[:, None]


def stitch_windows(window_estimates, origins, length: int, p0, dt: float) -> Trajectory:
    """Average overlapping window velocities, then integrate over the whole sequence from ``p0``.

    ``window_estimates`` are ``(m, 2)`` velocity arrays (or objects with a
    ``vel`` attribute) ordered by their ``origins``.
    """
    vels = [getattr(w, "vel", w) for w in window_estimates]
    if list(origins) != sorted(origins):
        raise MetricError("windows must be ordered by origin index")
    return integrate_velocity(stitch_velocities(vels, origins, length), p0, dt)


def ate(gt, pred, squared: bool = True) -> float:
    """Absolute trajectory error: RMSE of per-timestamp position differences."""
    g, p = _pair(gt, pred)
    return _rmse(g - p, squared)


def t_rte(gt, pred, rate_hz: float, t_i: float = T_RTE_SECONDS, squared: bool = True) -> float:
    """Time-based relative error over every window of ``t_i`` seconds (stride one sample)."""
    g, p = _pair(gt, pred)
    k = int(round(t_i * rate_hz))
    if k < 1:
        raise MetricError("t_i must span at least one sample")
    if k >= len(g):
        raise MetricError(
            f"sequence of {len(g) / rate_hz:.3f} s is not longer than t_i = {t_i} s; configure a smaller t_i"
        )
    err = (g[k:] - g[:-k]) - (p[k:] - p[:-k])
    return _rmse(err, squared)


def _arc_length(g: NDArray[np.float64]) -> NDArray[np.float64]:
    steps = np.linalg.norm(np.diff(g, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def d_rte(gt, pred, d: float = D_RTE_METERS, squared: bool = True) -> float:
    """Distance-based relative error.

    For each start ``t`` the end index is the first one whose ground-truth
    arc length from ``t`` reaches ``d``; starts that never reach it are
    dropped.
    """
    g, p = _pair(gt, pred)
    s = _arc_length(g)
    if s[-1] < d:
        raise MetricError(f"ground-truth path of {s[-1]:.3f} m is shorter than d = {d} m")
    # s is nondecreasing: first index with s[j] >= s[t] + d
    ends = np.searchsorted(s, s + d, side="left")
    ok = ends < len(g)
    start = np.flatnonzero(ok)
    end = ends[ok]
    err = (g[end] - g[start]) - (p[end] - p[start])
    return _rmse(err, squared)


def pde(gt, pred) -> float:
    """Final-position drift divided by the ground-truth path length."""
    g, p = _pair(gt, pred)
    length = _arc_length(g)[-1]
    if length <= 0:
        raise MetricError("ground-truth path has zero length")
    return float(np.linalg.norm(g[-1] - p[-1]) / length)


def velocity_mse(gt_vel, pred_vel) -> float:
    gt_vel, pred_vel = np.asarray(gt_vel), np.asarray(pred_vel)
    if gt_vel.shape != pred_vel.shape:
        raise MetricError(f"velocity shapes differ: {gt_vel.shape} vs {pred_vel.shape}")
    return float(np.mean((gt_vel - pred_vel) ** 2))


def cdf_points(values, n_points: int = 100) -> list[tuple[float, float]]:
    """Empirical CDF ``(value, fraction <= value)`` sampled at up to ``n_points`` ranks."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("cdf_points needs at least one value")
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    n = v.size
    k = min(n_points, n)
    # ranks at the quantiles i/k, so the last point is always the maximum
    ranks = np.unique(np.ceil(np.arange(1, k + 1) * n / k).astype(int))
    return [(float(v[r - 1]), float(np.searchsorted(v, v[r - 1], side="right") / n)) for r in ranks]


# ---------------------------------------------------------------------------
# reports

METRIC_NAMES = ("ate", "t_rte", "d_rte", "pde", "vel_mse")


@dataclass
class SequenceMetrics:
    name: str
    ate: float
    t_rte: float | None
    d_rte: float | None
    pde: float | None
    vel_mse: float | None = None


@dataclass
class MetricReport:
    """Per-sequence metrics and their means (``None`` entries are skipped)."""

    method: str
    dataset: str = "synthetic"
    sequences: list[SequenceMetrics] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def values(self, metric: str) -> list[float]:
        return [getattr(s, metric) for s in self.sequences if getattr(s, metric) is not None]

    @property
    def aggregate(self) -> dict[str, float | None]:
        out = {}
        for m in METRIC_NAMES:
            vals = self.values(m)
            out[m] = float(np.mean(vals)) if vals else None
        return out

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "dataset": self.dataset,
            "config": self.config,
            "aggregate": self.aggregate,
            "sequences": [asdict(s) for s in self.sequences],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricReport":
        seqs = [SequenceMetrics(**s) for s in doc.get("sequences", [])]
        return cls(doc["method"], doc.get("dataset", "synthetic"), seqs, doc.get("config", {}))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "MetricReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def write_cdfs(self, directory, n_points: int = 100) -> list[Path]:
        """One ``<method>_<metric>_cdf.csv`` with header ``value,cum_fraction`` per available metric."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for m in METRIC_NAMES:
            vals = self.values(m)
            if not vals:
                continue
            path = directory / f"{self.method}_{m}_cdf.csv"
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["value", "cum_fraction"])
                for v, f in cdf_points(vals, n_points):
                    w.writerow([repr(v), repr(f)])
            written.append(path)
        return written


def sequence_metrics(
    name: str,
    gt,
    pred,
    rate_hz: float,
    t_i: float = T_RTE_SECONDS,
    d: float = D_RTE_METERS,
    squared: bool = True,
    vel_mse: float | None = None,
) -> SequenceMetrics:
    """All four metrics for one sequence; a metric whose precondition fails is recorded as ``None``."""

    def attempt(fn):
        try:
            return fn()
        except MetricError:
            return None

    return SequenceMetrics(
        name=name,
        ate=ate(gt, pred, squared),
        t_rte=attempt(lambda: t_rte(gt, pred, rate_hz, t_i, squared)),
        d_rte=attempt(lambda: d_rte(gt, pred, d, squared)),
        pde=attempt(lambda: pde(gt, pred)),
        vel_mse=vel_mse,
    )
