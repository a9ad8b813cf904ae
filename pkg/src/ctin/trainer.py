"""Adam optimization, early stopping, the training loop and test-set evaluation."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore
from .dataio import ImuSequence, orientations_for, select_orientation
from .errors import ConfigError, DataError, DivergenceError
from .losses import LOSS_KINDS, MultiTaskParams, compute_loss
from .metrics import MetricReport, integrate_velocity, sequence_metrics, stitch_velocities, velocity_mse
from .model import Ctx, ModelConfig, ctin_apply, init_params, predict
from .pipeline import augment_yaw, extract_window, perturb_bias, stack_windows, window_starts


@dataclass
class TrainConfig:
    """Optimizer, schedule and data-handling settings.

    ``windows_per_epoch`` and ``val_windows`` cap how many windows are drawn
    per epoch (``None`` uses all); they exist so training fits a desk budget.
    """

    lr: float = 5e-4
    weight_decay: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 60
    patience: int = 30
    loss_kind: str = "ivl+cnl"
    rng_seed: int = 0
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    window_step: int = 10
    random_shift_max: int = 0
    augment_yaw: bool = True
    perturb_bias: bool = True
    bias_frame: str = "nav"
    grad_clip: float | None = 10.0
    windows_per_epoch: int | None = None
    val_windows: int | None = None

    def __post_init__(self):
        self.split = tuple(float(r) for r in self.split)
        self.loss_kind = self.loss_kind.lower()
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (batch normalization needs batch statistics)")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if len(self.split) != 3 or min(self.split) < 0 or abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {self.split}")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.bias_frame not in ("nav", "body"):
            raise ConfigError("bias_frame must be 'nav' or 'body'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainHistory:
    """Per-epoch losses plus timing.

    ``wall_time`` is kept apart from the reproducible record returned by
    :meth:`deterministic_dict`, which is what bit-identity checks compare.
    """

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch]

    def record(self, train_loss: float, val_loss: float, wall: float):
        self.train_loss.append(float(train_loss))
        self.val_loss.append(float(val_loss))
        self.wall_time.append(float(wall))
        if self.best_epoch < 0 or val_loss < self.val_loss[self.best_epoch]:
            self.best_epoch = len(self.val_loss) - 1

    def deterministic_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "best_epoch": self.best_epoch,
            "stop_reason": self.stop_reason,
        }

    def to_dict(self) -> dict:
        return {**self.deterministic_dict(), "wall_time": self.wall_time}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainHistory":
        return cls(list(d["train_loss"]), list(d["val_loss"]), list(d.get("wall_time", [])), d["best_epoch"], d["stop_reason"])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# optimizer and stopping rule


def clip_grad_norm(store: ParamStore, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``; returns the norm before clipping."""
    sq = sum(float(np.vdot(t.grad, t.grad)) for _, t in store.items() if t.grad is not None)
    norm = float(np.sqrt(sq))
    if norm > max_norm:
        for _, t in store.items():
            if t.grad is not None:
                t.grad *= max_norm / norm
    return norm


def adam_step(store: ParamStore, cfg: TrainConfig, step_count: int | None = None):
    """One Adam update with bias correction plus decoupled weight decay.

    Parameters without a gradient are treated as having a zero gradient.
    ``step_count`` (1-based) defaults to ``store.step + 1``.
    """
    t = store.step + 1 if step_count is None else int(step_count)
    if t < 1:
        raise ValueError("step_count is 1-based")
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for name, p in store.items():
        g = np.zeros_like(p.value) if p.grad is None else p.grad
        m = store.adam_m.setdefault(name, np.zeros_like(p.value))
        v = store.adam_v.setdefault(name, np.zeros_like(p.value))
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        decay = cfg.lr * cfg.weight_decay * p.value
        p.value -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        p.value -= decay
    store.step = t


def early_stop(history: TrainHistory, patience: int = 30) -> bool:
    """True once the best validation loss is ``patience`` epochs old."""
    if not history.val_loss:
        raise ValueError("early_stop needs at least one recorded epoch")
    return len(history.val_loss) - 1 - history.best_epoch >= patience


# ---------------------------------------------------------------------------
# data plumbing


def split_dataset(items: list, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[list, list, list]:
    """Seeded shuffle of whole sequences into disjoint train/validation/test lists."""
    n = len(items)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    if n_train + n_val > n:
        n_val = n - n_train
    pick = lambda idx: [items[i] for i in idx]  # noqa: E731
    return pick(order[:n_train]), pick(order[n_train : n_train + n_val]), pick(order[n_train + n_val :])


class WindowIndex:
    """Lazily extracted windows over several sequences.

    Orientations are resolved once per sequence using the orientation-source
    policy for ``phase``.
    """

    def __init__(self, sequences: list[ImuSequence], window_len: int, step: int, phase: str):
        self.sequences = sequences
        self.window_len = window_len
        self.step = step
        self.orient = [orientations_for(s, select_orientation(s.dataset_kind, phase)) for s in sequences]
        self.entries = self._entries(0, None)

    def _entries(self, shift: int, rng):
        out = []
        for i, s in enumerate(self.sequences):
            if len(s) < self.window_len:
                continue
            out.extend((i, int(st)) for st in window_starts(len(s), self.window_len, self.step, shift, rng))
        return out

    def reshuffled(self, shift: int, rng) -> list[tuple[int, int]]:
        return self._entries(shift, rng) if shift else self.entries

    def get(self, entry):
        i, start = entry
        return extract_window(self.sequences[i], start, self.window_len, self.orient[i])

    def __len__(self):
        return len(self.entries)


def _batch_loss(store, cfg: ModelConfig, tcfg: TrainConfig, windows, ctx, mt):
    imu, vel, pos = stack_windows(windows)
    pred_v, pred_c = ctin_apply(store, imu, cfg, ctx)
    if not (np.all(np.isfinite(pred_v.value)) and np.all(np.isfinite(pred_c.value))):
        raise DivergenceError("model produced non-finite predictions")
    return compute_loss(tcfg.loss_kind, pred_v, pred_c, vel, pos, windows[0].dt, mt)


def validation_loss(store, cfg: ModelConfig, tcfg: TrainConfig, index: WindowIndex, entries, mt, observer=None) -> float:
    """Mean loss over ``entries`` in evaluation mode, without augmentation."""
    total, count = 0.0, 0
    ctx = Ctx(train=False)
    with ad.no_grad():
        for i in range(0, len(entries), tcfg.batch_size):
            windows = [index.get(e) for e in entries[i : i + tcfg.batch_size]]
            if observer is not None:
                observer("validate", windows, ctx)
            loss = _batch_loss(store, cfg, tcfg, windows, ctx, mt)
            total += float(loss.value) * len(windows)
            count += len(windows)
    return total / count


# ---------------------------------------------------------------------------
# training loop


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_sequences: list[ImuSequence],
    val_sequences: list[ImuSequence],
    observer: Callable | None = None,
    log: Callable[[str], None] | None = None,
) -> tuple[ParamStore, TrainHistory]:
    """Fit CTIN parameters and return the best-validation weights with the history.

    Each epoch shuffles the training windows, optionally rotates every window
    by a uniform random yaw and adds a random constant bias, then runs
    forward, loss, backward, gradient clipping and an Adam step per batch.
    ``observer(phase, windows, ctx)`` sees every batch before the forward pass.

    Raises
    ------
    DataError
        A split yields no windows.
    DivergenceError
        A training loss is not finite.
    """
    tcfg = train_cfg
    rng = np.random.default_rng(tcfg.rng_seed)
    store = init_params(model_cfg, seed=tcfg.rng_seed)
    mt = MultiTaskParams.attach(store) if tcfg.loss_kind == "ivl+cnl" else None
    m = model_cfg.window_len
    tr_index = WindowIndex(train_sequences, m, tcfg.window_step, "train")
    va_index = WindowIndex(val_sequences, m, tcfg.window_step, "validate")
    if len(tr_index) < 2:
        raise DataError(f"training split yields {len(tr_index)} windows; need at least 2")
    if len(va_index) == 0:
        raise DataError("validation split yields no windows")
    val_entries = va_index.entries
    if tcfg.val_windows is not None and tcfg.val_windows < len(val_entries):
        pick = np.sort(rng.choice(len(val_entries), tcfg.val_windows, replace=False))
        val_entries = [val_entries[i] for i in pick]

    history = TrainHistory()
    best = store.snapshot()
    for epoch in range(tcfg.max_epochs):
        t0 = time.perf_counter()
        entries = tr_index.reshuffled(tcfg.random_shift_max, rng)
        order = rng.permutation(len(entries))
        if tcfg.windows_per_epoch is not None:
            order = order[: tcfg.windows_per_epoch]
        ctx = Ctx(train=True, rng=rng)
        total, count = 0.0, 0
        for i in range(0, len(order), tcfg.batch_size):
            chunk = order[i : i + tcfg.batch_size]
            if len(chunk) < 2:
                continue
            windows = []
            for j in chunk:
                w = tr_index.get(entries[j])
                if tcfg.augment_yaw:
                    w = augment_yaw(w, rng.uniform(0.0, 2.0 * np.pi))
                if tcfg.perturb_bias:
                    w = perturb_bias(w, rng, tcfg.bias_frame)
                windows.append(w)
            if observer is not None:
                observer("train", windows, ctx)
            store.zero_grad()
            loss = _batch_loss(store, model_cfg, tcfg, windows, ctx, mt)
            value = float(loss.value)
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite training loss {value} at epoch {epoch}, batch {i // tcfg.batch_size}")
            ad.backward(loss)
            if tcfg.grad_clip is not None:
                clip_grad_norm(store, tcfg.grad_clip)
            adam_step(store, tcfg)
            total += value * len(windows)
            count += len(windows)
        train_loss = total / max(count, 1)
        val = validation_loss(store, model_cfg, tcfg, va_index, val_entries, mt, observer)
        if not np.isfinite(val):
            raise DivergenceError(f"non-finite validation loss {val} at epoch {epoch}")
        history.record(train_loss, val, time.perf_counter() - t0)
        if history.best_epoch == epoch:
            best = store.snapshot()
        if log is not None:
            log(f"epoch {epoch:3d}  train {train_loss:.6f}  val {val:.6f}  best {history.best_epoch}")
        if early_stop(history, tcfg.patience):
            history.stop_reason = f"early stop: no improvement for {tcfg.patience} epochs"
            break
    else:
        history.stop_reason = "max_epochs reached"
    store.restore(best)
    return store, history


def run_with_curve(
    store: ParamStore,
    val_curve: Callable[[int, ParamStore], float],
    max_epochs: int,
    patience: int = 30,
    perturb: Callable[[int, ParamStore], None] | None = None,
) -> TrainHistory:
    """Drive the early-stopping and best-weight bookkeeping with a scripted validation curve.

    ``perturb(epoch, store)`` stands in for one epoch of optimization and
    ``val_curve(epoch, store)`` for the validation pass. This is the same
    control flow as :func:`train` without the model, so the stopping rule can
    be tested exactly.
    """
    history = TrainHistory()
    best = store.snapshot()
    for epoch in range(max_epochs):
        if perturb is not None:
            perturb(epoch, store)
        history.record(0.0, val_curve(epoch, store), 0.0)
        if history.best_epoch == epoch:
            best = store.snapshot()
        if early_stop(history, patience):
            history.stop_reason = f"early stop: no improvement for {patience} epochs"
            break
    else:
        history.stop_reason = "max_epochs reached"
    store.restore(best)
    return history


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalConfig:
    """Settings for test-set evaluation: window stride and metric parameters."""

    window_step: int = 10
    t_i: float = 60.0
    d: float = 1.0
    squared: bool = True
    batch_size: int = 32

    @classmethod
    def from_dict(cls, d: dict) -> "EvalConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown eval config fields: {sorted(unknown)}")
        return cls(**d)


def covering_starts(length: int, window_len: int, step: int) -> np.ndarray:
    """Regular starts plus a final one flush with the end, so every sample is covered."""
    starts = window_starts(length, window_len, step)
    if starts[-1] + window_len < length:
        starts = np.append(starts, length - window_len)
    return starts


def evaluate(
    store: ParamStore | None,
    model_cfg: ModelConfig,
    sequences: list[tuple[str, ImuSequence]],
    eval_cfg: EvalConfig | None = None,
    predictor: Callable | None = None,
    method: str = "ctin",
) -> MetricReport:
    """Windowed eval-mode prediction, stitching and the metric suite per test sequence.

    ``predictor(imu_batch) -> (N, m, 2)`` replaces the model when given, which
    is how oracle and zero predictors are scored.
    """
    ecfg = eval_cfg or EvalConfig()
    m = model_cfg.window_len
    report = MetricReport(method=method, config=asdict(ecfg))
    for name, seq in sequences:
        orient = orientations_for(seq, select_orientation(seq.dataset_kind, "test"))
        starts = covering_starts(len(seq), m, ecfg.window_step)
        windows = [extract_window(seq, int(s), m, orient) for s in starts]
        imu = np.stack([w.imu for w in windows])
        if predictor is not None:
            vel = np.asarray(predictor(imu), dtype=np.float64)
        else:
            vel, _ = predict(store, imu, model_cfg, ecfg.batch_size)
        full_vel = stitch_velocities(vel, starts, len(seq))
        gt = seq.gt_positions[:, :2]
        gt_vel = np.empty_like(gt)
        gt_vel[:-1] = np.diff(gt, axis=0) / seq.dt
        gt_vel[-1] = gt_vel[-2]
        pred = integrate_velocity(full_vel, gt[0], seq.dt)
        report.sequences.append(
            sequence_metrics(
                name, gt, pred.xy, seq.sample_rate_hz, ecfg.t_i, ecfg.d, ecfg.squared, velocity_mse(gt_vel, full_vel)
            )
        )
    return report
