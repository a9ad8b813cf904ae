"""Finite-difference oracle suite over every differentiable operation.

Each case builds a scalar loss ``sum(w * op(inputs))`` with a fixed random
weighting ``w`` for one seeded shape. :func:`run_suite` runs every case for
several seeds and reports the worst relative error per operation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from . import tensor as T
from .gradcheck import GradCheckResult, grad_check

Case = Callable[[np.random.Generator], tuple[Callable, list]]


def _weighted(rng, fn):
    """Wrap ``fn`` so it returns ``sum(w * fn(...))`` with ``w`` fixed on first use."""
    cache = {}

    def f(*xs):
        y = fn(*xs)
        if "w" not in cache:
            cache["w"] = rng.standard_normal(y.shape)
        return T.sum(T.mul(y, cache["w"]))

    return f


def _t(rng, *shape, positive=False, away_from_zero=False):
    v = rng.standard_normal(shape)
    if positive:
        v = np.abs(v) + 0.5
    if away_from_zero:
        v = np.sign(v) * (np.abs(v) + 0.1)
    return T.Tensor(v)


def _dims(rng, lo=2, hi=5, n=3):
    return [int(x) for x in rng.integers(lo, hi + 1, size=n)]


def _binary(op, positive_b=False):
    def case(rng):
        b, m, c = _dims(rng)
        broadcast = rng.random() < 0.5
        bshape = (c,) if broadcast else (b, m, c)
        return _weighted(rng, op), [_t(rng, b, m, c), _t(rng, *bshape, positive=positive_b)]

    return case


def _unary(op, positive=False, away_from_zero=False):
    def case(rng):
        return _weighted(rng, op), [_t(rng, *_dims(rng), positive=positive, away_from_zero=away_from_zero)]

    return case


def _matmul(rng):
    b, m, k, n = _dims(rng, n=4)
    shared = rng.random() < 0.5
    return _weighted(rng, T.matmul), [_t(rng, b, m, k), _t(rng, k, n) if shared else _t(rng, b, k, n)]


def _softmax(rng):
    b, m, _ = _dims(rng)
    mask = np.tril(np.ones((m, m), dtype=bool)) if rng.random() < 0.5 else None
    return _weighted(rng, lambda x: T.softmax(x, axis=-1, mask=mask)), [_t(rng, b, m, m)]


def _concat(rng):
    b, m, c = _dims(rng)
    return _weighted(rng, lambda x, y: T.concat([x, y], axis=-1)), [_t(rng, b, m, c), _t(rng, b, m, c + 1)]


def _index(rng):
    b, m, c = _dims(rng)
    lo = int(rng.integers(0, c))
    return _weighted(rng, lambda x: x[..., lo : lo + 1]), [_t(rng, b, m, c)]


def _slice_time(rng):
    b, m, c = _dims(rng, lo=3)
    return _weighted(rng, lambda x: T.slice_time(x, 1, m - 1)), [_t(rng, b, m, c)]


def _reshape(rng):
    b, m, c = _dims(rng)
    return _weighted(rng, lambda x: T.reshape(x, (b, m * c))), [_t(rng, b, m, c)]


def _transpose(rng):
    b, m, c = _dims(rng)
    return _weighted(rng, lambda x: T.transpose(x, (0, 2, 1))), [_t(rng, b, m, c)]


def _heads(rng):
    b, m, _ = _dims(rng)
    h = int(rng.integers(1, 4))
    dk = int(rng.integers(1, 4))
    return _weighted(rng, lambda x: T.merge_heads(T.mul(T.split_heads(x, h), 1.5), h)), [_t(rng, b, m, h * dk)]


def _reduce(op):
    def case(rng):
        axis = [None, 0, 1, -1][int(rng.integers(0, 4))]
        return _weighted(rng, lambda x: op(x, axis=axis, keepdims=True)), [_t(rng, *_dims(rng))]

    return case


def _cumsum(rng):
    axis = int(rng.integers(0, 3))
    return _weighted(rng, lambda x: T.cumsum(x, axis=axis)), [_t(rng, *_dims(rng))]


def _conv1d(rng):
    b, m, _ = _dims(rng)
    groups = int(rng.integers(1, 3))
    cin, cout = groups * int(rng.integers(1, 3)), groups * int(rng.integers(1, 3))
    k = int(rng.choice([1, 3, 5]))
    f = _weighted(rng, lambda x, w, bias: T.conv1d(x, w, bias, groups=groups))
    return f, [_t(rng, b, m, cin), _t(rng, k, cin // groups, cout), _t(rng, cout)]


def _linear(rng):
    b, m, c = _dims(rng)
    n = int(rng.integers(1, 5))
    return _weighted(rng, T.linear), [_t(rng, b, m, c), _t(rng, c, n), _t(rng, n)]


def _attention(rng):
    n, m, dk = _dims(rng)
    mask = np.tril(np.ones((m, m), dtype=bool)) if rng.random() < 0.5 else None
    f = _weighted(rng, lambda q, k, v: T.attention(q, k, v, mask=mask))
    return f, [_t(rng, n, m, dk), _t(rng, n, m, dk), _t(rng, n, m, dk + 1)]


def _pair_attention(rng):
    n, m, d = _dims(rng)
    a, b = _t(rng, n, m, 1), _t(rng, n, 1, m)
    # with every pair of a row active, a_i only shifts the row and its gradient
    # is exactly zero; one inactive key per row keeps the query path live
    b.value[:, :, 0] = -np.abs(a.value).max() - 1.0
    return _weighted(rng, T.pair_attention), [a, b, _t(rng, n, m, d)]


def _layer_norm(rng):
    b, m, c = _dims(rng)
    return _weighted(rng, nn.layer_norm), [_t(rng, b, m, c), _t(rng, c), _t(rng, c)]


def _batch_norm(rng):
    b, m, c = _dims(rng)
    train = rng.random() < 0.5
    rm, rv = rng.standard_normal(c), np.abs(rng.standard_normal(c)) + 0.5

    def op(x, g, bias):
        # probes must not see running statistics drift, so use copies
        return nn.batch_norm(x, g, bias, rm.copy(), rv.copy(), train=train)

    return _weighted(rng, op), [_t(rng, b, m, c), _t(rng, c), _t(rng, c)]


def _dropout(rng):
    seed = int(rng.integers(2**31))
    return _weighted(rng, lambda x: nn.dropout(x, 0.3, True, np.random.default_rng(seed))), [_t(rng, *_dims(rng))]


def _lstm(rng):
    b, m, hid = _dims(rng)
    reverse = rng.random() < 0.5
    f = _weighted(rng, lambda xp, w: nn.lstm(xp, w, reverse=reverse))
    return f, [_t(rng, b, m, 4 * hid), T.Tensor(0.5 * rng.standard_normal((hid, 4 * hid)))]


def _bilstm(rng):
    b, m, c = _dims(rng)
    hid = int(rng.integers(1, 4))
    names = ["w_ih_f", "w_hh_f", "b_f", "w_ih_b", "w_hh_b", "b_b"]
    shapes = [(c, 4 * hid), (hid, 4 * hid), (4 * hid,)] * 2
    params = [T.Tensor(0.5 * rng.standard_normal(s)) for s in shapes]
    f = _weighted(rng, lambda x, *ps: nn.bilstm_layer(x, dict(zip(names, ps))))
    return f, [_t(rng, b, m, c), *params]


def _ctin_loss(rng):
    # imported lazily: the model and losses sit above the autodiff layer
    from ..losses import MultiTaskParams, compute_loss
    from ..model import Ctx, ModelConfig, ctin_apply, init_params

    cfg = ModelConfig(window_len=6, model_dim=8, heads=2, decoder_layers=2, ffn_dim=8)
    store = init_params(cfg, seed=int(rng.integers(2**31)))
    # move zero-initialized layers off zero so every path carries gradient
    for _, p in store.items():
        p.value += 0.3 * rng.standard_normal(p.shape)
    # local attention inputs are non-negative, so push some pairs below the relu kink
    store["encoder.block0.local.gamma_b"].value -= 1.0
    imu = rng.standard_normal((3, cfg.window_len, 6))
    gt_vel = rng.standard_normal((3, cfg.window_len, 2))
    gt_pos = np.cumsum(gt_vel, axis=1) * 0.1
    mt = MultiTaskParams.attach(store)
    seed = int(rng.integers(2**31))

    def f(*_):
        # grad_check perturbs the store's own tensors in place
        vel, cov = ctin_apply(store, imu, cfg, Ctx(train=True, rng=np.random.default_rng(seed)))
        return compute_loss("ivl+cnl", vel, cov, gt_vel, gt_pos, 0.1, mt)

    return f, [t for _, t in store.items()]


#: operation name -> seeded case builder
CASES: dict[str, Case] = {
    "add": _binary(T.add),
    "sub": _binary(T.sub),
    "mul": _binary(T.mul),
    "div": _binary(T.div, positive_b=True),
    "scale": _unary(lambda x: T.scale(x, -1.7)),
    "neg": _unary(lambda x: -x),
    "matmul": _matmul,
    "relu": _unary(T.relu, away_from_zero=True),
    "clip": _unary(lambda x: T.clip(x, -0.5, 0.5)),
    "sigmoid": _unary(T.sigmoid),
    "tanh": _unary(T.tanh),
    "softplus": _unary(T.softplus),
    "exp": _unary(T.exp),
    "log": _unary(T.log, positive=True),
    "softmax": _softmax,
    "concat": _concat,
    "index": _index,
    "slice_time": _slice_time,
    "reshape": _reshape,
    "transpose": _transpose,
    "split_merge_heads": _heads,
    "sum": _reduce(T.sum),
    "mean": _reduce(T.mean),
    "cumsum": _cumsum,
    "conv1d": _conv1d,
    "linear": _linear,
    "attention": _attention,
    "pair_attention": _pair_attention,
    "layer_norm": _layer_norm,
    "batch_norm": _batch_norm,
    "dropout": _dropout,
    "lstm": _lstm,
    "bilstm": _bilstm,
    "ctin_loss": _ctin_loss,
}


@dataclass
class SuiteResult:
    op: str
    max_rel_error: float
    checked: int
    excluded: int

    @property
    def ok(self) -> bool:
        return self.max_rel_error < 1e-4 and self.checked > 0


#: per-case overrides of (step, coordinates probed per input)
SETTINGS: dict[str, tuple[float | None, int | None]] = {
    # a strongly curved composite: a smaller step keeps truncation error down
    "ctin_loss": (1e-5, 3),
}


def run_case(op: str, seed: int, max_coords: int | None = 40) -> GradCheckResult:
    rng = np.random.default_rng([seed, sum(map(ord, op))])
    f, inputs = CASES[op](rng)
    h, coords = SETTINGS.get(op, (None, max_coords))
    return grad_check(f, inputs, h=h, max_coords=coords, seed=seed)


def run_suite(n_seeds: int = 10, ops=None, max_coords: int | None = 40) -> list[SuiteResult]:
    """Worst relative error per operation over ``n_seeds`` seeded shapes."""
    out = []
    for op in ops or CASES:
        results = [run_case(op, s, max_coords) for s in range(n_seeds)]
        out.append(
            SuiteResult(
                op,
                max(r.max_rel_error for r in results),
                sum(r.checked for r in results),
                sum(len(r.excluded) for r in results),
            )
        )
    return out
