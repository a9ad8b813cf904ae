"""Fused layers with hand-written backward rules: normalization, dropout and LSTM."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, _accum, _make, _sigmoid, add, as_tensor, concat, matmul, mul, reshape, sigmoid, tanh


def _normalize_backward(g_hat, xhat, inv_std, axes):
    """Gradient through ``xhat = (x - mean) * inv_std`` with mean/var over ``axes``."""
    m1 = g_hat.mean(axis=axes, keepdims=True)
    m2 = (g_hat * xhat).mean(axis=axes, keepdims=True)
    return inv_std * (g_hat - m1 - xhat * m2)


def layer_norm(x, gain, bias, eps: float = 1e-5):
    """Normalize every (batch, time) row over channels, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if x.shape[-1] < 1 or gain.shape != (x.shape[-1],) or bias.shape != gain.shape:
        raise ShapeError(f"layer_norm: input {x.shape}, gain {gain.shape}, bias {bias.shape}")
    mu = x.value.mean(axis=-1, keepdims=True)
    xc = x.value - mu
    inv_std = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv_std
    axes = tuple(range(x.ndim - 1))

    def bw(g):
        if x.requires_grad:
            _accum(x, _normalize_backward(g * gain.value, xhat, inv_std, -1))
        _accum(gain, (g * xhat).sum(axis=axes))
        _accum(bias, g.sum(axis=axes))

    return _make(xhat * gain.value + bias.value, (x, gain, bias), bw)


def batch_norm(x, gain, bias, running_mean, running_var, train: bool, momentum: float = 0.1, eps: float = 1e-5):
    """Per-channel normalization over batch and time.

    In training mode batch statistics are used and ``running_mean`` /
    ``running_var`` (numpy arrays) are updated in place with ``momentum``; in
    evaluation mode the running statistics are used.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    c = x.shape[-1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise ShapeError(f"batch_norm: input {x.shape}, gain {gain.shape}, bias {bias.shape}")
    axes = tuple(range(x.ndim - 1))
    if train:
        if x.shape[0] < 2:
            raise ShapeError("batch_norm: training mode needs a batch of at least 2")
        mu = x.value.mean(axis=axes)
        xc = x.value - mu
        var = (xc * xc).mean(axis=axes)
        n = x.value.size // c
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * n / max(n - 1, 1)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv_std

        def bw(g):
            if x.requires_grad:
                _accum(x, _normalize_backward(g * gain.value, xhat, inv_std, axes))
            _accum(gain, (g * xhat).sum(axis=axes))
            _accum(bias, g.sum(axis=axes))

    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.value - running_mean) * inv_std

        def bw(g):
            _accum(x, g * gain.value * inv_std)
            _accum(gain, (g * xhat).sum(axis=axes))
            _accum(bias, g.sum(axis=axes))

    return _make(xhat * gain.value + bias.value, (x, gain, bias), bw)


def dropout(x, p: float, train: bool, rng: np.random.Generator | None = None):
    """Inverted dropout: zero with probability ``p`` and rescale by ``1 / (1 - p)``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, keep)


def lstm(xproj, w_hh, reverse: bool = False):
    """Run an LSTM over time given the precomputed input projection.

    ``xproj`` is ``(B, m, 4H)`` holding ``x W_ih + b`` with gate blocks in the
    order input, forget, cell, output; ``w_hh`` is ``(H, 4H)``. Initial hidden
    and cell states are zero. Returns the hidden states ``(B, m, H)`` in the
    original time order.
    """
    xproj, w_hh = as_tensor(xproj), as_tensor(w_hh)
    bsz, m, four_h = xproj.shape
    hid = four_h // 4
    if four_h != 4 * hid or w_hh.shape != (hid, four_h):
        raise ShapeError(f"lstm: projection {xproj.shape} and recurrent weight {w_hh.shape} disagree")
    order = range(m - 1, -1, -1) if reverse else range(m)
    W = w_hh.value
    gates = np.empty((bsz, m, four_h))
    cells = np.empty((bsz, m, hid))
    hs = np.empty((bsz, m, hid))
    h_prev_all = np.zeros((bsz, m, hid))
    c_prev_all = np.zeros((bsz, m, hid))
    h = np.zeros((bsz, hid))
    c = np.zeros((bsz, hid))
    for t in order:
        h_prev_all[:, t] = h
        c_prev_all[:, t] = c
        z = xproj.value[:, t] + h @ W
        i = _sigmoid(z[:, :hid])
        f = _sigmoid(z[:, hid : 2 * hid])
        gg = np.tanh(z[:, 2 * hid : 3 * hid])
        o = _sigmoid(z[:, 3 * hid :])
        c = f * c + i * gg
        h = o * np.tanh(c)
        gates[:, t] = np.concatenate([i, f, gg, o], axis=1)
        cells[:, t] = c
        hs[:, t] = h

    def bw(g):
        dz_all = np.empty((bsz, m, four_h))
        dh_next = np.zeros((bsz, hid))
        dc_next = np.zeros((bsz, hid))
        for t in reversed(list(order)):
            i, f, gg, o = np.split(gates[:, t], 4, axis=1)
            tc = np.tanh(cells[:, t])
            dh = g[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            di = dc * gg
            dgg = dc * i
            df = dc * c_prev_all[:, t]
            dc_next = dc * f
            dz = np.concatenate(
                [di * i * (1.0 - i), df * f * (1.0 - f), dgg * (1.0 - gg * gg), do * o * (1.0 - o)], axis=1
            )
            dz_all[:, t] = dz
            dh_next = dz @ W.T
        _accum(xproj, dz_all)
        if w_hh.requires_grad:
            _accum(w_hh, h_prev_all.reshape(-1, hid).T @ dz_all.reshape(-1, four_h))

    return _make(hs, (xproj, w_hh), bw)


def lstm_cell(x_t, h, c, w_ih, w_hh, b):
    """One LSTM step built from primitive ops; returns ``(h_new, c_new)``.

    Slower than :func:`lstm` but independent of its hand-written backward,
    which makes it a reference for tests.
    """
    z = add(add(matmul(x_t, w_ih), matmul(h, w_hh)), b)
    hid = as_tensor(h).shape[-1]
    i = sigmoid(z[..., :hid])
    f = sigmoid(z[..., hid : 2 * hid])
    gg = tanh(z[..., 2 * hid : 3 * hid])
    o = sigmoid(z[..., 3 * hid :])
    c_new = add(mul(f, c), mul(i, gg))
    return mul(o, tanh(c_new)), c_new


def bilstm_layer(x, params: dict):
    """Bidirectional LSTM over ``(B, m, C)``; returns ``(B, m, 2H)``.

    ``params`` holds ``w_ih_f``, ``w_hh_f``, ``b_f`` and the ``_b`` (backward
    direction) counterparts.
    """
    fwd = lstm(add(matmul(x, params["w_ih_f"]), params["b_f"]), params["w_hh_f"])
    bwd = lstm(add(matmul(x, params["w_ih_b"]), params["b_b"]), params["w_hh_b"], reverse=True)
    return concat([fwd, bwd], axis=-1)


def bilstm_reference(x, params: dict):
    """Same as :func:`bilstm_layer` but unrolled through :func:`lstm_cell`."""
    x = as_tensor(x)
    bsz, m, _ = x.shape
    outs = {}
    for tag, steps in (("f", range(m)), ("b", range(m - 1, -1, -1))):
        hid = as_tensor(params[f"w_hh_{tag}"]).shape[0]
        h = np.zeros((bsz, hid))
        c = np.zeros((bsz, hid))
        seq = [None] * m
        for t in steps:
            h, c = lstm_cell(x[:, t], h, c, params[f"w_ih_{tag}"], params[f"w_hh_{tag}"], params[f"b_{tag}"])
            seq[t] = h
        outs[tag] = seq
    rows = [concat([outs["f"][t], outs["b"][t]], axis=-1) for t in range(m)]
    return concat([reshape(r, (bsz, 1, -1)) for r in rows], axis=1)
