"""Contextual transformer for inertial navigation.

Data flow for a batch of IMU windows ``(B, m, 6)``::

    spatial_embed -> encoder blocks (local + global self-attention) -> z
    temporal_embed -> decoder layers (causal self-attn, cross-attn to z, FFN) -> H
    heads(H) -> velocity (B, m, 2), diagonal covariance (B, m, 2)

Everything is a function of a :class:`~ctin.autodiff.ParamStore` whose names
are built from the module path (``encoder.block0.local.wv`` and so on).
"""

from __future__ import annotations

import contextlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .errors import ConfigError


@dataclass
class ModelConfig:
    window_len: int = 200
    input_channels: int = 6
    model_dim: int = 64
    heads: int = 8
    encoder_layers: int = 1
    decoder_layers: int = 4
    ffn_dim: int | None = None
    lstm_hidden: int | None = None
    bottleneck_dim: int | None = None
    dropout_encoder: float = 0.5
    dropout_decoder: float = 0.05
    local_kernel: int = 3
    embed_kernel: int = 3

    def __post_init__(self):
        d = self.model_dim
        if self.ffn_dim is None:
            self.ffn_dim = 4 * d
        if self.lstm_hidden is None:
            self.lstm_hidden = max(1, d // 2)
        if self.bottleneck_dim is None:
            self.bottleneck_dim = max(self.heads, d // 2)
        if d % self.heads or self.bottleneck_dim % self.heads:
            raise ConfigError(f"model_dim {d} and bottleneck_dim {self.bottleneck_dim} must be divisible by heads {self.heads}")
        if self.local_kernel % 2 == 0:
            raise ConfigError("local_kernel must be odd")
        if self.window_len < 1 or self.encoder_layers < 0 or self.decoder_layers < 0:
            raise ConfigError("window_len must be positive and layer counts non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class VelocityEstimate:
    vel: np.ndarray
    cov_diag: np.ndarray


@dataclass
class Ctx:
    """Forward-pass mode: dropout and batch statistics only when ``train``."""

    train: bool = False
    rng: np.random.Generator | None = None


LOGVAR_CLAMP = 10.0

# ---------------------------------------------------------------------------
# attention probe (tests inspect attention weights through it)

_attention_log: list | None = None


@contextlib.contextmanager
def capture_attention():
    global _attention_log
    prev, _attention_log = _attention_log, []
    try:
        yield _attention_log
    finally:
        _attention_log = prev


def _probe(kind, weights):
    if _attention_log is not None:
        _attention_log.append((kind, np.array(getattr(weights, "value", weights))))


def _prober(kind):
    return None if _attention_log is None else (lambda w: _probe(kind, w))


# ---------------------------------------------------------------------------
# initialization


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _add_linear(store, rng, name, fan_in, fan_out, zero=False, bias=True):
    w = np.zeros((fan_in, fan_out)) if zero else _uniform(rng, (fan_in, fan_out), fan_in)
    store.add(f"{name}.w", w)
    if bias:
        store.add(f"{name}.b", np.zeros(fan_out))


def _add_norm(store, name, dim, running=False):
    store.add(f"{name}.gain", np.ones(dim))
    store.add(f"{name}.bias", np.zeros(dim))
    if running:
        store.add_buffer(f"{name}.mean", np.zeros(dim))
        store.add_buffer(f"{name}.var", np.ones(dim))


def _add_mha(store, rng, name, dim, before_norm=False):
    # a key bias shifts every score in a row equally, which softmax ignores;
    # ahead of batch norm the value and output biases only add a per-channel constant
    _add_linear(store, rng, f"{name}.wq", dim, dim)
    _add_linear(store, rng, f"{name}.wk", dim, dim, bias=False)
    _add_linear(store, rng, f"{name}.wv", dim, dim, bias=not before_norm)
    _add_linear(store, rng, f"{name}.wo", dim, dim, zero=True, bias=not before_norm)


def init_params(cfg: ModelConfig, seed: int = 0) -> ParamStore:
    """Fresh parameters: uniform(+-1/sqrt(fan_in)) weights, zero residual outputs and gates."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    d, c, db, h = cfg.model_dim, cfg.input_channels, cfg.bottleneck_dim, cfg.heads
    k = cfg.embed_kernel
    # layers feeding batch norm carry no bias: the normalization removes it
    store.add("spatial.conv.w", _uniform(rng, (k, c, d), k * c))
    _add_norm(store, "spatial.bn", d, running=True)
    _add_linear(store, rng, "spatial.lin", d, d)

    hid = cfg.lstm_hidden
    for tag in ("f", "b"):
        store.add(f"temporal.lstm.w_ih_{tag}", _uniform(rng, (c, 4 * hid), hid))
        store.add(f"temporal.lstm.w_hh_{tag}", _uniform(rng, (hid, 4 * hid), hid))
        bias = np.zeros(4 * hid)
        bias[hid : 2 * hid] = 1.0  # forget gate
        store.add(f"temporal.lstm.b_{tag}", bias)
    _add_linear(store, rng, "temporal.proj", 2 * hid, d)
    store.add("temporal.pos", 0.02 * rng.standard_normal((cfg.window_len, d)))

    dk = db // h
    for i in range(cfg.encoder_layers):
        p = f"encoder.block{i}"
        _add_linear(store, rng, f"{p}.reduce", d, db, bias=False)
        _add_norm(store, f"{p}.bn1", db, running=True)
        kl = cfg.local_kernel
        store.add(f"{p}.local.wk", _uniform(rng, (kl, dk, db), kl * dk))
        _add_linear(store, rng, f"{p}.local.wv", db, db)
        store.add(f"{p}.local.gamma_q", _uniform(rng, (h, dk), dk))
        store.add(f"{p}.local.gamma_k", _uniform(rng, (h, dk), dk))
        store.add(f"{p}.local.gamma_b", np.zeros(h))
        _add_linear(store, rng, f"{p}.local.gate", 2 * db, 2, zero=True)
        _add_norm(store, f"{p}.bn2", db, running=True)
        _add_mha(store, rng, f"{p}.global", db, before_norm=True)
        _add_norm(store, f"{p}.bn3", db, running=True)
        _add_linear(store, rng, f"{p}.expand", db, d, zero=True)

    for i in range(cfg.decoder_layers):
        p = f"decoder.layer{i}"
        _add_mha(store, rng, f"{p}.self", d)
        _add_norm(store, f"{p}.ln1", d)
        _add_mha(store, rng, f"{p}.cross", d)
        _add_norm(store, f"{p}.ln2", d)
        _add_linear(store, rng, f"{p}.ffn1", d, cfg.ffn_dim)
        _add_linear(store, rng, f"{p}.ffn2", cfg.ffn_dim, d, zero=True)
        _add_norm(store, f"{p}.ln3", d)

    for branch in ("vel", "cov"):
        _add_linear(store, rng, f"head.{branch}.l1", d, d)
        _add_norm(store, f"head.{branch}.ln", d)
        _add_linear(store, rng, f"head.{branch}.l2", d, 2)
    return store


# ---------------------------------------------------------------------------
# building blocks


def _lin(store, name, x):
    bias = f"{name}.b"
    return ad.linear(x, store[f"{name}.w"], store[bias] if bias in store else None)


def _bn(store, name, x, ctx):
    return ad.batch_norm(
        x, store[f"{name}.gain"], store[f"{name}.bias"],
        store.buffers[f"{name}.mean"], store.buffers[f"{name}.var"], ctx.train,
    )


def _ln(store, name, x):
    return ad.layer_norm(x, store[f"{name}.gain"], store[f"{name}.bias"])


def _as_batch(imu):
    x = imu.value if isinstance(imu, Tensor) else np.asarray(imu, dtype=np.float64)
    if x.ndim == 2:
        return x[None]
    if x.ndim != 3:
        raise ad.ShapeError(f"expected IMU array (m, C) or (B, m, C), got {x.shape}")
    return x


def spatial_embed(store: ParamStore, imu, ctx: Ctx) -> Tensor:
    """conv1d(k=3) -> batch norm -> relu -> linear; ``(B, m, 6) -> (B, m, d)``."""
    x = ad.conv1d(imu, store["spatial.conv.w"])
    x = ad.relu(_bn(store, "spatial.bn", x, ctx))
    return _lin(store, "spatial.lin", x)


def temporal_embed(store: ParamStore, imu) -> Tensor:
    """BiLSTM -> linear -> plus a trainable positional table."""
    lstm_params = {
        k: store[f"temporal.lstm.{k}"] for k in ("w_ih_f", "w_hh_f", "b_f", "w_ih_b", "w_hh_b", "b_b")
    }
    x = ad.bilstm_layer(imu, lstm_params)
    x = _lin(store, "temporal.proj", x)
    pos = store["temporal.pos"]
    m = x.shape[1]
    if m > pos.shape[0]:
        raise ad.ShapeError(f"window of {m} samples longer than positional table {pos.shape[0]}")
    return ad.add(x, pos[:m] if m < pos.shape[0] else pos)


def multi_head_attention(store, name, q_in, kv_in, heads, mask=None, kind="mha"):
    """Dot-product multi-head attention with an output projection.

    Queries come from ``q_in``, keys and values from ``kv_in``; ``mask`` is a
    boolean ``(m_q, m_k)`` array of allowed positions.
    """
    q = ad.split_heads(_lin(store, f"{name}.wq", q_in), heads)
    k = ad.split_heads(_lin(store, f"{name}.wk", kv_in), heads)
    v = ad.split_heads(_lin(store, f"{name}.wv", kv_in), heads)
    out = ad.merge_heads(ad.attention(q, k, v, mask=mask, probe=_prober(kind)), heads)
    return _lin(store, f"{name}.wo", out)


def global_self_attention(store: ParamStore, name: str, x, heads: int) -> Tensor:
    """Every position attends to every other through softmax(QK^T / sqrt(d_k))."""
    return multi_head_attention(store, name, x, x, heads, kind="global")


def _per_head_dot(x, gamma, heads):
    """``(B, m, h * dk)`` features dotted per head with ``gamma`` ``(h, dk)`` -> ``(B, m, h)``."""
    bsz, m, dim = x.shape
    return ad.sum(ad.mul(ad.reshape(x, (bsz, m, heads, dim // heads)), gamma), axis=-1)


def local_self_attention(store: ParamStore, name: str, x, heads: int) -> Tensor:
    """Local-context attention with a gated fusion.

    ``C1`` is a grouped temporal convolution of ``x`` (one group per head).
    Pairwise weights use the concatenation form ``relu(w_q . x_i + w_k . C1_j + b)``
    per head, normalized over ``j``; ``C2 = weights @ (x W_V)``. A per-position
    two-way softmax gate computed from ``[C1, C2]`` mixes the two contexts.
    """
    x = ad.as_tensor(x)
    bsz, m, dim = x.shape
    c1 = ad.conv1d(x, store[f"{name}.wk"], groups=heads)
    v = _lin(store, f"{name}.wv", x)
    a = ad.add(_per_head_dot(x, store[f"{name}.gamma_q"], heads), store[f"{name}.gamma_b"])
    b = _per_head_dot(c1, store[f"{name}.gamma_k"], heads)
    # (B, m, h) -> (B * h, m, 1) and (B * h, 1, m), matching split_heads ordering
    a = ad.reshape(ad.transpose(a, (0, 2, 1)), (bsz * heads, m, 1))
    b = ad.reshape(ad.transpose(b, (0, 2, 1)), (bsz * heads, 1, m))
    c2 = ad.merge_heads(ad.pair_attention(a, b, ad.split_heads(v, heads), probe=_prober("local")), heads)
    gate = ad.softmax(_lin(store, f"{name}.gate", ad.concat([c1, c2], axis=-1)), axis=-1)
    _probe("gate", gate)
    return ad.add(ad.mul(gate[..., 0:1], c1), ad.mul(gate[..., 1:2], c2))


def encoder_block(store: ParamStore, name: str, x, cfg: ModelConfig, ctx: Ctx) -> Tensor:
    """Bottleneck residual block: reduce -> local attn -> global attn -> expand, plus identity."""
    y = ad.relu(_bn(store, f"{name}.bn1", _lin(store, f"{name}.reduce", x), ctx))
    y = ad.relu(_bn(store, f"{name}.bn2", local_self_attention(store, f"{name}.local", y, cfg.heads), ctx))
    y = ad.relu(_bn(store, f"{name}.bn3", global_self_attention(store, f"{name}.global", y, cfg.heads), ctx))
    y = ad.dropout(y, cfg.dropout_encoder, ctx.train, ctx.rng)
    return ad.add(x, _lin(store, f"{name}.expand", y))


def encoder_forward(store: ParamStore, x, cfg: ModelConfig, ctx: Ctx) -> Tensor:
    for i in range(cfg.encoder_layers):
        x = encoder_block(store, f"encoder.block{i}", x, cfg, ctx)
    return x


def causal_mask(m: int) -> np.ndarray:
    """``mask[t, s]`` is True when position ``t`` may attend to ``s <= t``."""
    return np.tril(np.ones((m, m), dtype=bool))


def decoder_layer(store: ParamStore, name: str, y, z, cfg: ModelConfig, ctx: Ctx) -> Tensor:
    """Causal self-attention, cross-attention to ``z`` and a feed-forward net,
    each wrapped as ``layer_norm(x + dropout(sublayer(x)))``."""
    p = cfg.dropout_decoder
    m = y.shape[1]
    s = multi_head_attention(store, f"{name}.self", y, y, cfg.heads, mask=causal_mask(m), kind="self")
    y = _ln(store, f"{name}.ln1", ad.add(y, ad.dropout(s, p, ctx.train, ctx.rng)))
    c = multi_head_attention(store, f"{name}.cross", y, z, cfg.heads, kind="cross")
    y = _ln(store, f"{name}.ln2", ad.add(y, ad.dropout(c, p, ctx.train, ctx.rng)))
    f = _lin(store, f"{name}.ffn2", ad.relu(_lin(store, f"{name}.ffn1", y)))
    return _ln(store, f"{name}.ln3", ad.add(y, ad.dropout(f, p, ctx.train, ctx.rng)))


def decoder_forward(store: ParamStore, y, z, cfg: ModelConfig, ctx: Ctx) -> Tensor:
    for i in range(cfg.decoder_layers):
        y = decoder_layer(store, f"decoder.layer{i}", y, z, cfg, ctx)
    return y


def heads(store: ParamStore, h) -> tuple[Tensor, Tensor]:
    """Velocity and variance branches: linear -> layer norm -> linear.

    Variances are ``exp(clip(u, -10, 10))`` of the covariance branch output.
    """
    out = {}
    for branch in ("vel", "cov"):
        x = _lin(store, f"head.{branch}.l1", h)
        x = _ln(store, f"head.{branch}.ln", x)
        out[branch] = _lin(store, f"head.{branch}.l2", x)
    cov = ad.exp(ad.clip(out["cov"], -LOGVAR_CLAMP, LOGVAR_CLAMP))
    return out["vel"], cov


def ctin_apply(store: ParamStore, imu, cfg: ModelConfig, ctx: Ctx | None = None) -> tuple[Tensor, Tensor]:
    """Full network on a batch ``(B, m, 6)``; returns ``(vel, cov_diag)`` tensors of shape ``(B, m, 2)``."""
    ctx = ctx or Ctx()
    x = _as_batch(imu)
    if x.shape[-1] != cfg.input_channels:
        raise ad.ShapeError(f"IMU input has {x.shape[-1]} channels, model expects {cfg.input_channels}")
    z = encoder_forward(store, spatial_embed(store, x, ctx), cfg, ctx)
    hdec = decoder_forward(store, temporal_embed(store, x), z, cfg, ctx)
    return heads(store, hdec)


def ctin_forward(window, store: ParamStore, cfg: ModelConfig, mode: str = "eval", rng=None) -> VelocityEstimate:
    """Velocity estimate for one window (or a raw ``(m, 6)`` array)."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    imu = getattr(window, "imu", window)
    ctx = Ctx(train=mode == "train", rng=np.random.default_rng(rng) if mode == "train" else None)
    with ad.no_grad():
        vel, cov = ctin_apply(store, imu, cfg, ctx)
    squeeze = np.ndim(imu) == 2
    return VelocityEstimate(vel.value[0] if squeeze else vel.value, cov.value[0] if squeeze else cov.value)


def predict(store: ParamStore, imu_batch, cfg: ModelConfig, batch_size: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode velocities and variances for ``(N, m, 6)`` windows, in chunks."""
    vels, covs = [], []
    for i in range(0, len(imu_batch), batch_size):
        with ad.no_grad():
            v, c = ctin_apply(store, imu_batch[i : i + batch_size], cfg, Ctx())
        vels.append(v.value)
        covs.append(c.value)
    return np.concatenate(vels), np.concatenate(covs)
