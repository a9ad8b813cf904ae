"""Training losses: MSE, integral velocity loss, covariance NLL and the learned multi-task mix.

All losses accept ``(m, 2)`` or batched ``(B, m, 2)`` inputs, as arrays or
:class:`~ctin.autodiff.Tensor` graph nodes, and reduce with a mean over
timesteps and batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor

LOSS_KINDS = ("mse", "ivl", "cnl", "ivl+cnl")


def _check_same(*xs):
    shapes = {ad.as_tensor(x).shape for x in xs}
    if len(shapes) != 1:
        raise ad.ShapeError(f"loss inputs disagree in shape: {sorted(shapes)}")
    (shape,) = shapes
    if len(shape) < 2 or shape[-1] != 2:
        raise ad.ShapeError(f"expected (..., m, 2) inputs, got {shape}")


def _sq_norm_mean(x: Tensor) -> Tensor:
    """Mean over all leading axes of the squared norm along the last axis."""
    return ad.scale(ad.mean(ad.mul(x, x)), x.shape[-1])


def mse_loss(pred, gt) -> Tensor:
    """Mean of squared elementwise differences."""
    _check_same(pred, gt)
    e = ad.sub(pred, gt)
    return ad.mean(ad.mul(e, e))


def ivl(pred_vel, gt_vel, gt_pos, p0=None, dt: float = 0.005) -> Tensor:
    """Integral velocity loss ``L_p + L_e``.

    ``L_p`` compares forward-Euler displacements of ``pred_vel`` (position at
    ``t`` uses velocities before ``t``) with ground-truth displacements from
    the window start. ``L_e`` is the squared norm of the cumulative velocity
    error integrated with ``dt``. Both are window-relative, so ``p0`` only
    fixes the integration origin and cancels.
    """
    _check_same(pred_vel, gt_vel, gt_pos)
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    pred_vel = ad.as_tensor(pred_vel)
    gt_vel, gt_pos = np.asarray(ad.as_tensor(gt_vel).value), np.asarray(ad.as_tensor(gt_pos).value)
    if p0 is not None and np.shape(p0)[-1] != 2:
        raise ad.ShapeError("p0 must be a 2-vector")
    axis = pred_vel.ndim - 2
    # inclusive running sum; the exclusive one is the inclusive sum minus the current row
    csum = ad.cumsum(pred_vel, axis=axis)
    disp = ad.scale(ad.sub(csum, pred_vel), dt)
    gt_disp = gt_pos - gt_pos[..., :1, :]
    l_p = _sq_norm_mean(ad.sub(disp, gt_disp))
    cum_err = ad.scale(ad.sub(csum, np.cumsum(gt_vel, axis=axis)), dt)
    l_e = _sq_norm_mean(cum_err)
    return ad.add(l_p, l_e)


def cnl(pred_vel, cov_diag, gt_vel) -> Tensor:
    """Gaussian negative log-likelihood with a diagonal covariance, constants dropped.

    Mean over timesteps of ``0.5 * (e_x^2 / s_x + e_y^2 / s_y + ln(s_x * s_y))``
    where ``s`` holds the per-axis variances.
    """
    _check_same(pred_vel, cov_diag, gt_vel)
    cov_diag = ad.as_tensor(cov_diag)
    if not np.all(cov_diag.value > 0):
        raise ValueError("cnl: variances must be strictly positive")
    e = ad.sub(gt_vel, pred_vel)
    quad = ad.div(ad.mul(e, e), cov_diag)
    per_row = ad.add(quad, ad.log(cov_diag))
    # mean over rows of the 2-axis sum == 2 * mean over all entries; times 1/2
    return ad.mean(per_row)


@dataclass
class MultiTaskParams:
    """Learned log-variances ``log d_v^2`` and ``log d_c^2`` weighting the two tasks."""

    log_var_v: Tensor = field(default_factory=lambda: Tensor(np.zeros(()), requires_grad=True, name="mt.log_var_v"))
    log_var_c: Tensor = field(default_factory=lambda: Tensor(np.zeros(()), requires_grad=True, name="mt.log_var_c"))

    @classmethod
    def attach(cls, store: ParamStore) -> "MultiTaskParams":
        """Register (or reuse) the two scalars in ``store`` so the optimizer sees them."""
        for n in ("mt.log_var_v", "mt.log_var_c"):
            if n not in store:
                store.add(n, np.zeros(()))
        return cls(store["mt.log_var_v"], store["mt.log_var_c"])


def multitask_loss(l_v, l_c, mt: MultiTaskParams) -> Tensor:
    """``0.5 exp(-s_v) L_v + 0.5 exp(-s_c) L_c + 0.5 (s_v + s_c)`` with ``s`` the log-variances."""
    sv, sc = mt.log_var_v, mt.log_var_c
    wv = ad.mul(ad.exp(ad.scale(sv, -1.0)), l_v)
    wc = ad.mul(ad.exp(ad.scale(sc, -1.0)), l_c)
    return ad.scale(ad.add(ad.add(wv, wc), ad.add(sv, sc)), 0.5)


def compute_loss(kind: str, vel, cov, gt_vel, gt_pos, dt: float, mt: MultiTaskParams | None = None) -> Tensor:
    """Dispatch on ``kind`` (one of :data:`LOSS_KINDS`)."""
    kind = kind.lower()
    if kind == "mse":
        return mse_loss(vel, gt_vel)
    if kind == "ivl":
        return ivl(vel, gt_vel, gt_pos, dt=dt)
    if kind == "cnl":
        return cnl(vel, cov, gt_vel)
    if kind == "ivl+cnl":
        if mt is None:
            raise ValueError("ivl+cnl needs MultiTaskParams")
        return multitask_loss(ivl(vel, gt_vel, gt_pos, dt=dt), cnl(vel, cov, gt_vel), mt)
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
