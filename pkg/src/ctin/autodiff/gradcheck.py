"""Central-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, backward, no_grad, record_kinks


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    excluded: list = field(default_factory=list)
    worst: tuple | None = None

    def __float__(self):
        return self.max_rel_error

    @property
    def ok(self) -> bool:
        return self.max_rel_error < 1e-4


def _same_pattern(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(f, inputs, h=None, max_coords: int | None = None, seed: int = 0) -> GradCheckResult:
    """Compare analytic gradients of scalar ``f(*inputs)`` against central differences.

    ``h`` defaults to ``1e-4 * max(1, |x|)`` per coordinate. Relative error is
    ``|a - n| / max(|a|, |n|, 1e-8)``. A coordinate whose ``+h`` and ``-h``
    probes fall on different sides of a relu/clip kink is listed in
    ``excluded`` instead of being scored. With ``max_coords`` only a seeded
    random subset of coordinates of each input is probed.
    """
    inputs = list(inputs)
    for t in inputs:
        # probes perturb values in place through a flat view
        # (a copy keeps 0-d shapes, unlike np.ascontiguousarray)
        t.value = np.array(t.value, dtype=np.float64, order="C")
        t.requires_grad = True
        t.grad = None
    loss = f(*inputs)
    backward(loss)
    analytic = [np.zeros_like(t.value) if t.grad is None else t.grad.copy() for t in inputs]
    rng = np.random.default_rng(seed)

    def probe():
        with no_grad(), record_kinks() as kinks:
            val = float(f(*inputs).value)
        return val, list(kinks)

    worst_err, worst, excluded, checked = 0.0, None, [], 0
    for k, t in enumerate(inputs):
        flat = t.value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for i in coords:
            x0 = flat[i]
            step = h if h is not None else 1e-4 * max(1.0, abs(x0))
            flat[i] = x0 + step
            fp, kp = probe()
            flat[i] = x0 - step
            fm, km = probe()
            flat[i] = x0
            if not _same_pattern(kp, km):
                excluded.append((k, int(i)))
                continue
            num = (fp - fm) / (2.0 * step)
            a = analytic[k].reshape(-1)[i]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            checked += 1
            if err > worst_err or worst is None:
                worst_err, worst = err, (k, int(i), float(a), float(num))
    for t in inputs:
        t.grad = None
    return GradCheckResult(worst_err, checked, excluded, worst)


def random_projection_loss(rng: np.random.Generator, shape):
    """A fixed random weighting ``w`` so that ``sum(w * y)`` has O(1) gradients."""
    return Tensor(rng.standard_normal(shape))
