"""Loop-based reference implementations of the trajectory metrics.

Written independently of ``ctin.metrics``: plain Python loops over samples,
no vectorization, no shared helpers.
"""

import math


def _dist(a, b):
    return math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2)


def _rmse(errors):
    return math.sqrt(sum(ex * ex + ey * ey for ex, ey in errors) / len(errors))


def ate(gt, pred):
    return _rmse([(g[0] - p[0], g[1] - p[1]) for g, p in zip(gt, pred)])


def _rel(gt, pred, t, u):
    return ((gt[u][0] - gt[t][0]) - (pred[u][0] - pred[t][0]), (gt[u][1] - gt[t][1]) - (pred[u][1] - pred[t][1]))


def t_rte(gt, pred, k):
    return _rmse([_rel(gt, pred, t, t + k) for t in range(len(gt) - k)])


def d_rte(gt, pred, d):
    errors = []
    n = len(gt)
    for t in range(n):
        travelled, u = 0.0, t
        while u + 1 < n and travelled < d:
            travelled += _dist(gt[u], gt[u + 1])
            u += 1
        if travelled >= d:
            errors.append(_rel(gt, pred, t, u))
    return _rmse(errors)


def pde(gt, pred):
    length = sum(_dist(gt[i], gt[i + 1]) for i in range(len(gt) - 1))
    return _dist(gt[-1], pred[-1]) / length


def random_pair(rng, n=1000):
    """A random-walk ground truth and a noisy, drifting estimate of it."""
    steps = rng.normal(0.0, 0.05, (n, 2)) + rng.normal(0.0, 0.03, 2)
    gt = steps.cumsum(axis=0)
    pred = gt + rng.normal(0.0, 0.2, (n, 2)).cumsum(axis=0) * 0.05
    return gt, pred
