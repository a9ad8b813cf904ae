"""Dead reckoning on a clean circle, then with a small gyro bias.

With the true attitude the strapdown integrator reproduces the synthetic
trajectory to round-off. A constant yaw-rate bias bends the track and the
error grows much faster than linearly with time.

    python demos/01_strapdown_drift.py
"""

import numpy as np

from ctin.baselines import pdr_track, sins_integrate
from ctin.dataio import OrientationSource, SyntheticSpec, gen_synthetic
from ctin.metrics import ate

seq = gen_synthetic(SyntheticSpec("circle", duration=60.0, speed=1.0, radius=5.0))
gt = seq.gt_positions[:, :2]

exact = sins_integrate(seq, OrientationSource.GROUND_TRUTH)
print(f"true attitude        ATE {ate(gt, exact.xy):.2e} m")

for bias in (0.005, 0.02, 0.05):
    drift = sins_integrate(seq, OrientationSource.IMU_INTEGRATED, gyro=seq.gyro + [0.0, 0.0, bias])
    per_10s = [ate(gt[: 2000 * k], drift.xy[: 2000 * k]) for k in (1, 3, 6)]
    print(f"gyro bias {bias:5.3f} rad/s  ATE at 10/30/60 s: " + "  ".join(f"{a:7.2f}" for a in per_10s))

pdr = pdr_track(seq)
print(f"step-and-heading     ATE {ate(gt, pdr.xy):.2f} m")
