"""Train a small CTIN on a synthetic corpus and compare it with baselines.

A few minutes of CPU time. Pass ``--full`` for the default model size and a
100-sequence corpus (about ten minutes).

    python demos/02_train_and_evaluate.py [--full]
"""

import sys
import time

import numpy as np

from ctin.baselines import sins_integrate
from ctin.dataio import OrientationSource, corpus_specs, gen_synthetic
from ctin.metrics import MetricReport, sequence_metrics
from ctin.model import ModelConfig
from ctin.reportgen import build_table
from ctin.trainer import EvalConfig, TrainConfig, evaluate, split_dataset, train

full = "--full" in sys.argv
n_seq = 100 if full else 30
items = [(f"seq_{i:03d}", gen_synthetic(s)) for i, s in enumerate(corpus_specs(n_seq, duration=60.0, seed=0))]
tr, va, te = split_dataset(items, (0.8, 0.1, 0.1), seed=0)

mcfg = ModelConfig() if full else ModelConfig(model_dim=32, heads=4, decoder_layers=2, ffn_dim=64)
tcfg = TrainConfig(batch_size=8, max_epochs=30 if full else 15, loss_kind="ivl+cnl",
                   window_step=200, windows_per_epoch=80, val_windows=48)

t0 = time.perf_counter()
store, history = train(mcfg, tcfg, [s for _, s in tr], [s for _, s in va], log=print)
print(f"trained {len(history.val_loss)} epochs in {time.perf_counter() - t0:.0f} s, best epoch {history.best_epoch}")

ecfg = EvalConfig(window_step=200, t_i=30.0)
reports = [
    evaluate(store, mcfg, te, ecfg),
    evaluate(None, mcfg, te, ecfg, predictor=lambda imu: np.zeros(imu.shape[:2] + (2,)), method="zero"),
]
sins = MetricReport(method="sins")
for name, seq in te:
    traj = sins_integrate(seq, OrientationSource.IMU_INTEGRATED, gyro=seq.gyro + [0.0, 0.0, 0.02])
    sins.sequences.append(sequence_metrics(name, seq.gt_positions[:, :2], traj.xy, seq.sample_rate_hz, ecfg.t_i))
reports.append(sins)

print(build_table(reports).to_markdown())
