"""Command-line entry point: ``ctin gen|train|eval|baseline|gradcheck|report``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
divergence (1 for a failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .autodiff import ParamStore
from .autodiff.suite import run_suite
from .baselines import pdr_track, sins_integrate
from .dataio import (
    ImuSequence,
    OrientationSource,
    SyntheticSpec,
    corpus_specs,
    gen_synthetic,
    load_dataset,
    save_sequence,
)
from .errors import ConfigError, CtinError, DataError
from .metrics import MetricReport, sequence_metrics
from .model import ModelConfig
from .reportgen import build_table
from .trainer import EvalConfig, TrainConfig, evaluate, split_dataset, train

log = logging.getLogger("ctin")

EXIT_OK, EXIT_CHECK_FAILED = 0, 1


def _read_json(path, what: str) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"{what} file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} file {path} is not valid JSON: {exc}") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    """Synthesize sequences from one spec, a list of specs, or ``{"corpus": {...}}``."""
    doc = _read_json(args.spec, "spec")
    if isinstance(doc, dict) and "corpus" in doc:
        try:
            specs = corpus_specs(**doc["corpus"])
        except TypeError as exc:
            raise ConfigError(f"bad corpus settings: {exc}") from None
    elif isinstance(doc, list):
        specs = [SyntheticSpec.from_dict(d) for d in doc]
    elif isinstance(doc, dict):
        specs = [SyntheticSpec.from_dict(doc)]
    else:
        raise ConfigError("spec must be an object, a list of objects, or {'corpus': {...}}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, spec in enumerate(specs):
        save_sequence(gen_synthetic(spec), out / f"seq_{i:03d}.csv")
    log.info("wrote %d sequences to %s", len(specs), out)
    return EXIT_OK


def _split(args, tcfg: TrainConfig):
    data = load_dataset(args.data)
    return split_dataset(data, tcfg.split, tcfg.rng_seed)


def cmd_train(args) -> int:
    mcfg = ModelConfig.from_dict(_read_json(args.model_config, "model config"))
    tcfg = TrainConfig.from_dict(_read_json(args.train_config, "train config"))
    tr, va, te = _split(args, tcfg)
    if not tr or not va:
        raise DataError(f"split {tcfg.split} of {len(tr) + len(va) + len(te)} sequences leaves an empty train or validation set")
    store, history = train(mcfg, tcfg, [s for _, s in tr], [s for _, s in va], log=log.info)
    extra = {
        "model_config": mcfg.to_dict(),
        "train_config": tcfg.to_dict(),
        "split": {"train": [n for n, _ in tr], "validate": [n for n, _ in va], "test": [n for n, _ in te]},
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    store.save(out, extra=extra)
    history.save(args.history or out.with_name(out.stem + ".history.json"))
    log.info("best epoch %d, validation loss %.6f (%s)", history.best_epoch, history.best_val_loss, history.stop_reason)
    return EXIT_OK


def _test_sequences(args, ckpt: dict | None) -> list[tuple[str, ImuSequence]]:
    data = load_dataset(args.data)
    if args.split == "all":
        return data
    if ckpt is not None and "split" in ckpt:
        names = set(ckpt["split"]["test"])
        return [(n, s) for n, s in data if n in names]
    _, _, te = split_dataset(data, TrainConfig().split, args.seed)
    return te


def cmd_eval(args) -> int:
    doc = _read_json(args.ckpt, "checkpoint")
    try:
        store = ParamStore.from_dict(doc)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"checkpoint {args.ckpt} is malformed: {exc}") from None
    mcfg = ModelConfig.from_dict(doc.get("model_config", {}))
    ecfg = EvalConfig.from_dict(_read_json(args.eval_config, "eval config"))
    seqs = _test_sequences(args, doc)
    if not seqs:
        raise DataError("no test sequences to evaluate")
    report = evaluate(store, mcfg, seqs, ecfg)
    report.save(args.out)
    if args.cdf_dir:
        report.write_cdfs(args.cdf_dir)
    log.info("aggregate: %s", report.aggregate)
    return EXIT_OK


def cmd_baseline(args) -> int:
    ecfg = EvalConfig.from_dict(_read_json(args.eval_config, "eval config"))
    seqs = _test_sequences(args, None)
    if not seqs:
        raise DataError("no sequences to evaluate")
    report = MetricReport(method=args.method, config={"eval": ecfg.__dict__, "gyro_bias": args.gyro_bias})
    for name, seq in seqs:
        gt = seq.gt_positions[:, :2]
        if args.method == "sins":
            gyro = seq.gyro + np.asarray(args.gyro_bias, dtype=np.float64)
            traj = sins_integrate(seq, OrientationSource.IMU_INTEGRATED, gyro=gyro)
        else:
            traj = pdr_track(seq)
        report.sequences.append(sequence_metrics(name, gt, traj.xy, seq.sample_rate_hz, ecfg.t_i, ecfg.d, ecfg.squared))
    report.save(args.out)
    if args.cdf_dir:
        report.write_cdfs(args.cdf_dir)
    log.info("aggregate: %s", report.aggregate)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_suite(n_seeds=args.seeds)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.op:<18} max rel err {r.max_rel_error:.3e}  ({r.checked} coords, {r.excluded} at kinks)")
    return EXIT_OK if all(r.ok for r in results) else EXIT_CHECK_FAILED


def cmd_report(args) -> int:
    reports = []
    for p in args.inputs:
        try:
            reports.append(MetricReport.load(p))
        except FileNotFoundError:
            raise DataError(f"report {p} not found") from None
        except (KeyError, json.JSONDecodeError) as exc:
            raise DataError(f"report {p} is malformed: {exc}") from None
    table = build_table(reports, reference=args.reference)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table.to_markdown())
    out.with_suffix(".csv").write_text(table.to_csv())
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctin", description="Inertial navigation with an attention network.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="synthesize IMU sequences")
    g.add_argument("--spec", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", help="train a model on a data directory")
    t.add_argument("--data", required=True)
    t.add_argument("--model-config")
    t.add_argument("--train-config")
    t.add_argument("--out", required=True)
    t.add_argument("--history", help="history JSON path (default: <out>.history.json)")
    t.set_defaults(fn=cmd_train)

    def eval_args(q):
        q.add_argument("--data", required=True)
        q.add_argument("--out", required=True)
        q.add_argument("--eval-config")
        q.add_argument("--cdf-dir")
        q.add_argument("--split", choices=["test", "all"], default="test")
        q.add_argument("--seed", type=int, default=0, help="split seed when no checkpoint records the split")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    eval_args(e)
    e.set_defaults(fn=cmd_eval)

    b = sub.add_parser("baseline", help="score a classical baseline")
    b.add_argument("--method", choices=["sins", "pdr"], required=True)
    b.add_argument("--gyro-bias", type=float, nargs=3, default=[0.0, 0.0, 0.0], metavar=("BX", "BY", "BZ"))
    eval_args(b)
    b.set_defaults(fn=cmd_baseline)

    c = sub.add_parser("gradcheck", help="run the finite-difference oracle suite")
    c.add_argument("--seeds", type=int, default=10)
    c.set_defaults(fn=cmd_gradcheck)

    r = sub.add_parser("report", help="build a comparison table from metric reports")
    r.add_argument("--inputs", nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--reference", default="ctin")
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except CtinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
