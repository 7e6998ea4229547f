"""Command-line entry point: synthesize data, gradient-check, train, evaluate.

Exit codes: 0 ok, 1 gradient check failed, 2 configuration error, 3 I/O or
format error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .aggregation import aggregate_batch
from .autodiff import Tensor, grad_check
from .config import RunConfig, SynthSpec, TrainConfig
from .data import PairDataset, synth_dataset
from .encoder import encode
from .errors import (ConfigError, FormatError, NumericError, UsageError)
from .losses import BatchPairing, total_loss
from .trainer import evaluate_model, init_model, load_checkpoint, \
    save_checkpoint, train

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

CORRUPT_ENV = "HYPALIGN_CORRUPT_BACKWARD"  # test-only negative control


def _load_run_config(path) -> RunConfig:
    if path is None:
        return RunConfig(train=TrainConfig(), synth=SynthSpec())
    return RunConfig.from_file(path)


def cmd_synth(args) -> int:
    cfg = _load_run_config(args.spec)
    manifest = synth_dataset(cfg.synth, args.out)
    n_pc = len({r.pc_feature_path for r in manifest.records})
    print(f"classes={cfg.synth.n_classes} text_instances={len(manifest.records)} "
          f"pc_instances={n_pc} out={args.out}")
    return EXIT_OK


def _toy_gradcheck_config(run: RunConfig | None) -> TrainConfig:
    if run is not None:
        return run.train
    # desk-scale toy: small enough for central differences over every weight
    return TrainConfig(d=8, heads=2, layers=2)


def cmd_gradcheck(args) -> int:
    run = RunConfig.from_file(args.config) if args.config else None
    cfg = _toy_gradcheck_config(run)
    rng = np.random.default_rng(args.seed)
    B, L, d_in = 4, 5, cfg.d
    model = init_model(cfg, d_in)
    text = rng.normal(size=(B, L, d_in))
    pc = rng.normal(size=(B, L, d_in))
    pairing = BatchPairing.from_groups([0, 0, 1, 2])
    loss_cfg = cfg.loss_config()

    def f():
        c = ad.exp(model.log_c)
        h_t, _ = aggregate_batch(encode(Tensor(text), model.enc_t),
                                 model.scale_t, c)
        h_p, _ = aggregate_batch(encode(Tensor(pc), model.enc_p),
                                 model.scale_p, c)
        return total_loss(h_t, h_p, pairing, loss_cfg, c)[0]

    groups: dict[str, list] = {}
    for name, p in model.named_params().items():
        group = name.split(".")[0]
        groups.setdefault(group, []).append(p)

    if os.environ.get(CORRUPT_ENV):
        ad.set_corrupt_backward(True)
    worst_overall = 0.0
    try:
        for group in sorted(groups):
            err = grad_check(f, groups[group])
            worst_overall = max(worst_overall, err)
            print(f"group={group} max_rel_error={err:.3e}")
    finally:
        ad.set_corrupt_backward(False)
    if worst_overall < 1e-4:
        print(f"gradcheck ok max_rel_error={worst_overall:.3e}")
        return EXIT_OK
    print(f"gradcheck FAILED max_rel_error={worst_overall:.3e}")
    return EXIT_CHECK_FAILED


def cmd_train(args) -> int:
    run = _load_run_config(args.config)
    dataset = PairDataset.load(args.data)
    log_path = args.log or (str(args.out) + ".metrics")
    Path(log_path).unlink(missing_ok=True)
    model, opt, lines = train(dataset, run.train, log_path=log_path)
    save_checkpoint(args.out, model, opt)
    metrics = evaluate_model(model, dataset)
    print(lines[-1])
    print(f"checkpoint={args.out} metrics_log={log_path} "
          f"containment={metrics['containment']!r} rsum={metrics['rsum']!r}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    dataset = PairDataset.load(args.data)
    if dataset.width != model.d_in:
        raise ConfigError(
            f"checkpoint expects feature width {model.d_in}, "
            f"data provides {dataset.width}")
    ks = tuple(int(k) for k in args.ks.split(","))
    metrics = evaluate_model(model, dataset, ks=ks)
    header = "direction " + " ".join(f"{'R@' + str(k):>8}" for k in ks)
    print(header)
    for direction, key in (("text->pc", "text_to_pc"), ("pc->text", "pc_to_text")):
        row = " ".join(f"{metrics[key][k]:8.2f}" for k in ks)
        print(f"{direction:<10}{row}")
    for key in ("text_to_pc", "pc_to_text"):
        for k in ks:
            print(f"{key}.r@{k}={metrics[key][k]!r}")
    print(f"rsum={metrics['rsum']!r}")
    print(f"containment={metrics['containment']!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hypalign",
        description="Hyperbolic alignment of paired feature sequences: "
                    "synthesize data, gradient-check, train and evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    p.add_argument("--spec", help="config file with synth.* keys (defaults used "
                                  "if omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of the full loss gradient")
    p.add_argument("--config", help="config file with train.* keys")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("train", help="train on a data directory")
    p.add_argument("--config", help="config file")
    p.add_argument("--data", required=True, help="directory with manifest.tsv")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", help="metrics log path (default: <out>.metrics)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a data directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ks", default="1,5,10", help="comma-separated cutoffs")
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except UsageError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
