"""Command-line surface: train, eval, expressivity, gradcheck.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from . import data as dio
from . import expressivity as ex
from . import gradcheck as gc
from . import train as tr
from .ansatz import AnsatzConfig
from .errors import QmambaError, UsageError

__all__ = ["cli", "main", "build_parser"]


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exceptions, not sys.exit(2)."""

    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="qmamba", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a classifier per a config file")
    t.add_argument("--config", required=True, help="flat key=value config file")
    t.add_argument("--backend", choices=["classical", "quantum", "hybrid"])
    t.add_argument("--subset", type=int, help="truncate both splits to N samples")
    t.add_argument("--downsample", type=int, choices=[1, 2, 4])
    t.add_argument("--data", help="dataset directory (overrides config/env)")
    t.add_argument("--out", help="output directory override")
    t.add_argument("--seed", type=int)
    t.add_argument(
        "--baseline-dmodel",
        type=int,
        choices=[16, 128],
        help="override d_model for baseline studies",
    )
    t.add_argument("--timing", action="store_true",
                   help="record real wall times (breaks CSV byte-identity)")

    e = sub.add_parser("eval", help="score a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True,
                   help="'synthetic' or a directory of MNIST IDX files")
    e.add_argument("--downsample", type=int, choices=[1, 2, 4], default=1)
    e.add_argument("--subset", type=int, default=0)
    e.add_argument("--seed", type=int, default=0, help="synthetic generation seed")
    e.add_argument("--synthetic-n", type=int, default=128)
    e.add_argument("--synthetic-length", type=int, default=32)
    e.add_argument("--batch-size", type=int, default=64)

    x = sub.add_parser("expressivity", help="score an ansatz against Haar")
    x.add_argument("--qubits", type=int, required=True)
    x.add_argument("--layers", type=int, required=True)
    x.add_argument("--pattern", choices=["ring", "all_to_all", "none"], default="ring")
    x.add_argument("--pairs", type=int, default=5000)
    x.add_argument("--bins", type=int, default=75)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--out", help="also write the report document here")
    x.add_argument("--samples-csv", help="also write raw fidelity samples here")

    g = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    g.add_argument(
        "--module", choices=["qsim", "ansatz", "model", "all"], default="all"
    )
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--instances", type=int, default=0,
                   help="override instance count (0 = suite default)")
    return parser


def _cmd_train(args) -> int:
    cfg = tr.parse_config_file(args.config)
    overrides = {}
    if args.backend is not None:
        overrides["backend"] = args.backend
    if args.subset is not None:
        overrides["subset"] = args.subset
    if args.downsample is not None:
        overrides["downsample"] = args.downsample
    if args.data is not None:
        overrides["dataset_dir"] = args.data
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.baseline_dmodel is not None:
        overrides["d_model"] = args.baseline_dmodel
    if args.timing:
        overrides["timing"] = True
    if overrides:
        cfg = replace(cfg, **overrides)
    result = tr.train(cfg)
    last_train = [r for r in result.records if r.split == "train"][-1]
    last_test = [r for r in result.records if r.split == "test"][-1]
    print(f"backend={cfg.backend} epochs={cfg.epochs} iterations={last_train.iteration}")
    print(f"final train loss={last_train.loss:.6f} acc={last_train.accuracy:.4f}")
    print(f"final test  loss={last_test.loss:.6f} acc={last_test.accuracy:.4f}")
    print(f"metrics: {result.metrics_path}")
    print(f"checkpoint: {result.final_checkpoint}")
    return 0


def _cmd_eval(args) -> int:
    if args.data == "synthetic":
        from .mamba import MambaModel

        num_classes = MambaModel.load(args.checkpoint).cfg.num_classes
        ds = dio.synthetic_dataset(
            args.synthetic_n, args.synthetic_length, num_classes, seed=args.seed
        )
    else:
        paths = tr.resolve_mnist_dir(args.data)
        ds = dio.load_idx(paths["test_images"], paths["test_labels"])
        if args.downsample != 1:
            ds = dio.downsample(ds, args.downsample)
    if args.subset:
        ds = dio.take_subset(ds, min(args.subset, len(ds)))
    loss, acc = tr.evaluate(args.checkpoint, ds, batch_size=args.batch_size)
    print(f"samples={len(ds)} loss={loss:.6f} accuracy={acc:.4f}")
    return 0


def _cmd_expressivity(args) -> int:
    cfg = AnsatzConfig(args.qubits, args.layers, args.pattern)
    report, fids = ex.analyze(cfg, args.pairs, args.bins, args.seed)
    text = ex.format_report(report, cfg, args.pairs, args.bins, args.seed)
    sys.stdout.write(text)
    if args.out:
        ex.write_report(args.out, report, cfg, args.pairs, args.bins, args.seed)
    if args.samples_csv:
        ex.write_fidelities_csv(args.samples_csv, fids)
    return 0


def _cmd_gradcheck(args) -> int:
    failures = []
    if args.module in ("qsim", "all"):
        n = args.instances or 100
        err = gc.check_qsim(n_instances=n, seed=args.seed)
        ok = err <= 1e-5
        print(f"qsim adjoint vs finite differences ({n} circuits): "
              f"max rel err {err:.3e} [{'pass' if ok else 'FAIL'}]")
        if not ok:
            failures.append("qsim")
    if args.module in ("ansatz", "all"):
        n = args.instances or 50
        err = gc.check_ansatz(n_instances=n, seed=args.seed)
        ok = err <= 1e-5
        print(f"projector gradients ({n} instances): "
              f"max rel err {err:.3e} [{'pass' if ok else 'FAIL'}]")
        if not ok:
            failures.append("ansatz")
    if args.module in ("model", "all"):
        errs = gc.check_model(seed=args.seed)
        worst = max(errs.values())
        for (backend, group), err in sorted(errs.items()):
            print(f"model[{backend}] group {group}: max rel err {err:.3e}")
        ok = worst <= 1e-3
        print(f"model end-to-end: max rel err {worst:.3e} [{'pass' if ok else 'FAIL'}]")
        if not ok:
            failures.append("model")
    if failures:
        raise QmambaError(f"gradient checks failed: {', '.join(failures)}")
    return 0


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # --help paths
        return int(exc.code or 0)
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "expressivity":
            return _cmd_expressivity(args)
        return _cmd_gradcheck(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (QmambaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
