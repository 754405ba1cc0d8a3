"""Command line entry point: ``dcrnn <verb> [options]``.

Verbs::

    gen-data            write the train/test datasets of an experiment (first trial)
    train               train one model of an experiment and save a checkpoint
    eval                evaluate a checkpoint on a dataset file
    reproduce NAME      run every trial of an experiment and write the report
    inspect CHECKPOINT  print checkpoint metadata and stability diagnostics

Exit codes: 0 success, 1 unexpected package error, 2 usage or config error,
3 malformed file, 4 numerical failure (divergence, non-convergence,
degeneracy), 5 experiment failure, 6 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .. import dynsys, stability
from ..errors import (ConfigError, ConvergenceError, DcrnnError, DegeneracyError, DivergenceError,
                      ExperimentError, FormatError)
from ..net import DcrnnParams
from ..train import evaluate, metrics_line, train_model
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import EXPERIMENTS, ExperimentSpec, parse_config
from .experiment import build_datasets, run_experiment, variants_of
from .presets import PRESETS, preset

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_NUMERIC = 4
EXIT_EXPERIMENT = 5
EXIT_IO = 6


def _global_flags(p):
    p.add_argument("--seed", type=int, default=None, help="top-level seed (overrides the config)")
    p.add_argument("--config", type=Path, default=None, help="experiment config file")
    p.add_argument("--out", type=Path, default=None, help="output path or directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcrnn", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-data", help="write train/test dataset files")
    _global_flags(p)
    p.add_argument("--experiment", choices=EXPERIMENTS, help="use a built-in preset instead of --config")
    p.add_argument("--scale", choices=sorted(PRESETS), default="desk")

    p = sub.add_parser("train", help="train one model and save a checkpoint")
    _global_flags(p)
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--scale", choices=sorted(PRESETS), default="desk")
    p.add_argument("--model", default=None, help="model label (default: first model)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    _global_flags(p)
    p.add_argument("checkpoint", type=Path)
    p.add_argument("data", type=Path)

    p = sub.add_parser("reproduce", help="run all trials of an experiment and write the report")
    _global_flags(p)
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--scale", choices=sorted(PRESETS), default="desk")
    p.add_argument("--trials", type=int, default=None)

    p = sub.add_parser("inspect", help="show checkpoint metadata")
    p.add_argument("checkpoint", type=Path)
    return parser


def _spec(args) -> ExperimentSpec:
    if args.config is not None:
        spec = parse_config(args.config)
    else:
        name = getattr(args, "experiment", None)
        if name is None:
            raise ConfigError("either --config or an experiment name is required")
        spec = preset(name, args.scale)
    if args.seed is not None:
        spec.seed = args.seed
    if getattr(args, "trials", None) is not None:
        if args.trials < 1:
            raise ConfigError("--trials must be at least 1")
        spec.trials = args.trials
    if args.out is not None:
        spec.out = str(args.out)
    return spec


def cmd_gen_data(args, out):
    spec = _spec(args)
    target = Path(spec.out)
    target.mkdir(parents=True, exist_ok=True)
    for variant in variants_of(spec):
        train, test = build_datasets(spec, spec.seed, variant)
        tag = spec.name if variant is None else f"{spec.name}-T{variant}"
        for part, ds in (("train", train), ("test", test)):
            if ds is None:
                continue
            path = target / f"{tag}-{part}.dcds"
            dynsys.save_dataset(path, ds)
            print(f"{path}\t{len(ds)} sequences\tT={ds.seq_len}\td={ds.input_dim}", file=out)


def cmd_train(args, out):
    spec = _spec(args)
    models = {m.label: m for m in spec.models}
    label = args.model or spec.models[0].label
    if label not in models:
        raise ConfigError(f"unknown model {label!r}; choose from {', '.join(models)}")
    variant = variants_of(spec)[0]
    train, test = build_datasets(spec, spec.seed, variant)
    cfg = spec.train_config(models[label], spec.seed)
    target = Path(spec.out)
    target.mkdir(parents=True, exist_ok=True)
    metrics_path = target / f"{label}-metrics.jsonl"
    with metrics_path.open("w") as fh:
        res = train_model(cfg, train, test, on_epoch=lambda rec: fh.write(metrics_line(rec) + "\n"))
    ckpt = target / f"{label}.dcrn"
    save_checkpoint(ckpt, Checkpoint(res.params, res.adam.step, res.rng_state,
                                     {"experiment": spec.name, "model": label, "seed": spec.seed}))
    print(metrics_line(res.metrics[-1]) if res.metrics else "{}", file=out)
    print(f"checkpoint: {ckpt}", file=out)


def cmd_eval(args, out):
    c = load_checkpoint(args.checkpoint)
    data = dynsys.load_dataset(args.data)
    print(json.dumps(evaluate(c.params, data), sort_keys=True), file=out)


def cmd_reproduce(args, out):
    from .report import emit_report

    spec = _spec(args)
    result = run_experiment(spec)
    written = emit_report(result, spec.out)
    for row in result.summary():
        v = "" if row["variant"] is None else f"T={row['variant']}\t"
        print(f"{v}{row['model']}\t{row['metric']}\t{row['mean']:.6g} +/- {row['std']:.6g}"
              f"\t({row['n_ok']} ok, {row['n_failed']} failed)", file=out)
    print(f"wrote {len(written)} files to {spec.out}", file=out)


def cmd_inspect(args, out):
    c = load_checkpoint(args.checkpoint)
    p = c.params
    info = {"cell": c.cell, "n": p.n, "d": p.d, "o": p.o, "k": p.k, "step": c.step,
            "num_params": p.num_params(), "tensors": {k: list(v.shape) for k, v in p.tensors().items()},
            "has_rng_state": c.rng_state is not None, "extra": c.extra}
    if isinstance(p, DcrnnParams) and p.k >= 1:
        report = stability.stability_report(p)
        info["stability"] = {k: report[k] for k in ("spectral_radius", "eig_loss", "jacobian_bound", "error")}
    print(json.dumps(info, indent=2, sort_keys=True), file=out)


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "reproduce": cmd_reproduce, "inspect": cmd_inspect}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_USAGE
    if isinstance(exc, FormatError):
        return EXIT_FORMAT
    if isinstance(exc, (DivergenceError, ConvergenceError, DegeneracyError)):
        return EXIT_NUMERIC
    if isinstance(exc, ExperimentError):
        return EXIT_EXPERIMENT
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_INTERNAL


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.verb](args, out)
    except (DcrnnError, OSError) as exc:
        print(f"dcrnn {args.verb}: error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
