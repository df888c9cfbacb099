"""Command-line entry point: ``cddg <command> [config.yaml] [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .data import DataConfigError, export_directory, leave_one_out
from .evaluation import (ABLATION_VARIANTS, export_embeddings, export_projection, probe_disentanglement,
                         run_ablation, run_benchmark, run_one)
from .training import VARIANTS, load_checkpoint
from .verify import run_verification

log = logging.getLogger("cddg")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("need at least one seed")
    return seeds


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _check_target(ds, target: str) -> None:
    if target not in ds.domain_names:
        raise UsageError(f"unknown target domain {target!r}; choose from {', '.join(ds.domain_names)}")


def cmd_gen_data(cfg: ExperimentConfig, args) -> int:
    if cfg.data.source != "synthetic":
        raise ConfigError("gen-data needs data.source: synthetic")
    ds = cfg.load_dataset()
    out = Path(args.out) if args.out else cfg.output_path() / "dataset"
    export_directory(ds, out)
    _write(out.parent / f"{out.name}.config.yaml", cfg.to_yaml())
    print(f"wrote {len(ds)} images to {out}")
    print(f"label space: K={ds.space.num_classes} classes ({', '.join(ds.class_names)}), "
          f"M={ds.space.num_domains} domains ({', '.join(ds.domain_names)}), "
          f"combined size {ds.space.combined_size}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, args) -> int:
    cfg = cfg.with_train(**{k: v for k, v in (("variant", args.variant), ("seed", args.seed)) if v is not None})
    ds = cfg.load_dataset()
    _check_target(ds, args.target)
    tcfg = cfg.train_config()
    out = Path(args.out) if args.out else cfg.output_path() / f"train_{tcfg.variant}_{args.target}_seed{tcfg.seed}"
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "resolved_config.yaml", cfg.to_yaml())
    result, records = run_one(tcfg, ds, args.target, tcfg.seed, out_dir=out)
    selection = {r.method: {"checkpoint": r.checkpoint_id, "target_accuracy": r.accuracy} for r in records}
    _write(out / "selection.json", json.dumps(selection, indent=2, sort_keys=True) + "\n")
    for r in records:
        print(f"{r.method:6s} checkpoint {r.checkpoint_id}  target accuracy {100 * r.accuracy:.1f}")
    print(f"run directory: {out}")
    return EXIT_OK


def _emit_results(out: Path, result, name: str) -> None:
    _write(out / f"{name}.jsonl", result.to_jsonl())
    summary = [asdict(row) | {"formatted": row.formatted()} for row in result.summary]
    _write(out / "summary.json", json.dumps(summary, indent=2) + "\n")
    _write(out / "table.txt", result.render() + "\n")


def cmd_benchmark(cfg: ExperimentConfig, args) -> int:
    if args.variant:
        cfg = cfg.with_train(variant=args.variant)
    ds = cfg.load_dataset()
    out = Path(args.out) if args.out else cfg.output_path() / f"benchmark_{cfg.train.variant}"
    _write(out / "resolved_config.yaml", cfg.to_yaml())
    result = run_benchmark(cfg.train_config(), ds, args.seeds, workers=args.workers)
    _emit_results(out, result, "results")
    print(result.render())
    print(f"{len(result.records)} records written to {out / 'results.jsonl'}")
    return EXIT_OK


def cmd_ablate(cfg: ExperimentConfig, args) -> int:
    ds = cfg.load_dataset()
    out = Path(args.out) if args.out else cfg.output_path() / "ablation"
    _write(out / "resolved_config.yaml", cfg.to_yaml())
    result = run_ablation(cfg.train_config(), ds, args.seeds, workers=args.workers)
    _emit_results(out, result.benchmark, "ablation")
    _write(out / "trends.json", json.dumps(result.flags, indent=2) + "\n")
    _write(out / "table.txt", result.render() + "\n")
    print(result.render())
    return EXIT_OK


def _bundle_and_plan(cfg: ExperimentConfig, args):
    ds = cfg.load_dataset()
    _check_target(ds, args.target)
    bundle = load_checkpoint(args.checkpoint, space=ds.space)
    return ds, bundle, leave_one_out(ds, args.target, args.seed)


def cmd_probe(cfg: ExperimentConfig, args) -> int:
    ds, bundle, plan = _bundle_and_plan(cfg, args)
    reports = probe_disentanglement(bundle, plan, ds, seed=args.seed)
    for r in reports:
        print(f"{r.branch} -> {r.target:6s} accuracy {r.accuracy:.3f} (chance {r.chance:.3f})")
    if args.out:
        _write(Path(args.out), json.dumps([asdict(r) for r in reports], indent=2) + "\n")
    return EXIT_OK


def cmd_export(cfg: ExperimentConfig, args) -> int:
    ds, bundle, plan = _bundle_and_plan(cfg, args)
    ids = {
        "source_train": plan.source_train,
        "source_val": plan.source_val,
        "target": plan.target_all,
        "all": tuple(e.example_id for e in ds.examples),
    }[args.split]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_embeddings(bundle, ds, ids, out)
    print(f"wrote {2 * len(ids)} embedding rows to {out}")
    if args.emit_plot_data:
        proj = out.with_name(out.stem + ".pca2d.csv")
        export_projection(bundle, ds, ids, proj)
        print(f"wrote 2-D projection table to {proj}")
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, args) -> int:
    started = time.perf_counter()
    report = run_verification()
    print(report.render())
    print(f"{len(report.checks) - len(report.failures())}/{len(report.checks)} checks passed "
          f"in {time.perf_counter() - started:.1f}s")
    return EXIT_OK if report.passed else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cddg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", nargs="?", help="YAML config file (defaults apply when omitted)")
        p.set_defaults(func=func)
        return p

    p = command("gen-data", cmd_gen_data, "render the synthetic dataset to disk")
    p.add_argument("--out", help="dataset directory (default: <output_dir>/dataset)")

    p = command("train", cmd_train, "one leave-one-domain-out training run")
    p.add_argument("--target", required=True, help="held-out domain name")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--seed", type=int, help="overrides train.seed (default 0)")
    p.add_argument("--out", help="run directory")

    for name, func, help_ in (("benchmark", cmd_benchmark, "every target x seed, TDVS and Oracle"),
                              ("ablate", cmd_ablate, f"ablation over {', '.join(ABLATION_VARIANTS)}")):
        p = command(name, func, help_)
        p.add_argument("--seeds", type=_seeds, default=[0], help="comma-separated, e.g. 0,1,2")
        p.add_argument("--workers", type=int, default=1, help="parallel training processes")
        p.add_argument("--out", help="results directory")
        if name == "benchmark":
            p.add_argument("--variant", choices=VARIANTS)

    for name, func, help_ in (("probe", cmd_probe, "linear probes on frozen g_v / g_s"),
                              ("export", cmd_export, "write embeddings for plotting")):
        p = command(name, func, help_)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--target", required=True, help="held-out domain the checkpoint was trained without")
        p.add_argument("--seed", type=int, default=0, help="split seed used in training")
        if name == "export":
            p.add_argument("--split", choices=("source_train", "source_val", "target", "all"), default="target")
            p.add_argument("--out", required=True, help="CSV path")
            p.add_argument("--emit-plot-data", action="store_true", help="also write a 2-D PCA table")
        else:
            p.add_argument("--out", help="write reports as JSON")

    command("verify", cmd_verify, "loss oracles, gradient checks and invariants")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(cfg, args)
    except (ConfigError, DataConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        log.debug("command failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
