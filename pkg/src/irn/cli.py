"""Command-line front end: dataset generation, training, evaluation, ablation
suites, and report emission.

Exit codes: 0 on success, 1 on configuration/validation errors, 2 on runtime
failures. The output directory resolves as: explicit --output-dir flag, then
the IRN_OUTPUT_DIR environment variable, then ./runs.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import config as cfg
from .synthdata import build_dataset, load_manifest
from .interaction import build_model
from .train_eval import (ablation_registry, check_dataset_compatible,
                         evaluate, load_checkpoint, load_split, read_metrics,
                         run_ablation_suite, train)

COMMANDS = ("generate-data", "train", "eval", "ablate", "report")


class CliValidationError(Exception):
    pass


@dataclass
class CliConfig:
    command: str
    config_path: str | None = None
    overrides: dict = field(default_factory=dict)
    output_dir: str = "runs"
    seed: int | None = None
    extra: dict = field(default_factory=dict)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliValidationError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="irn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", default=None,
                           help="JSON config file (defaults used when omitted)")
            p.add_argument("--set", dest="overrides", action="append", default=[],
                           metavar="KEY=VALUE", help="dotted config override")
            p.add_argument("--seed", type=int, default=None)
        p.add_argument("--output-dir", default=None)

    g = sub.add_parser("generate-data", help="render a synthetic dataset")
    common(g, needs_config=False)
    g.add_argument("--n-train", type=int, default=1200)
    g.add_argument("--n-val", type=int, default=300)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--frames", type=int, default=16)
    g.add_argument("--size", type=int, default=64)

    t = sub.add_parser("train", help="train a model on a generated dataset")
    common(t)
    t.add_argument("--data", required=True, help="dataset directory")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    common(e, needs_config=False)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="val", choices=("train", "val"))

    a = sub.add_parser("ablate", help="run the registered ablation rows")
    common(a)
    a.add_argument("--data", required=True)
    a.add_argument("--tables", default=None,
                   help="comma-separated table filter, e.g. spe,trajectory")

    r = sub.add_parser("report", help="render tables and plots from metrics")
    common(r, needs_config=False)
    r.add_argument("--metrics-dir", required=True)
    return parser


def parse_and_validate(argv) -> CliConfig:
    """Resolve argv into a CliConfig; raises CliValidationError on bad input."""
    args = _build_parser().parse_args(argv)
    overrides = {}
    for item in getattr(args, "overrides", []):
        if "=" not in item:
            raise CliValidationError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    out_dir = args.output_dir or os.environ.get("IRN_OUTPUT_DIR") or "runs"
    extra = {k: v for k, v in vars(args).items()
             if k not in ("command", "config", "overrides", "seed", "output_dir")}
    return CliConfig(command=args.command,
                     config_path=getattr(args, "config", None),
                     overrides=overrides,
                     output_dir=out_dir,
                     seed=getattr(args, "seed", None),
                     extra=extra)


def resolve_config(cli: CliConfig) -> cfg.ExperimentConfig:
    """Defaults, then file values, then --set overrides, then --seed."""
    if cli.config_path is not None:
        if not Path(cli.config_path).exists():
            raise CliValidationError(f"config file not found: {cli.config_path}")
        config = cfg.load_config(cli.config_path)
    else:
        config = cfg.desk_config()
    if cli.overrides:
        config = cfg.apply_overrides(config, cli.overrides)
    if cli.seed is not None:
        config = cfg.apply_overrides(config, {"seed": cli.seed})
    return config


def _require_dataset(path) -> dict:
    if not Path(path).exists():
        raise CliValidationError(f"dataset path not found: {path}")
    try:
        return load_manifest(path)
    except FileNotFoundError as exc:
        raise CliValidationError(str(exc)) from None


def _cmd_generate_data(cli: CliConfig) -> int:
    out = Path(cli.output_dir)
    manifest = build_dataset(out, n_train=cli.extra["n_train"],
                             n_val=cli.extra["n_val"], master_seed=cli.seed or 0,
                             frames_per_clip=cli.extra["frames"],
                             frame_size=cli.extra["size"])
    n_train = len(manifest["splits"]["train"])
    n_val = len(manifest["splits"]["val"])
    print(f"wrote {n_train} train / {n_val} val clips to {out}")
    return 0


def _cmd_train(cli: CliConfig) -> int:
    config = resolve_config(cli)
    manifest = _require_dataset(cli.extra["data"])
    check_dataset_compatible(manifest, config)
    train_samples = load_split(cli.extra["data"], "train", manifest)
    val_samples = load_split(cli.extra["data"], "val", manifest)
    out = Path(cli.output_dir) / "train"
    model = build_model(config)
    history = train(model, train_samples, val_samples, config, out_dir=out,
                    log=print)
    final = [h for h in history if h.split == "val"][-1]
    print(f"final val top1 {final.top1:.4f} top5 {final.top5:.4f} "
          f"(checkpoint in {out})")
    return 0


def _cmd_eval(cli: CliConfig) -> int:
    ckpt = cli.extra["checkpoint"]
    if not Path(ckpt).exists():
        raise CliValidationError(f"checkpoint not found: {ckpt}")
    model, config = load_checkpoint(ckpt)
    manifest = _require_dataset(cli.extra["data"])
    check_dataset_compatible(manifest, config)
    samples = load_split(cli.extra["data"], cli.extra["split"], manifest)
    record = evaluate(model, samples, config, split=cli.extra["split"])
    print(json.dumps({
        "split": record.split, "top1": record.top1, "top5": record.top5,
        "loss": record.loss, "config_hash": record.config_hash,
    }, sort_keys=True))
    return 0


def _cmd_ablate(cli: CliConfig) -> int:
    config = resolve_config(cli)
    manifest = _require_dataset(cli.extra["data"])
    check_dataset_compatible(manifest, config)
    rows = ablation_registry()
    if cli.extra.get("tables"):
        wanted = set(cli.extra["tables"].split(","))
        unknown = wanted - {r.table for r in rows}
        if unknown:
            raise CliValidationError(f"unknown ablation tables: {sorted(unknown)}")
        rows = [r for r in rows if r.table in wanted]
    train_samples = load_split(cli.extra["data"], "train", manifest)
    val_samples = load_split(cli.extra["data"], "val", manifest)
    out = Path(cli.output_dir) / "ablations"
    results = run_ablation_suite(config, train_samples, val_samples, out,
                                 rows=rows, log=print)
    failures = [r for r in results if "error" in r]
    print(f"completed {len(results) - len(failures)}/{len(results)} rows "
          f"-> {out / 'ablation_results.json'}")
    return 0


def render_report(metrics_dir, out_dir) -> str:
    """Build the text tables; returns the report string (also written out)."""
    metrics_dir = Path(metrics_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = metrics_dir / "ablation_results.json"
    lines = []
    if not results_path.exists():
        lines.append("no runs found")
    else:
        with open(results_path) as fh:
            results = json.load(fh)
        by_table: dict[str, list] = {}
        for r in results:
            by_table.setdefault(r["table"], []).append(r)
        seen = {(r["table"], r["row"]) for r in results}
        missing = [(r.table, r.row) for r in ablation_registry()
                   if (r.table, r.row) not in seen]
        for table in sorted(by_table):
            rows = sorted(by_table[table], key=lambda r: r["row"])
            lines.append(f"== {table} ==")
            lines.append(f"{'row':>3}  {'label':<34} {'top1':>7} {'top5':>7} {'loss':>8}")
            for r in rows:
                if "error" in r:
                    lines.append(f"{r['row']:>3}  {r['label']:<34} FAILED: {r['error']}")
                else:
                    lines.append(
                        f"{r['row']:>3}  {r['label']:<34} "
                        f"{r['top1']:7.4f} {r['top5']:7.4f} {r['loss']:8.4f}")
            lines.append("")
        if missing:
            lines.append("missing rows: "
                         + ", ".join(f"{t} row {i}" for t, i in missing))
    report = "\n".join(lines).rstrip() + "\n"
    (out_dir / "report.txt").write_text(report)
    _plot_runs(metrics_dir, out_dir)
    return report


def _plot_runs(metrics_dir: Path, out_dir: Path) -> None:
    runs_dir = metrics_dir / "runs"
    run_files = sorted(runs_dir.glob("*/metrics.jsonl")) if runs_dir.exists() else []
    if (metrics_dir / "metrics.jsonl").exists():
        run_files.append(metrics_dir / "metrics.jsonl")
    if not run_files:
        return
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for path in run_files:
        records = [r for r in read_metrics(path) if r.split == "val"]
        if not records:
            continue
        ax.plot([r.epoch for r in records], [r.top1 for r in records],
                label=path.parent.name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("val top-1")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    fig.savefig(out_dir / "accuracy_vs_epoch.png", dpi=110)
    plt.close(fig)


def _cmd_report(cli: CliConfig) -> int:
    metrics_dir = Path(cli.extra["metrics_dir"])
    if not metrics_dir.exists():
        raise CliValidationError(f"metrics dir not found: {metrics_dir}")
    report = render_report(metrics_dir, Path(cli.output_dir) / "report")
    print(report, end="")
    return 0


_HANDLERS = {
    "generate-data": _cmd_generate_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    try:
        cli = parse_and_validate(argv if argv is not None else sys.argv[1:])
    except CliValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return _HANDLERS[cli.command](cli)
    except (CliValidationError, cfg.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
