"""Command-line entry point: ``mejem <subcommand>``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig
from .errors import DivergenceError, MejemError

log = logging.getLogger("mejem")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "output_dir", None):
        changes["output_dir"] = args.output_dir
    return (cfg.replace(**changes) if changes else cfg).validate()


def cmd_init_config(args) -> int:
    cfg = ExperimentConfig()
    if args.out == "-":
        sys.stdout.write(cfg.to_json() + "\n")
    else:
        cfg.dump(args.out)
        print(args.out)
    return 0


def cmd_gen_data(args) -> int:
    from .runner import load_datasets, resolve_output_dir, write_datasets

    cfg = _load_config(args)
    out = Path(args.out) if args.out else resolve_output_dir(cfg.output_dir) / "data"
    written = write_datasets(load_datasets(cfg), out)
    for name, path in written.items():
        print(f"{name}\t{path}")
    return 0


def cmd_train(args) -> int:
    from .runner import train

    res = train(_load_config(args), resume=args.resume)
    print(f"{res.checkpoint_path}\t{res.checkpoint_hash}")
    return 0


def cmd_evaluate(args) -> int:
    from .runner import evaluate

    cfg = _load_config(args)
    report = evaluate(cfg, args.checkpoint, out_dir=args.eval_dir)
    print("model\tscore_kind\tood_dataset\tauroc\tfpr95\tprecision")
    for m in report.metrics:
        print(f"{m['model']}\t{m['score_kind']}\t{m['ood_dataset']}\t{m['auroc']:.4f}\t"
              f"{m['fpr95']:.4f}\t{m['precision']:.4f}")
    return 0


def cmd_ablate(args) -> int:
    from .runner import ablate, resolve_output_dir

    cfg = _load_config(args)
    reports = ablate(cfg, seeds=args.seeds, cells=args.cells)
    root = resolve_output_dir(cfg.output_dir)
    print(f"{len(reports)} runs -> {root / 'ablation_summary.csv'}")
    print((root / "ablation_summary.csv").read_text(), end="")
    return 0


def cmd_report(args) -> int:
    from .report import build_report

    out = build_report(args.run_dir, args.out)
    print(json.dumps(out, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mejem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="experiment config JSON (defaults if omitted)")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--output-dir", help="override config output_dir")
        return p

    p = sub.add_parser("init-config", help="write the default config")
    p.add_argument("--out", default="config.json", help="destination path, '-' for stdout")
    p.set_defaults(func=cmd_init_config)

    p = with_config(sub.add_parser("gen-data", help="materialise dataset CSVs"))
    p.add_argument("--out", help="directory for the CSVs (default <output_dir>/data)")
    p.set_defaults(func=cmd_gen_data)

    p = with_config(sub.add_parser("train", help="train a model"))
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = with_config(sub.add_parser("evaluate", help="score OOD sets and write metrics"))
    p.add_argument("--checkpoint", help="default <output_dir>/checkpoint.npz")
    p.add_argument("--eval-dir", help="where to write artifacts (default output_dir)")
    p.set_defaults(func=cmd_evaluate)

    p = with_config(sub.add_parser("ablate", help="run the ablation grid"))
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--cells", nargs="+")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="render figures and summary tables for run directories")
    p.add_argument("run_dir")
    p.add_argument("--out", help="default <run_dir>/report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: numerical divergence: {exc}", file=sys.stderr)
        print(json.dumps(exc.diagnostics, sort_keys=True, default=str), file=sys.stderr)
        return exc.exit_code
    except MejemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
