"""Command-line front end.

Subcommands: gen-data, distill, eval, verify, matrix, report.  Exit code
0 on success, 1 on validation problems (bad flags, missing files, schema
violations), 2 on runtime failures inside a module.  FDD_SEED provides
the default seed when --seed is omitted.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .datasets import (BiasSpec, DatasetError, LabeledDataset, apply_color_bias,
                       apply_grayscale_bias, build_balanced_test, colorize_uniform,
                       default_palette, generate_glyph_dataset)
from .distill import DistillConfig, distill, load_synthetic, save_synthetic
from .fairness import EvalConfig, evaluate, write_report_csv
from .matching import MatchSpec
from .matrix import ConfigError, load_config, run_matrix
from .oracle import run_verification

MODE_FLAGS = {"fg": "foreground", "bg": "background", "gray": "grayscale"}
WEIGHTING_FLAGS = {"vanilla": "vanilla_ratio", "fairdd": "fairdd_uniform",
                   "inverse": "inverse_ratio"}
MATCHER_FLAGS = {"dm": "distribution", "gm": "gradient"}


class CliError(Exception):
    """Validation failure: bad flag, missing file, schema violation."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with code 2
        raise CliError(message)


def _default_seed() -> int:
    try:
        return int(os.environ.get("FDD_SEED", "0"))
    except ValueError:
        raise CliError("FDD_SEED must be an integer")


def _build_parser() -> _Parser:
    parser = _Parser(prog="fairdistill", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a biased dataset (and its balanced test)")
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--groups", type=int, default=4)
    p.add_argument("--br", type=float, default=0.9)
    p.add_argument("--mode", choices=sorted(MODE_FLAGS), default="fg")
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--test-per-class", type=int, default=80)
    p.add_argument("--resolution", type=int, nargs=2, default=[16, 16], metavar=("H", "W"))
    p.add_argument("--minority-weights", type=str, default=None,
                   help="comma-separated positive weights for the minority groups")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--test-out", default=None)

    p = sub.add_parser("distill", help="condense a dataset into a synthetic set")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ipc", type=int, default=10)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--lr", type=float, default=5.0)
    p.add_argument("--matcher", choices=sorted(MATCHER_FLAGS), default="dm")
    p.add_argument("--distance", choices=["mse", "mae", "cosine"], default="mse")
    p.add_argument("--weighting", choices=sorted(WEIGHTING_FLAGS), default="fairdd")
    p.add_argument("--init", choices=["random_real", "noise", "hybrid"],
                   default="random_real")
    p.add_argument("--group-batch", type=int, default=64)
    p.add_argument("--arch", default="convnet")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("eval", help="train on a synthetic set and report fairness")
    p.add_argument("--synthetic", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--arch", default="convnet")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--seeds", type=str, default="0,1,2")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)

    p = sub.add_parser("verify", help="verify the analytic fixed-point and bound claims")
    p.add_argument("--instances", type=int, default=500)
    p.add_argument("--jensen-pairs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("matrix", help="run an experiment grid from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("report", help="render a comparison table from matrix CSV rows")
    p.add_argument("--rows", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    return parser


def _parse_weights(text: Optional[str], groups: int):
    if text is None:
        return None
    try:
        weights = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise CliError("--minority-weights must be comma-separated numbers")
    total = sum(weights)
    if total <= 0 or len(weights) != groups - 1:
        raise CliError("--minority-weights needs %d positive values" % (groups - 1))
    return tuple(w / total for w in weights)


def _require_file(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError("file %s does not exist" % path)
    return p


def _cmd_gen_data(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    mode = MODE_FLAGS[args.mode]
    weights = _parse_weights(args.minority_weights, args.groups)
    try:
        spec = BiasSpec(args.classes, args.groups, args.br, mode=mode,
                        minority_weights=weights, resolution=tuple(args.resolution),
                        per_class_count=getattr(args, "per_class"))
    except DatasetError as exc:
        raise CliError(str(exc))
    palette = default_palette(args.groups)
    base = generate_glyph_dataset(spec, seed)
    if mode == "grayscale":
        ds = apply_grayscale_bias(colorize_uniform(base, palette, seed + 1), args.br, seed + 2)
    else:
        ds = apply_color_bias(base, spec, palette, seed + 2)
    ds.save(args.out)
    print("wrote %s: N=%d classes=%d groups=%d" % (args.out, len(ds), ds.num_classes,
                                                   ds.num_groups))
    if args.test_out:
        test_spec = BiasSpec(args.classes, args.groups,
                             br=1.0 / args.groups if args.groups > 1 else 1.0, mode=mode,
                             resolution=tuple(args.resolution),
                             per_class_count=getattr(args, "test_per_class"))
        test = build_balanced_test(test_spec, palette, seed + 7919)
        test.save(args.test_out)
        print("wrote %s: N=%d (balanced)" % (args.test_out, len(test)))
    return 0


def _cmd_distill(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    try:
        ds = LabeledDataset.load(_require_file(args.data))
        spec = MatchSpec(matcher=MATCHER_FLAGS[args.matcher], distance=args.distance,
                         weighting=WEIGHTING_FLAGS[args.weighting])
        config = DistillConfig(ipc=args.ipc, iterations=args.iterations, lr_pixels=args.lr,
                               theta_seed_stream=seed, init=args.init, match=spec,
                               group_batch=getattr(args, "group_batch"), arch=args.arch)
    except CliError:
        raise
    except ValueError as exc:
        raise CliError(str(exc))
    synthetic, trace = distill(config, ds)
    save_synthetic(args.out, synthetic, config, trace)
    print("wrote %s (+ manifest): %d images, final loss %.6f"
          % (args.out, synthetic.pixels.shape[0], trace[-1]))
    return 0


def _parse_seeds(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise CliError("--seeds must be comma-separated integers")


def _cmd_eval(args) -> int:
    seeds = _parse_seeds(args.seeds)
    try:
        synthetic = load_synthetic(_require_file(args.synthetic))
        test = LabeledDataset.load(_require_file(args.test))
        config = EvalConfig(arch=args.arch, epochs=args.epochs, lr=args.lr, batch=args.batch)
    except CliError:
        raise
    except ValueError as exc:
        raise CliError(str(exc))
    report = evaluate(synthetic, test, config, seeds)
    report.to_json(args.out)
    if args.csv:
        row = {"synthetic": args.synthetic, "test": args.test}
        row.update(report.flat_row())
        write_report_csv(args.csv, [row])
    print("accuracy=%.2f deo_m=%.2f deo_a=%.2f (seeds=%s) -> %s"
          % (report.accuracy, report.deo_m, report.deo_a, seeds, args.out))
    return 0


def _cmd_verify(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    summary = run_verification(instances=args.instances,
                               jensen_pairs=getattr(args, "jensen_pairs"), seed=seed)
    Path(args.out).write_text(json.dumps(summary, indent=2, sort_keys=True))
    for claim in summary["claims"]:
        status = {True: "pass", False: "FAIL", None: "report-only"}[claim["passed"]]
        print("%-45s %-11s max_dev=%.3e" % (claim["claim"], status, claim["max_deviation"]))
    print("all asserted claims passed: %s -> %s" % (summary["all_passed"], args.out))
    return 0 if summary["all_passed"] else 2


def _cmd_matrix(args) -> int:
    matrix = load_config(_require_file(args.config))
    rows = run_matrix(matrix, args.out_dir, jobs=args.jobs)
    csv_path = Path(args.out_dir) / "results.csv"
    write_report_csv(csv_path, rows)
    print("ran %d cells -> %s" % (len(rows), csv_path))
    return 0


def _read_rows(path) -> List[Dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def render_report(rows: List[Dict]) -> Tuple[str, List[Dict]]:
    """Group rows by configuration and tabulate weightings side by side.

    Pure rendering over previously emitted rows: per-seed rows are
    averaged for display and the fairdd-vs-vanilla deltas are shown.
    """
    if not rows:
        raise CliError("no rows to render")
    groups: Dict[tuple, Dict[str, List[Dict]]] = {}
    for row in rows:
        key = (row["dataset"], row["matcher"], row["ipc"], row["br"], row["init"])
        groups.setdefault(key, {}).setdefault(row["weighting"], []).append(row)

    def mean(rs: List[Dict], field: str) -> float:
        return float(np.mean([float(r[field]) for r in rs]))

    lines = []
    out_rows = []
    header = ("%-22s %-12s %-4s %-5s %-12s %-15s %8s %8s %8s"
              % ("dataset", "matcher", "ipc", "br", "init", "weighting", "acc", "deo_m", "deo_a"))
    lines.append(header)
    lines.append("-" * len(header))
    for key in sorted(groups, key=str):
        dataset, matcher, ipc, br, init = key
        for weighting in ("vanilla_ratio", "fairdd_uniform", "inverse_ratio"):
            if weighting not in groups[key]:
                continue
            rs = groups[key][weighting]
            acc, dm, da = (mean(rs, "acc"), mean(rs, "deo_m"), mean(rs, "deo_a"))
            lines.append("%-22s %-12s %-4s %-5s %-12s %-15s %8.2f %8.2f %8.2f"
                         % (dataset, matcher, ipc, br, init, weighting, acc, dm, da))
            out_rows.append({"dataset": dataset, "matcher": matcher, "ipc": ipc, "br": br,
                             "init": init, "weighting": weighting, "n_rows": len(rs),
                             "acc": round(acc, 4), "deo_m": round(dm, 4),
                             "deo_a": round(da, 4)})
        have = groups[key]
        if "vanilla_ratio" in have and "fairdd_uniform" in have:
            delta = {f: mean(have["fairdd_uniform"], f) - mean(have["vanilla_ratio"], f)
                     for f in ("acc", "deo_m", "deo_a")}
            lines.append("%-22s %-12s %-4s %-5s %-12s %-15s %+8.2f %+8.2f %+8.2f"
                         % (dataset, matcher, ipc, br, init, "fairdd-vanilla",
                            delta["acc"], delta["deo_m"], delta["deo_a"]))
            out_rows.append({"dataset": dataset, "matcher": matcher, "ipc": ipc, "br": br,
                             "init": init, "weighting": "fairdd-vanilla",
                             "n_rows": len(have["fairdd_uniform"]),
                             "acc": round(delta["acc"], 4),
                             "deo_m": round(delta["deo_m"], 4),
                             "deo_a": round(delta["deo_a"], 4)})
    return "\n".join(lines) + "\n", out_rows


def _cmd_report(args) -> int:
    rows = _read_rows(_require_file(args.rows))
    text, table_rows = render_report(rows)
    Path(args.out).write_text(text)
    if args.csv:
        write_report_csv(args.csv, table_rows)
    sys.stdout.write(text)
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "distill": _cmd_distill,
    "eval": _cmd_eval,
    "verify": _cmd_verify,
    "matrix": _cmd_matrix,
    "report": _cmd_report,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse and dispatch; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        print("fairdistill: %s" % exc, file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (CliError, ConfigError) as exc:
        print("fairdistill %s: %s" % (args.command, exc), file=sys.stderr)
        return 1
    except Exception as exc:
        print("fairdistill %s: %s: %s" % (args.command, type(exc).__name__, exc),
              file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
