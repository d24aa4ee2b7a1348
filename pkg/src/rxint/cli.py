"""Command-line front end.

Subcommands: ``run`` executes one scenario file, ``matrix`` runs the built-in
comparison suite, ``sweep`` measures the timing-race statistic, ``resolve``
re-runs dump analysis standalone, ``stats`` prints the last run's accounting.

Exit codes: 0 success (and oracle match), 1 detection-oracle mismatch,
2 usage or parse errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import resolver, sim, suite
from .errors import MatrixMismatch, RxIntError
from .scenario import load_scenario

DEFAULT_OUT = "rxint-out"

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_USAGE = 2


def _print_detections(result: sim.RunResult) -> None:
    for detector, entries in sorted(result.detections.items()):
        for entry in entries:
            print(f"DETECTION {json.dumps(dict(entry, detector=detector), sort_keys=True)}")


def _cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    out_dir = Path(args.out) if args.out else Path(DEFAULT_OUT) / scenario.name
    result = sim.run(scenario, out_dir=out_dir, seed=args.seed)
    print(f"scenario {result.scenario} (seed {result.seed})")
    for detector, outcome in sorted(result.outcomes.items()):
        count = len(result.detections[detector])
        print(f"  {detector}: {outcome} ({count} detection(s))")
    _print_detections(result)
    for path in result.artifacts:
        print(f"ARTIFACT {path}")
    print(f"RESULT {out_dir / 'result.json'}")
    if not result.matches_expected():
        for detector, want in (result.expected or {}).items():
            got = result.outcomes.get(detector)
            if got != want:
                print(f"MISMATCH {detector}: got {got}, want {want}", file=sys.stderr)
        return EXIT_MISMATCH
    return EXIT_OK


def _cmd_matrix(args: argparse.Namespace) -> int:
    out_dir = Path(args.out) if args.out else None
    matrix = suite.run_matrix(out_dir=out_dir)
    print(matrix.to_table())
    for row in matrix.rows:
        print(
            "CELL "
            + json.dumps(
                {
                    "scenario": row.scenario,
                    "outcomes": row.outcomes,
                    "expected": row.expected,
                },
                sort_keys=True,
            )
        )
    cells = matrix.mismatched_cells()
    if cells:
        print(f"MATRIX MISMATCH: {cells}", file=sys.stderr)
        return EXIT_MISMATCH
    print("matrix matches the expected outcomes")
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    result = sim.sweep(scenario, samples=args.samples, seed=args.seed)
    print(
        f"sweep {result.scenario}: samples={result.samples} "
        f"window={result.window} poll={result.poll_interval}"
    )
    for detector in sorted(result.hits):
        print(f"  {detector}: {100.0 * result.rate(detector):.1f}%")
    print(
        f"  closed-form w/T landing probability: {100.0 * result.closed_form:.1f}%"
    )
    print(
        "SWEEP_RESULT "
        + json.dumps(
            {
                "scenario": result.scenario,
                "samples": result.samples,
                "window": result.window,
                "poll_interval": result.poll_interval,
                "hits": result.hits,
                "closed_form": result.closed_form,
            },
            sort_keys=True,
        )
    )
    return EXIT_OK


def _cmd_resolve(args: argparse.Namespace) -> int:
    dump_path = Path(args.dump)
    snapshot_path = Path(args.snapshot)
    try:
        dump = dump_path.read_bytes()
        snapshot_doc = json.loads(snapshot_path.read_text())
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except json.JSONDecodeError as exc:
        print(f"error: bad snapshot file: {exc}", file=sys.stderr)
        return EXIT_USAGE
    snapshot = resolver.snapshot_from_dict(snapshot_doc)
    report = resolver.scan_dump(
        snapshot,
        dump,
        args.base,
        dump_name=dump_path.name,
        aligned=not args.unaligned,
        include_exports=args.exports,
    )
    sys.stdout.write(report.to_text())
    return EXIT_OK


def _cmd_stats(args: argparse.Namespace) -> int:
    stats_path = Path(args.out) / "stats.json" if args.out else None
    if stats_path is None:
        root = Path(DEFAULT_OUT)
        candidates = sorted(root.glob("*/stats.json")) if root.is_dir() else []
        if not candidates:
            print(f"error: no stats.json under {root}/", file=sys.stderr)
            return EXIT_USAGE
        stats_path = candidates[-1]
    if not stats_path.is_file():
        print(f"error: {stats_path} not found", file=sys.stderr)
        return EXIT_USAGE
    doc = json.loads(stats_path.read_text())
    print(f"accounting from {stats_path}")
    for key in (
        "baseline_bytes",
        "snapshot_bytes",
        "export_snapshot_bytes",
        "detections",
        "config_bytes",
    ):
        print(f"  {key}: {doc.get(key)}")
    return EXIT_OK


def _hex_int(text: str) -> int:
    return int(text, 0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rxint",
        description="Deterministic in-memory threat detection simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one scenario file")
    p_run.add_argument("scenario", help="path to a scenario document")
    p_run.add_argument("--out", help=f"output directory (default {DEFAULT_OUT}/<name>)")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.set_defaults(func=_cmd_run)

    p_matrix = sub.add_parser("matrix", help="run the canonical comparison suite")
    p_matrix.add_argument("--out", help="write per-scenario artifacts under this directory")
    p_matrix.set_defaults(func=_cmd_matrix)

    p_sweep = sub.add_parser("sweep", help="randomized timing sweep")
    p_sweep.add_argument("scenario", help="path to a sweep-capable scenario document")
    p_sweep.add_argument("--samples", type=int, default=1000)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_resolve = sub.add_parser("resolve", help="re-run dump analysis standalone")
    p_resolve.add_argument("dump", help="raw region dump (.bin)")
    p_resolve.add_argument("--base", type=_hex_int, required=True, help="dump base address")
    p_resolve.add_argument(
        "--snapshot", required=True, help="export_snapshot.json from a previous run"
    )
    p_resolve.add_argument(
        "--unaligned", action="store_true", help="scan every byte offset, not just 8-aligned"
    )
    p_resolve.add_argument(
        "--exports", action="store_true", help="append the full export listing"
    )
    p_resolve.set_defaults(func=_cmd_resolve)

    p_stats = sub.add_parser("stats", help="print last-run accounting")
    p_stats.add_argument("--out", help="run directory holding stats.json")
    p_stats.set_defaults(func=_cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MatrixMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except RxIntError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
