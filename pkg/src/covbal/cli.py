"""Command-line front end.

Exit codes: 0 ok, 1 usage or config error, 2 recurrence conditions not met,
3 numerical error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from covbal.config import ConfigError, load_config
from covbal.core import Arm, ImbalanceState, apply_assignment
from covbal.presets import TABLE_IDS, reproduce
from covbal.simulate import replicate_checkpoints, replicate_stream, run_trial
from covbal.theory import (
    IllConditionedWeightsError,
    UnsupportedStructureError,
    check_all,
    drift_delta_v,
)

EXIT_OK, EXIT_USAGE, EXIT_CONDITIONS, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def _write_outputs(out_dir: Path, stem: str, fmt: str, json_obj, csv_header, csv_rows) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt in ("json", "both"):
        path = out_dir / f"{stem}.json"
        path.write_text(_dump(json_obj) + "\n")
        written.append(path)
    if fmt in ("csv", "both"):
        path = out_dir / f"{stem}.csv"
        path.write_text(_rows_to_csv(csv_header, csv_rows))
        written.append(path)
    return written


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if cfg.run is None:
        raise ConfigError("run", "'run' section is required for simulate")
    if cfg.distribution is None:
        raise ConfigError("distribution", "'distribution' section is required for simulate")
    run = cfg.run
    seed = run.master_seed if args.seed is None else args.seed
    n_rep = run.n_replicates if args.replicates is None else args.replicates
    if n_rep < 1:
        raise ConfigError("run.n_replicates", "must be >= 1")
    fmt = args.format or run.format
    checkpoints = tuple(run.checkpoints) or (run.n_patients,)
    checkpoints = tuple(sorted(set(checkpoints) | {run.n_patients}))
    reports = replicate_checkpoints(cfg.design, cfg.distribution, checkpoints, n_rep, seed, args.threads)
    rows = [
        (n, level, ident, stat, value)
        for n, rep in reports.items()
        for level, ident, stat, value in rep.rows()
    ]
    payload = {
        "design": cfg.design.kind,
        "master_seed": seed,
        "reports": {str(n): rep.to_json() for n, rep in reports.items()},
    }
    for path in _write_outputs(Path(args.out), "report", fmt, payload, ("n", "level", "identifier", "statistic", "value"), rows):
        print(path)
    return EXIT_OK


def cmd_check_weights(args) -> int:
    cfg = load_config(args.config)
    report = check_all(cfg.structure, cfg.weights)
    print(_dump(report.to_json()))
    return EXIT_OK if report.recurrence_guaranteed else EXIT_CONDITIONS


def cmd_reproduce(args) -> int:
    seed = 20120501 if args.seed is None else args.seed
    n_rep = 1000 if args.replicates is None else args.replicates
    if n_rep < 1:
        raise ConfigError("--replicates", "must be >= 1")
    comparisons, reports = reproduce(args.table, seed, n_rep, args.threads)
    header = ("table", "design", "n", "statistic", "identifier", "simulated", "reference", "rel_dev")
    rows = [
        (c.table, c.design, c.n, c.statistic, c.identifier, round(c.simulated, 4), c.reference, round(c.rel_dev, 4))
        for c in comparisons
    ]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    for row in [header] + rows:
        print("  ".join(str(x).ljust(w) for x, w in zip(row, widths)))
    if args.out:
        payload = {
            "table": args.table,
            "master_seed": seed,
            "n_replicates": n_rep,
            "comparisons": [dict(zip(header, r), cell=c.cell) for r, c in zip(rows, comparisons)],
            "reports": {f"{d}/n={n}": rep.to_json() for (d, n), rep in reports.items()},
        }
        _write_outputs(Path(args.out), f"{args.table}_comparison", args.format or "both", payload, header, rows)
    return EXIT_OK


def cmd_drift_diag(args) -> int:
    cfg = load_config(args.config, allow_fair_coin=True)
    if cfg.structure.levels != (2, 2):
        raise UnsupportedStructureError(f"drift diagnostic needs a 2x2 layout, got {list(cfg.structure.levels)}")
    if cfg.distribution is None:
        raise ConfigError("distribution", "'distribution' section is required for drift-diag")
    probs = cfg.distribution.stratum_probabilities()
    n = cfg.run.n_patients if cfg.run else 200
    seed = args.seed if args.seed is not None else (cfg.run.master_seed if cfg.run else 0)
    trial = run_trial(cfg.design.build(), cfg.structure, cfg.distribution, n, replicate_stream(seed, 0), record=True)
    state = ImbalanceState.zeros(cfg.structure)
    table = cfg.structure.profile_table
    lines = []
    worst = 0.0
    for t, arm, r in [(0, 0, -1)] + trial.trajectory:
        if r >= 0:
            apply_assignment(state, cfg.structure, table[r], Arm(arm))
        if t % args.every:
            continue
        res = drift_delta_v(state, cfg.structure, cfg.weights, cfg.p_bias, probs)
        gap = abs(res.exact - res.closed_form)
        worst = max(worst, gap)
        lines.append((t, " ".join(map(str, state.d_by_stratum.tolist())), f"{res.exact:.12g}", f"{res.closed_form:.12g}", f"{gap:.3e}"))
    header = ("n", "D", "exact", "closed_form", "abs_diff")
    widths = [max(len(str(x)) for x in col) for col in zip(header, *lines)]
    for row in [header] + lines:
        print("  ".join(str(x).ljust(w) for x, w in zip(row, widths)))
    print(f"max |exact - closed_form| = {worst:.3e}")
    return EXIT_OK if worst < 1e-10 else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="covbal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def run_flags(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--replicates", type=int, help="number of simulated trials (overrides config)")
        p.add_argument("--threads", type=int, default=1, help="worker processes for replicates")
        p.add_argument("--format", choices=["csv", "json", "both"])
        p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("simulate", help="replicate a configured design")
    run_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check-weights", help="evaluate the recurrence conditions for a weight set")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_check_weights)

    p = sub.add_parser("reproduce", help="rerun a published table and compare")
    p.add_argument("table", choices=TABLE_IDS)
    run_flags(p, config=False)
    p.set_defaults(func=cmd_reproduce, out=None)

    p = sub.add_parser("drift-diag", help="exact vs closed-form drift along a simulated 2x2 trajectory")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--every", type=int, default=1, help="report every k-th state")
    p.set_defaults(func=cmd_drift_diag)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UnsupportedStructureError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IllConditionedWeightsError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
