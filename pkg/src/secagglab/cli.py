"""Command line entry point: ``run``, ``verify-tables``, ``compare`` and ``trace-dump``.

Exit status is 0 on success, 1 when a verification or experiment fails and
2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import replace
from pathlib import Path

from . import tables
from .config import PROTOCOLS, ExperimentConfig, load_config
from .errors import ConfigurationError, ExperimentFailure
from .simnet import DOWN, UP, ledger_diff, run_experiment

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _resolve(args) -> tuple[ExperimentConfig, Path | None]:
    if args.config:
        cfg, base = load_config(args.config)
    else:
        cfg, base = ExperimentConfig(), None
    overrides = {k: getattr(args, k) for k in ("seed", "clients", "rounds", "out") if getattr(args, k) is not None}
    if getattr(args, "protocol", None):
        protos = args.protocol.split(",")
        overrides["protocol"] = protos[0]
    if args.dropout_schedule:
        overrides["dropout_schedule"] = str(Path(args.dropout_schedule).resolve())
    return replace(cfg, **overrides).validate(), base


def _execute(cfg: ExperimentConfig, base: Path | None, *, capture: bool = False):
    result = run_experiment(
        cfg.protocol, cfg.clients, cfg.rounds, cfg.dimension, cfg.schedule(base), cfg.seed,
        key_size_bits=cfg.key_size_bits, keep_aggregates=False, capture=capture, **cfg.protocol_options(),
    )
    ledger = result.ledger
    if cfg.price_key_bits or cfg.price_dimension:
        ledger = ledger.reprice(cfg.price_key_bits or cfg.key_size_bits, cfg.price_dimension or cfg.dimension)
    return result, ledger


def _summary(cfg: ExperimentConfig, result, ledger) -> str:
    lines = [
        f"protocol        {cfg.protocol}",
        f"clients         {cfg.clients}",
        f"rounds          {cfg.rounds}",
        f"client messages {ledger.messages(UP)}",
        f"server messages {ledger.messages(DOWN)}",
        f"client bytes    {ledger.bytes(UP)}",
        f"server bytes    {ledger.bytes(DOWN)}",
        f"aborted rounds  {','.join(map(str, result.aborted_rounds)) or 'none'}",
        f"trace sha256    {result.trace.digest()}",
    ]
    return "\n".join(lines) + "\n"


def cmd_run(args) -> int:
    if not args.config:
        raise UsageError("run needs --config FILE (or --config preset:NAME)")
    cfg, base = _resolve(args)
    result, ledger = _execute(cfg, base)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ledger.csv").write_text(ledger.to_csv())
    (out / "trace.jsonl").write_text(result.trace.to_lines())
    summary = _summary(cfg, result, ledger)
    (out / "summary.txt").write_text(summary)
    sys.stdout.write(summary)
    return EXIT_OK


def cmd_verify_tables(args) -> int:
    ledgers = tables.nd_ledgers(seed=args.seed or 0)
    cells = tables.verify_tables(ledgers)
    failed = [c for c in cells if not c.passed]
    for c in cells:
        print(c)
    print(f"{len(cells) - len(failed)}/{len(cells)} cells pass")
    if failed:
        print("failing cells:")
        for c in failed:
            print(f"  {c.table} {c.protocol} round {c.round}")
        return EXIT_FAIL
    return EXIT_OK


def _op_means(result, rounds: int) -> dict[str, float]:
    totals, clients = {}, set()
    for per_entity in result.op_counts.values():
        for name, ops in per_entity.items():
            if name.startswith("client:"):
                clients.add(name)
                for op, n in ops.items():
                    totals[op] = totals.get(op, 0) + n
    denom = max(len(clients), 1) * rounds
    return {op: n / denom for op, n in sorted(totals.items())}


def cmd_compare(args) -> int:
    protos = (args.protocol or "").split(",") if args.protocol else []
    protos = [p for p in protos if p]
    if len(protos) < 2:
        raise UsageError("compare needs at least two protocols, e.g. --protocol accessfl,secagg")
    unknown = [p for p in protos if p not in PROTOCOLS]
    if unknown:
        raise UsageError(f"unknown protocol(s) {', '.join(unknown)}; choose from {', '.join(PROTOCOLS)}")
    cfg, base = _resolve(args)
    runs = {}
    for p in protos:
        runs[p] = _execute(replace(cfg, protocol=p).validate(), base)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, ["round", "protocol", "direction", "messages_cum", "bytes_cum"], lineterminator="\n")
    writer.writeheader()
    for p in protos:
        writer.writerows(runs[p][1].cumulative_rows())
    (out / "compare.csv").write_text(buf.getvalue())

    ops = {p: _op_means(runs[p][0], cfg.rounds) for p in protos}
    names = sorted({op for o in ops.values() for op in o})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["protocol"] + names)
    for p in protos:
        w.writerow([p] + [f"{ops[p].get(op, 0):g}" for op in names])
    (out / "ops.csv").write_text(buf.getvalue())

    ref = protos[0]
    ref_ledger = runs[ref][1]
    print(f"{'protocol':<11} {'client msgs':>12} {'server msgs':>12} {'client bytes':>14} {'server bytes':>14}")
    for p in protos:
        lg = runs[p][1]
        print(f"{p:<11} {lg.messages(UP):>12} {lg.messages(DOWN):>12} {lg.bytes(UP):>14} {lg.bytes(DOWN):>14}")
    for p in protos[1:]:
        diff = ledger_diff(runs[p][1], ref_ledger)
        (cm, cb), (sm, sb) = diff.total(UP), diff.total(DOWN)
        ratio = runs[p][1].messages(UP) / max(ref_ledger.messages(UP), 1)
        print(f"{p} - {ref}: client {cm:+} msgs {cb:+} bytes, server {sm:+} msgs {sb:+} bytes, "
              f"client message ratio {ratio:.2f}")
    print("mean client operations per round:")
    for p in protos:
        print(f"  {p:<11} " + ", ".join(f"{op}={ops[p][op]:g}" for op in ops[p]))
    return EXIT_OK


def cmd_trace_dump(args) -> int:
    cfg, base = _resolve(args)
    result, _ = _execute(cfg, base)
    text = result.trace.to_lines()
    if args.out:
        path = Path(args.out)
        if path.suffix != ".jsonl":
            path.mkdir(parents=True, exist_ok=True)
            path = path / "trace.jsonl"
        path.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="secagglab", description="Run and compare secure-aggregation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, protocol_help="protocol name"):
        p.add_argument("--config", help="config file, or preset:NAME")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--protocol", help=protocol_help)
        p.add_argument("--clients", type=int)
        p.add_argument("--rounds", type=int)
        p.add_argument("--dropout-schedule", help="schedule file")

    common(sub.add_parser("run", help="run one experiment and write ledger, trace and summary"))
    v = sub.add_parser("verify-tables", help="check simulated ledgers against the reference tables")
    v.add_argument("--seed", type=int)
    common(sub.add_parser("compare", help="run several protocols on one config"), "comma-separated protocols")
    common(sub.add_parser("trace-dump", help="print the event trace of a run as JSON lines"))
    return parser


COMMANDS = {"run": cmd_run, "verify-tables": cmd_verify_tables, "compare": cmd_compare, "trace-dump": cmd_trace_dump}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigurationError) as exc:
        print(f"secagglab {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ExperimentFailure as exc:
        print(f"secagglab {args.command}: experiment failed in round {exc.round_number}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
