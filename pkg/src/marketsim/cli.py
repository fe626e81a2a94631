"""Command line entry point: ``sim run``, ``sim validate`` and ``sim replay``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .exchange import ReplayError, read_log, replay_log
from .scenario import ConfigError, load_scenario

log = logging.getLogger("marketsim")


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sim", description="Agent-based limit order book market simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and write its report")
    p.add_argument("--scenario", required=True, help="preset name or key=value scenario file")
    p.add_argument("--seed", type=_seed, default=None, help="root seed (overrides the scenario)")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    clock = p.add_mutually_exclusive_group()
    clock.add_argument("--realtime", action="store_true", help="one simulated second per wall second")
    clock.add_argument("--accel", type=_positive, default=None, help="simulated seconds per wall second")
    p.add_argument("--transport", choices=("loopback", "socket"), default="loopback",
                   help="how agents reach the exchange (socket binds SIM_LISTEN_ADDR)")

    p = sub.add_parser("validate", help="run the stylized-fact checks on a t,asset,p_mid series")
    p.add_argument("--series", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("replay", help="rebuild exchange state from an event log")
    p.add_argument("--log", required=True, type=Path)
    p.add_argument("--snapshot", type=Path, default=None, help="snapshot the log continues from")
    return parser


def cmd_run(args) -> int:
    from .report import emit_report
    from .runner import RunAborted, run

    cfg = load_scenario(args.scenario)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.realtime:
        cfg.acceleration = 1.0
    elif args.accel is not None:
        cfg.acceleration = args.accel
    cfg.validate()
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "scenario.txt").write_text(cfg.to_text())
    try:
        result = run(cfg, log_path=args.out / "events.jsonl", transport=args.transport)
    except RunAborted as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return 3
    result.exchange.save_snapshot(args.out / "snapshot.json")
    emit_report(result, args.out)
    sys.stdout.write((args.out / "summary.txt").read_text())
    return 0 if result.conserved else 4


def cmd_validate(args) -> int:
    from .report import emit_validation
    from .stylized import read_series, validate_run

    series = read_series(args.series)
    if not series:
        print(f"{args.series}: no rows", file=sys.stderr)
        return 2
    prices = {k: mids for k, (_, mids) in series.items()}
    reports = {k: validate_run(p) for k, p in prices.items()}
    emit_validation(prices, reports, args.out)
    for k, report in sorted(reports.items()):
        verdicts = " ".join(f"{name}={v}" for name, v in report.verdicts().items())
        note = f" ({report.inconclusive})" if report.inconclusive else ""
        print(f"asset {k}: points={report.n_points} {verdicts}{note}")
    return 0


def cmd_replay(args) -> int:
    import json

    snapshot = json.loads(args.snapshot.read_text()) if args.snapshot else None
    try:
        ex = replay_log(read_log(args.log), snapshot=snapshot)
    except ReplayError as exc:
        print(f"replay failed: {exc}", file=sys.stderr)
        return 1
    trades = sum(1 for e in ex.events if e.kind == "trade_settled")
    cash, shares = ex.totals()
    print(f"events: {ex.seq}")
    print(f"trades: {trades}")
    print(f"accounts: {len(ex.accounts)}")
    print(f"total_cash: {cash / 100:.2f}")
    print(f"total_shares: {','.join(map(str, shares))}")
    for k in range(ex.n_assets):
        info = ex.query_market(k)
        bid = "-" if info.bid is None else f"{info.bid / 100:.2f}"
        ask = "-" if info.ask is None else f"{info.ask / 100:.2f}"
        print(f"asset {k}: bid={bid} ask={ask} volume={info.volume}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": cmd_run, "validate": cmd_validate, "replay": cmd_replay}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
