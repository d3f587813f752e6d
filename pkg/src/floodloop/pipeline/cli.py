"""Command-line entry point."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..cim import write_posts
from .config import REGIMES, load_config
from .offline import STAGES, StageError, load_offline, run_offline
from .online import compare_regimes, event_posts, run_event
from .report import evaluate_offline, report

log = logging.getLogger("floodloop")


def _global_flags(default=None) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=default, help="YAML run configuration (defaults when omitted)")
    common.add_argument("--seed", type=int, default=default, help="override the configured seed")
    common.add_argument("--out", default=default, help="artifact directory (overrides the configured path)")
    common.add_argument("-v", "--verbose", action="store_true", default=default or False)
    return common


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="floodloop", description=__doc__, parents=[_global_flags()])
    # flags after the subcommand must not reset flags given before it
    common = _global_flags(argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (
        ("worldgen", "generate the city and storm ensemble"),
        ("simulate", "simulate flood depths and zone functionality loss"),
        ("graphs", "build the correlation graphs"),
        ("train-sa", "train the spatial-completion models"),
        ("train-stf", "train the forecaster and its no-rainfall ablation"),
        ("offline", "run every offline stage"),
        ("evaluate", "score the offline models and the three regimes"),
        ("report", "write CSV tables and a text summary"),
    ):
        sub.add_parser(name, help=text, parents=[common])
    ev = sub.add_parser("run-event", help="run the held-out storm under one regime", parents=[common])
    ev.add_argument("--regime", choices=REGIMES, help="forecasting regime")
    return p


def _config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.out = args.out
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    stage = args.command
    try:
        cfg = _config(args)
        out = Path(cfg.out)
        if stage in STAGES:
            run_offline(cfg, out, stages=(stage,))
        elif stage == "offline":
            run_offline(cfg, out)
        elif stage == "run-event":
            arts = load_offline(cfg, out)
            regime = args.regime or cfg.event.regime
            posts = event_posts(arts, cfg)
            write_posts(out / "posts.jsonl", [p for t in sorted(posts) for p in posts[t]])
            logs = run_event(arts, cfg, regime, posts)
            events = out / "events"
            events.mkdir(exist_ok=True)
            (events / f"{regime}.jsonl").write_text(logs.to_jsonl())
        elif stage in ("evaluate", "report"):
            arts = load_offline(cfg, out)
            ev = evaluate_offline(arts, cfg)
            cmp = compare_regimes(arts, cfg)
            if stage == "evaluate":
                metrics = {
                    "sa": ev.sa_rows,
                    "stf_one_step_mae": ev.one_step_mae,
                    "stf_lead_mae": ev.stf_lead_mae.tolist(),
                    "stf_nr_lead_mae": ev.nr_lead_mae.tolist(),
                    "regimes": cmp.table,
                    "longest_success_run": cmp.longest_success_run,
                }
                (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
            else:
                report(out / "reports", cfg, cmp, ev)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"error: [{stage}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
