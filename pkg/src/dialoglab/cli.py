"""Command-line entry points.

Exit codes: 0 on success, 1 for configuration problems, 2 for runtime
failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .harness import (RunConfig, aggregate_runs, auc, evaluate_checkpoint,
                      plot_aggregate, run_name, sweep_k, train_and_emit)
from .ontology import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _progress_printer(every: int = 10):
    def emit(rec):
        if rec["episode"] % every == 0:
            print(f"  episode {rec['episode']:4d}  eval_sr {rec['eval_sr']:.3f}  "
                  f"k {rec['k_chosen']:2d}  hindsight {rec['hindsight_total']}",
                  flush=True)
    return emit


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    for name in ("variant", "seed", "episodes"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "audit", False):
        overrides["audit"] = True
    if overrides:
        cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg


def cmd_train(args) -> int:
    cfg = _load_config(args)
    print(f"training {run_name(cfg)}: {cfg.episodes} episodes on "
          f"{cfg.ontology!r}", flush=True)
    curve = train_and_emit(cfg, args.out, include_tuples=args.checkpoint_buffers,
                           progress=_progress_printer() if args.verbose else None)
    final = curve.records[-1]
    print(f"done: final eval_sr {final['eval_sr']:.3f}, "
          f"auc {auc(curve):.4f}, outputs in {args.out}")
    return EXIT_OK


def cmd_sweep_k(args) -> int:
    cfg = _load_config(args)
    values = [int(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep needs at least one k value")
    rows = sweep_k(cfg, values, args.out,
                   progress=_progress_printer(50) if args.verbose else None)
    for row in rows:
        print(f"k={row['k']:2d}  auc {row['auc']:.4f}  "
              f"final eval_sr {row['final_eval_sr']:.3f}")
    print(f"sweep table written to {args.out}/sweep_k.csv")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    sr, avg_r = evaluate_checkpoint(args.checkpoint, args.dialogs)
    print(json.dumps({"dialogs": args.dialogs, "success_rate": round(sr, 6),
                      "avg_reward": round(avg_r, 6)}))
    return EXIT_OK


def cmd_aggregate(args) -> int:
    out_path = args.out or f"{args.runs.rstrip('/')}/aggregate.csv"
    text = aggregate_runs(args.runs, out_path)
    sys.stdout.write(text)
    print(f"aggregate written to {out_path}")
    return EXIT_OK


def cmd_plot(args) -> int:
    plot_aggregate(args.aggregate, args.out)
    print(f"plot written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dialoglab",
                                description="Dialog policy learning testbed")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one variant and emit curve/checkpoint")
    t.add_argument("--variant", choices=("dqn", "lu", "lh", "lhu", "lhua"))
    t.add_argument("--config", help="JSON config file mirroring RunConfig")
    t.add_argument("--seed", type=int)
    t.add_argument("--episodes", type=int)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--audit", action="store_true",
                   help="dump segment/stitch events to a JSON-lines file")
    t.add_argument("--checkpoint-buffers", action="store_true",
                   help="include replay tuples in the checkpoint")
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(fn=cmd_train)

    s = sub.add_parser("sweep-k", help="run the fixed-k comparison sweep")
    s.add_argument("--values", default="6,8,10,12,14,16")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--episodes", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--verbose", action="store_true")
    s.set_defaults(fn=cmd_sweep_k)

    e = sub.add_parser("evaluate", help="greedy evaluation of a saved checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dialogs", type=int, default=50)
    e.set_defaults(fn=cmd_evaluate)

    a = sub.add_parser("aggregate", help="mean/std across per-seed run CSVs")
    a.add_argument("--runs", required=True, help="directory holding run CSVs")
    a.add_argument("--out")
    a.set_defaults(fn=cmd_aggregate)

    g = sub.add_parser("plot", help="render an aggregate CSV as an SVG")
    g.add_argument("--aggregate", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
