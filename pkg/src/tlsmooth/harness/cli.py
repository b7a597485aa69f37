"""Command-line entry points.

Subcommands: generate, train, evaluate, sweep, report. Every command
exits 0 on success; failures print one JSON object to stderr, shaped
{"error": {"type": ..., "message": ...}}, and exit 1. Relative output
paths resolve under the TLSMOOTH_OUT environment variable when it is
set; nothing else reads the environment.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from ..errors import InvalidInputError
from ..labels import LabelTrack
from ..metrics import ScoredStay, evaluate
from ..model import forward
from ..training import load_checkpoint
from .experiment import ExperimentConfig, hours_to_steps, run_experiment
from .generate import GenConfig, generate, preset
from .io import dump_json, load_cohort, read_json, resolve_out, save_cohort


def _emit(obj):
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _cmd_generate(args) -> int:
    if args.preset is not None:
        cfg, _h = preset(args.preset)
        if args.config is not None:
            raise InvalidInputError("give either --config or --preset, not both")
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
    else:
        if args.config is None:
            raise InvalidInputError("generate needs --config or --preset")
        cfg = GenConfig.from_dict(read_json(args.config))
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
    stays = generate(cfg)
    out = resolve_out(args.out)
    save_cohort(out, stays)
    _emit({"path": out, "n_stays": len(stays),
           "n_steps": int(sum(s.n_steps for s in stays))})
    return 0


def _cmd_train(args) -> int:
    config = ExperimentConfig.from_dict(read_json(args.config))
    config = replace(config, seeds=(args.seed,))
    records = run_experiment(config, out_dir=args.out)
    _emit({name: rec.aggregate for name, rec in sorted(records.items())})
    return 0


def _cmd_sweep(args) -> int:
    config = ExperimentConfig.from_dict(read_json(args.config))
    records = run_experiment(config, out_dir=args.out)
    _emit({name: rec.aggregate for name, rec in sorted(records.items())})
    return 0


def _cmd_evaluate(args) -> int:
    params, meta = load_checkpoint(args.checkpoint)
    stays = load_cohort(args.data)
    h_steps = meta.get("horizon_steps")
    if h_steps is None:
        raise InvalidInputError(
            "checkpoint metadata lacks horizon_steps; cannot label the data"
        )
    index_of_true = meta.get("index_of_true")
    precision_floor = float(meta.get("precision_floor", 0.5))
    bin_steps = meta.get("bin_steps")
    if bin_steps is None:
        bin_steps = hours_to_steps(2.0, stays[0].step_minutes)
    scored = []
    for stay in stays:
        track = LabelTrack.from_stay(stay, h_steps)
        p = forward(stay.features, params)
        if index_of_true is not None:
            p = p[:, index_of_true]
        scored.append(ScoredStay.build(stay.stay_id, p, track,
                                       stay.event_track))
    report = evaluate(scored, h_steps, precision_floor=precision_floor,
                      bin_steps=int(bin_steps))
    if args.out is not None:
        dump_json(resolve_out(args.out), report.to_dict())
    _emit(report.to_dict())
    return 0


def _cmd_report(args) -> int:
    from .report import write_report

    written = write_report(args.runs, resolve_out(args.out),
                           baseline=args.baseline)
    _emit({"written": written})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tlsmooth",
        description="Generate cohorts, train with smoothed targets, "
                    "evaluate and report.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic cohort JSON")
    p.add_argument("--config", help="GenConfig JSON path")
    p.add_argument("--preset", help="named generator preset")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="cohort JSON path to write")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="run one seed of an experiment config")
    p.add_argument("--config", required=True, help="ExperimentConfig JSON path")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", help="output directory (overrides config)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="score a cohort with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="cohort JSON path")
    p.add_argument("--out", help="also write the report JSON here")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="run an experiment over all its seeds")
    p.add_argument("--config", required=True, help="ExperimentConfig JSON path")
    p.add_argument("--out", help="output directory (overrides config)")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="summarize persisted run records to CSV")
    p.add_argument("--runs", required=True, help="experiment output directory")
    p.add_argument("--out", required=True, help="directory for CSV tables")
    p.add_argument("--baseline", help="method the delta tables compare against")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        json.dump(payload, sys.stderr, indent=2, sort_keys=True)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
