"""Command-line entry point: training, evaluation, reporting, oracles.

Numeric settings live in the JSON run config; flags only pick modes, paths
and counts. Every command prints an effective-config banner first (all
defaults materialised) from which the run can be reproduced exactly.

Exit codes: 0 success, 1 runtime failure, 2 bad configuration or usage,
3 checkpoint problems (missing file, hash mismatch, truncation).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import evalkit, learner, matrix_game, pubmdp, runconfig
from .evalkit import ScoreStats
from .runconfig import ConfigError


def _banner(command: str, rc: runconfig.RunConfig, extras: dict) -> None:
    doc = {"command": command, **runconfig.effective_dict(rc), **extras}
    print("effective-config: " + json.dumps(doc, sort_keys=True))


def _load_config(args) -> runconfig.RunConfig:
    if args.config:
        return runconfig.load_run_config(args.config)
    return runconfig.parse_run_config({})


def _apply_run_flags(rc: runconfig.RunConfig, args,
                     out_dir: Path) -> runconfig.RunConfig:
    updates = {"out": str(out_dir)}
    if args.seed is not None:
        updates["seed"] = args.seed
    if getattr(args, "games", None) is not None:
        updates["games"] = args.games
    if getattr(args, "belief", None) is not None:
        updates["variant"] = args.belief
    try:
        run = replace(rc.run, **updates)
    except ValueError as e:
        raise ConfigError(f"run: {e}") from e
    return replace(rc, run=run)


def _out_dir(args, rc: runconfig.RunConfig, command: str) -> Path:
    path = Path(args.out or rc.run.out or os.path.join("runs", command))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_csv(rows: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def _load_payoff(payoff_path):
    if payoff_path is None:
        return matrix_game.load_fixture()[0]
    try:
        return matrix_game.PayoffTensor.from_json(payoff_path)
    except FileNotFoundError:
        raise ConfigError(f"payoff file not found: {payoff_path}") from None
    except (ValueError, json.JSONDecodeError) as e:
        raise ConfigError(f"payoff: {e}") from e


def _require_checkpoint(args) -> str:
    if getattr(args, "random", False):
        return ""
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required (or pass --random)")
    if not Path(args.checkpoint).exists():
        raise pubmdp.CheckpointError(
            f"checkpoint not found: {args.checkpoint}")
    return args.checkpoint


def _matrix_hash(mode: str) -> str:
    return pubmdp.config_hash({"matrix_mode": mode})


def _print_result(doc: dict) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


# -- commands -------------------------------------------------------------------


def _cmd_train_matrix(args) -> int:
    rc = _load_config(args)
    out = _out_dir(args, rc, "train-matrix")
    rc = _apply_run_flags(rc, args, out)
    if args.cf_gradients:
        rc = replace(rc, train=replace(rc.train, cf_gradients=True))
    payoff = _load_payoff(args.payoff)
    _banner("train-matrix", rc, {"payoff": args.payoff or "fixture"})
    run = rc.run
    result = learner.train_matrix(payoff, rc.train, run.seed, run.updates,
                                  run.mode, log_every=run.log_every)
    metrics_csv = out / "metrics.csv"
    _write_csv(result["metrics"], metrics_csv)
    ckpt = out / "matrix_final.ckpt"
    pubmdp.save_checkpoint(ckpt, result["params"], _matrix_hash(run.mode),
                           meta={"env_steps": result["env_steps"],
                                 "updates": run.updates, "mode": run.mode})
    mean_reward = learner.eval_matrix(payoff, result["params"], rc.train,
                                      run.mode, run.games, run.seed,
                                      inv_temp=run.eval_inv_temp)
    _print_result({
        "mean_reward": mean_reward,
        "games": run.games,
        "env_steps": result["env_steps"],
        "checkpoint": str(ckpt),
        "metrics_csv": str(metrics_csv),
    })
    return 0


def _cmd_train_hanabi(args) -> int:
    rc = _load_config(args)
    out = _out_dir(args, rc, "train-hanabi")
    rc = _apply_run_flags(rc, args, out)
    _banner("train-hanabi", rc, {})
    run = rc.run
    cfg_hash = pubmdp.run_config_hash(rc.game, run.variant)
    written = []

    def snapshot(update, params):
        path = out / f"hanabi_u{update:06d}.ckpt"
        pubmdp.save_checkpoint(path, params, cfg_hash,
                               meta={"update": update})
        written.append(str(path))

    result = learner.train_hanabi(
        rc.game, rc.belief, rc.train, run.seed, run.updates,
        variant=run.variant, sample_count=run.sample_count,
        max_env_steps=run.max_env_steps, log_every=run.log_every,
        snapshot_every=run.checkpoint_every, snapshot_hook=snapshot)
    metrics_csv = out / "metrics.csv"
    _write_csv(result["metrics"], metrics_csv)
    ckpt = out / "hanabi_final.ckpt"
    pubmdp.save_checkpoint(ckpt, result["params"], cfg_hash,
                           meta={"env_steps": result["env_steps"],
                                 "updates": result["updates_run"],
                                 "variant": run.variant})
    _print_result({
        "env_steps": result["env_steps"],
        "updates_run": result["updates_run"],
        "best_rating": max(m.rating for m in result["population"]),
        "pbt_events": len(result["events"]),
        "checkpoint": str(ckpt),
        "snapshots": written,
        "metrics_csv": str(metrics_csv),
    })
    return 0


def _cmd_eval(args) -> int:
    rc = _load_config(args)
    out = _out_dir(args, rc, "eval")
    rc = _apply_run_flags(rc, args, out)
    ckpt = _require_checkpoint(args)
    workers = args.workers or os.cpu_count() or 1
    workers = max(1, min(workers, rc.run.games))
    _banner("eval", rc, {"checkpoint": ckpt, "strict": args.strict,
                         "workers": workers})
    run = rc.run
    kw = dict(inv_temp=run.eval_inv_temp, variant=run.variant,
              sample_count=run.sample_count, horizon=run.horizon)
    if workers == 1:
        stats = evalkit.evaluate(ckpt, rc.game, rc.belief, run.games,
                                 run.seed, strict=args.strict, **kw)
    else:
        params, _ = pubmdp.load_checkpoint(
            ckpt, expected_hash=pubmdp.run_config_hash(rc.game, run.variant))
        bounds = [run.games * w // workers for w in range(workers + 1)]
        scores, stricts = [], []
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(evalkit.evaluate_scores, params, rc.game,
                            rc.belief, hi - lo, run.seed, start=lo, **kw)
                for lo, hi in zip(bounds, bounds[1:]) if hi > lo]
            for fut in futures:
                s, ss = fut.result()
                scores.extend(s)
                stricts.extend(ss)
        stats = ScoreStats.from_scores(scores, stricts, rc.game.max_score,
                                       strict=args.strict)
    doc = dataclasses.asdict(stats)
    doc["histogram"] = list(doc["histogram"])
    with open(out / "score_stats.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _print_result(doc)
    return 0


def _cmd_belief_report(args) -> int:
    rc = _load_config(args)
    out = _out_dir(args, rc, "belief-report")
    rc = _apply_run_flags(rc, args, out)
    ckpt = _require_checkpoint(args)
    policy = "random" if args.random else "net"
    _banner("belief-report", rc, {"checkpoint": ckpt, "policy": policy})
    run = rc.run
    rows = evalkit.belief_quality_report(
        ckpt or None, rc.game, rc.belief, run.games, run.seed,
        inv_temp=run.eval_inv_temp, variant=run.variant,
        sample_count=run.sample_count, policy=policy, horizon=run.horizon)
    csv_path = out / "ce_curves.csv"
    evalkit.write_report_csv(rows, csv_path)
    _print_result({
        "rows": len(rows),
        "csv": str(csv_path),
        "last": rows[-1] if rows else None,
    })
    return 0


def _cmd_dump_games(args) -> int:
    rc = _load_config(args)
    out = _out_dir(args, rc, "dump-games")
    rc = _apply_run_flags(rc, args, out)
    ckpt = _require_checkpoint(args)
    policy = "random" if args.random else "net"
    _banner("dump-games", rc, {"checkpoint": ckpt, "policy": policy})
    run = rc.run
    path = out / "games.jsonl"
    summary = evalkit.transcript_dump(
        ckpt or None, rc.game, rc.belief, run.games, run.seed, path=path,
        inv_temp=run.eval_inv_temp, variant=run.variant,
        sample_count=run.sample_count, policy=policy, horizon=run.horizon)
    verified = evalkit.verify_transcript(path)
    summary["verified_games"] = verified["games"]
    _print_result(summary)
    return 0


def _cmd_oracle(args) -> int:
    payoff = _load_payoff(args.payoff)
    print("effective-config: " + json.dumps(
        {"command": "oracle", "payoff": args.payoff or "fixture"},
        sort_keys=True))
    report = matrix_game.mg_oracle_report(payoff)
    doc = dataclasses.asdict(report)
    doc["optimal_p1"] = list(doc["optimal_p1"])
    doc["optimal_p2"] = [list(row) for row in doc["optimal_p2"]]
    _print_result(doc)
    return 0


# -- parser ---------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hanalab",
        description="Self-play belief-tracking agents: train, evaluate, "
                    "report.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run-config JSON path")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--workers", type=int,
                       help="worker processes for evaluation "
                            "(default: available cores)")

    p = sub.add_parser("train-matrix", help="train on the two-step card game")
    common(p)
    p.add_argument("--cf-gradients", action="store_true",
                   help="credit all partial-policy branches in the pg loss")
    p.add_argument("--payoff", help="payoff tensor JSON (default: fixture)")
    p.set_defaults(handler=_cmd_train_matrix)

    p = sub.add_parser("train-hanabi", help="self-play training with "
                                            "public beliefs")
    common(p)
    p.add_argument("--belief", choices=runconfig.VARIANTS,
                   help="belief variant fed to the nets")
    p.set_defaults(handler=_cmd_train_hanabi)

    p = sub.add_parser("eval", help="score a checkpoint over fresh games")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint path")
    p.add_argument("--games", type=int, help="number of evaluation games")
    p.add_argument("--strict", action="store_true",
                   help="histogram/mean over strict scoring")
    p.add_argument("--belief", choices=runconfig.VARIANTS)
    p.set_defaults(handler=_cmd_eval, random=False)

    p = sub.add_parser("belief-report", help="per-timestep belief CE curves")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--games", type=int)
    p.add_argument("--random", action="store_true",
                   help="uniform-random policy instead of a checkpoint")
    p.add_argument("--belief", choices=runconfig.VARIANTS)
    p.set_defaults(handler=_cmd_belief_report)

    p = sub.add_parser("dump-games", help="write JSONL game transcripts")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--games", type=int)
    p.add_argument("--random", action="store_true")
    p.add_argument("--belief", choices=runconfig.VARIANTS)
    p.set_defaults(handler=_cmd_dump_games)

    p = sub.add_parser("oracle", help="brute-force matrix-game solution")
    p.add_argument("--payoff", help="payoff tensor JSON (default: fixture)")
    p.set_defaults(handler=_cmd_oracle)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except pubmdp.CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return 3
    except FileNotFoundError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
