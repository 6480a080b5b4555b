"""Command-line entry point.

Subcommands: gen-data, train, evaluate, scan, report.
Exit codes: 0 success, 1 scan-found/assertion, 2 usage, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import sys
import time
from pathlib import Path

import numpy as np

from . import metrics, nn, poison, triggers as tdsl
from .agent import layout_for, run_clean_training
from .config import ConfigError, load_config, make_rngs, config_text, substream
from .env import channel_series, generate_jobs, load_jobs_csv, save_jobs_csv


def _load_trigger(run):
    if not run.attack.trigger_file:
        raise ConfigError("attack.trigger_file is required for this command")
    formula = tdsl.parse_file(run.attack.trigger_file)
    duration = run.attack.duration or formula.duration
    if not duration:
        raise ConfigError("attack duration is neither configured nor declared "
                          "in the trigger file")
    return formula, duration


def _write_manifest(out_dir: Path, run, config_path, seed, started):
    digest = hashlib.sha256(Path(config_path).read_bytes()).hexdigest()
    text = (f"config_file {config_path}\n"
            f"config_sha256 {digest}\n"
            f"seed {seed}\n"
            f"wall_time_s {time.time() - started:.3f}\n\n"
            + config_text(run))
    (out_dir / "manifest.txt").write_text(text, encoding="utf-8")


def _write_curve(curve, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "cumulative_reward", "epsilon", "loss_mean"])
        for episode, cum, eps, loss in curve:
            writer.writerow([episode, f"{cum:.6f}", f"{eps:.6f}", f"{loss:.6f}"])


def cmd_gen_data(args) -> int:
    run = load_config(args.config, _overrides(args))
    out_dir = Path(args.out or run.io.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rngs = make_rngs(run.io.seed)
    jobs = generate_jobs(run.env, rngs["jobs"])
    save_jobs_csv(jobs, out_dir / "clean_trace.csv")
    print(f"wrote {out_dir / 'clean_trace.csv'} ({len(jobs)} jobs)")
    if args.poison:
        formula, duration = _load_trigger(run)
        schedule = poison.make_schedule(formula, duration,
                                        run.attack.poisoning_rate,
                                        len(jobs), rngs["schedule"])
        poisoned = poison.poison_episode(jobs, schedule, rngs["synthesis"],
                                         bounds=run.attack.synth_bounds,
                                         channel=run.env.trigger_channel)
        save_jobs_csv(poisoned.jobs, out_dir / "poisoned_trace.csv")
        with open(out_dir / "ground_truth.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", "site_start", "trigger_end", "L"])
            for start, occ in zip(poisoned.site_starts, poisoned.ground_truth):
                writer.writerow([0, start, occ.end_index, duration])
        print(f"wrote {out_dir / 'poisoned_trace.csv'} "
              f"({len(schedule.sites)} trigger sites)")
    return 0


def cmd_train(args) -> int:
    started = time.time()
    run = load_config(args.config, _overrides(args))
    out_dir = Path(args.out or run.io.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rngs = make_rngs(run.io.seed)
    episodes = args.episodes
    if args.mode == "clean":
        result = run_clean_training(run.env, run.agent, rngs, episodes=episodes)
        curve = result.curve
        params = result.params
    else:
        formula, duration = _load_trigger(run)
        result = poison.run_backdoor_training(
            run.env, run.agent, formula, duration, run.attack.poisoning_rate,
            rngs, episodes=episodes, synth_bounds=run.attack.synth_bounds)
        curve = result.curve
        params = result.params
        with open(out_dir / "poison_log.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", "site_start", "trigger_end", "L"])
            writer.writerows(result.poison_rows)
        print(f"flipped {result.flipped_steps} of {result.total_steps} "
              "training steps")
    nn.save_checkpoint(out_dir / "checkpoint.txt", params)
    _write_curve(curve, out_dir / "curve.csv")
    _write_manifest(out_dir, run, args.config, run.io.seed, started)
    print(f"trained {len(curve)} episodes -> {out_dir / 'checkpoint.txt'}")
    return 0


def _run_eval_task(task):
    return metrics.evaluate_checkpoint(**task)


def cmd_evaluate(args) -> int:
    started = time.time()
    run = load_config(args.config, _overrides(args))
    out_dir = Path(args.out or run.io.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clean_params, _ = nn.load_checkpoint(args.clean_ckpt)
    backdoor_params, _ = nn.load_checkpoint(args.backdoor_ckpt)
    expected = layout_for(run.env, run.agent)
    for name, params in (("clean", clean_params), ("backdoor", backdoor_params)):
        if params.layout != expected:
            raise ConfigError(f"{name} checkpoint layout {params.layout} does "
                              f"not match config layout {expected}")
    formula, duration = _load_trigger(run)
    rng = substream(run.io.seed, "evaluation")
    episodes = args.episodes or 20

    tasks = [
        dict(params=clean_params, env_config=run.env,
             rng=substream(run.io.seed, "eval-clean"), episodes=episodes,
             model_id="clean"),
        dict(params=backdoor_params, env_config=run.env,
             rng=substream(run.io.seed, "eval-clean"), episodes=episodes,
             model_id="backdoor"),
        dict(params=backdoor_params, env_config=run.env, rng=rng,
             episodes=episodes, formula=formula, duration=duration,
             triggers_per_episode=args.triggers,
             synth_bounds=run.attack.synth_bounds, model_id="backdoor"),
    ]
    if args.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            clean_logs, bd_clean_logs, attack_logs = list(
                pool.map(_run_eval_task, tasks))
    else:
        clean_logs, bd_clean_logs, attack_logs = [_run_eval_task(t)
                                                  for t in tasks]

    report = metrics.MetricReport(
        rate=run.env.arrival_rate, trigger=formula.name,
        asr=metrics.asr(attack_logs, run.attack.delta),
        apr=metrics.apr(attack_logs, run.attack.delta),
        cda=metrics.cda(clean_logs, bd_clean_logs))
    metrics.write_summary_csv([report], out_dir / "summary.csv")
    traces = out_dir / "traces"
    traces.mkdir(exist_ok=True)
    for i, log in enumerate(attack_logs):
        metrics.write_trace_csv(log, traces / f"attack_ep{i:03d}.csv")
    for i, log in enumerate(bd_clean_logs):
        metrics.write_trace_csv(log, traces / f"clean_ep{i:03d}.csv")
    _write_manifest(out_dir, run, args.config, run.io.seed, started)
    print(metrics.format_summary_table([report]))
    return 0


def cmd_scan(args) -> int:
    formula = tdsl.parse_file(args.trigger_file)
    jobs = load_jobs_csv(args.trace_csv)
    if not jobs:
        print("empty trace", file=sys.stderr)
        return 2
    series = channel_series(jobs, args.channel)
    occurrences = tdsl.scan(formula, series)
    for occ in occurrences:
        window = ", ".join(f"{v:.3f}" for v in occ.window)
        print(f"end_index={occ.end_index} window=[{window}]")
    print(f"{len(occurrences)} occurrence(s) of {formula.name!r} "
          f"in {len(series)} steps")
    return 1 if occurrences else 0


def cmd_report(args) -> int:
    rows = []
    for path in args.inputs:
        rows.extend(metrics.read_summary_csv(path))
    rows.sort(key=lambda r: (r.rate, r.trigger))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    metrics.write_summary_csv(rows, out)
    print(metrics.format_summary_table(rows))
    return 0


def _overrides(args) -> dict:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["io.seed"] = args.seed
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drqn-backdoor",
        description="Temporal-pattern backdoor harness for recurrent "
                    "Q-learning job scheduling")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--seed", type=int, help="override io.seed")
        p.add_argument("--out", help="override io.out_dir")

    p = sub.add_parser("gen-data", help="generate job traces")
    common(p)
    p.add_argument("--poison", action="store_true",
                   help="also write a poisoned trace and its ground truth")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a clean or backdoored model")
    common(p)
    p.add_argument("--mode", choices=("clean", "backdoor"), default="clean")
    p.add_argument("--episodes", type=int,
                   help="override agent.max_training_episodes")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="compute CDA/ASR/APR for a model pair")
    common(p)
    p.add_argument("--clean-ckpt", required=True)
    p.add_argument("--backdoor-ckpt", required=True)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--triggers", type=int, default=4,
                   help="injected triggers per attack episode")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel evaluation workers")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("scan", help="scan a job trace for trigger occurrences")
    p.add_argument("trigger_file")
    p.add_argument("trace_csv")
    p.add_argument("--channel", choices=("size", "interarrival"), default="size")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("report", help="merge summary CSVs into one table")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
