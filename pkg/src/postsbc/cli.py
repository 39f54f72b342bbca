"""Command-line entry point: ``postsbc run|plot|report|calibrate-band``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .runner import EXIT_INVALID, EXIT_PASS, ConfigError, ExperimentConfig, RunDirError, plot_run, report_run, run_experiment, report_text
from .uniformity import simultaneous_band


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="postsbc", description="Prior and posterior SBC campaigns.")
    p.add_argument("-q", "--quiet", action="store_true", help="suppress the per-iteration log")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--workers", type=int, help="worker processes (overrides the config)")
    run.add_argument("--seed", type=int, help="campaign seed (overrides the config)")
    run.add_argument("--resume", action="store_true", help="keep finished iterations with a matching config hash")
    run.add_argument("--out", type=Path, help="output directory (overrides the config)")
    run.add_argument("--stop-after", type=int, help=argparse.SUPPRESS)

    plot = sub.add_parser("plot", help="render SVG plots for a run directory")
    plot.add_argument("--run-dir", required=True, type=Path)

    rep = sub.add_parser("report", help="summarize a run directory")
    rep.add_argument("--run-dir", required=True, type=Path)

    cal = sub.add_parser("calibrate-band", help="compute a simultaneous band and print it as JSON")
    cal.add_argument("--n", required=True, type=int)
    cal.add_argument("--s", required=True, type=int)
    cal.add_argument("--coverage", type=float, default=0.95)
    cal.add_argument("--seed", type=int, default=0)
    cal.add_argument("--replications", type=int, default=5000)
    cal.add_argument("--out", type=Path, help="write the envelope here instead of stdout")
    return p


def _run(args) -> int:
    overrides = {"workers": args.workers, "seed": args.seed}
    cfg = ExperimentConfig.from_file(args.config, **overrides)
    outcome = run_experiment(cfg, resume=args.resume, stop_after=args.stop_after, output_dir=args.out)
    print(report_text(outcome.report), end="")
    print(f"artifacts in {outcome.run_dir}")
    return outcome.exit_code


def _calibrate(args) -> int:
    if args.n < 1 or args.s < 1 or not 0.5 < args.coverage < 1:
        raise ConfigError("need n >= 1, s >= 1 and coverage in (0.5, 1)")
    env = simultaneous_band(args.n, args.s, args.coverage, mc_replications=args.replications, seed=args.seed)
    if args.out:
        args.out.write_text(env.to_json())
        print(f"gamma={env.gamma:.6g} achieved={env.achieved:.4f} -> {args.out}")
    else:
        sys.stdout.write(env.to_json())
    return EXIT_PASS


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "run":
            return _run(args)
        if args.command == "plot":
            for path in plot_run(args.run_dir):
                print(path)
            return EXIT_PASS
        if args.command == "report":
            outcome = report_run(args.run_dir)
            print(report_text(outcome.report), end="")
            return outcome.exit_code
        return _calibrate(args)
    except (ConfigError, RunDirError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
