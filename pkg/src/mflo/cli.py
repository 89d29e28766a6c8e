"""Command-line entry points.

Verbs:
  run           execute the configured run for every seed, write reports
  resume        continue an interrupted run from its checkpoint
  report        re-emit report files from a checkpoint without computing
  ablate        expand one config into the full mode matrix and run it
  oracle-check  print the oracle cost/correlation ladder

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .autodiff import NumericalError
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, load_config
from .controller import ActiveLearningRun, BudgetError, active_levels_for_mode
from .report import emit_combined_summary, emit_run_report

log = logging.getLogger("mflo")

CHECKPOINT_NAME = "checkpoint.bin"


def _load_or_default(config_path: str | None) -> RunConfig:
    if config_path is None:
        return RunConfig.from_dict({})
    return load_config(config_path)


def _seed_dir(base: Path, mode: str, seed: int, nested: bool) -> Path:
    return (base / mode / f"seed_{seed}") if nested else (base / f"seed_{seed}")


def _execute_runs(config: RunConfig, out: Path, modes: list[str],
                  figures: bool, nested: bool) -> list:
    results = []
    for mode in modes:
        for seed in config.seeds:
            run_config = config.with_overrides(seed=seed, mode=mode)
            run_dir = _seed_dir(out, mode, seed, nested)
            run_dir.mkdir(parents=True, exist_ok=True)
            log.info("running mode=%s seed=%d -> %s", mode, seed, run_dir)
            run = ActiveLearningRun(run_config, seed)
            result = run.run(checkpoint_path=run_dir / CHECKPOINT_NAME)
            emit_run_report(result, run_dir, figures=figures)
            results.append(result)
    emit_combined_summary(results, out, figures=figures)
    return results


def cmd_run(args) -> int:
    config = _load_or_default(args.config)
    config = config.with_overrides(seed=args.seed, mode=args.mode, budget=args.budget)
    out = Path(args.out)
    _execute_runs(config, out, [config.mode], not args.no_figures, nested=False)
    return 0


def cmd_resume(args) -> int:
    run_dir = Path(args.out)
    payload = load_checkpoint(run_dir / CHECKPOINT_NAME)
    run = ActiveLearningRun.from_snapshot(payload)
    if run.phase == "done":
        log.info("run already complete; re-emitting report")
        from .report import build_result

        result = build_result(run)
    else:
        result = run.run(checkpoint_path=run_dir / CHECKPOINT_NAME)
    emit_run_report(result, run_dir, figures=not args.no_figures)
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.out)
    payload = load_checkpoint(run_dir / CHECKPOINT_NAME)
    run = ActiveLearningRun.from_snapshot(payload)
    from .report import build_result

    emit_run_report(build_result(run), run_dir, figures=not args.no_figures)
    return 0


def cmd_ablate(args) -> int:
    config = _load_or_default(args.config)
    config = config.with_overrides(budget=args.budget)
    n_fid = config.n_fidelities
    modes = ["full", "no_likelihood", "single_fidelity"]
    modes += [f"drop_fidelity_{j}" for j in range(1, n_fid + 1)] if n_fid > 1 else []
    out = Path(args.out)
    _execute_runs(config, out, modes, not args.no_figures, nested=True)
    return 0


def cmd_oracle_check(args) -> int:
    config = _load_or_default(args.config)
    from .config import build_environment

    env = build_environment(config)
    if config.environment_kind != "synthetic":
        print("external environment: correlation ladder unavailable without charging oracles")
        for k in range(1, env.n_fidelities + 1):
            spec = env.oracle_spec(k)
            print(f"fidelity {k}: kind={spec.kind} cost={spec.cost:g}")
        return 0
    correlations = env.fidelity_correlations(args.samples)
    print(f"fidelity ladder over {args.samples} random sequences "
          f"(alphabet {env.config.alphabet_size}, length {env.config.length}):")
    for k, corr in enumerate(correlations, start=1):
        print(f"fidelity {k}: cost={env.cost_of(k):>8g}  corr_with_truth={corr:+.4f}")
    if all(b > a for a, b in zip(correlations, correlations[1:])):
        print("ladder OK: correlation strictly increases with fidelity")
    else:
        print("ladder WARNING: correlation is not strictly increasing")
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mflo",
        description="Multi-fidelity latent-space active learning for sequence design")
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, need_out=True):
        p.add_argument("--config", help="path to the YAML run config")
        if need_out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--no-figures", action="store_true",
                       help="skip rendering PNG figures")

    p_run = sub.add_parser("run", help="run active learning for every configured seed")
    common(p_run)
    p_run.add_argument("--seed", type=int, help="override the config's seed list")
    p_run.add_argument("--mode", help="override the run mode")
    p_run.add_argument("--budget", type=float, help="override budget.max_cost")
    p_run.set_defaults(func=cmd_run)

    p_resume = sub.add_parser("resume", help="continue a run from its checkpoint")
    p_resume.add_argument("--out", required=True, help="run directory with checkpoint.bin")
    p_resume.add_argument("--no-figures", action="store_true")
    p_resume.set_defaults(func=cmd_resume)

    p_report = sub.add_parser("report", help="re-emit reports from a checkpoint")
    p_report.add_argument("--out", required=True, help="run directory with checkpoint.bin")
    p_report.add_argument("--no-figures", action="store_true")
    p_report.set_defaults(func=cmd_report)

    p_ablate = sub.add_parser("ablate", help="run the ablation mode matrix")
    common(p_ablate)
    p_ablate.add_argument("--budget", type=float, help="override budget.max_cost")
    p_ablate.set_defaults(func=cmd_ablate)

    p_check = sub.add_parser("oracle-check", help="print the oracle ladder")
    p_check.add_argument("--config", help="path to the YAML run config")
    p_check.add_argument("--samples", type=int, default=2000,
                         help="random sequences for the correlation estimate")
    p_check.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, BudgetError, CheckpointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
