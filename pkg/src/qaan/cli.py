"""Command-line entry point: ``qaan run|resume|report|oracle``.

Config keys can be given as flags (``--pimc.slices 16`` or
``--gan.lr_gan=1e-4``), through ``--set key=value`` or in a ``--config``
file of ``key=value`` lines.  Flags win over the file.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import CheckpointError
from .config import EXPERIMENTS, OUTPUT_ROOT_ENV, ConfigError, ExperimentConfig, apply_overrides, load_config
from .report import ReportError, emit_report
from .oracles import exact_suite, pimc_fidelity_check
from .runner import RunError, resume_experiment, run_experiment


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qaan", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run an experiment",
                         epilog=f"Runs go to ${OUTPUT_ROOT_ENV}/<experiment>-seed<seed> unless --output-dir is set.")
    run.add_argument("experiment", help="one of: " + ", ".join(EXPERIMENTS))
    run.add_argument("--seed", type=int)
    run.add_argument("--config", type=Path, help="file of key=value lines")
    run.add_argument("--output-dir", help="root directory for run directories")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    run.add_argument("--stop-after-epoch", type=int, help="stop early (the run can be resumed)")
    run.add_argument("--quiet", action="store_true")

    res = sub.add_parser("resume", help="continue a run from its newest checkpoint")
    res.add_argument("run_dir", type=Path)
    res.add_argument("--stop-after-epoch", type=int)
    res.add_argument("--quiet", action="store_true")

    rep = sub.add_parser("report", help="summary table and SVG plots for a run directory")
    rep.add_argument("run_dir", type=Path)

    orc = sub.add_parser("oracle", help="run the exact-oracle validation suite")
    orc.add_argument("--seed", type=int, default=0)
    orc.add_argument("--pimc", action="store_true", help="include the slow PIMC fidelity check")
    return ap


def _key_flags(extra: list[str]) -> dict[str, str]:
    """Turn leftover ``--a.b v`` / ``--a.b=v`` arguments into overrides."""
    out: dict[str, str] = {}
    i = 0
    while i < len(extra):
        arg = extra[i]
        if not arg.startswith("--"):
            raise ConfigError(f"unexpected argument {arg!r}")
        key = arg[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"flag {arg!r} needs a value")
            i += 1
            value = extra[i]
        out[key] = value
        i += 1
    return out


def _config(args, extra: list[str]) -> ExperimentConfig:
    overrides: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    overrides.update(_key_flags(extra))
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    if args.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {args.experiment!r}; valid: {', '.join(EXPERIMENTS)}")
    if args.config is not None:
        cfg = replace(load_config(args.config), experiment=args.experiment)
    else:
        cfg = ExperimentConfig(experiment=args.experiment)
    return apply_overrides(cfg, overrides)


def main(argv=None) -> int:
    ap = _parser()
    args, extra = ap.parse_known_args(argv)
    echo = None if getattr(args, "quiet", False) else print
    try:
        if args.verb == "run":
            cfg = _config(args, extra)
            run_dir = run_experiment(cfg, args.stop_after_epoch, echo)
            print(f"run directory: {run_dir}")
        elif extra:
            ap.error(f"unrecognized arguments: {' '.join(extra)}")
        elif args.verb == "resume":
            run_dir = resume_experiment(args.run_dir, args.stop_after_epoch, echo)
            print(f"run directory: {run_dir}")
        elif args.verb == "report":
            sys.stdout.write(emit_report(args.run_dir))
            for name in ("report.txt", "curves.svg", "kl_bars.svg"):
                if (args.run_dir / name).exists():
                    print(f"wrote {args.run_dir / name}")
        elif args.verb == "oracle":
            results = exact_suite(args.seed)
            if args.pimc:
                results.append(pimc_fidelity_check(args.seed)[0])
            for r in results:
                print(r.line())
            return 0 if all(r.passed for r in results) else 1
    except (ConfigError, CheckpointError, ReportError, RunError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
