"""Experiment drivers: run directories, per-epoch checkpoints and resume."""

from __future__ import annotations

import json
import platform
import re
from pathlib import Path
from typing import Optional, Union

import matplotlib
import numpy as np
import scipy

from . import __version__
from .checkpoint import (CheckpointError, check_shapes, load_checkpoint, pack_adam, pack_net, pack_qbm,
                         pack_rbm, save_checkpoint, unpack_adam_into, unpack_net_into, unpack_qbm, unpack_rbm)
from .config import ExperimentConfig, dumps, flatten, load_config, provenance
from .experiments import SyntheticRun, ToyRun, synthetic_setup, toy_setup
from .oracles import exact_suite, pimc_fidelity_check
from .qbm import QbmTrainer
from .rbm import PcdState
from .report import METRICS_FILE, write_metrics
from .streams import get_state, set_state

CONFIG_FILE = "config.txt"
MANIFEST_FILE = "manifest.json"
CHECKPOINT_DIR = "checkpoints"

Run = Union[SyntheticRun, ToyRun]


class RunError(RuntimeError):
    pass


def build_run(cfg: ExperimentConfig) -> Run:
    if cfg.experiment == "synthetic-bm":
        return synthetic_setup(cfg.synthetic_config(), cfg.seed)
    if cfg.experiment == "oracle-suite":
        raise RunError("oracle-suite has no trainable state")
    return toy_setup(cfg.toy_config(), cfg.seed)


def total_epochs(cfg: ExperimentConfig) -> int:
    return cfg.synthetic.epochs if cfg.experiment == "synthetic-bm" else cfg.gan.epochs


def _pack_memory(trainer, prefix: str) -> tuple[dict, dict]:
    if isinstance(trainer, QbmTrainer):
        arrays = pack_qbm(trainer.params, prefix)
    else:
        arrays = pack_rbm(trainer.params, prefix)
    opt_arrays, opt_meta = pack_adam(trainer.optimizer, prefix + "_opt")
    arrays.update(opt_arrays)
    meta = {"optimizer": opt_meta, "epoch": trainer.epoch, "pcd": None}
    pcd = getattr(trainer, "pcd", None)
    if pcd is not None:
        arrays[prefix + ".pcd"] = pcd.chains.astype(np.float64)
        meta["pcd"] = pcd.k
    return arrays, meta


def _unpack_memory(trainer, arrays: dict, meta: dict, prefix: str) -> None:
    expected = pack_qbm(trainer.params, prefix) if isinstance(trainer, QbmTrainer) else pack_rbm(trainer.params, prefix)
    check_shapes(expected, arrays)
    trainer.params = unpack_qbm(arrays, prefix) if isinstance(trainer, QbmTrainer) else unpack_rbm(arrays, prefix)
    unpack_adam_into(trainer.optimizer, arrays, prefix + "_opt", meta["optimizer"])
    trainer.epoch = int(meta["epoch"])
    if meta["pcd"] is not None:
        trainer.pcd = PcdState(arrays[prefix + ".pcd"].astype(np.int8), int(meta["pcd"]))


def capture(run: Run) -> tuple[dict, dict]:
    """Arrays and JSON-safe metadata sufficient to continue ``run`` exactly."""
    header = {"streams": {k: get_state(g) for k, g in run.streams.items()},
              "log": [list(r) for r in run.log], "degeneracy_warnings": run.degeneracy_warnings,
              "epoch": run.epoch}
    if isinstance(run, SyntheticRun):
        arrays, header["rbm"] = _pack_memory(run.rbm, "rbm")
        qbm_arrays, header["qbm"] = _pack_memory(run.qbm, "qbm")
        arrays.update(qbm_arrays)
        return arrays, header
    state = run.state
    arrays = {**pack_net(state.generator, "generator"), **pack_net(state.discriminator, "discriminator")}
    for name, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
        a, header[name] = pack_adam(opt, name)
        arrays.update(a)
    header["steps"] = state.steps
    if state.memory_trainer is not None:
        a, header["memory"] = _pack_memory(state.memory_trainer, "memory")
        arrays.update(a)
    return arrays, header


def restore(run: Run, arrays: dict, header: dict) -> None:
    for name, rng in run.streams.items():
        set_state(rng, header["streams"][name])
    run.degeneracy_warnings = int(header["degeneracy_warnings"])
    log = [tuple(r) for r in header["log"]]
    if isinstance(run, SyntheticRun):
        _unpack_memory(run.rbm, arrays, header["rbm"], "rbm")
        _unpack_memory(run.qbm, arrays, header["qbm"], "qbm")
        run.log[:] = log
        return
    state = run.state
    unpack_net_into(state.generator, arrays, "generator")
    unpack_net_into(state.discriminator, arrays, "discriminator")
    unpack_adam_into(state.opt_g, arrays, "opt_g", header["opt_g"])
    unpack_adam_into(state.opt_d, arrays, "opt_d", header["opt_d"])
    state.steps = int(header["steps"])
    state.epoch = int(header["epoch"])
    if state.memory_trainer is not None:
        if "memory" not in header:
            raise CheckpointError("checkpoint holds no associative memory for this mode")
        _unpack_memory(state.memory_trainer, arrays, header["memory"], "memory")
    state.metric_log[:] = log


def manifest(cfg: ExperimentConfig) -> dict:
    return {
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "config": flatten(cfg),
        "provenance": provenance(cfg),
        "versions": {"qaan": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "matplotlib": matplotlib.__version__},
    }


def _prepare(run_dir: Path) -> None:
    try:
        (run_dir / CHECKPOINT_DIR).mkdir(parents=True, exist_ok=True)
        probe = run_dir / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise RunError(f"output directory {run_dir} is not writable: {exc}") from None


def checkpoint_path(run_dir: Path, epoch: int) -> Path:
    return run_dir / CHECKPOINT_DIR / f"epoch-{epoch:04d}.ckpt"


def latest_checkpoint(run_dir: Path) -> Optional[Path]:
    found = sorted((run_dir / CHECKPOINT_DIR).glob("epoch-*.ckpt"))
    return found[-1] if found else None


def _slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


def run_oracles(cfg: ExperimentConfig, run_dir: Path, include_pimc: bool = False) -> list:
    results = exact_suite(cfg.seed)
    if include_pimc:
        results.append(pimc_fidelity_check(cfg.seed)[0])
    write_metrics(run_dir / METRICS_FILE,
                  [(0, "oracle" if r.passed else "oracle-fail", _slug(r.name), r.value, r.tolerance) for r in results])
    return results


def _train(cfg: ExperimentConfig, run: Run, run_dir: Path, stop_after: Optional[int], echo) -> Run:
    target = total_epochs(cfg)
    if stop_after is not None:
        target = min(target, stop_after)
    while run.epoch < target:
        rows = run.step_epoch()
        write_metrics(run_dir / METRICS_FILE, run.log)
        arrays, header = capture(run)
        header["config"] = flatten(cfg)
        save_checkpoint(checkpoint_path(run_dir, run.epoch), cfg.experiment, arrays, header)
        if echo is not None:
            for epoch, mode, metric, mean, std in rows:
                echo(f"{epoch},{mode},{metric},{mean!r},{std!r}")
    return run


def run_experiment(cfg: ExperimentConfig, stop_after: Optional[int] = None, echo=None) -> Path:
    """Fresh run: writes config.txt, manifest.json, metrics.csv and per-epoch checkpoints."""
    run_dir = cfg.run_dir()
    _prepare(run_dir)
    (run_dir / CONFIG_FILE).write_text(dumps(cfg))
    (run_dir / MANIFEST_FILE).write_text(json.dumps(manifest(cfg), indent=2, sort_keys=True) + "\n")
    for old in (run_dir / CHECKPOINT_DIR).glob("epoch-*.ckpt"):
        old.unlink()
    if cfg.experiment == "oracle-suite":
        results = run_oracles(cfg, run_dir)
        if echo is not None:
            for r in results:
                echo(r.line())
        return run_dir
    _train(cfg, build_run(cfg), run_dir, stop_after, echo)
    return run_dir


def resume_experiment(run_dir, stop_after: Optional[int] = None, echo=None) -> Path:
    """Continue from the newest checkpoint; the metric log matches an uninterrupted run."""
    run_dir = Path(run_dir)
    cfg_path = run_dir / CONFIG_FILE
    if not cfg_path.is_file():
        raise RunError(f"{run_dir} has no {CONFIG_FILE}")
    cfg = load_config(cfg_path)
    run = build_run(cfg)
    ckpt = latest_checkpoint(run_dir)
    if ckpt is not None:
        tag, arrays, header = load_checkpoint(ckpt)
        if tag != cfg.experiment:
            raise CheckpointError(f"checkpoint is for {tag!r}, run is {cfg.experiment!r}")
        restore(run, arrays, header)
    _train(cfg, run, run_dir, stop_after, echo)
    return run_dir
