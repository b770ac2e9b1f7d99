"""Command-line entry point: ``python -m src.cli <subcommand> ...``."""

import argparse
import sys
from pathlib import Path

from dotenv import load_dotenv

# .env has to be loaded before src.config reads the environment at import time
load_dotenv(".env")

import numpy as np

from src import config
from src.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from src.custom_logging import get_logger, set_level
from src.dataset import build_meta_dataset
from src.dataset_io import export_trace_csv, load_dataset, save_dataset
from src.errors import ConfigError, DataError, WorkbenchError
from src.evaluation import evaluate_tasks, write_report
from src.run_config import RunConfig, load_run_config, write_run_config
from src.seeding import derive_seed
from src.training import adapt, joint_train, maml_meta_train, write_curve_csv

logger = get_logger(__name__)


# ────────────────────── Helpers ──────────────────────


def _overrides(pairs: list[str] | None) -> dict:
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def _resolve(args) -> tuple[RunConfig, int, int]:
    overrides = _overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = load_run_config(args.config, overrides)
    threads = 1 if args.deterministic else config.resolve_threads(args.threads)
    return cfg, cfg.seed, threads


def _out(args, default_name: str) -> Path:
    return Path(args.out) if args.out else Path(config.DATA_DIR) / default_name


def _sidecar(out: Path) -> Path:
    """Resolved config next to an output file (or inside an output directory)."""
    if out.suffix:
        return out.with_name(out.stem + ".run_config.env")
    return out / "run_config.env"


def _checkpoint_from(kind: str, result, cfg: RunConfig, seed: int, ds_seed: int) -> Checkpoint:
    return Checkpoint(
        params=result.params,
        kind=kind,
        step=result.step,
        master_seed=seed,
        lineage={"init": derive_seed(seed, "init", kind), "dataset_master_seed": ds_seed},
        run_config=cfg.to_flat(),
        optimizer=result.optimizer,
        history=result.history,
    )


# ────────────────────── Subcommands ──────────────────────


def cmd_generate(args) -> int:
    cfg, seed, threads = _resolve(args)
    out = _out(args, f"dataset-{args.role}.bin")
    ds = build_meta_dataset(
        cfg.generation(), cfg.dataset.num_tasks, cfg.dataset.num_slots, seed, role=args.role, threads=threads
    )
    ds.run_config = cfg.to_flat()
    save_dataset(ds, out)
    write_run_config(cfg, _sidecar(out))
    print(
        f"N={ds.num_tasks} K={ds.num_devices} T={ds.num_slots} mode={ds.mode} xi={ds.xi} tau={ds.tau} "
        f"positive_rate={ds.positive_rate():.6f} -> {out}"
    )
    return config.EXIT_OK


def _train(args, kind: str) -> int:
    cfg, seed, threads = _resolve(args)
    ds = load_dataset(args.dataset)
    out = _out(args, f"{kind}.ckpt")
    dtype = np.dtype(cfg.dtype)

    resume = dict(init=None, optimizer=None, start_step=0)
    history = None
    if args.resume:
        prev = load_checkpoint(args.resume)
        history = prev.history
        resume = dict(init=prev.params.astype(dtype), optimizer=prev.optimizer, start_step=prev.step)
        logger.info("resuming", extra={"checkpoint": str(args.resume), "step": prev.step})

    dims = resume["init"].dims if resume["init"] is not None else cfg.model_dims(ds.num_devices)
    if kind == "maml":
        result = maml_meta_train(
            ds,
            cfg.meta,
            dims=dims,
            seed=seed,
            history=history,
            threads=threads,
            dtype=dtype,
            progress=args.progress,
            **resume,
        )
    else:
        result = joint_train(ds, cfg.joint, dims=dims, seed=seed, dtype=dtype, progress=args.progress, **resume)

    save_checkpoint(_checkpoint_from(kind, result, cfg, seed, ds.master_seed), out)
    curve = Path(args.curve) if args.curve else out.with_name(out.stem + ".curve.csv")
    write_curve_csv(result.curve, curve, append=bool(args.resume))
    write_run_config(cfg, _sidecar(out))
    print(f"{kind}: step={result.step} converged={result.converged} -> {out}")
    return config.EXIT_OK


def cmd_joint_train(args) -> int:
    return _train(args, "joint")


def cmd_meta_train(args) -> int:
    return _train(args, "maml")


def cmd_adapt(args) -> int:
    cfg, seed, _ = _resolve(args)
    ds = load_dataset(args.dataset)
    init = load_checkpoint(args.checkpoint)
    if not 0 <= args.task < ds.num_tasks:
        raise DataError(f"task {args.task} out of range for {ds.num_tasks} tasks")
    task = ds.tasks[args.task]
    t_test = args.t_test if args.t_test is not None else task.num_slots
    seq = task.slice(0, t_test).device_sequence(args.device)
    phi = adapt(init.params, seq, cfg.adapt)
    out = _out(args, f"adapted-{args.task}-{args.device}.ckpt")
    save_checkpoint(
        Checkpoint(
            params=phi,
            kind="adapted",
            step=cfg.adapt.epochs,
            master_seed=seed,
            lineage={"init_checkpoint": str(args.checkpoint), "task": args.task, "device": args.device, "T_test": t_test},
            run_config=cfg.to_flat(),
        ),
        out,
    )
    write_run_config(cfg, _sidecar(out))
    print(f"adapted task={args.task} device={args.device} T_test={t_test} -> {out}")
    return config.EXIT_OK


def cmd_eval(args) -> int:
    cfg, seed, threads = _resolve(args)
    if args.init_kinds:
        cfg.eval.init_kinds = tuple(k.strip() for k in args.init_kinds.split(",") if k.strip())
        cfg.validate()
    ds = load_dataset(args.dataset)
    kinds = cfg.eval.init_kinds
    for kind in ("maml", "joint"):
        if kind in kinds and getattr(args, kind) is None:
            raise ConfigError(f"init kind {kind!r} needs --{kind} CHECKPOINT")
    theta_maml = load_checkpoint(args.maml).params if "maml" in kinds else None
    theta_joint = load_checkpoint(args.joint).params if "joint" in kinds else None

    report = evaluate_tasks(
        theta_maml,
        theta_joint,
        derive_seed(seed, "init", "random"),
        ds,
        cfg.adapt,
        cfg.eval,
        threads=threads,
        random_dims=cfg.model_dims(ds.num_devices),
    )
    out = _out(args, "report")
    paths = write_report(report, out)
    write_run_config(cfg, _sidecar(out))
    counts = report.event_counts()
    print(f"events per (init, T_test): {counts} -> {paths['events'].parent}")
    return config.EXIT_OK


def cmd_export_trace(args) -> int:
    ds = load_dataset(args.dataset)
    if not 0 <= args.task < ds.num_tasks:
        raise DataError(f"task {args.task} out of range for {ds.num_tasks} tasks")
    out = _out(args, f"trace-{args.task}.csv")
    rows = export_trace_csv(ds.tasks[args.task], out)
    print(f"{rows} rows -> {out}")
    return config.EXIT_OK


# ────────────────────── Parser ──────────────────────


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value run config file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--threads", type=int, default=0, help="worker threads, 0 = all cores")
    common.add_argument("--deterministic", action="store_true", help="single worker, ordered reductions")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ...")

    parser = argparse.ArgumentParser(prog="mmwave-blockage", description="mmWave blockage prediction workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="simulate and label a meta-dataset")
    p.add_argument("--role", choices=("train", "test"), default="train")
    p.set_defaults(func=cmd_generate)

    for name, func in (("joint-train", cmd_joint_train), ("meta-train", cmd_meta_train)):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--dataset", required=True)
        p.add_argument("--resume", help="checkpoint to continue from")
        p.add_argument("--curve", help="training-curve CSV (default: next to the checkpoint)")
        p.add_argument("--progress", action="store_true", help="show a progress bar")
        p.set_defaults(func=func)

    p = sub.add_parser("adapt", parents=[common], help="adapt a checkpoint to one task device")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", type=int, default=0)
    p.add_argument("--device", type=int, default=0)
    p.add_argument("--t-test", type=int, default=None, help="adaptation prefix length (default: whole task)")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", parents=[common], help="prediction-time CDFs over a held-out dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--maml")
    p.add_argument("--joint")
    p.add_argument("--init-kinds", help="comma list out of maml,joint,random,naive")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-trace", parents=[common], help="write one task's SNR trace as CSV")
    p.add_argument("--dataset", required=True)
    p.add_argument("--task", type=int, default=0)
    p.set_defaults(func=cmd_export_trace)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        set_level(args.log_level.upper())
    try:
        return args.func(args)
    except WorkbenchError as e:
        logger.error(str(e), exc_info=True, extra={"command": args.command, "exit_code": e.exit_code})
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        logger.error(str(e), exc_info=True, extra={"command": args.command})
        print(f"error: {e}", file=sys.stderr)
        return config.EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
