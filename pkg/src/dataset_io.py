"""Dataset container and trace CSV export.

File layout::

    MMWBLKDS <header length, 10 digits>\\n
    <JSON header, UTF-8>\\n
    <payload>

The header is human-readable (version, N, K, T, xi, tau, mode, generation
config, master seed, per-task scenarios, payload size and SHA-256). The payload
holds, for each task in header order: SNR as little-endian float32 (K×T,
row-major), zeta as little-endian float32 (K×T), labels as uint8 (K×T).
"""

import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from src import config
from src.custom_logging import get_logger
from src.dataset import GenerationConfig, LabelMode, MetaDataset, TaskDataset
from src.errors import ChecksumError, FormatError, MissingArtifactError, TruncatedFileError, VersionError
from src.fading import power_to_db
from src.scenario import ScenarioParams

logger = get_logger(__name__)

_F32 = np.dtype("<f4")
_U8 = np.dtype("u1")
_PREFIX_LEN = len(config.DATASET_MAGIC) + 1 + 10 + 1
PAYLOAD_LAYOUT = "per task: snr <f4 KxT, zeta <f4 KxT, labels u1 KxT"


# ────────────────────── Shared container plumbing ──────────────────────


def write_container(path, magic: bytes, header: dict, payload: bytes) -> None:
    """Atomic write (temp file + rename) of magic line, JSON header and payload."""
    header = dict(header)
    header["payload_bytes"] = len(payload)
    header["sha256"] = hashlib.sha256(payload).hexdigest()
    header_bytes = json.dumps(header, indent=1, sort_keys=True).encode("utf-8") + b"\n"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(magic + b" " + f"{len(header_bytes):010d}".encode("ascii") + b"\n")
        fh.write(header_bytes)
        fh.write(payload)
    os.replace(tmp, path)


def read_container(path, magic: bytes, version: int) -> tuple[dict, bytes]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"{path} does not exist")
    data = path.read_bytes()
    if len(data) < _PREFIX_LEN or data[: len(magic)] != magic:
        raise FormatError(f"{path}: bad magic bytes")
    try:
        header_len = int(data[len(magic) + 1 : _PREFIX_LEN - 1].decode("ascii"))
    except (UnicodeDecodeError, ValueError):
        raise FormatError(f"{path}: unreadable header length") from None
    end = _PREFIX_LEN + header_len
    if len(data) < end:
        raise TruncatedFileError(f"{path}: header truncated")
    try:
        header = json.loads(data[_PREFIX_LEN:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError(f"{path}: header is not valid JSON") from None
    if header.get("version") != version:
        raise VersionError(header.get("version"), version)
    payload = data[end:]
    expected = int(header.get("payload_bytes", -1))
    if len(payload) < expected:
        raise TruncatedFileError(f"{path}: payload has {len(payload)} of {expected} bytes")
    if len(payload) > expected:
        raise FormatError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise ChecksumError(f"{path}: payload checksum mismatch")
    return header, payload


# ────────────────────── Dataset files ──────────────────────


def save_dataset(ds: MetaDataset, path) -> None:
    parts = []
    for task in ds.tasks:
        parts.append(np.ascontiguousarray(task.snr, dtype=_F32).tobytes())
        parts.append(np.ascontiguousarray(task.zeta, dtype=_F32).tobytes())
        parts.append(np.ascontiguousarray(task.labels, dtype=_U8).tobytes())
    header = {
        "format": "mmwave-blockage-dataset",
        "version": config.DATASET_VERSION,
        "num_tasks": ds.num_tasks,
        "num_devices": ds.num_devices,
        "num_slots": ds.num_slots,
        "mode": str(ds.mode),
        "xi": ds.xi,
        "tau": ds.tau,
        "gamma0_db": ds.gamma0_db,
        "role": ds.role,
        "master_seed": ds.master_seed,
        "generation_config": ds.generation.to_dict(),
        "run_config": ds.run_config,
        "layout": PAYLOAD_LAYOUT,
        "tasks": [
            {
                "task_id": t.task_id,
                "seed": t.seed,
                "offset": t.offset,
                "scenario": t.scenario.to_dict() if t.scenario else None,
            }
            for t in ds.tasks
        ],
    }
    write_container(path, config.DATASET_MAGIC, header, b"".join(parts))
    logger.info("dataset saved", extra={"path": str(path), "num_tasks": ds.num_tasks})


def load_dataset(path) -> MetaDataset:
    header, payload = read_container(path, config.DATASET_MAGIC, config.DATASET_VERSION)
    try:
        k, t = int(header["num_devices"]), int(header["num_slots"])
        mode = LabelMode(header["mode"])
        xi, tau = int(header["xi"]), int(header["tau"])
        gamma0_db = float(header["gamma0_db"])
        task_meta = header["tasks"]
        generation = GenerationConfig.from_dict(header["generation_config"])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: incomplete header ({e})") from None

    block = k * t
    per_task = block * (2 * _F32.itemsize + _U8.itemsize)
    if len(task_meta) != int(header["num_tasks"]) or per_task * len(task_meta) != len(payload):
        raise FormatError(f"{path}: payload size does not match N={len(task_meta)}, K={k}, T={t}")

    tasks = []
    pos = 0
    for meta in task_meta:
        snr = np.frombuffer(payload, dtype=_F32, count=block, offset=pos).reshape(k, t).astype(np.float32)
        pos += block * _F32.itemsize
        zeta = np.frombuffer(payload, dtype=_F32, count=block, offset=pos).reshape(k, t).astype(np.float32)
        pos += block * _F32.itemsize
        labels = np.frombuffer(payload, dtype=_U8, count=block, offset=pos).reshape(k, t).copy()
        pos += block * _U8.itemsize
        scenario = ScenarioParams.from_dict(meta["scenario"]) if meta.get("scenario") else None
        tasks.append(
            TaskDataset(
                task_id=int(meta["task_id"]),
                seed=int(meta["seed"]),
                snr=snr,
                zeta=zeta,
                labels=labels,
                mode=mode,
                xi=xi,
                tau=tau,
                gamma0_db=gamma0_db,
                scenario=scenario,
                offset=int(meta.get("offset", 0)),
            )
        )
    return MetaDataset(
        tasks=tasks,
        generation=generation,
        master_seed=int(header["master_seed"]),
        role=header.get("role", "train"),
        run_config=header.get("run_config", {}),
    )


def export_trace_csv(task: TaskDataset, path) -> int:
    """Write one task's trace as CSV rows (slot, device, snr_db, zeta, blocked, label). Returns row count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    snr_db = power_to_db(task.snr)
    threshold = 10.0 ** (task.gamma0_db / 10.0)
    valid = task.valid_mask()
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slot", "device", "snr_db", "zeta", "blocked", "label"])
        for k in range(task.num_devices):
            for t in range(task.num_slots):
                writer.writerow(
                    [
                        task.offset + t,
                        k,
                        f"{snr_db[k, t]:.6f}",
                        f"{task.zeta[k, t]:.6f}",
                        int(task.snr[k, t] <= threshold),
                        int(task.labels[k, t]) if valid[t] else "",
                    ]
                )
                rows += 1
    return rows
