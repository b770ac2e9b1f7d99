"""Model checkpoints: JSON header + little-endian flat vectors in one container.

Vectors stored, in order: parameters, then the ADAM first and second moments
when the optimizer has them. Writes are atomic.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from src import config
from src.custom_logging import get_logger
from src.dataset_io import read_container, write_container
from src.errors import FormatError
from src.nn import ModelDims, ModelParams
from src.optim import OptimizerState

logger = get_logger(__name__)

_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8")}


@dataclass(eq=False)
class Checkpoint:
    params: ModelParams
    kind: str  # maml / joint / random / adapted
    step: int = 0
    master_seed: int | None = None
    lineage: dict = field(default_factory=dict)  # derived seeds by purpose
    run_config: dict = field(default_factory=dict)
    optimizer: OptimizerState | None = None
    history: list[float] = field(default_factory=list)  # trailing meta-test losses

    def __eq__(self, other) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.params == other.params
            and (self.kind, self.step, self.master_seed) == (other.kind, other.step, other.master_seed)
            and self.lineage == other.lineage
            and self.run_config == other.run_config
            and self.history == other.history
        )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    dtype_name = np.dtype(ckpt.params.dtype).name
    if dtype_name not in _DTYPES:
        raise FormatError(f"unsupported parameter dtype {dtype_name}")
    le = _DTYPES[dtype_name]
    vectors = [ckpt.params.vector]
    opt = ckpt.optimizer
    if opt is not None and opt.m is not None:
        vectors += [opt.m, opt.v]
    header = {
        "format": "mmwave-blockage-checkpoint",
        "version": config.CHECKPOINT_VERSION,
        "dims": ckpt.params.dims.to_dict(),
        "dtype": dtype_name,
        "num_params": ckpt.params.dims.num_params,
        "num_vectors": len(vectors),
        "kind": ckpt.kind,
        "step": ckpt.step,
        "master_seed": ckpt.master_seed,
        "lineage": ckpt.lineage,
        "run_config": ckpt.run_config,
        "optimizer": opt.header() if opt is not None else None,
        "history": [float(x) for x in ckpt.history],
    }
    payload = b"".join(np.ascontiguousarray(v, dtype=le).tobytes() for v in vectors)
    write_container(path, config.CHECKPOINT_MAGIC, header, payload)
    logger.info("checkpoint saved", extra={"path": str(path), "kind": ckpt.kind, "step": ckpt.step})


def load_checkpoint(path) -> Checkpoint:
    header, payload = read_container(Path(path), config.CHECKPOINT_MAGIC, config.CHECKPOINT_VERSION)
    try:
        dims = ModelDims(**header["dims"])
        le = _DTYPES[header["dtype"]]
        num_vectors = int(header["num_vectors"])
    except (KeyError, TypeError) as e:
        raise FormatError(f"{path}: incomplete checkpoint header ({e})") from None
    n = dims.num_params
    if len(payload) != num_vectors * n * le.itemsize:
        raise FormatError(f"{path}: payload does not hold {num_vectors} vectors of {n} values")
    vectors = [
        np.frombuffer(payload, dtype=le, count=n, offset=i * n * le.itemsize).astype(header["dtype"])
        for i in range(num_vectors)
    ]
    optimizer = None
    if header.get("optimizer"):
        m, v = (vectors[1], vectors[2]) if num_vectors == 3 else (None, None)
        optimizer = OptimizerState.from_header(header["optimizer"], m, v)
    return Checkpoint(
        params=ModelParams(dims, vectors[0]),
        kind=header.get("kind", "unknown"),
        step=int(header.get("step", 0)),
        master_seed=header.get("master_seed"),
        lineage=header.get("lineage", {}),
        run_config=header.get("run_config", {}),
        optimizer=optimizer,
        history=[float(x) for x in header.get("history", [])],
    )
