"""Training regimes: joint (task-agnostic) training, MAML meta-training, per-task adaptation.

Training sequences are cut into ``chunk_len`` slot chunks that run as one
batch with the recurrent state reset per chunk; adaptation and evaluation use
the full sequence with the state carried through.
"""

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from tqdm import tqdm

from src import config
from src.custom_logging import get_logger
from src.dataset import DeviceSequence, MetaDataset, TaskDataset, split_sequence
from src.errors import ConfigError, DivergenceError, NoValidSlotsError, NumericalError
from src.nn import Gradients, ModelDims, ModelParams, init_params, tbptt_gradients
from src.optim import OptimizerKind, OptimizerState, optimizer_update
from src.seeding import derive_seed, make_rng

logger = get_logger(__name__)

# redraws of a joint batch whose chunks are all label-free tails
_MAX_REDRAWS = 100


# ────────────────────── Configs ──────────────────────


@dataclass
class MetaConfig:
    alpha: float = config.INNER_LR
    beta: float = config.OUTER_LR
    meta_batch: int = config.META_BATCH
    inner_steps: int = 1
    chunk_len: int = config.CHUNK_LEN
    trunc_len: int = config.TRUNC_LEN
    w: float = config.POSITIVE_WEIGHT
    first_order: bool = True
    max_meta_iters: int = config.MAX_META_ITERS
    convergence_window: int = config.CONVERGENCE_WINDOW
    convergence_tol: float = config.CONVERGENCE_TOL
    outer_optimizer: str = "adam"
    hvp_eps: float = 1e-5

    def validate(self) -> None:
        # alpha = 0 is allowed: it collapses MAML to plain training on the test halves
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.beta <= 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        for name in ("meta_batch", "inner_steps", "chunk_len", "trunc_len", "convergence_window"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.max_meta_iters < 0:
            raise ConfigError(f"max_meta_iters must be >= 0, got {self.max_meta_iters}")
        if self.w <= 0:
            raise ConfigError(f"w must be > 0, got {self.w}")
        if self.outer_optimizer not in tuple(OptimizerKind):
            raise ConfigError(f"outer_optimizer must be one of {[str(k) for k in OptimizerKind]}")


@dataclass
class JointConfig:
    lr: float = config.JOINT_LR
    steps: int = config.JOINT_STEPS
    batch_size: int = config.JOINT_BATCH
    chunk_len: int = config.CHUNK_LEN
    trunc_len: int = config.TRUNC_LEN
    w: float = config.POSITIVE_WEIGHT
    optimizer: str = "adam"

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        for name in ("batch_size", "chunk_len", "trunc_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.w <= 0:
            raise ConfigError(f"w must be > 0, got {self.w}")
        if self.optimizer not in tuple(OptimizerKind):
            raise ConfigError(f"optimizer must be one of {[str(k) for k in OptimizerKind]}")


@dataclass
class AdaptConfig:
    lr: float = config.ADAPT_LR
    epochs: int = config.ADAPT_EPOCHS
    trunc_len: int = config.TRUNC_LEN
    w: float = config.POSITIVE_WEIGHT
    per_window: bool = False

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.trunc_len < 1:
            raise ConfigError(f"trunc_len must be >= 1, got {self.trunc_len}")


# ────────────────────── Curves / results ──────────────────────


@dataclass
class CurvePoint:
    iteration: int
    meta_train_loss: float
    meta_test_loss: float | None
    wall_clock: float


CURVE_COLUMNS = ("iteration", "meta_train_loss", "meta_test_loss", "wall_clock")


def write_curve_csv(points: list[CurvePoint], path, append: bool = False) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new_file = not (append and path.exists())
    with open(path, "a" if not new_file else "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(CURVE_COLUMNS)
        for p in points:
            writer.writerow(
                [
                    p.iteration,
                    f"{p.meta_train_loss:.8g}",
                    "" if p.meta_test_loss is None else f"{p.meta_test_loss:.8g}",
                    f"{p.wall_clock:.3f}",
                ]
            )


@dataclass
class TrainResult:
    params: ModelParams
    optimizer: OptimizerState
    step: int
    curve: list[CurvePoint] = field(default_factory=list)
    converged: bool = False
    history: list[float] = field(default_factory=list)  # trailing meta-test losses for the convergence check


# ────────────────────── Chunking / gradients ──────────────────────


def chunk_sequence(seq: DeviceSequence, chunk_len: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cut a sequence into (C, L, D) / (C, L) chunks; the last one is padded with invalid slots."""
    if chunk_len < 1:
        raise ConfigError(f"chunk_len must be >= 1, got {chunk_len}")
    num_slots = seq.num_slots
    length = min(chunk_len, num_slots)
    count = math.ceil(num_slots / length)
    pad = count * length - num_slots
    obs, labels, valid = seq.obs, seq.labels, seq.valid
    if pad:
        obs = np.concatenate([obs, np.zeros((pad, obs.shape[1]), dtype=obs.dtype)])
        labels = np.concatenate([labels, np.zeros(pad, dtype=labels.dtype)])
        valid = np.concatenate([valid, np.zeros(pad, dtype=bool)])
    return (
        obs.reshape(count, length, -1),
        labels.reshape(count, length),
        valid.reshape(count, length),
    )


def chunked_gradients(
    params: ModelParams, seq: DeviceSequence, chunk_len: int, trunc_len: int, w: float
) -> tuple[float, Gradients]:
    """Masked-mean loss and gradient of a sequence evaluated as a batch of fresh-state chunks."""
    obs, labels, valid = chunk_sequence(seq, chunk_len)
    loss, grads, _ = tbptt_gradients(params, obs, labels, valid, w, trunc_len)
    return loss, grads


def _sgd_step(params: ModelParams, grads: Gradients, lr: float) -> ModelParams:
    new, _ = optimizer_update(OptimizerState.sgd(lr), params, grads)
    return new


def _ordered_mean(vectors: list[np.ndarray]) -> np.ndarray:
    total = vectors[0].copy()
    for v in vectors[1:]:
        total += v
    return total / len(vectors)


def _check_loss(loss: float, step: int) -> None:
    if not math.isfinite(loss):
        raise DivergenceError(step, loss)


def _initial(
    dims: ModelDims, seed: int, kind: str, init: ModelParams | None, dtype
) -> ModelParams:
    if init is not None:
        if init.dims != dims:
            raise ConfigError(f"initial parameters have dims {init.dims}, expected {dims}")
        return init.copy()
    return init_params(dims, derive_seed(seed, "init", kind), dtype=dtype)


# ────────────────────── Joint training ──────────────────────


def joint_train(
    meta_ds: MetaDataset,
    cfg: JointConfig | None = None,
    *,
    dims: ModelDims | None = None,
    seed: int = 0,
    init: ModelParams | None = None,
    optimizer: OptimizerState | None = None,
    start_step: int = 0,
    dtype=np.float32,
    progress: bool = False,
) -> TrainResult:
    """Task-agnostic training on all per-device sequences of the meta-training set.

    Each step draws ``batch_size`` (sequence, chunk) pairs uniformly and takes
    one optimizer step on the masked-mean loss of that chunk batch. Batch draws
    are derived from (seed, step), so a resumed run continues the same stream.
    A batch of label-free tail chunks is redrawn from the same stream, so every
    step applies exactly one update.
    """
    cfg = cfg or JointConfig()
    cfg.validate()
    dims = dims or ModelDims.for_devices(meta_ds.num_devices)
    params = _initial(dims, seed, "joint", init, dtype)
    opt = optimizer or OptimizerState(OptimizerKind(cfg.optimizer), cfg.lr)

    index = meta_ds.sequence_index()
    chunked: dict[tuple[int, int], tuple] = {}

    def _chunks(n: int, k: int):
        if (n, k) not in chunked:
            chunked[(n, k)] = chunk_sequence(meta_ds.device_sequence(n, k), cfg.chunk_len)
        return chunked[(n, k)]

    def _draw_batch(rng):
        obs, labels, valid = [], [], []
        for p in rng.integers(len(index), size=cfg.batch_size):
            c_obs, c_lab, c_val = _chunks(*index[int(p)])
            j = int(rng.integers(c_obs.shape[0]))
            obs.append(c_obs[j])
            labels.append(c_lab[j])
            valid.append(c_val[j])
        return np.stack(obs), np.stack(labels), np.stack(valid)

    curve = []
    started = time.monotonic()
    step = start_step
    for step in tqdm(range(start_step, start_step + cfg.steps), desc="joint-train", disable=not progress):
        rng = make_rng(seed, "joint-batch", step)
        for _ in range(_MAX_REDRAWS):
            obs, labels, valid = _draw_batch(rng)
            if valid.any():
                break
        else:
            raise NoValidSlotsError(f"no chunk batch with a valid slot after {_MAX_REDRAWS} draws at step {step}")
        loss, grads, _ = tbptt_gradients(params, obs, labels, valid, cfg.w, cfg.trunc_len)
        _check_loss(loss, step)
        try:
            params, opt = optimizer_update(opt, params, grads)
        except NumericalError as e:
            raise DivergenceError(step, loss) from e
        curve.append(CurvePoint(step, loss, None, time.monotonic() - started))
        if step % 100 == 0:
            logger.info("joint step", extra={"step": step, "loss": loss})
    final_step = start_step + cfg.steps
    logger.info("joint training done", extra={"steps": cfg.steps, "final_step": final_step})
    return TrainResult(params=params, optimizer=opt, step=final_step, curve=curve)


# ────────────────────── MAML ──────────────────────


@dataclass
class _Member:
    train: DeviceSequence
    test: DeviceSequence


class _Halves:
    """Meta-train / meta-test halves of every task, split once on first use."""

    def __init__(self, meta_ds: MetaDataset):
        self.meta_ds = meta_ds
        self._split: dict[int, tuple[TaskDataset, TaskDataset]] = {}

    def member(self, n: int, k: int) -> _Member:
        if n not in self._split:
            self._split[n] = split_sequence(self.meta_ds.tasks[n])
        tr, te = self._split[n]
        return _Member(train=tr.device_sequence(k), test=te.device_sequence(k))


def inner_adapt(theta: ModelParams, seq: DeviceSequence, cfg: MetaConfig) -> tuple[list[ModelParams], float]:
    """φ after ``inner_steps`` SGD steps on the train half; returns every iterate and the first inner loss."""
    iterates = [theta]
    first_loss = float("nan")
    for s in range(cfg.inner_steps):
        loss, grads = chunked_gradients(iterates[-1], seq, cfg.chunk_len, cfg.trunc_len, cfg.w)
        if s == 0:
            first_loss = loss
        iterates.append(_sgd_step(iterates[-1], grads, cfg.alpha))
    return iterates, first_loss


def _hvp(params: ModelParams, seq: DeviceSequence, vec: np.ndarray, cfg: MetaConfig) -> np.ndarray:
    """Hessian-vector product of the inner loss by central differences of its gradient."""
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        return np.zeros_like(vec)
    r = cfg.hvp_eps / norm
    _, g_plus = chunked_gradients(params.with_vector(params.vector + r * vec), seq, cfg.chunk_len, cfg.trunc_len, cfg.w)
    _, g_minus = chunked_gradients(params.with_vector(params.vector - r * vec), seq, cfg.chunk_len, cfg.trunc_len, cfg.w)
    return (g_plus.vector - g_minus.vector) / (2.0 * r)


def meta_gradient(theta: ModelParams, member: _Member, cfg: MetaConfig) -> tuple[float, float, np.ndarray]:
    """(inner loss, outer loss, outer gradient) for one meta-batch member.

    First-order mode returns ∇L_te(φ). Exact mode pulls it back through each
    inner step with (I - α·H(φ_s)).
    """
    iterates, train_loss = inner_adapt(theta, member.train, cfg)
    phi = iterates[-1]
    test_loss, g = chunked_gradients(phi, member.test, cfg.chunk_len, cfg.trunc_len, cfg.w)
    vec = g.vector
    if not cfg.first_order and cfg.alpha > 0:
        vec = vec.astype(np.float64)
        for phi_s in reversed(iterates[:-1]):
            vec = vec - cfg.alpha * _hvp(phi_s, member.train, vec, cfg)
        vec = vec.astype(theta.dtype)
    return train_loss, test_loss, vec


def _converged(history: list[float], window: int, tol: float) -> bool:
    if len(history) < 2 * window:
        return False
    previous = float(np.mean(history[-2 * window : -window]))
    latest = float(np.mean(history[-window:]))
    return previous - latest < tol


def maml_meta_train(
    meta_ds: MetaDataset,
    cfg: MetaConfig | None = None,
    *,
    dims: ModelDims | None = None,
    seed: int = 0,
    init: ModelParams | None = None,
    optimizer: OptimizerState | None = None,
    start_step: int = 0,
    history: list[float] | None = None,
    threads: int = 1,
    dtype=np.float32,
    progress: bool = False,
) -> TrainResult:
    """Meta-learn an initialization θ.

    Per iteration: draw ``meta_batch`` per-device sequences, adapt θ on each
    meta-train half, and step θ with the mean outer gradient of the meta-test
    halves. Members run on ``threads`` workers; their gradients are reduced in
    draw order, so results do not depend on the thread count.
    ``history`` carries the meta-test losses of a run being resumed, so the
    convergence window spans the interruption.
    """
    cfg = cfg or MetaConfig()
    cfg.validate()
    dims = dims or ModelDims.for_devices(meta_ds.num_devices)
    theta = _initial(dims, seed, "maml", init, dtype)
    opt = optimizer or OptimizerState(OptimizerKind(cfg.outer_optimizer), cfg.beta)

    index = meta_ds.sequence_index()
    halves = _Halves(meta_ds)
    # split everything up front so SequenceTooShortError surfaces before training
    for n in range(meta_ds.num_tasks):
        halves.member(n, 0)

    history = list(history or [])
    curve: list[CurvePoint] = []
    converged = False
    started = time.monotonic()
    step = start_step
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for step in tqdm(
            range(start_step, start_step + cfg.max_meta_iters), desc="meta-train", disable=not progress
        ):
            rng = make_rng(seed, "meta-batch", step)
            picks = rng.choice(len(index), size=cfg.meta_batch, replace=cfg.meta_batch > len(index))
            members = [halves.member(*index[int(p)]) for p in picks]

            def _one(member: _Member, theta=theta):
                return meta_gradient(theta, member, cfg)

            results = list(pool.map(_one, members)) if pool else [_one(m) for m in members]
            train_loss = float(np.mean([r[0] for r in results]))
            test_loss = float(np.mean([r[1] for r in results]))
            _check_loss(test_loss, step)
            _check_loss(train_loss, step)
            outer = theta.with_vector(_ordered_mean([r[2] for r in results]).astype(theta.dtype, copy=False))
            try:
                theta, opt = optimizer_update(opt, theta, outer)
            except NumericalError as e:
                raise DivergenceError(step, test_loss) from e

            history.append(test_loss)
            curve.append(CurvePoint(step, train_loss, test_loss, time.monotonic() - started))
            if step % 50 == 0:
                logger.info(
                    "meta iteration",
                    extra={"iteration": step, "meta_train_loss": train_loss, "meta_test_loss": test_loss},
                )
            if _converged(history, cfg.convergence_window, cfg.convergence_tol):
                converged = True
                step += 1
                logger.info("meta-training converged", extra={"iteration": step})
                break
        else:
            step = start_step + cfg.max_meta_iters
    finally:
        if pool:
            pool.shutdown()

    logger.info("meta-training done", extra={"final_step": step, "converged": converged, "config": asdict(cfg)})
    return TrainResult(
        params=theta,
        optimizer=opt,
        step=step,
        curve=curve,
        converged=converged,
        history=history[-2 * cfg.convergence_window :],
    )


# ────────────────────── Adaptation ──────────────────────


def adapt(
    init: ModelParams, task_train: DeviceSequence | list[DeviceSequence], cfg: AdaptConfig | None = None
) -> ModelParams:
    """φ = init after ``epochs`` SGD passes over the adaptation data.

    One pass is a single step on the full sequence (state carried through all
    truncation windows), or with ``per_window`` one step per window. A list of
    sequences is adapted on jointly, one pass per sequence in order.
    """
    cfg = cfg or AdaptConfig()
    cfg.validate()
    seqs = [task_train] if isinstance(task_train, DeviceSequence) else list(task_train)
    if cfg.epochs == 0:
        return init.copy()
    if not seqs or sum(s.num_valid for s in seqs) == 0:
        raise NoValidSlotsError("adaptation data has no valid labelled slot")

    phi = init
    step = 0
    for _ in range(cfg.epochs):
        for seq in seqs:
            if seq.num_valid == 0:
                continue
            if not cfg.per_window:
                loss, grads, _ = tbptt_gradients(phi, seq.obs, seq.labels, seq.valid, cfg.w, cfg.trunc_len)
                phi = _adapt_step(phi, grads, loss, cfg.lr, step)
                step += 1
                continue
            state = None
            for start in range(0, seq.num_slots, cfg.trunc_len):
                stop = min(start + cfg.trunc_len, seq.num_slots)
                window_valid = seq.valid[start:stop]
                if not window_valid.any():
                    break
                loss, grads, state = tbptt_gradients(
                    phi, seq.obs[start:stop], seq.labels[start:stop], window_valid, cfg.w, cfg.trunc_len, state
                )
                phi = _adapt_step(phi, grads, loss, cfg.lr, step)
                step += 1
    logger.debug("adapted", extra={"steps": step, "epochs": cfg.epochs})
    return phi


def _adapt_step(phi: ModelParams, grads: Gradients, loss: float, lr: float, step: int) -> ModelParams:
    _check_loss(loss, step)
    try:
        return _sgd_step(phi, grads, lr)
    except NumericalError as e:
        raise DivergenceError(step, loss) from e
