"""Observation / label sequences and the task and meta datasets built from traces."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import StrEnum

import numpy as np

from src import config
from src.custom_logging import get_logger
from src.errors import ConfigError, DataError, SequenceTooShortError
from src.fading import power_to_db
from src.scenario import ChannelTrace, ScenarioDistribution, ScenarioParams, sample_scenario, simulate_traces
from src.seeding import derive_seed

logger = get_logger(__name__)


class LabelMode(StrEnum):
    ANY = "any"
    ALL = "all"


# ────────────────────── Labels ──────────────────────


@dataclass
class LabelSequence:
    z: np.ndarray  # (T,) uint8, zero on the invalid tail
    valid: np.ndarray  # (T,) bool
    mode: LabelMode
    xi: int
    tau: int

    @property
    def num_valid(self) -> int:
        return int(self.valid.sum())


def _check_window(num_slots: int, xi: int, tau: int) -> None:
    if xi < 0:
        raise ConfigError(f"prediction delay xi must be >= 0, got {xi}")
    if tau < 1:
        raise ConfigError(f"prediction interval tau must be >= 1, got {tau}")
    if num_slots <= xi + tau:
        raise SequenceTooShortError(f"sequence of {num_slots} slots is too short for xi={xi}, tau={tau}")


def window_labels(blocked: np.ndarray, mode: LabelMode | str, xi: int, tau: int) -> tuple[np.ndarray, int]:
    """Any/all outage labels over slots t+xi+1 .. t+xi+tau along the last axis.

    Returns (z, n_valid): z has the input's shape with the last xi+tau slots
    set to zero; only the first n_valid slots carry a label.
    """
    mode = LabelMode(mode)
    num_slots = blocked.shape[-1]
    _check_window(num_slots, xi, tau)
    n_valid = num_slots - xi - tau

    counts = np.zeros(blocked.shape[:-1] + (num_slots + 1,), dtype=np.int64)
    np.cumsum(blocked, axis=-1, out=counts[..., 1:])
    start = xi + 1
    in_window = counts[..., start + tau : start + tau + n_valid] - counts[..., start : start + n_valid]

    z = np.zeros(blocked.shape, dtype=np.uint8)
    if mode is LabelMode.ANY:
        z[..., :n_valid] = in_window > 0
    else:
        z[..., :n_valid] = in_window == tau
    return z, n_valid


def make_labels(
    trace: ChannelTrace,
    k: int,
    mode: LabelMode | str,
    xi: int,
    tau: int,
    gamma0_db: float = config.SNR_THRESHOLD_DB,
) -> LabelSequence:
    blocked = trace.blocked(gamma0_db)[k]
    z, n_valid = window_labels(blocked, mode, xi, tau)
    valid = np.zeros(trace.num_slots, dtype=bool)
    valid[:n_valid] = True
    return LabelSequence(z=z, valid=valid, mode=LabelMode(mode), xi=xi, tau=tau)


# ────────────────────── Observations ──────────────────────


@dataclass(frozen=True)
class AffineNorm:
    """SNR(dB) -> (snr_db - offset_db) / scale_db; masked slots get ``clamp``."""

    offset_db: float
    scale_db: float
    clamp: float = 0.0

    @classmethod
    def from_threshold(cls, gamma0_db: float = config.SNR_THRESHOLD_DB) -> "AffineNorm":
        return cls(offset_db=gamma0_db, scale_db=abs(gamma0_db))

    def apply(self, snr_db: np.ndarray) -> np.ndarray:
        return (snr_db - self.offset_db) / self.scale_db


@dataclass
class ObservationSequence:
    obs: np.ndarray  # (T, 2K) float32
    target: int
    order: tuple[int, ...]  # device index of each tuple, target first

    @property
    def num_devices(self) -> int:
        return self.obs.shape[1] // 2


def device_order(num_devices: int, target_k: int) -> tuple[int, ...]:
    if not 0 <= target_k < num_devices:
        raise DataError(f"device index {target_k} out of range for K={num_devices}")
    return (target_k,) + tuple(j for j in range(num_devices) if j != target_k)


def observation_features(snr: np.ndarray, gamma0_db: float, norm: AffineNorm | None = None) -> np.ndarray:
    """Per-slot (blocked_flag, feature) tuples for every device; shape (T, K, 2) float32.

    Below-threshold SNRs are never exposed: their feature is the clamp value.
    """
    norm = norm or AffineNorm.from_threshold(gamma0_db)
    blocked = snr <= 10.0 ** (gamma0_db / 10.0)
    with np.errstate(invalid="ignore"):
        scaled = norm.apply(power_to_db(snr))
    feature = np.where(blocked, norm.clamp, scaled)
    out = np.empty(snr.shape[::-1] + (2,), dtype=np.float32)
    out[..., 0] = blocked.T
    out[..., 1] = feature.T
    return out


def make_observations(
    trace: ChannelTrace,
    target_k: int,
    gamma0_db: float = config.SNR_THRESHOLD_DB,
    norm: AffineNorm | None = None,
) -> ObservationSequence:
    order = device_order(trace.num_devices, target_k)
    features = observation_features(trace.snr, gamma0_db, norm)
    obs = features[:, order, :].reshape(trace.num_slots, 2 * trace.num_devices)
    return ObservationSequence(obs=obs, target=target_k, order=order)


# ────────────────────── Per-device sequences ──────────────────────


@dataclass
class DeviceSequence:
    """Shared observations in device-k ordering plus device-k labels."""

    obs: np.ndarray  # (T, 2K) float32
    labels: np.ndarray  # (T,) uint8
    valid: np.ndarray  # (T,) bool
    task_id: int = 0
    device: int = 0
    offset: int = 0  # first slot of this sequence inside the task

    @property
    def num_slots(self) -> int:
        return self.obs.shape[0]

    @property
    def num_valid(self) -> int:
        return int(self.valid.sum())


# ────────────────────── Datasets ──────────────────────


@dataclass
class GenerationConfig:
    scenario: ScenarioDistribution = field(default_factory=ScenarioDistribution)
    mode: str = config.DEFAULT_MODE
    xi: int = config.MODE_DEFAULTS[config.DEFAULT_MODE][0]
    tau: int = config.MODE_DEFAULTS[config.DEFAULT_MODE][1]

    def validate(self) -> None:
        self.scenario.validate()
        try:
            LabelMode(self.mode)
        except ValueError:
            raise ConfigError(f"unknown label mode {self.mode!r}") from None
        if self.xi < 0 or self.tau < 1:
            raise ConfigError(f"invalid prediction window xi={self.xi}, tau={self.tau}")

    def to_dict(self) -> dict:
        return {"scenario": asdict(self.scenario), "mode": self.mode, "xi": self.xi, "tau": self.tau}

    @classmethod
    def from_dict(cls, data: dict) -> "GenerationConfig":
        return cls(
            scenario=ScenarioDistribution(**data["scenario"]),
            mode=data["mode"],
            xi=int(data["xi"]),
            tau=int(data["tau"]),
        )


@dataclass(eq=False)
class TaskDataset:
    task_id: int
    seed: int
    snr: np.ndarray  # (K, T) float32
    zeta: np.ndarray  # (K, T) float32
    labels: np.ndarray  # (K, T) uint8
    mode: LabelMode
    xi: int
    tau: int
    gamma0_db: float = config.SNR_THRESHOLD_DB
    scenario: ScenarioParams | None = None
    offset: int = 0
    _features: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_trace(
        cls, task_id: int, seed: int, trace: ChannelTrace, mode, xi: int, tau: int, gamma0_db: float, offset: int = 0
    ) -> "TaskDataset":
        snr = np.ascontiguousarray(trace.snr, dtype=np.float32)
        zeta = np.ascontiguousarray(trace.zeta, dtype=np.float32)
        labels, _ = window_labels(snr <= 10.0 ** (gamma0_db / 10.0), mode, xi, tau)
        return cls(task_id, seed, snr, zeta, labels, LabelMode(mode), xi, tau, gamma0_db, trace.scenario, offset)

    @property
    def num_devices(self) -> int:
        return self.snr.shape[0]

    @property
    def num_slots(self) -> int:
        return self.snr.shape[1]

    @property
    def num_valid(self) -> int:
        return self.num_slots - self.xi - self.tau

    def trace(self) -> ChannelTrace:
        return ChannelTrace(snr=self.snr, zeta=self.zeta, scenario=self.scenario)

    def valid_mask(self) -> np.ndarray:
        valid = np.zeros(self.num_slots, dtype=bool)
        valid[: self.num_valid] = True
        return valid

    def features(self) -> np.ndarray:
        if self._features is None:
            self._features = observation_features(self.snr, self.gamma0_db)
        return self._features

    def observations(self, k: int) -> np.ndarray:
        order = device_order(self.num_devices, k)
        return self.features()[:, order, :].reshape(self.num_slots, 2 * self.num_devices)

    def device_sequence(self, k: int) -> DeviceSequence:
        return DeviceSequence(
            obs=self.observations(k),
            labels=self.labels[k],
            valid=self.valid_mask(),
            task_id=self.task_id,
            device=k,
            offset=self.offset,
        )

    def slice(self, start: int, stop: int) -> "TaskDataset":
        """Contiguous sub-sequence with the label-validity tail recomputed on it."""
        if not 0 <= start <= stop <= self.num_slots:
            raise DataError(f"invalid slice [{start}, {stop}) of {self.num_slots} slots")
        if stop - start < self.xi + self.tau + 1:
            raise SequenceTooShortError(
                f"part of {stop - start} slots is shorter than xi + tau + 1 = {self.xi + self.tau + 1}"
            )
        part = ChannelTrace(snr=self.snr[:, start:stop], zeta=self.zeta[:, start:stop], scenario=self.scenario)
        return TaskDataset.from_trace(
            self.task_id, self.seed, part, self.mode, self.xi, self.tau, self.gamma0_db, self.offset + start
        )

    def positive_count(self) -> tuple[int, int]:
        valid = self.labels[:, : self.num_valid]
        return int(valid.sum()), int(valid.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TaskDataset):
            return NotImplemented
        return (
            self.task_id == other.task_id
            and self.seed == other.seed
            and self.mode == other.mode
            and (self.xi, self.tau, self.gamma0_db, self.offset) == (other.xi, other.tau, other.gamma0_db, other.offset)
            and self.scenario == other.scenario
            and np.array_equal(self.snr, other.snr)
            and np.array_equal(self.zeta, other.zeta)
            and np.array_equal(self.labels, other.labels)
            and self.snr.dtype == other.snr.dtype
        )


@dataclass(eq=False)
class MetaDataset:
    tasks: list[TaskDataset]
    generation: GenerationConfig
    master_seed: int = 0
    role: str = "train"
    run_config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.tasks:
            raise DataError("a meta-dataset needs at least one task")
        first = self.tasks[0]
        for task in self.tasks[1:]:
            shape = (task.num_devices, task.num_slots, task.xi, task.tau, task.mode)
            if shape != (first.num_devices, first.num_slots, first.xi, first.tau, first.mode):
                raise DataError(f"task {task.task_id} does not share K, T, xi, tau, mode with task {first.task_id}")

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    @property
    def num_devices(self) -> int:
        return self.tasks[0].num_devices

    @property
    def num_slots(self) -> int:
        return self.tasks[0].num_slots

    @property
    def mode(self) -> LabelMode:
        return self.tasks[0].mode

    @property
    def xi(self) -> int:
        return self.tasks[0].xi

    @property
    def tau(self) -> int:
        return self.tasks[0].tau

    @property
    def gamma0_db(self) -> float:
        return self.tasks[0].gamma0_db

    @property
    def num_sequences(self) -> int:
        return self.num_tasks * self.num_devices

    def sequence_index(self) -> list[tuple[int, int]]:
        """(task position, device) for every per-device dataset, in fixed order."""
        return [(n, k) for n in range(self.num_tasks) for k in range(self.num_devices)]

    def device_sequence(self, n: int, k: int) -> DeviceSequence:
        return self.tasks[n].device_sequence(k)

    def positive_rate(self) -> float:
        pos = total = 0
        for task in self.tasks:
            p, t = task.positive_count()
            pos += p
            total += t
        return pos / total if total else 0.0

    def __eq__(self, other) -> bool:
        if not isinstance(other, MetaDataset):
            return NotImplemented
        return (
            self.generation == other.generation
            and self.master_seed == other.master_seed
            and self.role == other.role
            and self.tasks == other.tasks
        )


def build_task(gen: GenerationConfig, task_id: int, num_slots: int, seed: int, role: str = "train") -> TaskDataset:
    scenario_seed = derive_seed(seed, "scenario", role, task_id)
    scenario = sample_scenario(gen.scenario, scenario_seed)
    trace = simulate_traces(scenario, num_slots, derive_seed(seed, "fading", role, task_id))
    return TaskDataset.from_trace(task_id, scenario_seed, trace, gen.mode, gen.xi, gen.tau, gen.scenario.snr_threshold_db)


def build_meta_dataset(
    gen: GenerationConfig,
    num_tasks: int,
    num_slots: int,
    seed: int,
    *,
    role: str = "train",
    threads: int = 1,
) -> MetaDataset:
    """N independent scenarios, simulated and labelled; deterministic given seed and role."""
    if num_tasks < 1:
        raise ConfigError(f"num_tasks must be >= 1, got {num_tasks}")
    gen.validate()
    _check_window(num_slots, gen.xi, gen.tau)

    def _one(n: int) -> TaskDataset:
        return build_task(gen, n, num_slots, seed, role)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            tasks = list(pool.map(_one, range(num_tasks)))
    else:
        tasks = [_one(n) for n in range(num_tasks)]

    ds = MetaDataset(tasks=tasks, generation=gen, master_seed=seed, role=role)
    logger.info(
        "meta-dataset built",
        extra={
            "num_tasks": num_tasks,
            "num_devices": ds.num_devices,
            "num_slots": num_slots,
            "role": role,
            "positive_rate": ds.positive_rate(),
        },
    )
    return ds


def split_sequence(ds: TaskDataset, fractions=(0.5, 0.5)) -> tuple[TaskDataset, TaskDataset]:
    """Prefix/suffix split at a slot boundary (no shuffling)."""
    if len(fractions) != 2 or any(f < 0 for f in fractions) or not np.isclose(sum(fractions), 1.0):
        raise ConfigError(f"split fractions must be two non-negative numbers summing to 1, got {fractions}")
    cut = int(round(ds.num_slots * fractions[0]))
    return ds.slice(0, cut), ds.slice(cut, ds.num_slots)
