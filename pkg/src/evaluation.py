"""Prediction-time evaluation against the naive, random-init, joint and MAML predictors.

A blockage onset at slot t0 is first labelled at t0 - xi - tau in ANY mode and
at t0 - xi - 1 in ALL mode. A predictor's relative prediction time is the first
slot from there on where its output exceeds the detection threshold, measured
from that slot. Events with no firing before t0 + horizon are censored, never
dropped.
"""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from src import config
from src.custom_logging import get_logger
from src.dataset import DeviceSequence, LabelMode, MetaDataset, TaskDataset
from src.errors import ConfigError, DataError, DataLeakError
from src.nn import ModelDims, ModelParams, forward_sequence, init_params
from src.scenario import ChannelTrace
from src.training import AdaptConfig, adapt

logger = get_logger(__name__)

CENSORED = "censored"


@dataclass
class EvalConfig:
    threshold: float = config.DETECTION_THRESHOLD
    clean_window: int = config.CLEAN_WINDOW
    horizon: int = config.CENSOR_HORIZON
    t_test_list: tuple[int, ...] = config.T_TEST_LIST
    init_kinds: tuple[str, ...] = config.INIT_KINDS
    eval_start: int | None = None  # first evaluation slot; defaults to max(t_test_list)

    def validate(self, xi: int | None = None, tau: int | None = None) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.clean_window < 1:
            raise ConfigError(f"clean_window must be >= 1, got {self.clean_window}")
        if self.horizon < 0:
            raise ConfigError(f"horizon must be >= 0, got {self.horizon}")
        if any(t < 0 for t in self.t_test_list):
            raise ConfigError(f"t_test values must be >= 0, got {self.t_test_list}")
        unknown = set(self.init_kinds) - set(config.INIT_KINDS)
        if unknown:
            raise ConfigError(f"unknown init kinds {sorted(unknown)}; choose from {config.INIT_KINDS}")
        if xi is not None and tau is not None and self.clean_window < xi + tau:
            raise ConfigError(f"clean_window ({self.clean_window}) must be >= xi + tau ({xi + tau})")


# ────────────────────── Predictors ──────────────────────


class Predictor(Protocol):
    def probabilities(self, seq: DeviceSequence) -> np.ndarray: ...


def naive_forecast(obs_row) -> float:
    """The target device's own blocked flag at the current slot."""
    return float(obs_row[0])


class NaivePredictor:
    def probabilities(self, seq: DeviceSequence) -> np.ndarray:
        return seq.obs[:, 0].astype(np.float64)


class LabelOracle:
    """Outputs the true label; fires exactly at the first labelled slot."""

    def probabilities(self, seq: DeviceSequence) -> np.ndarray:
        return seq.labels.astype(np.float64)


class RecurrentPredictor:
    def __init__(self, params: ModelParams):
        self.params = params

    def probabilities(self, seq: DeviceSequence) -> np.ndarray:
        probs, _ = forward_sequence(self.params, seq.obs)
        return np.asarray(probs, dtype=np.float64)


# ────────────────────── Events / prediction times ──────────────────────


@dataclass(frozen=True)
class OnsetEvent:
    device: int
    t0: int
    clean_history: int
    offset: int = 0  # slot of the evaluated sequence inside its task
    task_id: int = 0

    @property
    def slot(self) -> int:
        return self.offset + self.t0


@dataclass(frozen=True)
class PredictionTimeRecord:
    event: OnsetEvent
    fire_slot: int | None
    relative_time: int | None

    @property
    def censored(self) -> bool:
        return self.fire_slot is None


def extract_onset_events(
    trace,
    k: int,
    clean_window: int,
    gamma0_db: float = config.SNR_THRESHOLD_DB,
    *,
    offset: int = 0,
    task_id: int = 0,
) -> list[OnsetEvent]:
    """Slots t0 >= clean_window with device k blocked at t0 and unblocked on [t0 - clean_window, t0 - 1].

    ``trace`` is a ChannelTrace or a blocked-flag array of shape (T,) or (K, T).
    """
    if clean_window < 1:
        raise ConfigError(f"clean_window must be >= 1, got {clean_window}")
    if isinstance(trace, ChannelTrace):
        blocked = trace.blocked(gamma0_db)[k]
    else:
        blocked = np.asarray(trace, dtype=bool)
        if blocked.ndim == 2:
            blocked = blocked[k]
    num_slots = blocked.shape[0]
    if num_slots <= clean_window:
        return []

    counts = np.concatenate([[0], np.cumsum(blocked, dtype=np.int64)])
    t = np.arange(clean_window, num_slots)
    before = counts[t] - counts[t - clean_window]
    onsets = t[blocked[t] & (before == 0)]

    last_blocked = np.where(blocked, np.arange(num_slots), -1)
    np.maximum.accumulate(last_blocked, out=last_blocked)
    return [
        OnsetEvent(
            device=k,
            t0=int(t0),
            clean_history=int(t0 - 1 - last_blocked[t0 - 1]),
            offset=offset,
            task_id=task_id,
        )
        for t0 in onsets
    ]


def label_reference_slot(t0: int, mode: LabelMode | str, xi: int, tau: int) -> int:
    """First slot whose label can be 1 for an onset at t0."""
    if LabelMode(mode) is LabelMode.ANY:
        return t0 - xi - tau
    return t0 - xi - 1


def measure_prediction_times(
    predictor: Predictor,
    seq: DeviceSequence,
    events: list[OnsetEvent],
    xi: int,
    tau: int,
    horizon: int = config.CENSOR_HORIZON,
    threshold: float = config.DETECTION_THRESHOLD,
    *,
    mode: LabelMode | str = LabelMode.ANY,
) -> list[PredictionTimeRecord]:
    """First firing in [reference, t0 + horizon] per event, from one run over the whole sequence.

    The reference is the first slot labelled 1 for the onset (see label_reference_slot).
    """
    if not events:
        return []
    probs = predictor.probabilities(seq)
    records = []
    for ev in events:
        lo = label_reference_slot(ev.t0, mode, xi, tau)
        if lo < 0:
            raise DataError(f"event at slot {ev.t0} has no room for {ev.t0 - lo} slots of lead time")
        hi = min(ev.t0 + horizon, len(probs) - 1)
        fired = np.flatnonzero(probs[lo : hi + 1] > threshold)
        if fired.size:
            fire = lo + int(fired[0])
            records.append(PredictionTimeRecord(ev, fire, fire - lo))
        else:
            records.append(PredictionTimeRecord(ev, None, None))
    return records


# ────────────────────── CDF ──────────────────────


@dataclass
class Cdf:
    times: np.ndarray  # sorted unique relative times
    fractions: np.ndarray  # cumulative fraction of all events, censored included in the denominator
    total: int
    censored: int

    @property
    def censored_fraction(self) -> float:
        return self.censored / self.total

    def at(self, t: float) -> float:
        idx = np.searchsorted(self.times, t, side="right")
        return float(self.fractions[idx - 1]) if idx else 0.0


def build_cdf(records: list[PredictionTimeRecord]) -> Cdf:
    if not records:
        raise DataError("cannot build a CDF from zero records")
    times = np.array([r.relative_time for r in records if not r.censored], dtype=np.int64)
    values, counts = np.unique(times, return_counts=True)
    return Cdf(
        times=values,
        fractions=np.cumsum(counts) / len(records),
        total=len(records),
        censored=len(records) - int(times.size),
    )


def summarize(records: list[PredictionTimeRecord]) -> dict:
    """Median and quartiles with censored events counted as +inf."""
    values = np.array([np.inf if r.censored else r.relative_time for r in records], dtype=np.float64)
    if values.size == 0:
        return {"n_events": 0, "n_censored": 0, "median": None, "q25": None, "q75": None}
    q25, median, q75 = np.quantile(values, [0.25, 0.5, 0.75], method="inverted_cdf")
    return {
        "n_events": int(values.size),
        "n_censored": int(np.isinf(values).sum()),
        "median": float(median),
        "q25": float(q25),
        "q75": float(q75),
    }


# ────────────────────── Sweep / report ──────────────────────


@dataclass
class EvalReport:
    records: dict[tuple[str, int], list[PredictionTimeRecord]] = field(default_factory=dict)
    config_snapshot: dict = field(default_factory=dict)

    def keys(self) -> list[tuple[str, int]]:
        return list(self.records)

    def cdfs(self) -> dict[tuple[str, int], Cdf]:
        return {key: build_cdf(recs) for key, recs in self.records.items() if recs}

    def event_counts(self) -> dict[tuple[str, int], int]:
        return {key: len(recs) for key, recs in self.records.items()}

    def merge(self, other: "EvalReport") -> None:
        for key, recs in other.records.items():
            self.records.setdefault(key, []).extend(recs)


def _random_dims(theta_maml, theta_joint, fallback: ModelDims) -> ModelDims:
    """Dims of a trained init when one is given."""
    for theta in (theta_maml, theta_joint):
        if theta is not None:
            return theta.dims
    return fallback


def adaptation_sweep(
    theta_maml: ModelParams | None,
    theta_joint: ModelParams | None,
    seed_for_random_init: int,
    task: TaskDataset,
    T_test_list=None,
    adapt_config: AdaptConfig | None = None,
    eval_config: EvalConfig | None = None,
    *,
    devices=None,
    random_dims: ModelDims | None = None,
) -> EvalReport:
    """For every init kind and T_test: adapt on slots [0, T_test), evaluate on [eval_start, T).

    Every init kind sees the same evaluation suffix and events. T_test = 0
    (or a prefix too short to hold one label) evaluates the raw init.
    """
    eval_config = eval_config or EvalConfig()
    adapt_config = adapt_config or AdaptConfig()
    t_tests = tuple(eval_config.t_test_list if T_test_list is None else T_test_list)
    eval_config.validate(task.xi, task.tau)
    eval_start = max(t_tests, default=0) if eval_config.eval_start is None else eval_config.eval_start
    for t_test in t_tests:
        if t_test > eval_start:
            raise DataLeakError(f"adaptation prefix of {t_test} slots overlaps the evaluation suffix at {eval_start}")
    if eval_start >= task.num_slots:
        raise DataError(f"eval_start {eval_start} leaves no evaluation slots in a task of {task.num_slots}")

    inits: dict[str, ModelParams | None] = {}
    for kind in eval_config.init_kinds:
        if kind == "maml":
            inits[kind] = theta_maml
        elif kind == "joint":
            inits[kind] = theta_joint
        elif kind == "random":
            dims = _random_dims(theta_maml, theta_joint, random_dims or ModelDims.for_devices(task.num_devices))
            inits[kind] = init_params(dims, seed_for_random_init)
        else:
            inits[kind] = None
        if kind != "naive" and inits[kind] is None:
            raise ConfigError(f"init kind {kind!r} requested without parameters")

    suffix = task.slice(eval_start, task.num_slots)
    blocked = suffix.trace().blocked(task.gamma0_db)
    devices = range(task.num_devices) if devices is None else devices
    prefixes = {t: task.slice(0, t) for t in t_tests if t > task.xi + task.tau}

    report = EvalReport(
        config_snapshot={
            "eval": asdict(eval_config),
            "adapt": asdict(adapt_config),
            "eval_start": eval_start,
            "t_test_list": list(t_tests),
            "task_id": task.task_id,
        }
    )
    for kind in eval_config.init_kinds:
        for t_test in t_tests:
            report.records[(kind, t_test)] = []

    n_events = 0
    for k in devices:
        events = extract_onset_events(
            blocked, k, eval_config.clean_window, offset=suffix.offset, task_id=task.task_id
        )
        if not events:
            continue
        n_events += len(events)
        seq = suffix.device_sequence(k)
        naive = None
        for kind, init in inits.items():
            for t_test in t_tests:
                if kind == "naive":
                    if naive is None:
                        naive = measure_prediction_times(
                            NaivePredictor(), seq, events, task.xi, task.tau, eval_config.horizon,
                            eval_config.threshold, mode=task.mode,
                        )
                    recs = naive
                else:
                    params = init
                    if t_test in prefixes:
                        train_seq = prefixes[t_test].device_sequence(k)
                        if train_seq.offset + train_seq.num_slots > suffix.offset:
                            raise DataLeakError("adaptation data reaches into the evaluation suffix")
                        params = adapt(init, train_seq, adapt_config)
                    recs = measure_prediction_times(
                        RecurrentPredictor(params), seq, events, task.xi, task.tau, eval_config.horizon,
                        eval_config.threshold, mode=task.mode,
                    )
                report.records[(kind, t_test)].extend(recs)
    logger.info(
        "adaptation sweep done",
        extra={"task_id": task.task_id, "n_events": n_events},
    )
    return report


def evaluate_tasks(
    theta_maml: ModelParams | None,
    theta_joint: ModelParams | None,
    seed_for_random_init: int,
    meta_ds: MetaDataset,
    adapt_config: AdaptConfig | None = None,
    eval_config: EvalConfig | None = None,
    *,
    threads: int = 1,
    random_dims: ModelDims | None = None,
) -> EvalReport:
    """adaptation_sweep over every task of a held-out set, merged in task order."""

    def _one(task: TaskDataset) -> EvalReport:
        return adaptation_sweep(
            theta_maml,
            theta_joint,
            seed_for_random_init,
            task,
            None,
            adapt_config,
            eval_config,
            random_dims=random_dims,
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(_one, meta_ds.tasks))
    else:
        reports = [_one(task) for task in meta_ds.tasks]

    merged = EvalReport(config_snapshot=dict(reports[0].config_snapshot))
    merged.config_snapshot.pop("task_id", None)
    merged.config_snapshot["num_tasks"] = meta_ds.num_tasks
    for rep in reports:
        merged.merge(rep)
    return merged


def _event_id(ev: OnsetEvent) -> str:
    return f"{ev.task_id}-{ev.device}-{ev.slot}"


def write_report(report: EvalReport, out_dir) -> dict[str, Path]:
    """events.csv, cdf.csv and summary.csv under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {name: out_dir / f"{name}.csv" for name in ("events", "cdf", "summary")}

    with open(paths["events"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["init_kind", "T_test", "event_id", "relative_time_or_censored"])
        for (kind, t_test), recs in report.records.items():
            for rec in recs:
                writer.writerow(
                    [kind, t_test, _event_id(rec.event), CENSORED if rec.censored else rec.relative_time]
                )

    with open(paths["cdf"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["init_kind", "T_test", "relative_time", "cdf", "n_events", "n_censored"])
        for (kind, t_test), cdf in report.cdfs().items():
            for t, frac in zip(cdf.times, cdf.fractions, strict=True):
                writer.writerow([kind, t_test, int(t), f"{frac:.6f}", cdf.total, cdf.censored])

    with open(paths["summary"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["init_kind", "T_test", "n_events", "n_censored", "median", "q25", "q75"])
        for (kind, t_test), recs in report.records.items():
            s = summarize(recs)
            writer.writerow([kind, t_test, s["n_events"], s["n_censored"], s["median"], s["q25"], s["q75"]])

    logger.info("report written", extra={"out_dir": str(out_dir), "groups": len(report.records)})
    return paths
