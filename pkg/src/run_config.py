"""Experiment configuration files.

A run config is a flat ``key = value`` text file (``#`` comments allowed),
read with python-dotenv. Keys are the lower-case field names of the section
dataclasses below; joint-training and adaptation fields carry a ``joint_`` /
``adapt_`` prefix, except ``chunk_len``, ``trunc_len`` and ``w``, which set
every section that has them. Unknown keys are errors.
"""

import types
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from dotenv import dotenv_values

from src import config
from src.dataset import GenerationConfig, LabelMode
from src.errors import ConfigError, MissingArtifactError
from src.evaluation import EvalConfig
from src.nn import ModelDims
from src.scenario import ScenarioDistribution
from src.training import AdaptConfig, JointConfig, MetaConfig

SHARED_KEYS = ("chunk_len", "trunc_len", "w")
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class DatasetConfig:
    num_tasks: int = config.NUM_TASKS
    num_slots: int = config.NUM_SLOTS
    mode: str = config.DEFAULT_MODE
    xi: int | None = None  # None: the mode's default
    tau: int | None = None

    def window(self) -> tuple[int, int]:
        mode = LabelMode(self.mode)
        xi_default, tau_default = config.MODE_DEFAULTS[str(mode)]
        return (
            xi_default if self.xi is None else self.xi,
            tau_default if self.tau is None else self.tau,
        )


@dataclass
class ModelConfig:
    hidden_in: int = config.HIDDEN_IN
    lstm_units: int = config.LSTM_UNITS
    hidden_out: int = config.HIDDEN_OUT


@dataclass
class RunConfig:
    seed: int = 0
    dtype: str = "float32"
    scenario: ScenarioDistribution = field(default_factory=ScenarioDistribution)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    joint: JointConfig = field(default_factory=JointConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def generation(self) -> GenerationConfig:
        xi, tau = self.dataset.window()
        return GenerationConfig(scenario=self.scenario, mode=self.dataset.mode, xi=xi, tau=tau)

    def model_dims(self, num_devices: int) -> ModelDims:
        return ModelDims.for_devices(
            num_devices,
            hidden_in=self.model.hidden_in,
            lstm_units=self.model.lstm_units,
            hidden_out=self.model.hidden_out,
        )

    def validate(self) -> None:
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.dataset.num_tasks < 1 or self.dataset.num_slots < 1:
            raise ConfigError("num_tasks and num_slots must be >= 1")
        try:
            LabelMode(self.dataset.mode)
        except ValueError:
            raise ConfigError(f"mode must be one of {[str(m) for m in LabelMode]}, got {self.dataset.mode!r}") from None
        self.generation().validate()
        ModelDims(input_dim=1, **vars(self.model))
        self.meta.validate()
        self.joint.validate()
        self.adapt.validate()
        xi, tau = self.dataset.window()
        self.eval.validate(xi, tau)

    def to_flat(self) -> dict[str, str]:
        """Every key with its resolved value, as written to run_config.env."""
        flat = {"seed": _format(self.seed), "dtype": self.dtype}
        for key, targets in _key_table().items():
            if key in flat:
                continue
            section, name = targets[0]
            flat[key] = _format(getattr(getattr(self, section), name))
        return flat


# section attribute -> key prefix
_SECTIONS = {
    "scenario": "",
    "dataset": "",
    "model": "",
    "meta": "",
    "joint": "joint_",
    "adapt": "adapt_",
    "eval": "",
}


def _key_table() -> dict[str, list[tuple[str, str]]]:
    table: dict[str, list[tuple[str, str]]] = {}
    defaults = RunConfig()
    for section, prefix in _SECTIONS.items():
        for f in fields(getattr(defaults, section)):
            key = f.name if f.name in SHARED_KEYS else prefix + f.name
            table.setdefault(key, []).append((section, f.name))
    return table


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    return str(value)


def _coerce(key: str, raw: str, hint):
    raw = raw.strip()
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if raw == "" or raw.lower() == "none":
            return None
        return _coerce(key, raw, args[0])
    if origin is tuple:
        (item, *_rest) = typing.get_args(hint)
        if raw == "":
            return ()
        return tuple(_coerce(key, part, item) for part in raw.split(","))
    try:
        if hint is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot read {raw!r} as {hint.__name__}") from None
    return raw


def run_config_from_mapping(values: dict[str, str | None], base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    table = _key_table()
    for key, raw in values.items():
        key = key.strip().lower()
        if raw is None:
            raise ConfigError(f"config key {key!r} has no value")
        if key == "seed":
            cfg.seed = _coerce(key, raw, int)
            continue
        if key == "dtype":
            cfg.dtype = raw.strip()
            continue
        if key not in table:
            raise ConfigError(f"unknown config key {key!r}")
        for section, name in table[key]:
            target = getattr(cfg, section)
            hints = typing.get_type_hints(type(target))
            setattr(target, name, _coerce(key, raw, hints[name]))
    return cfg


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides``; validated."""
    values: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise MissingArtifactError(f"config file {path} does not exist")
        values.update(dotenv_values(path))
    cfg = run_config_from_mapping(values)
    if overrides:
        cfg = run_config_from_mapping({k: _format(v) for k, v in overrides.items()}, cfg)
    cfg.validate()
    return cfg


def write_run_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# resolved run configuration"]
    lines += [f"{key}={value}" for key, value in cfg.to_flat().items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
