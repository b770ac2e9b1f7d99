"""Cell environments and their correlated per-device SNR traces."""

from dataclasses import asdict, dataclass, field

import numpy as np

from src import config
from src.errors import ConfigError, DataError
from src.fading import FadingParams, db_to_amplitude, rician_sample
from src.geometry import ArcTable, arc_polylines, block_fractions, centre_fraction, default_arc_table, object_polyline
from src.seeding import make_rng

# slots per occlusion batch; bounds the (slots × K × segments) temporaries
_SLOT_BLOCK = 2048


# ────────────────────── Scenario distribution ──────────────────────


@dataclass
class ScenarioDistribution:
    """Distribution over cell environments: devices, objects, speeds and attenuations."""

    num_devices: int = config.NUM_DEVICES
    num_objects_min: int = config.NUM_OBJECTS_RANGE[0]
    num_objects_max: int = config.NUM_OBJECTS_RANGE[1]
    object_length_min: float = config.OBJECT_LENGTH_RANGE[0]
    object_length_max: float = config.OBJECT_LENGTH_RANGE[1]
    speed_min: float = config.OBJECT_SPEED_RANGE[0]
    speed_max: float = config.OBJECT_SPEED_RANGE[1]
    attenuation_db_min: float = config.ATTENUATION_DB_RANGE[0]
    attenuation_db_max: float = config.ATTENUATION_DB_RANGE[1]
    beamwidth: float = config.BEAMWIDTH
    unblocked_snr_db: float = config.UNBLOCKED_SNR_DB
    k_factor_db: float = config.K_FACTOR_DB
    snr_threshold_db: float = config.SNR_THRESHOLD_DB
    slot_ms: float = config.SLOT_MS
    bs_x: float = config.BS_POSITION[0]
    bs_y: float = config.BS_POSITION[1]

    def validate(self) -> None:
        if self.num_devices < 1:
            raise ConfigError(f"num_devices must be >= 1, got {self.num_devices}")
        if self.num_objects_min < 0:
            raise ConfigError(f"num_objects_min must be >= 0, got {self.num_objects_min}")
        for name in ("num_objects", "object_length", "speed", "attenuation_db"):
            lo = getattr(self, f"{name}_min")
            hi = getattr(self, f"{name}_max")
            if lo > hi:
                raise ConfigError(f"{name}_min ({lo}) > {name}_max ({hi})")
        if self.object_length_min <= 0:
            raise ConfigError("object lengths must be positive")
        if self.speed_min <= 0:
            raise ConfigError("object speeds must be positive")
        if self.attenuation_db_max >= 0:
            raise ConfigError("attenuation factors must be negative dB values")
        if self.beamwidth <= 0:
            raise ConfigError(f"beamwidth must be positive, got {self.beamwidth}")
        if self.slot_ms <= 0:
            raise ConfigError(f"slot_ms must be positive, got {self.slot_ms}")

    def fading(self) -> FadingParams:
        return FadingParams.from_table(
            unblocked_snr_db=self.unblocked_snr_db,
            k_factor_db=self.k_factor_db,
            snr_threshold_db=self.snr_threshold_db,
            slot_ms=self.slot_ms,
        )


# ────────────────────── Scenario parameters ──────────────────────


@dataclass(frozen=True)
class BlockageObject:
    arc_length: float
    speed: float  # loops per second
    initial_phase: float  # fraction of a loop
    attenuation_db: float

    def __post_init__(self):
        if self.arc_length <= 0:
            raise ConfigError(f"arc_length must be > 0, got {self.arc_length}")
        if self.speed <= 0:
            raise ConfigError(f"speed must be > 0, got {self.speed}")
        if not 0.0 <= self.initial_phase < 1.0:
            raise ConfigError(f"initial_phase must be in [0, 1), got {self.initial_phase}")
        if self.attenuation_db >= 0:
            raise ConfigError(f"attenuation_db must be < 0, got {self.attenuation_db}")

    @property
    def delta(self) -> float:
        """Linear amplitude factor δ_m; full occlusion removes |attenuation_db| dB of power."""
        return float(db_to_amplitude(self.attenuation_db))


@dataclass(frozen=True)
class ScenarioParams:
    device_positions: tuple[tuple[float, float], ...]
    bs_position: tuple[float, float]
    beamwidth: float
    objects: tuple[BlockageObject, ...]
    fading: FadingParams
    rng_seed: int

    def __post_init__(self):
        if len(self.device_positions) < 1:
            raise ConfigError("a scenario needs at least one device")
        (x_lo, x_hi), (y_lo, y_hi) = config.DEVICE_AREA
        for x, y in self.device_positions:
            if not (x_lo <= x <= x_hi and y_lo <= y <= y_hi):
                raise ConfigError(f"device position ({x}, {y}) outside the cell area")
        if self.beamwidth <= 0:
            raise ConfigError(f"beamwidth must be positive, got {self.beamwidth}")

    @property
    def num_devices(self) -> int:
        return len(self.device_positions)

    @property
    def positions(self) -> np.ndarray:
        return np.asarray(self.device_positions, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "device_positions": [list(p) for p in self.device_positions],
            "bs_position": list(self.bs_position),
            "beamwidth": self.beamwidth,
            "objects": [asdict(o) for o in self.objects],
            "fading": asdict(self.fading),
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioParams":
        return cls(
            device_positions=tuple((float(x), float(y)) for x, y in data["device_positions"]),
            bs_position=tuple(float(v) for v in data["bs_position"]),
            beamwidth=float(data["beamwidth"]),
            objects=tuple(BlockageObject(**o) for o in data["objects"]),
            fading=FadingParams(**data["fading"]),
            rng_seed=int(data["rng_seed"]),
        )


def sample_scenario(dist: ScenarioDistribution, seed: int) -> ScenarioParams:
    """Draw one scenario; a pure function of (dist, seed)."""
    dist.validate()
    rng = make_rng(seed)
    (x_lo, x_hi), (y_lo, y_hi) = config.DEVICE_AREA
    xs = rng.uniform(x_lo, x_hi, size=dist.num_devices)
    ys = rng.uniform(y_lo, y_hi, size=dist.num_devices)

    m = int(rng.integers(dist.num_objects_min, dist.num_objects_max + 1))
    lengths = rng.uniform(dist.object_length_min, dist.object_length_max, size=m)
    speeds = rng.uniform(dist.speed_min, dist.speed_max, size=m)
    phases = rng.uniform(0.0, 1.0, size=m)
    attenuations = rng.uniform(dist.attenuation_db_min, dist.attenuation_db_max, size=m)

    objects = tuple(
        BlockageObject(
            arc_length=float(lengths[i]),
            speed=float(speeds[i]),
            initial_phase=float(phases[i]),
            attenuation_db=float(attenuations[i]),
        )
        for i in range(m)
    )
    return ScenarioParams(
        device_positions=tuple((float(x), float(y)) for x, y in zip(xs, ys, strict=True)),
        bs_position=(float(dist.bs_x), float(dist.bs_y)),
        beamwidth=float(dist.beamwidth),
        objects=objects,
        fading=dist.fading(),
        rng_seed=int(seed),
    )


# ────────────────────── Attenuation ──────────────────────


def attenuation_coefficient(scenario: ScenarioParams, k: int, t: int, table: ArcTable | None = None) -> float:
    """Product over objects of delta ** (fraction of the beam the object covers at slot t)."""
    if not 0 <= k < scenario.num_devices:
        raise DataError(f"device index {k} out of range")
    table = table or default_arc_table()
    device = scenario.positions[k][None, :]
    zeta = 1.0
    for obj in scenario.objects:
        poly = object_polyline(obj, t, table, scenario.fading.slot_seconds)
        p = block_fractions(scenario.bs_position, device, scenario.beamwidth, poly)[0]
        zeta *= obj.delta ** float(p)
    return float(zeta)


def attenuation_matrix(scenario: ScenarioParams, num_slots: int, table: ArcTable | None = None) -> np.ndarray:
    """Attenuation for every device and slot 0..num_slots-1, shape (K, T)."""
    table = table or default_arc_table()
    zeta = np.ones((scenario.num_devices, num_slots), dtype=np.float64)
    positions = scenario.positions
    slot_seconds = scenario.fading.slot_seconds
    for start in range(0, num_slots, _SLOT_BLOCK):
        stop = min(start + _SLOT_BLOCK, num_slots)
        slots = np.arange(start, stop)
        for obj in scenario.objects:
            centres = centre_fraction(obj.initial_phase, obj.speed, slots, slot_seconds)
            polys = arc_polylines(centres, obj.arc_length, table)
            p = block_fractions(scenario.bs_position, positions, scenario.beamwidth, polys)  # (slots, K)
            zeta[:, start:stop] *= obj.delta ** p.T
    return zeta


# ────────────────────── Traces ──────────────────────


@dataclass
class ChannelTrace:
    snr: np.ndarray  # (K, T) linear SNR
    zeta: np.ndarray  # (K, T)
    scenario: ScenarioParams | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.snr.shape != self.zeta.shape or self.snr.ndim != 2:
            raise DataError(f"snr {self.snr.shape} and zeta {self.zeta.shape} must be equal (K, T) arrays")

    @property
    def num_devices(self) -> int:
        return self.snr.shape[0]

    @property
    def num_slots(self) -> int:
        return self.snr.shape[1]

    def blocked(self, gamma0_db: float) -> np.ndarray:
        """Outage indicator snr <= threshold, shape (K, T)."""
        return self.snr <= 10.0 ** (gamma0_db / 10.0)

    def slice(self, start: int, stop: int) -> "ChannelTrace":
        return ChannelTrace(self.snr[:, start:stop], self.zeta[:, start:stop], self.scenario)


def simulate_traces(
    scenario: ScenarioParams,
    num_slots: int,
    seed: int,
    table: ArcTable | None = None,
) -> ChannelTrace:
    if num_slots < 1:
        raise DataError(f"num_slots must be >= 1, got {num_slots}")
    zeta = attenuation_matrix(scenario, num_slots, table)
    amplitude = zeta * scenario.fading.unblocked_amplitude
    rng = make_rng(seed)
    h = rician_sample(rng, amplitude, scenario.fading.diffuse_sigma)
    return ChannelTrace(snr=h * h, zeta=zeta, scenario=scenario)
