"""Rician small-scale fading of the dominant (line-of-sight) path."""

import math
from dataclasses import dataclass

import numpy as np

from src import config
from src.errors import ConfigError


def db_to_power(db):
    return np.power(10.0, np.asarray(db, dtype=np.float64) / 10.0)


def db_to_amplitude(db):
    return np.power(10.0, np.asarray(db, dtype=np.float64) / 20.0)


def power_to_db(power):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(power, dtype=np.float64))


@dataclass(frozen=True)
class FadingParams:
    unblocked_amplitude: float  # Ā
    diffuse_sigma: float  # σ
    snr_threshold_db: float = config.SNR_THRESHOLD_DB
    slot_seconds: float = config.SLOT_MS / 1000.0

    def __post_init__(self):
        if self.unblocked_amplitude < 0:
            raise ConfigError(f"unblocked amplitude must be >= 0, got {self.unblocked_amplitude}")
        if self.diffuse_sigma <= 0:
            raise ConfigError(f"diffuse sigma must be > 0, got {self.diffuse_sigma}")
        if self.slot_seconds <= 0:
            raise ConfigError(f"slot duration must be > 0, got {self.slot_seconds}")

    @classmethod
    def from_table(
        cls,
        unblocked_snr_db: float = config.UNBLOCKED_SNR_DB,
        k_factor_db: float = config.K_FACTOR_DB,
        snr_threshold_db: float = config.SNR_THRESHOLD_DB,
        slot_ms: float = config.SLOT_MS,
    ) -> "FadingParams":
        """Solve Ā² + 2σ² = mean unblocked SNR and Ā² / 2σ² = K-factor."""
        total = 10.0 ** (unblocked_snr_db / 10.0)
        k = 10.0 ** (k_factor_db / 10.0)
        two_sigma_sq = total / (1.0 + k)
        return cls(
            unblocked_amplitude=math.sqrt(total * k / (1.0 + k)),
            diffuse_sigma=math.sqrt(two_sigma_sq / 2.0),
            snr_threshold_db=snr_threshold_db,
            slot_seconds=slot_ms / 1000.0,
        )

    @property
    def threshold(self) -> float:
        """SNR threshold as a linear power ratio."""
        return float(db_to_power(self.snr_threshold_db))

    @property
    def k_factor(self) -> float:
        return self.unblocked_amplitude**2 / (2.0 * self.diffuse_sigma**2)

    @property
    def mean_unblocked_snr(self) -> float:
        return self.unblocked_amplitude**2 + 2.0 * self.diffuse_sigma**2


def rician_sample(rng: np.random.Generator, amplitude, sigma: float, size=None) -> np.ndarray:
    """|h| for h = (A + n1) + i·n2 with n1, n2 ~ N(0, σ²) i.i.d.

    ``amplitude`` may be an array; ``size`` defaults to its shape.
    """
    amplitude = np.asarray(amplitude, dtype=np.float64)
    if np.any(amplitude < 0):
        raise ConfigError("dominant-path amplitude must be >= 0")
    if sigma <= 0:
        raise ConfigError(f"sigma must be > 0, got {sigma}")
    if size is None:
        size = amplitude.shape
    n1 = rng.normal(0.0, sigma, size=size)
    n2 = rng.normal(0.0, sigma, size=size)
    return np.hypot(amplitude + n1, n2)
