"""SGD / ADAM updates on flat parameter vectors."""

from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np

from src import config
from src.errors import ConfigError, DimensionError, NumericalError
from src.nn import Gradients, ModelParams


class OptimizerKind(StrEnum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass
class OptimizerState:
    kind: OptimizerKind
    learning_rate: float
    beta1: float = config.ADAM_BETAS[0]
    beta2: float = config.ADAM_BETAS[1]
    eps: float = config.ADAM_EPS
    step: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.kind = OptimizerKind(self.kind)
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")

    @classmethod
    def sgd(cls, learning_rate: float) -> "OptimizerState":
        return cls(OptimizerKind.SGD, learning_rate)

    @classmethod
    def adam(cls, learning_rate: float, **kwargs) -> "OptimizerState":
        return cls(OptimizerKind.ADAM, learning_rate, **kwargs)

    def header(self) -> dict:
        """JSON-able description; the moment vectors are stored separately."""
        return {
            "kind": str(self.kind),
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "step": self.step,
            "has_moments": self.m is not None,
        }

    @classmethod
    def from_header(cls, data: dict, m: np.ndarray | None = None, v: np.ndarray | None = None) -> "OptimizerState":
        return cls(
            kind=data["kind"],
            learning_rate=float(data["learning_rate"]),
            beta1=float(data["beta1"]),
            beta2=float(data["beta2"]),
            eps=float(data["eps"]),
            step=int(data["step"]),
            m=m,
            v=v,
        )


def optimizer_update(
    state: OptimizerState, params: ModelParams, grads: Gradients
) -> tuple[ModelParams, OptimizerState]:
    """One update; returns new params and the advanced state (inputs are not modified)."""
    if grads.dims != params.dims or grads.vector.shape != params.vector.shape:
        raise DimensionError("gradients are not shape-congruent with the parameters")
    g = grads.vector
    if not np.all(np.isfinite(g)):
        raise NumericalError(f"non-finite gradient at optimizer step {state.step}")

    dtype = params.dtype
    if state.kind is OptimizerKind.SGD:
        new = params.vector - np.asarray(state.learning_rate, dtype=dtype) * g
        return params.with_vector(new.astype(dtype, copy=False)), OptimizerState(
            state.kind, state.learning_rate, state.beta1, state.beta2, state.eps, state.step + 1
        )

    m = np.zeros_like(params.vector) if state.m is None else state.m
    v = np.zeros_like(params.vector) if state.v is None else state.v
    step = state.step + 1
    m = state.beta1 * m + (1 - state.beta1) * g
    v = state.beta2 * v + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1**step)
    v_hat = v / (1 - state.beta2**step)
    new = params.vector - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    next_state = OptimizerState(
        state.kind,
        state.learning_rate,
        state.beta1,
        state.beta2,
        state.eps,
        step,
        m.astype(dtype, copy=False),
        v.astype(dtype, copy=False),
    )
    return params.with_vector(new.astype(dtype, copy=False)), next_state
