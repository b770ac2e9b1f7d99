"""Recurrent blockage predictor: dense-ReLU -> LSTM -> dense-ReLU -> linear -> sigmoid.

Parameters live in one flat vector (``ModelParams.vector``); named tensors are
views into it, in the fixed order of ``ModelDims.shapes()``. LSTM gates are
stacked as [input, forget, candidate, output] blocks of ``lstm_units`` rows.

All arrays carry a leading batch axis internally, so several independent
sequences (e.g. 512-slot training chunks) run through one set of matmuls.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from src import config
from src.errors import ConfigError, DimensionError, NoValidSlotsError
from src.seeding import make_rng

_LOG_EPS = -np.log(config.PROB_EPS)


# ────────────────────── Dimensions / parameters ──────────────────────


@dataclass(frozen=True)
class ModelDims:
    input_dim: int
    hidden_in: int = config.HIDDEN_IN
    lstm_units: int = config.LSTM_UNITS
    hidden_out: int = config.HIDDEN_OUT

    def __post_init__(self):
        for name in ("input_dim", "hidden_in", "lstm_units", "hidden_out"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")

    @classmethod
    def for_devices(cls, num_devices: int, **kwargs) -> "ModelDims":
        return cls(input_dim=2 * num_devices, **kwargs)

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        d, h, u, o = self.input_dim, self.hidden_in, self.lstm_units, self.hidden_out
        return [
            ("w_in", (h, d)),
            ("b_in", (h,)),
            ("w_x", (4 * u, h)),
            ("w_h", (4 * u, u)),
            ("b_lstm", (4 * u,)),
            ("w_out", (o, u)),
            ("b_out", (o,)),
            ("w_head", (1, o)),
            ("b_head", (1,)),
        ]

    @property
    def num_params(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.shapes())

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_in": self.hidden_in,
            "lstm_units": self.lstm_units,
            "hidden_out": self.hidden_out,
        }


class ModelParams:
    """Weights addressable by name (views) and as one flat vector."""

    __slots__ = ("dims", "vector", "_views")

    def __init__(self, dims: ModelDims, vector: np.ndarray):
        vector = np.asarray(vector)
        if vector.ndim != 1 or vector.size != dims.num_params:
            raise DimensionError(f"expected a flat vector of {dims.num_params} values, got shape {vector.shape}")
        self.dims = dims
        self.vector = vector
        self._views = {}
        pos = 0
        for name, shape in dims.shapes():
            size = int(np.prod(shape))
            self._views[name] = vector[pos : pos + size].reshape(shape)
            pos += size

    def __getitem__(self, name: str) -> np.ndarray:
        return self._views[name]

    def __setitem__(self, name: str, value) -> None:
        # writes through to the flat vector; `grad[name] += g` lands here
        self._views[name][...] = value

    def names(self) -> list[str]:
        return list(self._views)

    @property
    def dtype(self) -> np.dtype:
        return self.vector.dtype

    def copy(self) -> "ModelParams":
        return ModelParams(self.dims, self.vector.copy())

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.dims, self.vector.astype(dtype))

    def with_vector(self, vector: np.ndarray) -> "ModelParams":
        return ModelParams(self.dims, vector)

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.dims, np.zeros_like(self.vector))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.dims == other.dims and self.dtype == other.dtype and np.array_equal(self.vector, other.vector)

    def __repr__(self) -> str:
        return f"ModelParams({self.dims}, dtype={self.dtype})"


# Gradients share the parameter layout
Gradients = ModelParams


def flatten(params: ModelParams) -> np.ndarray:
    return params.vector.copy()


def unflatten(vector, dims: ModelDims) -> ModelParams:
    return ModelParams(dims, np.array(vector, copy=True))


def init_params(dims: ModelDims, seed: int, dtype=np.float32) -> ModelParams:
    """Fan-in scaled uniform weights; zero biases except forget-gate bias = 1."""
    rng = make_rng(seed)
    params = ModelParams(dims, np.zeros(dims.num_params, dtype=np.float64))
    for name, shape in dims.shapes():
        if name.startswith("b_"):
            continue
        fan_in = shape[1]
        # ReLU layers get the He bound, gate / head matrices the 1/sqrt(fan_in) bound
        bound = np.sqrt(6.0 / fan_in) if name in ("w_in", "w_out") else 1.0 / np.sqrt(fan_in)
        params[name][...] = rng.uniform(-bound, bound, size=shape)
    u = dims.lstm_units
    params["b_lstm"][u : 2 * u] = 1.0
    return params.astype(dtype)


# ────────────────────── Recurrent state ──────────────────────


@dataclass
class RecurrentState:
    cell: np.ndarray  # (U,) or (B, U)
    hidden: np.ndarray

    @classmethod
    def zeros(cls, units: int, batch: int | None = None, dtype=np.float32) -> "RecurrentState":
        shape = (units,) if batch is None else (batch, units)
        return cls(cell=np.zeros(shape, dtype=dtype), hidden=np.zeros(shape, dtype=dtype))


def _batch_state(state: RecurrentState | None, params: ModelParams, batch: int) -> tuple[np.ndarray, np.ndarray]:
    u = params.dims.lstm_units
    if state is None:
        z = np.zeros((batch, u), dtype=params.dtype)
        return z, z.copy()
    h = np.asarray(state.hidden, dtype=params.dtype)
    c = np.asarray(state.cell, dtype=params.dtype)
    if h.shape[-1] != u or c.shape != h.shape:
        raise DimensionError(f"state shape {h.shape} does not match {u} LSTM units")
    return np.broadcast_to(h.reshape(-1, u), (batch, u)).copy(), np.broadcast_to(c.reshape(-1, u), (batch, u)).copy()


# ────────────────────── Forward ──────────────────────


def _cell(params: ModelParams, x: np.ndarray, h: np.ndarray, c: np.ndarray):
    """One slot for a batch: x (B, D), h/c (B, U) -> logits (B,), h', c'."""
    u = params.dims.lstm_units
    r = np.maximum(x @ params["w_in"].T + params["b_in"], 0)
    z = r @ params["w_x"].T + h @ params["w_h"].T + params["b_lstm"]
    i = expit(z[:, :u])
    f = expit(z[:, u : 2 * u])
    g = np.tanh(z[:, 2 * u : 3 * u])
    o = expit(z[:, 3 * u :])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    v = np.maximum(h_new @ params["w_out"].T + params["b_out"], 0)
    logit = v @ params["w_head"][0] + params["b_head"][0]
    return logit, h_new, c_new


def _check_input(params: ModelParams, obs: np.ndarray) -> None:
    if obs.shape[-1] != params.dims.input_dim:
        raise DimensionError(f"observation width {obs.shape[-1]} != model input_dim {params.dims.input_dim}")


def forward_step(params: ModelParams, obs_row, state: RecurrentState | None = None):
    """(probability, new_state) for one observation row of length input_dim."""
    obs_row = np.asarray(obs_row, dtype=params.dtype)
    if obs_row.ndim != 1:
        raise DimensionError(f"obs_row must be 1-D, got shape {obs_row.shape}")
    _check_input(params, obs_row)
    h, c = _batch_state(state, params, 1)
    logit, h, c = _cell(params, np.ascontiguousarray(obs_row[None, :]), h, c)
    return float(expit(logit)[0]), RecurrentState(cell=c[0], hidden=h[0])


def forward_sequence(params: ModelParams, obs, init_state: RecurrentState | None = None):
    """Probabilities for every slot, threading the state; obs (T, D) or (B, T, D).

    Uses the same per-slot arithmetic as forward_step, so chunked and
    unchunked evaluation agree bit for bit.
    """
    obs = np.asarray(obs, dtype=params.dtype)
    single = obs.ndim == 2
    if single:
        obs = obs[None]
    if obs.ndim != 3 or obs.shape[1] < 1:
        raise DimensionError(f"obs must be (T, D) or (B, T, D) with T >= 1, got {obs.shape}")
    _check_input(params, obs)
    batch, num_slots, _ = obs.shape
    h, c = _batch_state(init_state, params, batch)
    logits = np.empty((batch, num_slots), dtype=params.dtype)
    for t in range(num_slots):
        logits[:, t], h, c = _cell(params, np.ascontiguousarray(obs[:, t, :]), h, c)
    probs = expit(logits)
    if single:
        return probs[0], RecurrentState(cell=c[0], hidden=h[0])
    return probs, RecurrentState(cell=c, hidden=h)


# ────────────────────── Loss ──────────────────────


def weighted_bce(z, x, w: float = config.POSITIVE_WEIGHT):
    """-w·z·log x - (1-z)·log(1-x), with both log arguments floored at ε."""
    z = np.asarray(z, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    eps = config.PROB_EPS
    loss = -w * z * np.log(np.maximum(x, eps)) - (1.0 - z) * np.log(np.maximum(1.0 - x, eps))
    return loss if loss.ndim else float(loss)


def _bce_logits(z: np.ndarray, logit: np.ndarray, w: float):
    """Loss and d loss / d logit of weighted_bce(z, σ(logit)), computed from logits."""
    nlp = np.logaddexp(0, -logit)  # -log σ(l)
    nlq = np.logaddexp(0, logit)  # -log(1 - σ(l))
    loss = w * z * np.minimum(nlp, _LOG_EPS) + (1 - z) * np.minimum(nlq, _LOG_EPS)
    p = expit(logit)
    grad = -w * z * (1 - p) * (nlp < _LOG_EPS) + (1 - z) * p * (nlq < _LOG_EPS)
    return loss, grad


# ────────────────────── Windowed forward / backward ──────────────────────


def _window_forward(params: ModelParams, x: np.ndarray, h0: np.ndarray, c0: np.ndarray) -> dict:
    """Forward over a window x (B, L, D) keeping everything backprop needs."""
    u = params.dims.lstm_units
    batch, length, _ = x.shape
    a = x @ params["w_in"].T + params["b_in"]
    r = np.maximum(a, 0)
    xz = r @ params["w_x"].T + params["b_lstm"]
    w_h_t = params["w_h"].T

    dtype = params.dtype
    gates = np.empty((batch, length, 4 * u), dtype=dtype)
    cs = np.empty((batch, length, u), dtype=dtype)
    hs = np.empty((batch, length, u), dtype=dtype)
    h, c = h0, c0
    for t in range(length):
        z = xz[:, t] + h @ w_h_t
        gt = gates[:, t]
        gt[:, : 2 * u] = expit(z[:, : 2 * u])
        gt[:, 2 * u : 3 * u] = np.tanh(z[:, 2 * u : 3 * u])
        gt[:, 3 * u :] = expit(z[:, 3 * u :])
        c = gt[:, u : 2 * u] * c + gt[:, :u] * gt[:, 2 * u : 3 * u]
        h = gt[:, 3 * u :] * np.tanh(c)
        cs[:, t] = c
        hs[:, t] = h

    q = hs @ params["w_out"].T + params["b_out"]
    v = np.maximum(q, 0)
    logits = v @ params["w_head"][0] + params["b_head"][0]
    return {"x": x, "a": a, "r": r, "gates": gates, "cs": cs, "hs": hs, "q": q, "v": v, "logits": logits,
            "h0": h0, "c0": c0}


def _window_backward(params: ModelParams, cache: dict, dlogit: np.ndarray, grad: ModelParams) -> None:
    """Accumulate parameter gradients for one window into ``grad`` (no flow into h0/c0)."""
    u = params.dims.lstm_units
    x, a, r, gates, cs, hs, q, v = (cache[k] for k in ("x", "a", "r", "gates", "cs", "hs", "q", "v"))
    batch, length, _ = x.shape

    grad["w_head"][0] += np.tensordot(dlogit, v, axes=([0, 1], [0, 1]))
    grad["b_head"][0] += dlogit.sum()
    dq = (dlogit[..., None] * params["w_head"][0]) * (q > 0)
    grad["w_out"] += np.tensordot(dq, hs, axes=([0, 1], [0, 1]))
    grad["b_out"] += dq.sum(axis=(0, 1))
    dh_out = dq @ params["w_out"]

    c_prev = np.concatenate([cache["c0"][:, None, :], cs[:, :-1]], axis=1)
    h_prev = np.concatenate([cache["h0"][:, None, :], hs[:, :-1]], axis=1)
    dz = np.empty_like(gates)
    dh_next = np.zeros((batch, u), dtype=params.dtype)
    dc_next = np.zeros((batch, u), dtype=params.dtype)
    w_h = params["w_h"]
    for t in range(length - 1, -1, -1):
        gt = gates[:, t]
        i, f, g, o = gt[:, :u], gt[:, u : 2 * u], gt[:, 2 * u : 3 * u], gt[:, 3 * u :]
        tc = np.tanh(cs[:, t])
        dh = dh_out[:, t] + dh_next
        dc = dh * o * (1 - tc * tc) + dc_next
        dzt = dz[:, t]
        dzt[:, :u] = dc * g * i * (1 - i)
        dzt[:, u : 2 * u] = dc * c_prev[:, t] * f * (1 - f)
        dzt[:, 2 * u : 3 * u] = dc * i * (1 - g * g)
        dzt[:, 3 * u :] = dh * tc * o * (1 - o)
        dc_next = dc * f
        dh_next = dzt @ w_h

    grad["w_x"] += np.tensordot(dz, r, axes=([0, 1], [0, 1]))
    grad["w_h"] += np.tensordot(dz, h_prev, axes=([0, 1], [0, 1]))
    grad["b_lstm"] += dz.sum(axis=(0, 1))
    da = (dz @ params["w_x"]) * (a > 0)
    grad["w_in"] += np.tensordot(da, x, axes=([0, 1], [0, 1]))
    grad["b_in"] += da.sum(axis=(0, 1))


def _as_batch(params: ModelParams, obs, labels, valid):
    obs = np.asarray(obs, dtype=params.dtype)
    labels = np.asarray(labels, dtype=params.dtype)
    valid = np.asarray(valid, dtype=bool)
    if obs.ndim == 2:
        obs, labels, valid = obs[None], labels[None], valid[None]
    if obs.ndim != 3 or labels.shape != obs.shape[:2] or valid.shape != obs.shape[:2]:
        raise DimensionError(f"obs {obs.shape}, labels {labels.shape}, valid {valid.shape} are not aligned")
    _check_input(params, obs)
    return obs, labels, valid


def tbptt_gradients(
    params: ModelParams,
    obs,
    labels,
    valid_mask,
    w: float = config.POSITIVE_WEIGHT,
    trunc_len: int = config.TRUNC_LEN,
    init_state: RecurrentState | None = None,
):
    """Masked-mean weighted BCE and its truncated-BPTT gradient.

    The state is carried across truncation windows, gradients are not. Inputs
    are (T, D)/(T,) or batched (B, T, D)/(B, T); the mean runs over every valid
    slot of every batch row. Returns (mean_loss, Gradients, final_state).
    """
    if trunc_len < 1:
        raise ConfigError(f"trunc_len must be >= 1, got {trunc_len}")
    obs, labels, valid = _as_batch(params, obs, labels, valid_mask)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise NoValidSlotsError("no valid labelled slot to compute a loss on")
    single = np.asarray(valid_mask).ndim == 1

    batch, num_slots, _ = obs.shape
    h, c = _batch_state(init_state, params, batch)
    grad = params.zeros_like()
    scale = 1.0 / n_valid
    total = 0.0
    for start in range(0, num_slots, trunc_len):
        stop = min(start + trunc_len, num_slots)
        cache = _window_forward(params, obs[:, start:stop], h, c)
        loss, dlogit = _bce_logits(labels[:, start:stop], cache["logits"], w)
        m = valid[:, start:stop]
        total += float(loss[m].sum(dtype=np.float64))
        _window_backward(params, cache, (dlogit * m * scale).astype(params.dtype, copy=False), grad)
        h, c = cache["hs"][:, -1], cache["cs"][:, -1]

    state = RecurrentState(cell=c[0], hidden=h[0]) if single else RecurrentState(cell=c, hidden=h)
    return total * scale, grad, state


def sequence_loss(
    params: ModelParams,
    obs,
    labels,
    valid_mask,
    w: float = config.POSITIVE_WEIGHT,
    init_state: RecurrentState | None = None,
    reduce: str = "mean",
) -> float:
    """Masked weighted BCE of a (batched) sequence without gradients; ``reduce`` is "mean" or "sum"."""
    obs, labels, valid = _as_batch(params, obs, labels, valid_mask)
    h, c = _batch_state(init_state, params, obs.shape[0])
    cache = _window_forward(params, obs, h, c)
    loss, _ = _bce_logits(labels, cache["logits"], w)
    total = float(loss[valid].sum(dtype=np.float64))
    if reduce == "sum":
        return total
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise NoValidSlotsError("no valid labelled slot to compute a loss on")
    return total / n_valid
