"""From-scratch LSTM for one-step-ahead series forecasting.

Single layer, scalar output head, squared-error loss. The cell follows
the standard gate equations

    i = sigmoid(W_xi x + W_hi h + b_i)        input gate
    f = sigmoid(W_xf x + W_hf h + b_f)        forget gate
    g = tanh   (W_xc x + W_hc h + b_c)        candidate state
    c = f * c_prev + i * g
    o = sigmoid(W_xo x + W_ho h + b_o)        output gate
    h = o * tanh(c)

with the prediction read off the final hidden state as W_y h_T + b_y.
Training is mini-batch SGD with global gradient-norm clipping and early
stopping on a chronological validation tail; everything is deterministic
given the seed.

``lstm_cell`` / ``lstm_forward`` / ``lstm_gradients`` operate on one
sequence and exist as the reference path; training uses an equivalent
batched implementation (cross-checked in the tests).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit as _sigmoid

logger = logging.getLogger(__name__)

GATE_FIELDS = (
    "w_xi", "w_hi", "b_i",
    "w_xf", "w_hf", "b_f",
    "w_xc", "w_hc", "b_c",
    "w_xo", "w_ho", "b_o",
    "w_y", "b_y",
)


class LstmError(ValueError):
    pass


class DimensionMismatch(LstmError):
    pass


class NonFiniteValue(LstmError):
    """Signals an exploding activation or diverged loss."""


@dataclass
class LstmParams:
    """All weights of one LSTM layer plus the scalar output head."""

    input_size: int
    hidden_size: int
    w_xi: np.ndarray
    w_hi: np.ndarray
    b_i: np.ndarray
    w_xf: np.ndarray
    w_hf: np.ndarray
    b_f: np.ndarray
    w_xc: np.ndarray
    w_hc: np.ndarray
    b_c: np.ndarray
    w_xo: np.ndarray
    w_ho: np.ndarray
    b_o: np.ndarray
    w_y: np.ndarray
    b_y: float

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in GATE_FIELDS}

    def copy(self) -> "LstmParams":
        kwargs = {
            name: (val.copy() if isinstance(val, np.ndarray) else val)
            for name, val in self.arrays().items()
        }
        return replace(self, **kwargs)

    def check_finite(self) -> None:
        for name, val in self.arrays().items():
            if not np.all(np.isfinite(val)):
                raise NonFiniteValue(f"non-finite entries in {name}")


@dataclass
class LstmGradients:
    """Loss gradients, one array per parameter tensor."""

    w_xi: np.ndarray
    w_hi: np.ndarray
    b_i: np.ndarray
    w_xf: np.ndarray
    w_hf: np.ndarray
    b_f: np.ndarray
    w_xc: np.ndarray
    w_hc: np.ndarray
    b_c: np.ndarray
    w_xo: np.ndarray
    w_ho: np.ndarray
    b_o: np.ndarray
    w_y: np.ndarray
    b_y: float

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in GATE_FIELDS}


@dataclass(frozen=True)
class LstmState:
    h: np.ndarray
    c: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters; defaults are the documented engine defaults."""

    lag_p: int = 22
    hidden_size: int = 8
    learning_rate: float = 1e-2
    max_epochs: int = 200
    patience: int = 20
    val_fraction: float = 0.10
    seed: int = 0
    grad_clip: float = 5.0
    batch_size: int = 64

    def __post_init__(self):
        if self.lag_p < 1 or self.hidden_size < 1:
            raise LstmError("lag_p and hidden_size must be positive")
        if self.learning_rate <= 0 or self.grad_clip <= 0:
            raise LstmError("learning_rate and grad_clip must be positive")
        if self.patience < 1:
            raise LstmError("patience must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise LstmError("val_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_mse: float
    val_mse: float
    improved: bool


def init_params(input_size: int, hidden_size: int, rng: np.random.Generator) -> LstmParams:
    """Uniform(-1/sqrt(hidden), 1/sqrt(hidden)) init, forget bias +1."""
    bound = 1.0 / np.sqrt(hidden_size)

    def mat(rows, cols):
        return rng.uniform(-bound, bound, size=(rows, cols))

    def vec(n):
        return rng.uniform(-bound, bound, size=n)

    return LstmParams(
        input_size=input_size,
        hidden_size=hidden_size,
        w_xi=mat(hidden_size, input_size), w_hi=mat(hidden_size, hidden_size), b_i=vec(hidden_size),
        w_xf=mat(hidden_size, input_size), w_hf=mat(hidden_size, hidden_size),
        b_f=vec(hidden_size) + 1.0,
        w_xc=mat(hidden_size, input_size), w_hc=mat(hidden_size, hidden_size), b_c=vec(hidden_size),
        w_xo=mat(hidden_size, input_size), w_ho=mat(hidden_size, hidden_size), b_o=vec(hidden_size),
        w_y=vec(hidden_size), b_y=0.0,
    )


def zero_gradients(params: LstmParams) -> LstmGradients:
    arrays = {name: np.zeros_like(val) for name, val in params.arrays().items() if name != "b_y"}
    return LstmGradients(b_y=0.0, **arrays)


def _check_input(params: LstmParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != params.input_size:
        raise DimensionMismatch(
            f"input has {x.shape[0]} entries, expected {params.input_size}"
        )
    return x


def lstm_cell(params: LstmParams, x: np.ndarray, state: LstmState) -> LstmState:
    """One gate update: (h, c) -> (h', c') for a single input vector."""
    x = _check_input(params, x)
    h, c = state.h, state.c
    if h.shape[0] != params.hidden_size or c.shape[0] != params.hidden_size:
        raise DimensionMismatch("state dimensions do not match hidden_size")
    i = _sigmoid(params.w_xi @ x + params.w_hi @ h + params.b_i)
    f = _sigmoid(params.w_xf @ x + params.w_hf @ h + params.b_f)
    g = np.tanh(params.w_xc @ x + params.w_hc @ h + params.b_c)
    c_new = f * c + i * g
    o = _sigmoid(params.w_xo @ x + params.w_ho @ h + params.b_o)
    h_new = o * np.tanh(c_new)
    return LstmState(h=h_new, c=c_new)


def lstm_forward(params: LstmParams, sequence) -> tuple[float, list[LstmState]]:
    """Run the cell over a sequence; prediction is W_y h_T + b_y."""
    seq = [np.asarray(x, dtype=float).reshape(-1) for x in sequence]
    if not seq:
        raise LstmError("sequence must be non-empty")
    state = LstmState(
        h=np.zeros(params.hidden_size), c=np.zeros(params.hidden_size)
    )
    states = []
    for x in seq:
        state = lstm_cell(params, x, state)
        states.append(state)
    prediction = float(params.w_y @ state.h + params.b_y)
    return prediction, states


def _forward_cached(params: LstmParams, seq: list[np.ndarray]):
    """Forward pass keeping every gate activation for BPTT."""
    h = np.zeros(params.hidden_size)
    c = np.zeros(params.hidden_size)
    cache = []
    for x in seq:
        i = _sigmoid(params.w_xi @ x + params.w_hi @ h + params.b_i)
        f = _sigmoid(params.w_xf @ x + params.w_hf @ h + params.b_f)
        g = np.tanh(params.w_xc @ x + params.w_hc @ h + params.b_c)
        c_new = f * c + i * g
        o = _sigmoid(params.w_xo @ x + params.w_ho @ h + params.b_o)
        tc = np.tanh(c_new)
        h_new = o * tc
        cache.append((x, h, c, i, f, g, o, c_new, tc))
        h, c = h_new, c_new
    prediction = float(params.w_y @ h + params.b_y)
    return prediction, h, cache


def lstm_gradients(params: LstmParams, sequence, target: float) -> LstmGradients:
    """Full BPTT gradients of (prediction - target)^2."""
    seq = [_check_input(params, x) for x in sequence]
    if not seq:
        raise LstmError("sequence must be non-empty")
    prediction, h_last, cache = _forward_cached(params, seq)
    if not np.isfinite(prediction):
        raise NonFiniteValue("non-finite prediction during BPTT")

    grads = zero_gradients(params)
    d_pred = 2.0 * (prediction - target)
    grads.w_y += d_pred * h_last
    grads.b_y += d_pred

    dh = d_pred * params.w_y
    dc = np.zeros(params.hidden_size)
    for x, h_prev, c_prev, i, f, g, o, c_new, tc in reversed(cache):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc**2)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        da_i = di * i * (1.0 - i)
        da_f = df * f * (1.0 - f)
        da_o = do * o * (1.0 - o)
        da_c = dg * (1.0 - g**2)
        grads.w_xi += np.outer(da_i, x)
        grads.w_xf += np.outer(da_f, x)
        grads.w_xc += np.outer(da_c, x)
        grads.w_xo += np.outer(da_o, x)
        grads.w_hi += np.outer(da_i, h_prev)
        grads.w_hf += np.outer(da_f, h_prev)
        grads.w_hc += np.outer(da_c, h_prev)
        grads.w_ho += np.outer(da_o, h_prev)
        grads.b_i += da_i
        grads.b_f += da_f
        grads.b_c += da_c
        grads.b_o += da_o
        dh = (
            params.w_hi.T @ da_i
            + params.w_hf.T @ da_f
            + params.w_hc.T @ da_c
            + params.w_ho.T @ da_o
        )
        dc = dc * f
        if not (np.all(np.isfinite(dh)) and np.all(np.isfinite(dc))):
            raise NonFiniteValue("non-finite intermediate in BPTT")
    return grads


# --- batched training path ---------------------------------------------------


def _forward_batch(params: LstmParams, x: np.ndarray):
    """Forward over a (batch, steps, input) array; returns caches for BPTT."""
    batch, steps, _ = x.shape
    h = np.zeros((batch, params.hidden_size))
    c = np.zeros((batch, params.hidden_size))
    cache = []
    for t in range(steps):
        xt = x[:, t, :]
        i = _sigmoid(xt @ params.w_xi.T + h @ params.w_hi.T + params.b_i)
        f = _sigmoid(xt @ params.w_xf.T + h @ params.w_hf.T + params.b_f)
        g = np.tanh(xt @ params.w_xc.T + h @ params.w_hc.T + params.b_c)
        c_new = f * c + i * g
        o = _sigmoid(xt @ params.w_xo.T + h @ params.w_ho.T + params.b_o)
        tc = np.tanh(c_new)
        cache.append((xt, h, c, i, f, g, o, tc))
        h = o * tc
        c = c_new
    predictions = h @ params.w_y + params.b_y
    return predictions, h, cache


def _gradients_batch(params: LstmParams, x: np.ndarray, y: np.ndarray) -> tuple[LstmGradients, float]:
    """Mean squared-error loss and mean gradients over a batch."""
    batch = x.shape[0]
    predictions, h_last, cache = _forward_batch(params, x)
    err = predictions - y
    loss = float(np.mean(err**2))
    if not np.isfinite(loss):
        raise NonFiniteValue("non-finite training loss")

    grads = zero_gradients(params)
    d_pred = 2.0 * err / batch
    grads.w_y += d_pred @ h_last
    grads.b_y += float(np.sum(d_pred))

    dh = np.outer(d_pred, params.w_y)
    dc = np.zeros_like(dh)
    for xt, h_prev, c_prev, i, f, g, o, tc in reversed(cache):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc**2)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        da_i = di * i * (1.0 - i)
        da_f = df * f * (1.0 - f)
        da_o = do * o * (1.0 - o)
        da_c = dg * (1.0 - g**2)
        grads.w_xi += da_i.T @ xt
        grads.w_xf += da_f.T @ xt
        grads.w_xc += da_c.T @ xt
        grads.w_xo += da_o.T @ xt
        grads.w_hi += da_i.T @ h_prev
        grads.w_hf += da_f.T @ h_prev
        grads.w_hc += da_c.T @ h_prev
        grads.w_ho += da_o.T @ h_prev
        grads.b_i += da_i.sum(axis=0)
        grads.b_f += da_f.sum(axis=0)
        grads.b_c += da_c.sum(axis=0)
        grads.b_o += da_o.sum(axis=0)
        dh = da_i @ params.w_hi + da_f @ params.w_hf + da_c @ params.w_hc + da_o @ params.w_ho
        dc = dc * f
    return grads, loss


def clip_gradients(grads: LstmGradients, max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    total = 0.0
    for val in grads.arrays().values():
        total += float(np.sum(np.square(val)))
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for name, val in grads.arrays().items():
            if name == "b_y":
                grads.b_y = float(val * scale)
            else:
                val *= scale
    return float(norm)


def _apply_sgd(params: LstmParams, grads: LstmGradients, lr: float) -> None:
    for name, g in grads.arrays().items():
        if name == "b_y":
            params.b_y = float(params.b_y - lr * g)
        else:
            getattr(params, name)[...] -= lr * g


def _stack_samples(samples, input_size: int):
    x = np.stack([np.asarray(w, dtype=float).reshape(-1, input_size) for w, _ in samples])
    y = np.array([t for _, t in samples], dtype=float)
    return x, y


def train_lstm(samples, config: TrainConfig) -> tuple[LstmParams, list[EpochLog]]:
    """Train on (window, target) pairs; returns the best-validation params.

    The last ``val_fraction`` of the samples (chronological tail) is held
    out for early stopping; training stops after ``patience`` epochs
    without a new validation minimum, and the parameters achieving the
    minimum are returned.
    """
    samples = list(samples)
    if len(samples) < config.lag_p + 10:
        raise LstmError(f"need >= lag_p + 10 = {config.lag_p + 10} samples, got {len(samples)}")
    first = np.asarray(samples[0][0], dtype=float)
    input_size = 1 if first.ndim == 1 else first.shape[-1]
    if first.ndim == 1 and first.shape[0] != config.lag_p:
        # windows may be (lag,) for one channel or (lag, channels)
        pass
    x, y = _stack_samples(samples, input_size)

    n_val = max(1, int(round(config.val_fraction * len(samples))))
    x_train, y_train = x[:-n_val], y[:-n_val]
    x_val, y_val = x[-n_val:], y[-n_val:]

    rng = np.random.default_rng(config.seed)
    params = init_params(input_size, config.hidden_size, rng)
    best = params.copy()
    best_val = np.inf
    stale = 0
    log: list[EpochLog] = []

    n_train = x_train.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n_train)
        epoch_loss = 0.0
        for start in range(0, n_train, config.batch_size):
            idx = order[start : start + config.batch_size]
            grads, loss = _gradients_batch(params, x_train[idx], y_train[idx])
            clip_gradients(grads, config.grad_clip)
            _apply_sgd(params, grads, config.learning_rate)
            epoch_loss += loss * len(idx)
        train_mse = epoch_loss / n_train
        val_pred, _, _ = _forward_batch(params, x_val)
        val_mse = float(np.mean((val_pred - y_val) ** 2))
        if not np.isfinite(val_mse):
            raise NonFiniteValue(f"diverged at epoch {epoch}")
        improved = val_mse < best_val
        if improved:
            best_val = val_mse
            best = params.copy()
            stale = 0
        else:
            stale += 1
        log.append(EpochLog(epoch, train_mse, val_mse, improved))
        if stale >= config.patience:
            break
    best.check_finite()
    return best, log


def predict(params: LstmParams, window) -> float:
    prediction, _ = lstm_forward(params, window)
    return prediction
