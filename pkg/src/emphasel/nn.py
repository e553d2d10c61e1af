"""Gradient-checked neural numerics: linear maps, LSTM, softmax, KL loss, SGD.

Everything computes in float64. Forward passes return an explicit context
consumed by the matching backward, which accumulates into Parameter.grad;
parameters themselves are only mutated by sgd_step. The computation graph is
fixed (embeddings -> head -> softmax -> KL), so no general autodiff is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import NumericError
from .rng import SplitMix64

EPS_LOG = 1e-12  # clamp inside log terms of the KL loss


class Parameter:
    """A learned tensor and its accumulated gradient."""

    __slots__ = ("name", "value", "grad", "velocity")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.velocity: np.ndarray | None = None  # lazily allocated for momentum

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def init_params(shape: tuple[int, ...], seed: int) -> np.ndarray:
    """Xavier-uniform tensor in +/- sqrt(6 / (fan_in + fan_out)).

    Values are drawn row-major from SplitMix64(seed), each as
    limit * (2u - 1) with u the generator's next float. A 1-D shape uses
    fan_in = fan_out = shape[0].
    """
    if len(shape) not in (1, 2) or any(s <= 0 for s in shape):
        raise ValueError(f"shape must be 1-D or 2-D with positive dims, got {shape}")
    if len(shape) == 2:
        fan_out, fan_in = shape
    else:
        fan_out = fan_in = shape[0]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    u = SplitMix64(seed).next_float_block(int(np.prod(shape)))
    return (limit * (2.0 * u - 1.0)).reshape(shape)


def _as_2d(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


class LinearCtx(NamedTuple):
    x: np.ndarray
    squeezed: bool


def linear(x: np.ndarray, w: Parameter, b: Parameter) -> tuple[np.ndarray, LinearCtx]:
    """y = x W^T + b for x of shape (d,) or (n, d); W is (k, d), b is (k,)."""
    x2, squeezed = _as_2d(x)
    if x2.shape[1] != w.value.shape[1]:
        raise ValueError(
            f"linear: input dim {x2.shape[1]} does not match weight {w.value.shape}"
        )
    y = x2 @ w.value.T + b.value
    return (y[0] if squeezed else y), LinearCtx(x2, squeezed)


def linear_backward(ctx: LinearCtx, w: Parameter, b: Parameter, dy: np.ndarray) -> np.ndarray:
    """Accumulate dW, db and return dx with the same shape x had."""
    dy2 = dy[None, :] if ctx.squeezed else np.asarray(dy, dtype=np.float64)
    w.grad += dy2.T @ ctx.x
    b.grad += dy2.sum(axis=0)
    dx = dy2 @ w.value
    return dx[0] if ctx.squeezed else dx


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LstmParams:
    """Gate-stacked LSTM weights; block order [input, forget, cell, output].

    w is (4h, d) input-to-gate, u is (4h, h) hidden-to-gate, b is (4h,).
    """

    w: Parameter
    u: Parameter
    b: Parameter

    def __post_init__(self):
        four_h = self.w.value.shape[0]
        h = four_h // 4
        if four_h != 4 * h or self.u.value.shape != (four_h, h) or self.b.value.shape != (four_h,):
            raise ValueError(
                f"inconsistent LSTM shapes: w {self.w.value.shape}, "
                f"u {self.u.value.shape}, b {self.b.value.shape}"
            )

    @property
    def hidden_size(self) -> int:
        return self.w.value.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.w.value.shape[1]

    def params(self) -> list[Parameter]:
        return [self.w, self.u, self.b]


class LstmCellCtx(NamedTuple):
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


def lstm_cell(
    x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, p: LstmParams
) -> tuple[np.ndarray, np.ndarray, LstmCellCtx]:
    """One LSTM step: returns (h_t, c_t, ctx)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h = p.hidden_size
    if x_t.shape != (p.input_size,) or h_prev.shape != (h,) or c_prev.shape != (h,):
        raise ValueError(
            f"lstm_cell: got x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape} "
            f"for d={p.input_size}, h={h}"
        )
    z = p.w.value @ x_t + p.u.value @ h_prev + p.b.value
    i = _sigmoid(z[0:h])
    f = _sigmoid(z[h : 2 * h])
    g = np.tanh(z[2 * h : 3 * h])
    o = _sigmoid(z[3 * h : 4 * h])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h_t = o * tanh_c
    if not (np.isfinite(h_t).all() and np.isfinite(c).all()):
        raise NumericError("non-finite LSTM state")
    return h_t, c, LstmCellCtx(x_t, h_prev, c_prev, i, f, g, o, c, tanh_c)


def lstm_cell_backward(
    ctx: LstmCellCtx, p: LstmParams, dh: np.ndarray, dc: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backward through one step; returns (dx, dh_prev, dc_prev)."""
    do = dh * ctx.tanh_c
    dc_total = dc + dh * ctx.o * (1.0 - ctx.tanh_c**2)
    di = dc_total * ctx.g
    df = dc_total * ctx.c_prev
    dg = dc_total * ctx.i
    dc_prev = dc_total * ctx.f
    dz = np.concatenate(
        [
            di * ctx.i * (1.0 - ctx.i),
            df * ctx.f * (1.0 - ctx.f),
            dg * (1.0 - ctx.g**2),
            do * ctx.o * (1.0 - ctx.o),
        ]
    )
    p.w.grad += np.outer(dz, ctx.x)
    p.u.grad += np.outer(dz, ctx.h_prev)
    p.b.grad += dz
    dx = p.w.value.T @ dz
    dh_prev = p.u.value.T @ dz
    return dx, dh_prev, dc_prev


class BiLstmCtx(NamedTuple):
    fwd_steps: list[LstmCellCtx]
    bwd_steps: list[LstmCellCtx]  # bwd_steps[k] processed token n-1-k


def bilstm_encode(
    xs: np.ndarray, fwd: LstmParams, bwd: LstmParams
) -> tuple[np.ndarray, BiLstmCtx]:
    """Encode a (n, d) sequence into (n, 2h) states: forward run || backward run."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ValueError(f"bilstm_encode: need a non-empty (n, d) input, got {xs.shape}")
    n = xs.shape[0]
    h = fwd.hidden_size

    fwd_steps: list[LstmCellCtx] = []
    h_t = np.zeros(h)
    c_t = np.zeros(h)
    hs_f = np.empty((n, h))
    for t in range(n):
        h_t, c_t, ctx = lstm_cell(xs[t], h_t, c_t, fwd)
        fwd_steps.append(ctx)
        hs_f[t] = h_t

    bwd_steps: list[LstmCellCtx] = []
    h_t = np.zeros(h)
    c_t = np.zeros(h)
    hs_b = np.empty((n, h))
    for t in range(n - 1, -1, -1):
        h_t, c_t, ctx = lstm_cell(xs[t], h_t, c_t, bwd)
        bwd_steps.append(ctx)
        hs_b[t] = h_t

    return np.concatenate([hs_f, hs_b], axis=1), BiLstmCtx(fwd_steps, bwd_steps)


def bilstm_backward(
    ctx: BiLstmCtx, fwd: LstmParams, bwd: LstmParams, d_states: np.ndarray
) -> np.ndarray:
    """BPTT through both directions; d_states is (n, 2h), returns dxs (n, d)."""
    n = len(ctx.fwd_steps)
    h = fwd.hidden_size
    d = fwd.input_size
    dxs = np.zeros((n, d))

    dh_next = np.zeros(h)
    dc_next = np.zeros(h)
    for t in range(n - 1, -1, -1):
        dh = d_states[t, :h] + dh_next
        dx, dh_next, dc_next = lstm_cell_backward(ctx.fwd_steps[t], fwd, dh, dc_next)
        dxs[t] += dx

    dh_next = np.zeros(h)
    dc_next = np.zeros(h)
    for k in range(n - 1, -1, -1):
        t = n - 1 - k  # token processed at backward-direction step k
        dh = d_states[t, h:] + dh_next
        dx, dh_next, dc_next = lstm_cell_backward(ctx.bwd_steps[k], bwd, dh, dc_next)
        dxs[t] += dx

    return dxs


def softmax2(logits: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis; accepts (2,) or (n, 2)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[-1] != 2:
        raise ValueError(f"softmax2: last axis must have size 2, got {logits.shape}")
    if not np.isfinite(logits).all():
        raise NumericError("non-finite logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def kl_loss(target: np.ndarray, pred: np.ndarray) -> float | np.ndarray:
    """KL divergence from prediction to target per token, in nats.

    sum_j target_j * log(target_j / pred_j) with 0 log 0 = 0 and pred clamped
    below at 1e-12 inside the log. Accepts (2,) pairs or (n, 2) stacks;
    returns a scalar or an (n,) array accordingly.
    """
    target = np.asarray(target, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    ratio_log = np.where(
        target > 0.0,
        np.log(np.maximum(target, EPS_LOG)) - np.log(np.maximum(pred, EPS_LOG)),
        0.0,
    )
    out = (target * ratio_log).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def kl_grad_logits(target: np.ndarray, pred: np.ndarray) -> np.ndarray:
    """Gradient of kl_loss with respect to the pre-softmax logits: pred - target."""
    return np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)


def sgd_step(params: Sequence[Parameter], lr: float, momentum: float = 0.0) -> None:
    """value <- value - lr * step per parameter, then zero the gradients.

    With momentum in (0, 1) the step is a velocity v <- momentum*v + grad.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must be in [0, 1), got {momentum}")
    for p in params:
        if not np.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient in parameter {p.name!r}")
        if momentum > 0.0:
            if p.velocity is None:
                p.velocity = np.zeros_like(p.value)
            p.velocity *= momentum
            p.velocity += p.grad
            p.value -= lr * p.velocity
        else:
            p.value -= lr * p.grad
        p.zero_grad()


def grad_check(
    loss_fn: Callable[[], float], params: Sequence[Parameter], eps: float = 1e-5
) -> float:
    """Max relative error between analytic and central-difference gradients.

    loss_fn must run forward and backward deterministically, returning the
    loss and leaving gradients accumulated on params. The relative error per
    coordinate is |a - n| / max(1e-8, |a| + |n|).
    """
    for p in params:
        p.zero_grad()
    loss_fn()
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, grads in zip(params, analytic):
        flat_value = p.value.reshape(-1)
        flat_grad = grads.reshape(-1)
        for k in range(flat_value.size):
            orig = flat_value[k]
            flat_value[k] = orig + eps
            f_plus = loss_fn()
            flat_value[k] = orig - eps
            f_minus = loss_fn()
            flat_value[k] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(flat_grad[k])
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, rel)
    for p in params:
        p.zero_grad()
    return float(worst)
