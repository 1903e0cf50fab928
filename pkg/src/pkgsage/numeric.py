"""Dense float64 primitives with hand-written backward passes, an Adam step,
and a central-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

PROB_CLAMP = 1e-12


def as_matrix(x) -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not conform")
    return a @ b


def add(a, b) -> np.ndarray:
    """Elementwise sum; a 1×n row in `b` broadcasts over the rows of `a`."""
    a, b = as_matrix(a), as_matrix(b)
    if a.shape != b.shape and not (b.shape[0] == 1 and b.shape[1] == a.shape[1]):
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")
    return a + b


def scale(a, s: float) -> np.ndarray:
    return as_matrix(a) * float(s)


def concat_cols(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols row counts differ: {a.shape[0]} vs {b.shape[0]}")
    return np.concatenate([a, b], axis=1)


def split_cols(m, left: int) -> tuple[np.ndarray, np.ndarray]:
    m = as_matrix(m)
    if not 0 <= left <= m.shape[1]:
        raise ShapeError(f"cannot split {m.shape[1]} columns at {left}")
    return m[:, :left], m[:, left:]


def row_mean(m, rows: Sequence[int]) -> np.ndarray:
    """Mean of the selected rows; the zero vector when `rows` is empty."""
    m = as_matrix(m)
    rows = list(rows)
    if not rows:
        return np.zeros(m.shape[1])
    return m[rows].mean(axis=0)


def relu(x) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x, grad_out) -> np.ndarray:
    return np.where(np.asarray(x) > 0.0, grad_out, 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    pos = x >= 0
    out = np.empty_like(x)
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def sigmoid_backward(y, grad_out) -> np.ndarray:
    """Backward through sigmoid given its output `y`."""
    y = np.asarray(y)
    return grad_out * y * (1.0 - y)


def bce_loss(p, y, weights=None) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient w.r.t. the logits.

    `p` must be sigmoid(logit). Per-example weights scale both loss and
    gradient; the gradient is (p - y) * w / n.
    """
    p = np.atleast_1d(np.asarray(p, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if p.shape != y.shape:
        raise ShapeError(f"prediction shape {p.shape} != label shape {y.shape}")
    w = np.ones_like(p) if weights is None else np.atleast_1d(np.asarray(weights, dtype=np.float64))
    n = p.size
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    losses = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    loss = float(np.sum(w * losses) / n)
    grad = w * (p - y) / n
    return loss, grad


def bce_with_logits(z, y, weights=None) -> tuple[float, np.ndarray]:
    """Same loss and gradient as bce_loss(sigmoid(z), y), computed from the
    logits so the loss keeps full relative precision when predictions
    saturate. Per-example losses are capped where the clamp would cap them.
    """
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if z.shape != y.shape:
        raise ShapeError(f"logit shape {z.shape} != label shape {y.shape}")
    w = np.ones_like(z) if weights is None else np.atleast_1d(np.asarray(weights, dtype=np.float64))
    n = z.size
    # -log(sigmoid(z)) = softplus(-z), -log(1 - sigmoid(z)) = softplus(z)
    losses = y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z)
    losses = np.minimum(losses, -np.log(PROB_CLAMP))
    loss = float(np.sum(w * losses) / n)
    grad = w * (sigmoid(z) - y) / n
    return loss, grad


@dataclass(eq=False)
class Param:
    value: np.ndarray
    grad: np.ndarray = None
    adam_m: np.ndarray = None
    adam_v: np.ndarray = None
    step_count: int = 0
    name: str = field(default="")

    def __post_init__(self):
        self.value = as_matrix(self.value).copy()
        shape = self.value.shape
        for attr in ("grad", "adam_m", "adam_v"):
            current = getattr(self, attr)
            if current is None:
                setattr(self, attr, np.zeros(shape))
            elif np.shape(current) != shape:
                raise ShapeError(f"{attr} shape {np.shape(current)} != value shape {shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def copy(self) -> "Param":
        return Param(self.value.copy(), self.grad.copy(), self.adam_m.copy(),
                     self.adam_v.copy(), self.step_count, self.name)


def adam_step(param: Param, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> Param:
    """Apply one bias-corrected Adam update in place and zero the gradient."""
    g = param.grad
    if not np.all(np.isfinite(g)):
        raise NumericError(f"non-finite gradient in parameter {param.name or '?'}")
    param.step_count += 1
    t = param.step_count
    param.adam_m *= beta1
    param.adam_m += (1.0 - beta1) * g
    param.adam_v *= beta2
    param.adam_v += (1.0 - beta2) * (g * g)
    m_hat = param.adam_m / (1.0 - beta1 ** t)
    v_hat = param.adam_v / (1.0 - beta2 ** t)
    param.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    param.zero_grad()
    return param


def finite_diff_check(f: Callable[[], float], param: Param, h: float = 1e-5) -> float:
    """Max relative error between `param.grad` and central differences of `f`.

    `f` is re-evaluated with `param.value` perturbed in place, one coordinate
    at a time; the value is restored afterwards.
    """
    analytic = param.grad.copy()
    worst = 0.0
    flat = param.value.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f()
        flat[i] = orig - h
        f_minus = f()
        flat[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        a = analytic.reshape(-1)[i]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
