"""Dense numeric kernels with hand-written backward passes.

Every kernel treats the last two axes of its arguments as the matrix and
broadcasts any leading axes as a batch, so the same code serves a single
graph and a stack of per-frame graphs. Forward functions are pure. Each
``*_backward`` takes the upstream gradient plus whatever the forward saw
and returns input gradients in argument order; parameter gradients are
accumulated by the caller into :class:`GradPair` holders.

Storage precision is float32; correctness checks rerun the same code at
float64 by passing float64 inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

DTYPE = np.float32

# Denominator guard for the squared-score row normalization.
ROW_NORM_EPS = 1e-12
# Variance floor inside the per-row layer normalization.
LAYER_NORM_EPS = 1e-5


@dataclass(eq=False)
class GradPair:
    """A trainable tensor and its gradient accumulator.

    Gradients are accumulated additively: running a backward pass twice
    leaves exactly twice the gradient of running it once.
    """

    value: np.ndarray
    grad: np.ndarray

    @classmethod
    def of(cls, value: np.ndarray) -> "GradPair":
        value = np.asarray(value)
        return cls(value, np.zeros_like(value))

    def accumulate(self, delta: np.ndarray) -> None:
        if np.shape(delta) != self.grad.shape:
            raise DimensionError(
                f"gradient shape {np.shape(delta)} does not match "
                f"parameter shape {self.grad.shape}"
            )
        self.grad += delta

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def _flat2(x: np.ndarray) -> np.ndarray:
    """Collapse all leading axes so only the feature axis survives."""
    return x.reshape(-1, x.shape[-1])


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: inner dimensions disagree for shapes {a.shape} and {b.shape}"
        )
    return a @ b


def matmul_backward(grad, a, b):
    """Gradients of ``a @ b`` for operands of matching batch rank."""
    da = grad @ np.swapaxes(b, -1, -2)
    db = np.swapaxes(a, -1, -2) @ grad
    return da, db


def affine_rows(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Apply ``x @ w.T + b`` to every row of ``x``."""
    x = np.asarray(x)
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise DimensionError(
            f"affine_rows: input feature dim {x.shape[-1:]} does not match "
            f"weight shape {w.shape}"
        )
    if b.shape != (w.shape[0],):
        raise DimensionError(
            f"affine_rows: bias shape {b.shape} does not match weight rows {w.shape[0]}"
        )
    return x @ w.T + b


def affine_rows_backward(grad, x, w):
    dx = grad @ w
    dw = np.einsum("kg,kf->gf", _flat2(grad), _flat2(x))
    db = _flat2(grad).sum(axis=0)
    return dx, dw, db


def row_sq_normalize(e: np.ndarray, eps: float = ROW_NORM_EPS) -> np.ndarray:
    """Normalize squared entries so every row sums to (almost) one.

    ``a[k, l] = e[k, l]**2 / (sum_i e[k, i]**2 + eps)``. The eps keeps
    all-zero rows finite (they normalize to all-zero rows).
    """
    e = np.asarray(e)
    if e.shape[-1] != e.shape[-2]:
        raise DimensionError(f"row_sq_normalize expects square matrices, got {e.shape}")
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    sq = e * e
    return sq / (sq.sum(axis=-1, keepdims=True) + eps)


def row_sq_normalize_backward(grad, e, eps: float = ROW_NORM_EPS):
    sq = e * e
    denom = sq.sum(axis=-1, keepdims=True) + eps
    a = sq / denom
    dot = (grad * a).sum(axis=-1, keepdims=True)
    return 2.0 * e / denom * (grad - dot)


def layernorm_rows(x, gain, bias, eps: float = LAYER_NORM_EPS):
    """Per-row normalization with learnable per-feature gain and bias."""
    x = np.asarray(x)
    f = x.shape[-1]
    if gain.shape != (f,) or bias.shape != (f,):
        raise DimensionError(
            f"layernorm_rows: gain/bias shapes {gain.shape}/{bias.shape} "
            f"do not match feature dim {f}"
        )
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    xhat = (x - mu) / np.sqrt(var + eps)
    return gain * xhat + bias


def layernorm_rows_backward(grad, x, gain, eps: float = LAYER_NORM_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    dgain = (_flat2(grad) * _flat2(xhat)).sum(axis=0)
    dbias = _flat2(grad).sum(axis=0)
    dxhat = grad * gain
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(grad, x):
    return grad * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(grad, out):
    """Backward through sigmoid given the forward *output*."""
    return grad * out * (1.0 - out)


def softmax_row(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_row_backward(grad, out):
    """Backward through softmax given the forward *output*."""
    dot = (grad * out).sum(axis=-1, keepdims=True)
    return out * (grad - dot)


def mean_rows(x: np.ndarray) -> np.ndarray:
    """Mean over the row axis: (..., K, F) -> (..., F)."""
    x = np.asarray(x)
    if x.ndim < 2:
        raise DimensionError(f"mean_rows expects at least 2 axes, got shape {x.shape}")
    return x.mean(axis=-2)


def mean_rows_backward(grad, n_rows: int):
    grad = np.asarray(grad)
    return np.repeat(np.expand_dims(grad / n_rows, -2), n_rows, axis=-2)


def concat(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Concatenate two vectors end to end."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 1 or b.ndim != 1:
        raise DimensionError(
            f"concat expects vectors, got shapes {a.shape} and {b.shape}"
        )
    return np.concatenate([a, b])


def dropout(x, rate: float, train: bool, rng: np.random.Generator | None = None):
    """Inverted dropout. Returns ``(output, mask)``; mask is None when inactive.

    In training mode each entry is kept with probability ``1 - rate`` and
    scaled by ``1 / (1 - rate)`` so the expectation matches inference mode,
    which is the identity.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = np.asarray(x)
    if not train or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout requires an rng")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


def dropout_backward(grad, mask):
    return grad if mask is None else grad * mask
