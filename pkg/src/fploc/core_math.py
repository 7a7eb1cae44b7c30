"""Dense float64 numerics used by the graph, model and training code.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. Every public
function returns a fresh array and leaves its inputs untouched.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import LabelError, NumericError, ShapeError

PROB_CLIP = 1e-12


def as_matrix(x) -> np.ndarray:
    """Coerce ``x`` to a finite 2-D float64 array (row vectors for 1-D input)."""
    a = np.array(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    check_finite(a, "matrix")
    return a


def check_finite(a: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {what}")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return check_finite(a @ b, "matmul result")


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_mask(pre: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is taken as 0
    return (pre > 0.0).astype(np.float64)


def softmax_row(z, K: int | None = None) -> np.ndarray:
    """Numerically safe softmax of one logit vector.

    The maximum logit is subtracted first, so any finite input works,
    including very large shared offsets such as ``[1000, 1000]``.
    """
    z = np.asarray(z, dtype=np.float64).ravel()
    if K is not None and z.size != K:
        raise ShapeError(f"expected {K} logits, got {z.size}")
    if z.size < 1:
        raise ShapeError("softmax needs at least one logit")
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a (batch, K) logit matrix."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(pred, target_index: int) -> float:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    if not 0 <= target_index < pred.size:
        raise LabelError(f"target index {target_index} outside [0, {pred.size})")
    return float(-np.log(pred[target_index] + PROB_CLIP))


def log_sum_exp(z) -> float:
    z = np.asarray(z, dtype=np.float64).ravel()
    m = z.max()
    return float(m + np.log(np.exp(z - m).sum()))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, param: np.ndarray, **hyper) -> "AdamState":
        return cls(np.zeros_like(param, dtype=np.float64), np.zeros_like(param, dtype=np.float64), **hyper)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update.

    Returns the new parameter and a new state; neither input is modified, so a
    recorded trajectory can be replayed exactly.
    """
    if param.shape != grad.shape or state.m.shape != param.shape or state.v.shape != param.shape:
        raise ShapeError(
            f"adam shapes disagree: param {param.shape}, grad {grad.shape}, "
            f"m {state.m.shape}, v {state.v.shape}"
        )
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_param = param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    check_finite(new_param, "adam update")
    new_state = AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps)
    return new_param, new_state


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator; the same seed always gives the same draws."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def finite_diff_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``, one entry at a time."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x.copy())
        flat[i] = orig - h
        fm = f(x.copy())
        flat[i] = orig
        g[i] = (fp - fm) / (2.0 * h)
    return grad
