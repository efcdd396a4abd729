"""Dense-network kernels with exact manual gradients, plus the optimizers.

Everything is float64 and pure: forward passes return caches, backward
passes consume them, optimizer steps return fresh arrays. Every backward
here is validated against `finite_diff_grad` in the test suite. No ML
framework is used.

Shapes: a sample is a 1-D vector; a batch is a 2-D array of row samples.
All kernels accept either.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class NumericError(Exception):
    """A non-finite value surfaced where the math requires finite input."""


# ---------------------------------------------------------------------------
# layers


@dataclass(frozen=True)
class DenseLayer:
    """y = W x + b with W of shape (out, in) and b of shape (out,)."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.ndim != 1 or self.W.shape[0] != self.b.shape[0]:
            raise ValueError(f"inconsistent dense shapes W{self.W.shape} b{self.b.shape}")


@dataclass(frozen=True)
class LayerNormParams:
    """Affine layer normalization: y = g * (x - mean) / sqrt(var + eps) + beta."""

    g: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        if self.g.shape != self.beta.shape or self.g.ndim != 1:
            raise ValueError(f"inconsistent norm shapes g{self.g.shape} beta{self.beta.shape}")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


def xavier_init(fan_in: int, fan_out: int, seed) -> np.ndarray:
    """Uniform on +-sqrt(6 / (fan_in + fan_out)), shape (fan_out, fan_in)."""
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError("fans must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_dense(fan_in: int, fan_out: int, rng) -> DenseLayer:
    return DenseLayer(W=xavier_init(fan_in, fan_out, rng), b=np.zeros(fan_out))


def init_layer_norm(dim: int, eps: float = 1e-5) -> LayerNormParams:
    return LayerNormParams(g=np.ones(dim), beta=np.zeros(dim), eps=eps)


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != layer.W.shape[1]:
        raise ValueError(f"dense input dim {x.shape[-1]} != {layer.W.shape[1]}")
    return x @ layer.W.T + layer.b


def dense_backward(layer: DenseLayer, x: np.ndarray, dy: np.ndarray):
    """Returns (dx, dW, db) for y = W x + b."""
    if dy.shape[-1] != layer.W.shape[0]:
        raise ValueError(f"dense grad dim {dy.shape[-1]} != {layer.W.shape[0]}")
    if x.ndim == 1:
        dW = np.outer(dy, x)
        db = dy.copy()
    else:
        dW = dy.T @ x
        db = dy.sum(axis=0)
    dx = dy @ layer.W
    return dx, dW, db


# ---------------------------------------------------------------------------
# activations


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, dy):
    # subgradient at 0 is defined as 0
    return np.where(x > 0.0, dy, 0.0)


def tanh(x):
    return np.tanh(x)


def tanh_backward(x, dy):
    t = np.tanh(x)
    return dy * (1.0 - t * t)


def sigmoid(x):
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out[0]) if scalar else out


def sigmoid_backward(x, dy):
    s = sigmoid(x)
    return dy * s * (1.0 - s)


ACTIVATIONS = {
    "relu": (relu, relu_backward),
    "tanh": (tanh, tanh_backward),
    "sigmoid": (sigmoid, sigmoid_backward),
}


def activation(kind: str, x: np.ndarray) -> np.ndarray:
    return ACTIVATIONS[kind][0](x)


def activation_backward(kind: str, x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return ACTIVATIONS[kind][1](x, dy)


def l2_normalize_forward(x: np.ndarray, eps: float = 1e-12):
    """Project rows onto the unit sphere; returns (y, cache)."""
    norm = np.sqrt(np.maximum((x * x).sum(axis=-1, keepdims=True), eps * eps))
    y = x / norm
    return y, (y, norm)


def l2_normalize_backward(cache, dy: np.ndarray) -> np.ndarray:
    y, norm = cache
    return (dy - y * (dy * y).sum(axis=-1, keepdims=True)) / norm


# ---------------------------------------------------------------------------
# layer normalization


def layer_norm_forward(params: LayerNormParams, x: np.ndarray):
    """Population mean/variance over the feature (last) axis. Needs dim >= 2."""
    if x.shape[-1] < 2:
        raise ValueError("layer norm needs a feature dim of at least 2")
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + params.eps)
    x_hat = (x - mean) * inv_std
    y = params.g * x_hat + params.beta
    cache = (x_hat, inv_std)
    return y, cache


def layer_norm_backward(params: LayerNormParams, cache, dy: np.ndarray):
    """Returns (dx, dg, dbeta)."""
    x_hat, inv_std = cache
    d = x_hat.shape[-1]
    sum_axes = tuple(range(dy.ndim - 1))
    dg = (dy * x_hat).sum(axis=sum_axes)
    dbeta = dy.sum(axis=sum_axes)
    dxhat = dy * params.g
    dx = inv_std / d * (
        d * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - x_hat * (dxhat * x_hat).sum(axis=-1, keepdims=True)
    )
    return dx, dg, dbeta


# ---------------------------------------------------------------------------
# parameter flattening and checkpoints


def pack_params(arrays: list[np.ndarray]) -> np.ndarray:
    """Concatenate arrays into one flat float64 vector (stable layout)."""
    if not arrays:
        return np.zeros(0)
    return np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])


def unpack_params(vec: np.ndarray, shapes: list[tuple[int, ...]]) -> list[np.ndarray]:
    out = []
    offset = 0
    for shape in shapes:
        size = int(np.prod(shape)) if shape else 1
        out.append(vec[offset : offset + size].reshape(shape).copy())
        offset += size
    if offset != vec.size:
        raise ValueError(f"vector of size {vec.size} does not match layout ({offset})")
    return out


_CKPT_MAGIC = b"MELCKPT1"


def save_checkpoint(path: str | Path, header: dict, arrays: list[np.ndarray]) -> None:
    """Versioned binary checkpoint: magic, JSON header, little-endian float64 data."""
    vec = pack_params(arrays)
    full_header = dict(header)
    full_header["layout"] = [list(np.asarray(a).shape) for a in arrays]
    header_bytes = json.dumps(full_header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(_CKPT_MAGIC)
    buf.write(struct.pack("<I", len(header_bytes)))
    buf.write(header_bytes)
    buf.write(vec.astype("<f8").tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path):
    """Returns (header, arrays) with arrays restored in ParamVector order."""
    raw = Path(path).read_bytes()
    if raw[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    offset = len(_CKPT_MAGIC)
    (header_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    header = json.loads(raw[offset : offset + header_len].decode("utf-8"))
    offset += header_len
    vec = np.frombuffer(raw, dtype="<f8", offset=offset).astype(np.float64)
    shapes = [tuple(s) for s in header["layout"]]
    return header, unpack_params(vec, shapes)


# ---------------------------------------------------------------------------
# optimizers


def sgd_momentum_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: list[np.ndarray] | None,
    lr: float,
    momentum: float = 0.9,
):
    """Classical momentum: v <- mu v - lr g; p <- p + v.

    Returns (new_params, new_state); inputs are not mutated.
    """
    if state is None:
        state = [np.zeros_like(p) for p in params]
    new_params = []
    new_state = []
    for p, g, v in zip(params, grads, state):
        if p.shape != g.shape:
            raise ValueError(f"param/grad shape mismatch {p.shape} vs {g.shape}")
        v_new = momentum * v - lr * g
        new_state.append(v_new)
        new_params.append(p + v_new)
    return new_params, new_state


@dataclass
class LbfgsResult:
    x: np.ndarray
    fx: float
    grad_norm: float
    iterations: int
    converged: bool


def lbfgs_minimize(
    fun,
    x0: np.ndarray,
    history: int = 10,
    step_scale: float = 1e-5,
    max_iters: int = 100,
    tol: float = 1e-8,
) -> LbfgsResult:
    """Two-loop-recursion L-BFGS with Armijo backtracking.

    ``fun(x)`` returns (f, grad). The accepted displacement is
    step_scale * t * d where t is the backtracked step and d the two-loop
    direction. Stops when ||grad||_inf <= tol or after max_iters.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    fx, g = fun(x)
    if not np.isfinite(fx) or not np.all(np.isfinite(g)):
        raise NumericError(f"non-finite objective at x0 (f={fx})")

    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    iterations = 0

    for iterations in range(1, max_iters + 1):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm <= tol:
            return LbfgsResult(x, float(fx), gnorm, iterations - 1, True)

        d = -_two_loop_direction(g, s_hist, y_hist)
        gd = float(g @ d)
        if gd >= 0.0:
            d = -g
            gd = float(g @ d)

        t = 1.0
        accepted = False
        while t >= 1e-12:
            alpha = step_scale * t
            x_new = x + alpha * d
            f_new, g_new = fun(x_new)
            if not np.isfinite(f_new) or not np.all(np.isfinite(g_new)):
                raise NumericError(
                    f"non-finite objective during line search (iter {iterations}, t={t})"
                )
            if f_new <= fx + 1e-4 * alpha * gd:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return LbfgsResult(x, float(fx), gnorm, iterations, False)

        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > history:
                s_hist.pop(0)
                y_hist.pop(0)
        x, fx, g = x_new, f_new, g_new

    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    return LbfgsResult(x, float(fx), gnorm, iterations, gnorm <= tol)


def _two_loop_direction(g: np.ndarray, s_hist, y_hist) -> np.ndarray:
    """H grad via the standard two-loop recursion over stored (s, y) pairs."""
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        q -= a * y
        alphas.append((rho, a))
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(s @ y) / float(y @ y)
    else:
        # first iteration: unit-length step along the steepest descent
        norm = float(np.linalg.norm(q))
        if norm > 1.0:
            q /= norm
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        beta = rho * float(y @ q)
        q += (a - beta) * s
    return q


def finite_diff_grad(fun, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient estimate, one coordinate at a time."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.ascontiguousarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = fun(x)
        flat[i] = orig - h
        f_minus = fun(x)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad
