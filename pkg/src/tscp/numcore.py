"""Small dense-tensor reverse-mode autodiff, limited to what the encoder needs.

Operations executed while a :class:`Graph` is active are recorded on it when
any input requires a gradient; :func:`backward` then sweeps the recorded ops
once, in exact reverse order.

    with Graph() as g:
        y = dense(x, W, b)
        loss = sum_all(relu(y))
    backward(loss, g)
    W.grad
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_local = threading.local()


class Tensor:
    """An n-d array with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if dtype is None:
            # float64 survives only when handed in as a numpy array or scalar
            keep64 = getattr(data, "dtype", None) == np.float64
            dtype = np.float64 if keep64 else DEFAULT_DTYPE
        arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = np.zeros_like(arr) if requires_grad else None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class _Op:
    __slots__ = ("name", "inputs", "output", "backward_fn")

    def __init__(self, name, inputs, output, backward_fn):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Graph:
    """Tape of differentiable operations for a single forward/backward pass."""

    def __init__(self):
        self.ops: list[_Op] = []
        self.swept = False
        self._prev: Graph | None = None

    def __enter__(self) -> "Graph":
        self._prev = getattr(_local, "graph", None)
        _local.graph = self
        return self

    def __exit__(self, *exc) -> None:
        _local.graph = self._prev
        self._prev = None

    def record(self, name: str, inputs: Sequence[Tensor], output: Tensor,
               backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> None:
        if self.swept:
            raise RuntimeError("graph already swept; start a new forward pass")
        self.ops.append(_Op(name, tuple(inputs), output, backward_fn))

    def __len__(self) -> int:
        return len(self.ops)


def current_graph() -> Graph | None:
    return getattr(_local, "graph", None)


def _result(name: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    graph = current_graph()
    out = Tensor(data)
    if needs and graph is not None:
        out.requires_grad = True
        graph.record(name, inputs, out, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor, graph: Graph) -> None:
    """Reverse sweep: fill ``.grad`` of every tensor that requires a gradient."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if graph.swept:
        raise RuntimeError("graph was already swept; run a new forward pass first")
    for op in graph.ops:
        for t in op.inputs:
            if t.requires_grad:
                t.grad = np.zeros_like(t.data)
        op.output.grad = np.zeros_like(op.output.data)
    graph.swept = True
    loss.grad = np.ones_like(loss.data)
    for op in reversed(graph.ops):
        grads = op.backward_fn(op.output.grad)
        for t, g in zip(op.inputs, grads):
            if g is None or not t.requires_grad:
                continue
            t.grad = t.grad + g.astype(t.data.dtype, copy=False)


# -- elementwise / reductions ------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _result("add", a.data + b.data, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    return _result("scale", a.data * a.data.dtype.type(s), (a,), lambda g: (g * s,))


def sum_all(a: Tensor) -> Tensor:
    return _result("sum", a.data.sum().reshape(()), (a,),
                   lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return _result("mean", (a.data.sum() / n).reshape(()), (a,),
                   lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g
    return _result("matmul", a.data @ b.data, (a, b), bw)


def dense(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``x @ W + b`` for ``x`` of shape [B, Fin]."""
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ValueError(f"dense shape mismatch: x{x.shape} W{W.shape} b{b.shape}")

    def bw(g):
        return g @ W.data.T, x.data.T @ g, g.sum(axis=0)
    return _result("dense", x.data @ W.data + b.data, (x, W, b), bw)


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    sizes = [t.shape[0] for t in tensors]
    edges = np.cumsum([0] + sizes)

    def bw(g):
        return [g[edges[i]:edges[i + 1]] for i in range(len(tensors))]
    return _result("concat", np.concatenate([t.data for t in tensors], axis=0), tuple(tensors), bw)


def take_rows(x: Tensor, start: int, stop: int) -> Tensor:
    def bw(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)
    return _result("take_rows", x.data[start:stop].copy(), (x,), bw)


def last_step(x: Tensor) -> Tensor:
    """[B, T, C] -> [B, C], the activation at the final time step."""
    def bw(g):
        full = np.zeros_like(x.data)
        full[:, -1, :] = g
        return (full,)
    return _result("last_step", x.data[:, -1, :].copy(), (x,), bw)


# -- convolution ---------------------------------------------------------------

def _im2col(x: np.ndarray, k: int, dilation: int) -> np.ndarray:
    B, T, C = x.shape
    pad = (k - 1) * dilation
    xp = np.zeros((B, T + pad, C), dtype=x.dtype)
    xp[:, pad:] = x
    # tap j reads lag j*dilation, i.e. padded offset (k-1-j)*dilation
    cols = np.empty((B, T, k, C), dtype=x.dtype)
    for j in range(k):
        off = (k - 1 - j) * dilation
        cols[:, :, j, :] = xp[:, off:off + T]
    return cols


def causal_dilated_conv1d(x: Tensor, weights: Tensor, bias: Tensor, dilation: int) -> Tensor:
    """Causal 1-d convolution over [B, T, Cin] with weights [k, Cin, Cout].

    ``out[b,t,o] = bias[o] + sum_j sum_c weights[j,c,o] * x[b, t - j*dilation, c]``
    with positions before 0 read as zero, so the output keeps length T.
    """
    if x.data.ndim != 3 or weights.data.ndim != 3:
        raise ValueError(f"conv1d expects x[B,T,C] and w[k,Cin,Cout], got {x.shape}, {weights.shape}")
    k, cin, cout = weights.shape
    B, T, C = x.shape
    if C != cin:
        raise ValueError(f"conv1d channel mismatch: input has {C}, weights expect {cin}")
    if bias.shape != (cout,):
        raise ValueError(f"conv1d bias shape {bias.shape} != ({cout},)")
    if k < 1 or dilation < 1:
        raise ValueError("kernel size and dilation must be >= 1")

    cols = _im2col(x.data, k, dilation).reshape(B * T, k * cin)
    w2 = weights.data.reshape(k * cin, cout)
    out = (cols @ w2 + bias.data).reshape(B, T, cout)

    def bw(g):
        g2 = g.reshape(B * T, cout)
        dw = (cols.T @ g2).reshape(k, cin, cout)
        db = g2.sum(axis=0)
        dcols = (g2 @ w2.T).reshape(B, T, k, cin)
        pad = (k - 1) * dilation
        dxp = np.zeros((B, T + pad, cin), dtype=g.dtype)
        for j in range(k):
            off = (k - 1 - j) * dilation
            dxp[:, off:off + T] += dcols[:, :, j, :]
        return dxp[:, pad:], dw, db

    return _result("conv1d", out, (x, weights, bias), bw)


# -- batch normalisation -------------------------------------------------------

class BatchNormState:
    """Running mean/variance of one batch-norm layer."""

    def __init__(self, features: int, dtype=DEFAULT_DTYPE):
        self.running_mean = np.zeros(features, dtype=dtype)
        self.running_var = np.ones(features, dtype=dtype)

    def copy(self) -> "BatchNormState":
        new = BatchNormState.__new__(BatchNormState)
        new.running_mean = self.running_mean.copy()
        new.running_var = self.running_var.copy()
        return new


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               training: bool, momentum: float = 0.99, epsilon: float = 1e-3) -> Tensor:
    """Batch normalisation over the batch axis of [B, F].

    Train mode uses (biased) batch statistics and folds them into ``state``
    with ``running = momentum * running + (1 - momentum) * batch``.
    """
    if x.data.ndim != 2:
        raise ValueError(f"batch_norm expects [B, F], got {x.shape}")
    B = x.shape[0]
    dt = x.dtype
    if training:
        if B < 2:
            raise ValueError("batch_norm in train mode needs a batch of at least 2")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        inv_std = (1.0 / np.sqrt(var + epsilon)).astype(dt)
        xhat = (x.data - mu) * inv_std
        state.running_mean = (momentum * state.running_mean + (1 - momentum) * mu).astype(state.running_mean.dtype)
        state.running_var = (momentum * state.running_var + (1 - momentum) * var).astype(state.running_var.dtype)

        def bw(g):
            dxhat = g * gamma.data
            dx = (inv_std / B) * (B * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            return dx, (g * xhat).sum(axis=0), g.sum(axis=0)
    else:
        inv_std = (1.0 / np.sqrt(state.running_var.astype(dt) + epsilon)).astype(dt)
        xhat = (x.data - state.running_mean.astype(dt)) * inv_std

        def bw(g):
            return g * gamma.data * inv_std, (g * xhat).sum(axis=0), g.sum(axis=0)

    out = gamma.data * xhat + beta.data
    return _result("batch_norm", out.astype(dt, copy=False), (x, gamma, beta), bw)


# -- contrastive helpers -------------------------------------------------------

def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-wise unit normalisation; all-zero rows stay zero."""
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    safe = np.maximum(norms, eps)
    y = x.data / safe
    live = norms > eps

    def bw(g):
        proj = (g * y).sum(axis=1, keepdims=True)
        dx = (g - y * proj) / safe
        return (np.where(live, dx, g / safe),)
    return _result("l2_normalize", y, (x,), bw)


def logsumexp_rows(x: Tensor) -> Tensor:
    m = x.data.max(axis=1, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=1, keepdims=True)
    out = (m + np.log(s)).reshape(-1)
    soft = e / s

    def bw(g):
        return (soft * g[:, None],)
    return _result("logsumexp", out, (x,), bw)


def diagonal(x: Tensor) -> Tensor:
    n = min(x.shape)
    idx = np.arange(n)

    def bw(g):
        full = np.zeros_like(x.data)
        full[idx, idx] = g
        return (full,)
    return _result("diag", x.data[idx, idx].copy(), (x,), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)
    return _result("sub", a.data - b.data, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    return _result("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))
