"""Dense float64 tensors with tape-based reverse-mode differentiation.

The execution model is define-by-run: a Tape is created per forward pass,
operations record themselves while computing, and Tape.backward walks the
records in reverse. Every op is a plain function taking an optional
``tape`` argument; with ``tape=None`` (or when no input is linked to a
tape) the op runs as pure numpy, which is the fast path used by eval-mode
inference.

Tensors are immutable values: the wrapped array is marked read-only and
ops never write into their inputs.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError, EncodingError

Array = np.ndarray
BackwardFn = Callable[[Array], tuple[Array | None, ...]]


class Tensor:
    """Immutable n-dimensional float64 value, optionally linked to a tape node."""

    __slots__ = ("values", "node_id")

    def __init__(self, values, node_id: int | None = None):
        arr = np.array(values, dtype=np.float64)
        arr.setflags(write=False)
        self.values = arr
        self.node_id = node_id

    @classmethod
    def _wrap(cls, arr: Array, node_id: int | None = None) -> "Tensor":
        # Internal fast path for freshly allocated arrays: no defensive copy.
        t = object.__new__(cls)
        arr.setflags(write=False)
        t.values = arr
        t.node_id = node_id
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.values.shape}, node_id={self.node_id})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class TapeNode:
    __slots__ = ("op", "input_ids", "output_id", "saved", "backward")

    def __init__(self, op: str, input_ids: tuple[int | None, ...], output_id: int,
                 saved: tuple, backward: BackwardFn):
        self.op = op
        self.input_ids = input_ids
        self.output_id = output_id
        self.saved = saved
        self.backward = backward


class Tape:
    """Recorded computation in topological (creation) order."""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.grads: dict[int, Tensor] = {}
        self._next_id = 0

    def _new_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def leaf(self, values) -> Tensor:
        """Register an input (parameter or constant-with-gradient) on this tape."""
        src = values.values if isinstance(values, Tensor) else values
        return Tensor(src, node_id=self._new_id())

    def record(self, op: str, inputs: Sequence[Tensor], out_values: Array,
               backward: BackwardFn, saved: tuple = ()) -> Tensor:
        nid = self._new_id()
        ids = tuple(t.node_id for t in inputs)
        self.nodes.append(TapeNode(op, ids, nid, saved, backward))
        return Tensor._wrap(out_values, node_id=nid)

    def backward(self, loss: Tensor) -> dict[int, Tensor]:
        """Reverse sweep from a scalar loss; returns gradients for every reachable node."""
        if loss.node_id is None:
            raise ContractError("loss tensor is not recorded on this tape")
        if loss.values.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.values.shape}")
        grads: dict[int, Array] = {loss.node_id: np.ones_like(loss.values)}
        for node in reversed(self.nodes):
            g = grads.get(node.output_id)
            if g is None:
                continue
            for iid, gi in zip(node.input_ids, node.backward(g)):
                if iid is None or gi is None:
                    continue
                prev = grads.get(iid)
                # never accumulate in place: closure outputs may alias each other
                grads[iid] = gi if prev is None else prev + gi
        self.grads = {nid: Tensor._wrap(g) for nid, g in grads.items()}
        return self.grads


def _apply(tape: Tape | None, op: str, inputs: Sequence[Tensor], out: Array,
           backward: BackwardFn, saved: tuple = ()) -> Tensor:
    if tape is None or all(t.node_id is None for t in inputs):
        return Tensor._wrap(out)
    return tape.record(op, inputs, out, backward, saved)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a gradient back to the shape of a broadcast operand."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and broadcasting primitives


def add(a, b, tape: Tape | None = None) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.values + b.values
    ash, bsh = a.shape, b.shape

    def bwd(g: Array):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _apply(tape, "add", (a, b), out, bwd)


def mul(a, b, tape: Tape | None = None) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.values * b.values
    av, bv = a.values, b.values

    def bwd(g: Array):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _apply(tape, "mul", (a, b), out, bwd)


def sub(a, b, tape: Tape | None = None) -> Tensor:
    return add(a, mul(b, -1.0, tape), tape)


def matmul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    out = a.values @ b.values
    av, bv = a.values, b.values

    def bwd(g: Array):
        return g @ bv.T, av.T @ g

    return _apply(tape, "matmul", (a, b), out, bwd)


def transpose(a: Tensor, tape: Tape | None = None) -> Tensor:
    if a.values.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    out = a.values.T

    def bwd(g: Array):
        return (g.T,)

    return _apply(tape, "transpose", (a,), out, bwd)


def slice_columns(a: Tensor, start: int, stop: int, tape: Tape | None = None) -> Tensor:
    if a.values.ndim != 2:
        raise DimensionError(f"slice_columns expects a matrix, got shape {a.shape}")
    out = a.values[:, start:stop]
    ash = a.shape

    def bwd(g: Array):
        full = np.zeros(ash)
        full[:, start:stop] = g
        return (full,)

    return _apply(tape, "slice_columns", (a,), out, bwd)


def slice_rows(a: Tensor, start: int, stop: int, tape: Tape | None = None) -> Tensor:
    if a.values.ndim != 2:
        raise DimensionError(f"slice_rows expects a matrix, got shape {a.shape}")
    out = a.values[start:stop]
    ash = a.shape

    def bwd(g: Array):
        full = np.zeros(ash)
        full[start:stop] = g
        return (full,)

    return _apply(tape, "slice_rows", (a,), out, bwd)


def concat_rows(parts: Sequence[Tensor], tape: Tape | None = None) -> Tensor:
    if not parts or any(p.values.ndim != 2 for p in parts):
        raise DimensionError("concat_rows expects one or more matrices")
    out = np.concatenate([p.values for p in parts], axis=0)
    heights = [p.shape[0] for p in parts]

    def bwd(g: Array):
        grads, row = [], 0
        for h in heights:
            grads.append(g[row:row + h])
            row += h
        return tuple(grads)

    return _apply(tape, "concat_rows", tuple(parts), out, bwd)


def concat_columns(parts: Sequence[Tensor], tape: Tape | None = None) -> Tensor:
    if not parts or any(p.values.ndim != 2 for p in parts):
        raise DimensionError("concat_columns expects one or more matrices")
    out = np.concatenate([p.values for p in parts], axis=1)
    widths = [p.shape[1] for p in parts]

    def bwd(g: Array):
        grads, col = [], 0
        for w in widths:
            grads.append(g[:, col:col + w])
            col += w
        return tuple(grads)

    return _apply(tape, "concat_columns", tuple(parts), out, bwd)


# ---------------------------------------------------------------------------
# nonlinearities


def _sigmoid_values(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor, tape: Tape | None = None) -> Tensor:
    a = _as_tensor(a)
    out = _sigmoid_values(a.values)
    y = out

    def bwd(g: Array):
        return (g * y * (1.0 - y),)

    return _apply(tape, "sigmoid", (a,), out, bwd)


_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def gelu(a: Tensor, tape: Tape | None = None) -> Tensor:
    """tanh-form Gaussian error linear unit."""
    a = _as_tensor(a)
    x = a.values
    inner = _GELU_C * (x + _GELU_A * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bwd(g: Array):
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * dinner),)

    return _apply(tape, "gelu", (a,), out, bwd)


def log(a: Tensor, tape: Tape | None = None) -> Tensor:
    a = _as_tensor(a)
    out = np.log(a.values)
    av = a.values

    def bwd(g: Array):
        return (g / av,)

    return _apply(tape, "log", (a,), out, bwd)


def clip(a: Tensor, lo: float, hi: float, tape: Tape | None = None) -> Tensor:
    """Clamp values; gradient passes only through the interior."""
    a = _as_tensor(a)
    out = np.clip(a.values, lo, hi)
    interior = (a.values > lo) & (a.values < hi)

    def bwd(g: Array):
        return (g * interior,)

    return _apply(tape, "clip", (a,), out, bwd)


def softmax(a: Tensor, axis: int = -1, tape: Tape | None = None) -> Tensor:
    a = _as_tensor(a)
    if a.values.ndim == 0 or a.values.shape[axis] == 0:
        raise DimensionError(f"softmax over empty axis {axis} of shape {a.shape}")
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    y = out

    def bwd(g: Array):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _apply(tape, "softmax", (a,), out, bwd)


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(a: Tensor, axis: int | None = None, tape: Tape | None = None) -> Tensor:
    a = _as_tensor(a)
    out = a.values.sum(axis=axis)
    ash = a.shape

    def bwd(g: Array):
        if axis is None:
            return (np.full(ash, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), ash).copy(),)

    return _apply(tape, "reduce_sum", (a,), np.asarray(out), bwd)


def mean(a: Tensor, axis: int | None = None, tape: Tape | None = None) -> Tensor:
    a = _as_tensor(a)
    out = a.values.mean(axis=axis)
    ash = a.shape
    count = a.values.size if axis is None else ash[axis]

    def bwd(g: Array):
        if axis is None:
            return (np.full(ash, g / count),)
        return (np.broadcast_to(np.expand_dims(g / count, axis), ash).copy(),)

    return _apply(tape, "mean", (a,), np.asarray(out), bwd)


# ---------------------------------------------------------------------------
# structured primitives


def embedding_lookup(table: Tensor, ids: Sequence[int] | Array, tape: Tape | None = None) -> Tensor:
    """Gather rows of ``table``; gradient scatter-adds back into the table."""
    table = _as_tensor(table)
    idx = np.asarray(ids, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise EncodingError(
            f"token id out of range [0, {table.shape[0]}): {int(idx.min())}..{int(idx.max())}")
    out = table.values[idx]
    tsh = table.shape

    def bwd(g: Array):
        gt = np.zeros(tsh)
        np.add.at(gt, idx, g)
        return (gt,)

    return _apply(tape, "embedding_lookup", (table,), out, bwd)


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           tape: Tape | None = None) -> Tensor:
    """Same-padded 1-d convolution over the time axis.

    x: T x D_in, kernel: W x D_in x D_out (W odd), bias: D_out or None.
    Output length equals input length; padding is zeros, (W-1)/2 each side.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.values.ndim != 2 or kernel.values.ndim != 3:
        raise DimensionError(
            f"conv1d expects T x D_in input and W x D_in x D_out kernel, got {x.shape} and {kernel.shape}")
    w_width, d_in, d_out = kernel.shape
    if w_width % 2 == 0:
        raise ConfigurationError(f"conv1d kernel width must be odd, got {w_width}")
    if x.shape[1] != d_in:
        raise DimensionError(f"conv1d channel mismatch: input {x.shape}, kernel {kernel.shape}")
    t_len = x.shape[0]
    pad = (w_width - 1) // 2
    xp = np.zeros((t_len + w_width - 1, d_in))
    xp[pad:pad + t_len] = x.values
    out = np.zeros((t_len, d_out))
    for w in range(w_width):
        out += xp[w:w + t_len] @ kernel.values[w]
    if bias is not None:
        out += bias.values
    kv = kernel.values

    def bwd(g: Array):
        gxp = np.zeros_like(xp)
        gk = np.zeros_like(kv)
        for w in range(w_width):
            gxp[w:w + t_len] += g @ kv[w].T
            gk[w] = xp[w:w + t_len].T @ g
        gx = gxp[pad:pad + t_len]
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=0)

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _apply(tape, "conv1d", inputs, out, bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-8,
               tape: Tape | None = None) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift.

    eps is small enough that normalized rows keep variance within 1e-6 of 1
    for any input row with variance above ~1e-2.
    """
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    mu = x.values.mean(axis=-1, keepdims=True)
    xc = x.values - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gain.values * xhat + bias.values
    n = x.shape[-1]
    gv = gain.values

    def bwd(g: Array):
        dxhat = g * gv
        dx = (inv / n) * (n * dxhat
                          - dxhat.sum(axis=-1, keepdims=True)
                          - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead) if lead else g * xhat
        dbias = g.sum(axis=lead) if lead else g
        return dx, np.asarray(dgain), np.asarray(dbias)

    return _apply(tape, "layer_norm", (x, gain, bias), out, bwd)
