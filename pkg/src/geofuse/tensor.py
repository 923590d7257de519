"""Dense float64 tensors with reverse-mode differentiation on an explicit tape.

Ops record onto the innermost active ``Tape`` (a context manager). ``backward``
seeds a scalar loss with gradient 1.0 and walks the tape in reverse, summing
gradients where a value fans out into several consumers. A tape can be walked
once; building the next step's graph requires a fresh tape.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, TapeError

_TAPE_STACK: list["Tape"] = []


def _active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """Numpy-backed value node. ``grad`` is populated by ``backward``."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar. Non-Tensor operands are treated as constants.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return multiply_elementwise(self, other)

    def __rmul__(self, other):
        return multiply_elementwise(other, self)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


class Tape:
    """Ordered record of ops. Reverse traversal yields vector-Jacobian steps."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._records)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make_output(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap an op result, recording it if a tape is active and grads are needed."""
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._tape = tape
        tape._records.append((out, inputs, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape`` undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make_output(data, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make_output(data, (a, b), backward_fn)


def negate(a) -> Tensor:
    a = _as_tensor(a)

    def backward_fn(g):
        return (-g,)

    return _make_output(-a.data, (a,), backward_fn)


def multiply_elementwise(a, b) -> Tensor:
    """Hadamard product with broadcasting; used for gating and masking."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"multiply_elementwise: shapes {a.shape} and {b.shape} do not broadcast")

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make_output(data, (a, b), backward_fn)


def matmul(a, b) -> Tensor:
    """Batched matrix product ``(..., n, k) @ (k, m)``.

    The right operand is restricted to 2-D because every learned weight in the
    model is a plain matrix applied over leading batch dims.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if b.ndim != 2:
        raise ShapeError(f"matmul: right operand must be 2-D, got {b.shape}")
    if a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    data = a.data @ b.data

    def backward_fn(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _make_output(data, (a, b), backward_fn)


def left_multiply(matrix: np.ndarray, x, axis: int = -3) -> Tensor:
    """Contract a constant square matrix against one axis of ``x``.

    Used to apply a graph operator over the node axis of a (batch, node,
    time, channel) block. ``matrix`` is data, not a parameter: no gradient
    flows into it.
    """
    x = _as_tensor(x)
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"left_multiply: matrix must be square 2-D, got {m.shape}")
    ax = axis % x.ndim if x.ndim else 0
    if x.ndim == 0 or x.shape[ax] != m.shape[1]:
        raise ShapeError(f"left_multiply: axis {axis} of {x.shape} does not match {m.shape}")

    def apply(mat: np.ndarray, arr: np.ndarray) -> np.ndarray:
        out = np.tensordot(mat, arr, axes=([1], [ax]))
        return np.moveaxis(out, 0, ax)

    def backward_fn(g):
        return (apply(m.T, g),)

    return _make_output(apply(m, x.data), (x,), backward_fn)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    # Split by sign so exp never overflows.
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ep = np.exp(d[~pos])
    out[~pos] = ep / (1.0 + ep)

    def backward_fn(g):
        return (g * out * (1.0 - out),)

    return _make_output(out, (x,), backward_fn)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0

    def backward_fn(g):
        return (g * mask,)

    return _make_output(np.where(mask, x.data, 0.0), (x,), backward_fn)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    old = x.shape

    def backward_fn(g):
        return (g.reshape(old),)

    return _make_output(data, (x,), backward_fn)


def swap_axes(x, axis_a: int, axis_b: int) -> Tensor:
    x = _as_tensor(x)
    if not (-x.ndim <= axis_a < x.ndim and -x.ndim <= axis_b < x.ndim):
        raise ShapeError(f"swap_axes: axes ({axis_a}, {axis_b}) out of range for {x.shape}")

    def backward_fn(g):
        return (np.swapaxes(g, axis_a, axis_b),)

    return _make_output(np.swapaxes(x.data, axis_a, axis_b), (x,), backward_fn)


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous window ``[start, stop)`` along one axis."""
    x = _as_tensor(x)
    ax = axis % x.ndim if x.ndim else 0
    if x.ndim == 0:
        raise ShapeError("slice_axis: cannot slice a scalar")
    n = x.shape[ax]
    if not (0 <= start < stop <= n):
        raise ShapeError(f"slice_axis: window [{start}, {stop}) invalid for axis of length {n}")
    index = tuple(slice(start, stop) if i == ax else slice(None) for i in range(x.ndim))
    xshape = x.shape

    def backward_fn(g):
        full = np.zeros(xshape, dtype=np.float64)
        full[index] = g
        return (full,)

    return _make_output(x.data[index].copy(), (x,), backward_fn)


def concat_channels(tensors) -> Tensor:
    """Concatenate along the last axis."""
    ts = tuple(_as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeError("concat_channels: need at least one tensor")
    lead = ts[0].shape[:-1]
    for t in ts[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(
                f"concat_channels: leading dims differ, {ts[0].shape} vs {t.shape}")
    widths = [t.shape[-1] for t in ts]
    offsets = np.cumsum([0] + widths)

    def backward_fn(g):
        return tuple(g[..., offsets[i]:offsets[i + 1]] for i in range(len(ts)))

    return _make_output(np.concatenate([t.data for t in ts], axis=-1), ts, backward_fn)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)
    xshape = x.shape

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, xshape).astype(np.float64, copy=True),)
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(a % len(xshape) for a in axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, xshape).astype(np.float64, copy=True),)

    return _make_output(data, (x,), backward_fn)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    count = x.size if axis is None else np.prod(
        [x.shape[a % x.ndim] for a in (axis if isinstance(axis, tuple) else (axis,))])
    return multiply_elementwise(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def conv1d_time(x, kernel) -> Tensor:
    """Valid 1-D convolution along the second-to-last axis.

    ``x``: (..., T, C_in), ``kernel``: (f, C_in, C_out) -> (..., T-f+1, C_out).
    Implemented as a sum of shifted matmuls; f is small (2..4) in practice.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if kernel.ndim != 3:
        raise ShapeError(f"conv1d_time: kernel must be (f, C_in, C_out), got {kernel.shape}")
    if x.ndim < 2 or x.shape[-1] != kernel.shape[1]:
        raise ShapeError(f"conv1d_time: input {x.shape} does not match kernel {kernel.shape}")
    f = kernel.shape[0]
    t_in = x.shape[-2]
    if t_in < f:
        raise ShapeError(f"conv1d_time: time axis {t_in} shorter than kernel {f}")
    t_out = t_in - f + 1
    c_out = kernel.shape[2]

    data = np.zeros(x.shape[:-2] + (t_out, c_out), dtype=np.float64)
    for d in range(f):
        data += x.data[..., d:d + t_out, :] @ kernel.data[d]

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        gk = np.zeros_like(kernel.data)
        g2 = g.reshape(-1, c_out)
        for d in range(f):
            gx[..., d:d + t_out, :] += g @ kernel.data[d].T
            window = x.data[..., d:d + t_out, :].reshape(-1, x.shape[-1])
            gk[d] = window.T @ g2
        return gx, gk

    return _make_output(data, (x, kernel), backward_fn)


def dropout(x, rate: float, training: bool, rng) -> Tensor:
    """Inverted dropout. Identity when not training or rate is 0.

    ``rng`` is an integer seed or a ``numpy.random.Generator``; the mask is
    fully determined by it, so a seeded run is reproducible.
    """
    x = _as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    mask = (gen.random(x.shape) >= rate) / (1.0 - rate)
    return multiply_elementwise(x, mask)


def backward(loss: Tensor) -> None:
    """Seed a scalar loss with gradient 1 and accumulate grads down the tape."""
    if loss.size != 1:
        raise TapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise TapeError("backward: loss was not recorded on any tape")
    if tape._spent:
        raise TapeError("backward: tape already walked; build a new tape per step")
    tape._spent = True

    loss.grad = np.ones_like(loss.data)
    for out, inputs, backward_fn in reversed(tape._records):
        g = out.grad
        if g is None:
            continue
        grads = backward_fn(g)
        for t, gt in zip(inputs, grads):
            if gt is None or not t.requires_grad:
                continue
            if t.grad is None:
                t.grad = gt.astype(np.float64, copy=True)
            else:
                t.grad = t.grad + gt
