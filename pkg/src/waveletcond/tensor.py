"""Dense real tensors with a minimal reverse-mode gradient tape.

The op set is deliberately closed: every differentiable primitive defined
here carries a hand-written backward rule, and the test suite verifies each
one against central finite differences.  Tensors are immutable values after
construction; training replaces parameter tensors instead of mutating them.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

_DTYPE_NAMES = {"f64": np.float64, "f32": np.float32}


def set_default_dtype(name: str) -> None:
    """Set the global default precision ("f64" or "f32").

    Gradient checks are only reliable at f64; f32 exists for speed.
    """
    global DEFAULT_DTYPE
    if name not in _DTYPE_NAMES:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_DTYPE_NAMES)}")
    DEFAULT_DTYPE = _DTYPE_NAMES[name]


class Tensor:
    """N-dimensional real array with shape metadata, row-major storage.

    A tensor produced by an operation keeps references to its parent tensors
    and a closure that routes upstream gradients to them; `backward()` walks
    that record in reverse topological order.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.array(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
        arr.setflags(write=False)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None
        self.name = name

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"],
                 backward_fn: Callable[[np.ndarray], None]) -> "Tensor":
        """Wrap an op result; records the tape edge only if a parent needs grad."""
        out = cls.__new__(cls)
        arr = np.asarray(data)
        try:
            arr.setflags(write=False)
        except ValueError:
            pass  # read-only view of an already-frozen buffer
        out.data = arr
        out.grad = None
        out.name = None
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward_fn = None
        return out

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def to_numpy(self) -> np.ndarray:
        return np.array(self.data)

    def __repr__(self) -> str:
        head = f"Tensor(shape={self.shape}, dtype={self.data.dtype}"
        if self.name:
            head += f", name={self.name!r}"
        return head + ")"

    # -- gradient accumulation ----------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros(self.data.shape, dtype=self.data.dtype)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar node, filling `.grad` on the graph."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones(self.data.shape, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return ew_mul(self, other)

    def __rmul__(self, other):
        return ew_mul(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tslice(self, key)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _sum_to_scalar_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Collapse a broadcast gradient back onto a single-element operand."""
    return np.sum(g).reshape(shape).astype(g.dtype, copy=False)


def _is_scalar_like(t: Tensor) -> bool:
    return t.data.size == 1


# -- elementwise & linear primitives ------------------------------------------


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum; one operand may be a scalar (python number or 1-element tensor)."""
    b = as_tensor(b)
    if a.shape != b.shape and not (_is_scalar_like(a) or _is_scalar_like(b)):
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out_data = a.data + b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad or a._parents:
            a._accumulate(g if a.shape == g.shape else _sum_to_scalar_shape(g, a.shape))
        if b.requires_grad or b._parents:
            b._accumulate(g if b.shape == g.shape else _sum_to_scalar_shape(g, b.shape))

    return Tensor._from_op(out_data, (a, b), backward)


def ew_mul(a: Tensor, b) -> Tensor:
    """Elementwise product; one operand may be a scalar."""
    b = as_tensor(b)
    if a.shape != b.shape and not (_is_scalar_like(a) or _is_scalar_like(b)):
        raise ValueError(f"ew_mul: shape mismatch {a.shape} vs {b.shape}")
    out_data = a.data * b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad or a._parents:
            ga = g * b.data
            a._accumulate(ga if a.shape == ga.shape else _sum_to_scalar_shape(ga, a.shape))
        if b.requires_grad or b._parents:
            gb = g * a.data
            b._accumulate(gb if b.shape == gb.shape else _sum_to_scalar_shape(gb, b.shape))

    return Tensor._from_op(out_data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar constant (no gradient for the constant)."""
    s = float(s)
    out_data = a.data * s

    def backward(g: np.ndarray) -> None:
        a._accumulate(g * s)

    return Tensor._from_op(out_data, (a,), backward)


def sub(a: Tensor, b) -> Tensor:
    return add(a, scale(as_tensor(b), -1.0))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard 2-D matrix product."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ: {a.shape} vs {b.shape}")
    out_data = a.data @ b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad or a._parents:
            a._accumulate(g @ b.data.T)
        if b.requires_grad or b._parents:
            b._accumulate(a.data.T @ g)

    return Tensor._from_op(out_data, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map on rows: x[n,k] @ w[k,m] + b[m]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ValueError(f"linear: bad ranks x{x.shape} w{w.shape} b{b.shape}")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ValueError(f"linear: incompatible shapes x{x.shape} w{w.shape} b{b.shape}")
    out_data = x.data @ w.data + b.data

    def backward(g: np.ndarray) -> None:
        if x.requires_grad or x._parents:
            x._accumulate(g @ w.data.T)
        if w.requires_grad or w._parents:
            w._accumulate(x.data.T @ g)
        if b.requires_grad or b._parents:
            b._accumulate(g.sum(axis=0))

    return Tensor._from_op(out_data, (x, w, b), backward)


def channel_linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Mix channels at every (batch, spatial) position: out[n,o,i,j] = sum_c w[o,c] x[n,c,i,j] + b[o]."""
    if x.data.ndim != 4:
        raise ValueError(f"channel_linear: expected 4-D input, got {x.shape}")
    c = x.shape[1]
    if w.shape != (c, c) and (w.data.ndim != 2 or w.shape[1] != c):
        raise ValueError(f"channel_linear: weight {w.shape} does not match channel count {c}")
    if b.shape != (w.shape[0],):
        raise ValueError(f"channel_linear: bias {b.shape} does not match weight rows {w.shape[0]}")
    out_data = np.einsum("oc,ncij->noij", w.data, x.data) + b.data[None, :, None, None]

    def backward(g: np.ndarray) -> None:
        if x.requires_grad or x._parents:
            x._accumulate(np.einsum("oc,noij->ncij", w.data, g))
        if w.requires_grad or w._parents:
            w._accumulate(np.einsum("noij,ncij->oc", g, x.data))
        if b.requires_grad or b._parents:
            b._accumulate(g.sum(axis=(0, 2, 3)))

    return Tensor._from_op(out_data, (x, w, b), backward)


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, numerically stable for any finite input."""
    x = as_tensor(x)
    d = x.data
    out_data = np.empty_like(d)
    pos = d >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * out_data * (1.0 - out_data))

    return Tensor._from_op(out_data, (x,), backward)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0.0)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * (x.data > 0.0))

    return Tensor._from_op(out_data, (x,), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor; each output row sums to 1."""
    if x.data.ndim != 2:
        raise ValueError(f"softmax_rows: expected 2-D input, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=1, keepdims=True)

    def backward(g: np.ndarray) -> None:
        dot = np.sum(g * out_data, axis=1, keepdims=True)
        x._accumulate(out_data * (g - dot))

    return Tensor._from_op(out_data, (x,), backward)


# -- reductions ---------------------------------------------------------------


def sum_all(x: Tensor) -> Tensor:
    out_data = np.asarray(x.data.sum())

    def backward(g: np.ndarray) -> None:
        x._accumulate(np.full(x.data.shape, float(g), dtype=x.data.dtype))

    return Tensor._from_op(out_data, (x,), backward)


def mean_pool_all(x: Tensor) -> Tensor:
    """Arithmetic mean of every entry, as a scalar tensor."""
    x = as_tensor(x)
    if x.data.size == 0:
        raise ValueError("mean_pool_all: empty tensor")
    n = x.data.size
    out_data = np.asarray(x.data.mean())

    def backward(g: np.ndarray) -> None:
        x._accumulate(np.full(x.data.shape, float(g) / n, dtype=x.data.dtype))

    return Tensor._from_op(out_data, (x,), backward)


# -- shape manipulation ---------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out_data = x.data.reshape(shape)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g.reshape(x.data.shape))

    return Tensor._from_op(out_data, (x,), backward)


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)
    out_data = x.data.transpose(axes)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g.transpose(inv))

    return Tensor._from_op(out_data, (x,), backward)


def transpose2d(x: Tensor) -> Tensor:
    return permute(x, (1, 0))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: empty input list")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad or t._parents:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return Tensor._from_op(out_data, tuple(tensors), backward)


def tslice(x: Tensor, key) -> Tensor:
    """Basic indexing (ints and slices); gradient scatters back into place."""
    out_data = x.data[key]

    def backward(g: np.ndarray) -> None:
        gx = np.zeros(x.data.shape, dtype=x.data.dtype)
        gx[key] = g
        x._accumulate(gx)

    return Tensor._from_op(out_data, (x,), backward)


# -- convolution & resampling ----------------------------------------------------


def conv3x3(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """3x3 correlation with zero padding 1; stride 1 or 2. x: (n,c,h,w), w: (co,c,3,3)."""
    if stride not in (1, 2):
        raise ValueError(f"conv3x3: stride must be 1 or 2, got {stride}")
    if x.data.ndim != 4 or w.data.ndim != 4 or w.shape[2:] != (3, 3):
        raise ValueError(f"conv3x3: bad shapes x{x.shape} w{w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"conv3x3: channel mismatch x{x.shape} w{w.shape}")
    n, c, h, wd = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (n, c, ho, wo, 3, 3)
    out_data = np.einsum("ncijuv,ocuv->noij", win, w.data)
    ho, wo = out_data.shape[2], out_data.shape[3]

    def backward(g: np.ndarray) -> None:
        if w.requires_grad or w._parents:
            w._accumulate(np.einsum("noij,ncijuv->ocuv", g, win))
        if x.requires_grad or x._parents:
            gxp = np.zeros_like(xp)
            for u in range(3):
                for v in range(3):
                    contrib = np.einsum("noij,oc->ncij", g, w.data[:, :, u, v])
                    gxp[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride] += contrib
            x._accumulate(gxp[:, :, 1:1 + h, 1:1 + wd])

    return Tensor._from_op(out_data, (x, w), backward)


def add_channel_bias(x: Tensor, v: Tensor) -> Tensor:
    """Add v[c] to every (batch, spatial) position of x: (n,c,h,w) + (c,)."""
    if x.data.ndim != 4 or v.data.ndim != 1 or x.shape[1] != v.shape[0]:
        raise ValueError(f"add_channel_bias: bad shapes x{x.shape} v{v.shape}")
    out_data = x.data + v.data[None, :, None, None]

    def backward(g: np.ndarray) -> None:
        if x.requires_grad or x._parents:
            x._accumulate(g)
        if v.requires_grad or v._parents:
            v._accumulate(g.sum(axis=(0, 2, 3)))

    return Tensor._from_op(out_data, (x, v), backward)


def nearest_upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of the trailing two dimensions."""
    if x.data.ndim != 4:
        raise ValueError(f"nearest_upsample2: expected 4-D input, got {x.shape}")
    out_data = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    n, c, h, wd = x.shape

    def backward(g: np.ndarray) -> None:
        x._accumulate(g.reshape(n, c, h, 2, wd, 2).sum(axis=(3, 5)))

    return Tensor._from_op(out_data, (x,), backward)


# -- optimizer ----------------------------------------------------------------


class AdamState:
    """First/second moment accumulators for one parameter set."""

    def __init__(self, params: dict[str, Tensor]):
        self.m = {k: np.zeros(p.shape, dtype=p.data.dtype) for k, p in params.items()}
        self.v = {k: np.zeros(p.shape, dtype=p.data.dtype) for k, p in params.items()}
        self.step = 0


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> dict[str, Tensor]:
    """One bias-corrected Adam update; returns fresh parameter tensors.

    Parameters missing from `grads` (or with None grad) are carried over
    unchanged; state is advanced in place.
    """
    if lr <= 0.0:
        raise ValueError(f"adam_step: lr must be positive, got {lr}")
    state.step += 1
    t = state.step
    new_params: dict[str, Tensor] = {}
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros(p.shape, dtype=p.data.dtype)
        if g.shape != p.shape:
            raise ValueError(f"adam_step: grad shape {g.shape} != param shape {p.shape} for {k!r}")
        m = state.m[k]
        v = state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
        fresh = Tensor(new_data, requires_grad=p.requires_grad, dtype=p.data.dtype)
        fresh.name = p.name
        new_params[k] = fresh
    return new_params


def collect_grads(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Read accumulated gradients off parameter tensors; zeros where detached."""
    out = {}
    for k, p in params.items():
        out[k] = p.grad if p.grad is not None else np.zeros(p.shape, dtype=p.data.dtype)
    return out
