"""Dense-tensor reverse-mode autodiff on numpy arrays.

A Tensor wraps an ndarray plus an optional backward closure; the graph is
rebuilt on every forward pass and freed after backward().  Ops never mutate
an input array in place once it has been recorded.  Parameters are float32
by default; gradient checking casts everything to float64.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ParameterStore",
    "add", "sub", "mul", "div", "neg", "matmul",
    "relu", "prelu", "sigmoid", "exp", "log", "sqrt", "square",
    "tsum", "tmean",
    "reshape", "transpose", "pad1d", "concat", "slice_rows",
    "softmax", "log_softmax", "gather_rows", "dropout",
    "conv1d", "conv_transpose1d", "depthwise_conv1d", "conv2d",
    "embedding", "scaled_dot_attention",
    "grad_check", "GradCheckReport",
]


class Tensor:
    """An ndarray with an optional gradient and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _check: bool = True):
        arr = np.asarray(data)
        if arr.dtype.kind not in "fc":
            arr = arr.astype(np.float32)
        if _check:
            if not np.all(np.isfinite(arr)):
                raise ValueError("tensor data must be finite")
            if any(e < 1 for e in arr.shape):
                raise ValueError(f"tensor extents must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def backward(self):
        """Reverse-accumulate gradients from a scalar output."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node is not self and node._backward is not None:
                # interior node: graph is rebuilt per pass, free eagerly
                node.grad = None
                node._parents = ()
                node._backward = None

    # operator sugar
    def __add__(self, other):
        return add(self, _coerce(other, self))

    def __radd__(self, other):
        return add(_coerce(other, self), self)

    def __sub__(self, other):
        return sub(self, _coerce(other, self))

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self))

    def __rmul__(self, other):
        return mul(_coerce(other, self), self)

    def __truediv__(self, other):
        return div(self, _coerce(other, self))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _make(data: np.ndarray, parents, backward) -> Tensor:
    out = Tensor(data, _check=False)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))
    return _make(a.data + b.data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))
    return _make(a.data - b.data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))
    return _make(a.data * b.data, (a, b), back)


def div(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))
    return _make(a.data / b.data, (a, b), back)


def neg(a: Tensor) -> Tensor:
    def back(g):
        _accum(a, -g)
    return _make(-a.data, (a,), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(
            f"matmul inner dimension mismatch: {a.data.shape} @ {b.data.shape}")

    def back(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)
    return _make(a.data @ b.data, (a, b), back)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def back(g):
        _accum(a, g * mask)
    return _make(a.data * mask, (a,), back)


def prelu(a: Tensor, alpha: Tensor, channel_axis: int = 0) -> Tensor:
    """PReLU with one learnable slope per channel along channel_axis."""
    sl = [None] * a.data.ndim
    sl[channel_axis] = slice(None)
    alf = alpha.data[tuple(s if s is not None else np.newaxis for s in sl)]
    pos = a.data > 0
    out = np.where(pos, a.data, alf * a.data)

    def back(g):
        _accum(a, g * np.where(pos, 1.0, alf).astype(a.dtype))
        ga = g * np.where(pos, 0.0, a.data)
        axes = tuple(i for i in range(a.data.ndim) if i != channel_axis)
        _accum(alpha, ga.sum(axis=axes))
    return _make(out, (a, alpha), back)


def sigmoid(a: Tensor) -> Tensor:
    # branch on sign so neither tail overflows exp
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)

    def back(g):
        _accum(a, g * y * (1.0 - y))
    return _make(y, (a,), back)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def back(g):
        _accum(a, g * y)
    return _make(y, (a,), back)


def log(a: Tensor) -> Tensor:
    def back(g):
        _accum(a, g / a.data)
    return _make(np.log(a.data), (a,), back)


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)

    def back(g):
        _accum(a, g * 0.5 / y)
    return _make(y, (a,), back)


def square(a: Tensor) -> Tensor:
    def back(g):
        _accum(a, g * 2.0 * a.data)
    return _make(a.data * a.data, (a,), back)


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def back(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape).copy())
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(ge, a.shape).copy())
    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.data.shape[ax] for ax in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape

    def back(g):
        _accum(a, g.reshape(old))
    return _make(a.data.reshape(shape), (a,), back)


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inv = np.argsort(axes)

    def back(g):
        _accum(a, g.transpose(inv))
    return _make(a.data.transpose(axes), (a,), back)


def pad1d(a: Tensor, left: int, right: int, axis: int = -1) -> Tensor:
    """Zero-pad along one axis."""
    widths = [(0, 0)] * a.data.ndim
    ax = axis % a.data.ndim
    widths[ax] = (left, right)
    n = a.data.shape[ax]

    def back(g):
        sl = [slice(None)] * g.ndim
        sl[ax] = slice(left, left + n)
        _accum(a, g[tuple(sl)])
    return _make(np.pad(a.data, widths), (a,), back)


def concat(tensors, axis: int = 0) -> Tensor:
    sizes = [t.data.shape[axis] for t in tensors]
    offs = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, offs[:-1], offs[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def slice_rows(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def back(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        _accum(a, full)
    return _make(a.data[sl].copy(), (a,), back)


# ---------------------------------------------------------------------------
# softmax family


def softmax(a: Tensor, blocked: np.ndarray | None = None) -> Tensor:
    """Row softmax over the last axis; blocked positions (True) get weight 0.

    Raises if any row is fully blocked.
    """
    x = a.data
    if blocked is not None:
        if blocked.shape != x.shape:
            raise ValueError(f"mask shape {blocked.shape} != input shape {x.shape}")
        if np.any(blocked.all(axis=-1)):
            raise ValueError("softmax row with every position masked")
        x = np.where(blocked, -np.inf, x)
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        if blocked is not None:
            g = np.where(blocked, 0.0, g)
        dot = (g * y).sum(axis=-1, keepdims=True)
        gx = y * (g - dot)
        if blocked is not None:
            gx = np.where(blocked, 0.0, gx)
        _accum(a, gx)
    return _make(y, (a,), back)


def log_softmax(a: Tensor) -> Tensor:
    x = a.data
    m = np.max(x, axis=-1, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse

    def back(g):
        _accum(a, g - np.exp(y) * g.sum(axis=-1, keepdims=True))
    return _make(y, (a,), back)


def gather_rows(a: Tensor, ids: np.ndarray) -> Tensor:
    """out[t] = a[t, ids[t]] for a 2-D tensor."""
    ids = np.asarray(ids, dtype=np.int64)
    rows = np.arange(a.data.shape[0])

    def back(g):
        full = np.zeros_like(a.data)
        full[rows, ids] = g
        _accum(a, full)
    return _make(a.data[rows, ids].copy(), (a,), back)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    if p <= 0.0:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / np.asarray(1.0 - p, dtype=a.dtype)

    def back(g):
        _accum(a, g * keep)
    return _make(a.data * keep, (a,), back)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: out[t] = table[ids[t]]."""
    ids = np.asarray(ids, dtype=np.int64)

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        _accum(table, full)
    return _make(table.data[ids].copy(), (table,), back)


# ---------------------------------------------------------------------------
# convolutions


def _check_dim(name: str, got, want):
    if got != want:
        raise ValueError(f"{name}: expected {want}, got {got}")


def conv1d(x: Tensor, w: Tensor, stride: int, bias: Tensor | None = None) -> Tensor:
    """Cross-correlation of [channels_in, length] with [out, in, kernel].

    frames = (length - kernel) // stride + 1.
    """
    if x.data.ndim != 2:
        raise ValueError(f"conv1d input rank: expected 2, got {x.data.ndim}")
    if w.data.ndim != 3:
        raise ValueError(f"conv1d weight rank: expected 3, got {w.data.ndim}")
    if stride < 1:
        raise ValueError(f"conv1d stride must be >= 1, got {stride}")
    ci, length = x.data.shape
    co, ci_w, k = w.data.shape
    _check_dim("conv1d weight channels_in", ci_w, ci)
    if length < k:
        raise ValueError(f"conv1d length {length} shorter than kernel {k}")
    if bias is not None:
        _check_dim("conv1d bias channels", bias.data.shape[0], co)

    frames = (length - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=1)[:, ::stride, :]
    cols = win.transpose(0, 2, 1).reshape(ci * k, frames)
    w2 = w.data.reshape(co, ci * k)
    y = w2 @ cols
    if bias is not None:
        y = y + bias.data[:, None]

    def back(g):
        _accum(w, (g @ cols.T).reshape(co, ci, k))
        if bias is not None:
            _accum(bias, g.sum(axis=1))
        if x.requires_grad:
            dwin = (w2.T @ g).reshape(ci, k, frames)
            dx = np.zeros_like(x.data)
            pos = stride * np.arange(frames)
            for kk in range(k):
                dx[:, pos + kk] += dwin[:, kk, :]
            _accum(x, dx)
    parents = (x, w) if bias is None else (x, w, bias)
    return _make(y, parents, back)


def conv_transpose1d(x: Tensor, w: Tensor, stride: int) -> Tensor:
    """Adjoint of conv1d: maps [channels_in, frames] to [channels_out, length].

    length = (frames - 1) * stride + kernel.  For a fixed weight this is
    exactly the transpose of the conv1d linear map.
    """
    if x.data.ndim != 2:
        raise ValueError(f"conv_transpose1d input rank: expected 2, got {x.data.ndim}")
    if w.data.ndim != 3:
        raise ValueError(f"conv_transpose1d weight rank: expected 3, got {w.data.ndim}")
    if stride < 1:
        raise ValueError(f"conv_transpose1d stride must be >= 1, got {stride}")
    ci, frames = x.data.shape
    ci_w, co, k = w.data.shape
    _check_dim("conv_transpose1d weight channels_in", ci_w, ci)

    length = (frames - 1) * stride + k
    y = np.zeros((co, length), dtype=x.data.dtype)
    contrib = np.einsum("iok,if->okf", w.data, x.data)
    pos = stride * np.arange(frames)
    for kk in range(k):
        y[:, pos + kk] += contrib[:, kk, :]

    def back(g):
        gwin = np.lib.stride_tricks.sliding_window_view(g, k, axis=1)[:, ::stride, :]
        _accum(w, np.einsum("if,ofk->iok", x.data, gwin))
        if x.requires_grad:
            _accum(x, np.einsum("iok,ofk->if", w.data, gwin))
    return _make(y, (x, w), back)


def depthwise_conv1d(x: Tensor, w: Tensor, dilation: int, padding: int) -> Tensor:
    """Per-channel conv of [channels, length] with [channels, kernel], stride 1."""
    c, length = x.data.shape
    cw, k = w.data.shape
    _check_dim("depthwise_conv1d weight channels", cw, c)
    xp = np.pad(x.data, ((0, 0), (padding, padding)))
    lp = length + 2 * padding
    frames = lp - dilation * (k - 1)
    if frames < 1:
        raise ValueError(f"depthwise_conv1d: receptive field exceeds padded length {lp}")
    idx = np.arange(frames)[:, None] + dilation * np.arange(k)[None, :]
    xw = xp[:, idx]                      # [c, frames, k]
    y = np.einsum("cfk,ck->cf", xw, w.data)

    def back(g):
        _accum(w, np.einsum("cfk,cf->ck", xw, g))
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for kk in range(k):
                off = dilation * kk
                dxp[:, off:off + frames] += g * w.data[:, kk:kk + 1]
            _accum(x, dxp[:, padding:padding + length] if padding else dxp)
    return _make(y, (x, w), back)


def conv2d(x: Tensor, w: Tensor, stride: tuple, padding: tuple,
           bias: Tensor | None = None) -> Tensor:
    """Conv of [channels, height, width] with [out, in, kh, kw]."""
    ci, h, wd = x.data.shape
    co, ci_w, kh, kw = w.data.shape
    _check_dim("conv2d weight channels_in", ci_w, ci)
    sh, sw = stride
    ph, pw = padding
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d output would be empty for input {x.data.shape}")
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::sh, ::sw, :, :]       # [ci, ho, wo, kh, kw]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(ci * kh * kw, ho * wo)
    w2 = w.data.reshape(co, ci * kh * kw)
    y = (w2 @ cols).reshape(co, ho, wo)
    if bias is not None:
        y = y + bias.data[:, None, None]

    def back(g):
        g2 = g.reshape(co, ho * wo)
        _accum(w, (g2 @ cols.T).reshape(co, ci, kh, kw))
        if bias is not None:
            _accum(bias, g2.sum(axis=1))
        if x.requires_grad:
            dwin = (w2.T @ g2).reshape(ci, kh, kw, ho, wo)
            dxp = np.zeros_like(xp)
            ri = sh * np.arange(ho)
            cj = sw * np.arange(wo)
            for a in range(kh):
                for b in range(kw):
                    dxp[:, (ri + a)[:, None], (cj + b)[None, :]] += dwin[:, a, b, :, :]
            dx = dxp[:, ph:ph + h, pw:pw + wd] if (ph or pw) else dxp
            _accum(x, dx)
    parents = (x, w) if bias is None else (x, w, bias)
    return _make(y, parents, back)


# ---------------------------------------------------------------------------
# attention


def scaled_dot_attention(query: Tensor, key: Tensor, value: Tensor,
                         blocked: np.ndarray | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d)) v with optional boolean block-out mask.

    blocked[i, j] == True excludes key j for query i; every query must keep
    at least one key.
    """
    tq, d = query.data.shape
    tk, dk = key.data.shape
    _check_dim("attention key dim", dk, d)
    _check_dim("attention value rows", value.data.shape[0], tk)
    if blocked is not None and blocked.shape != (tq, tk):
        raise ValueError(f"attention mask shape {blocked.shape}, expected {(tq, tk)}")
    scores = matmul(query, transpose(key)) * (1.0 / np.sqrt(d))
    attn = softmax(scores, blocked=blocked)
    return matmul(attn, value)


# ---------------------------------------------------------------------------
# parameter store


class ParameterStore:
    """Named parameters split into top-level partitions with freeze flags.

    Every entry name must start with one of the declared partition prefixes
    ('se', 'sslr', 'asr' in the pipeline).  Frozen partitions never receive
    optimizer updates; gradients may still flow *through* their ops.
    """

    PARTITIONS = ("se", "sslr", "asr")

    def __init__(self):
        self.entries: dict[str, Tensor] = {}
        self.frozen: dict[str, bool] = {p: False for p in self.PARTITIONS}

    @staticmethod
    def partition_of(name: str) -> str:
        head = name.split(".", 1)[0]
        if head not in ParameterStore.PARTITIONS:
            raise KeyError(f"parameter {name!r} has unknown partition {head!r}")
        return head

    def add(self, name: str, value: np.ndarray, requires_grad: bool = True) -> Tensor:
        self.partition_of(name)
        if name in self.entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value, dtype=np.float32), requires_grad=requires_grad)
        self.entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def names(self, prefix: str = "") -> list[str]:
        return sorted(n for n in self.entries if n.startswith(prefix))

    def set_frozen(self, partition: str, flag: bool):
        if partition not in self.frozen:
            raise KeyError(f"unknown partition {partition!r}")
        self.frozen[partition] = flag

    def is_frozen(self, name: str) -> bool:
        return self.frozen[self.partition_of(name)]

    def zero_grad(self):
        for t in self.entries.values():
            t.grad = None

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for name, t in self.entries.items():
            out.add(name, t.data.copy(), requires_grad=t.requires_grad)
        out.frozen = dict(self.frozen)
        return out

    def astype(self, dtype) -> "ParameterStore":
        out = ParameterStore()
        for name, t in self.entries.items():
            out.entries[name] = Tensor(t.data.astype(dtype), requires_grad=t.requires_grad)
        out.frozen = dict(self.frozen)
        return out

    def partition_bytes(self, partition: str) -> bytes:
        """Concatenated raw bytes of a partition, for bitwise freeze checks."""
        chunks = []
        for name in self.names(partition + "."):
            chunks.append(name.encode() + b"\0" + self.entries[name].data.tobytes())
        return b"".join(chunks)


# ---------------------------------------------------------------------------
# finite-difference gradient oracle


class GradCheckReport:
    """Outcome of one gradient check: worst coordinate plus pass/fail."""

    def __init__(self, tolerance: float):
        self.tolerance = tolerance
        self.max_rel_error = 0.0
        self.worst_coord = None
        self.failures: list[str] = []

    @property
    def passed(self) -> bool:
        return not self.failures and self.max_rel_error < self.tolerance

    def record(self, coord: str, analytic: float, numeric: float):
        scale = max(abs(analytic), abs(numeric), 1e-4)
        rel = abs(analytic - numeric) / scale
        if rel > self.max_rel_error:
            self.max_rel_error = rel
            self.worst_coord = coord
        if not (np.isfinite(analytic) and np.isfinite(numeric)):
            self.failures.append(f"non-finite gradient at {coord}")

    def __repr__(self):
        status = "pass" if self.passed else "FAIL"
        return (f"GradCheckReport({status}, max_rel_error={self.max_rel_error:.3e}, "
                f"worst={self.worst_coord}, tol={self.tolerance:g})")


def grad_check(func, store: ParameterStore, names=None, step: float = 1e-5,
               tolerance: float = 1e-4, rng: np.random.Generator | None = None,
               max_coords: int = 8) -> GradCheckReport:
    """Compare reverse-mode gradients of a scalar func against central differences.

    The store is cast to float64 for the whole check.  For each selected
    parameter up to max_coords coordinates are sampled and perturbed by
    +/- step; relative errors are reported against the analytic gradient.
    """
    rng = rng or np.random.default_rng(0)
    wide = store.astype(np.float64)
    names = list(names) if names is not None else wide.names()
    report = GradCheckReport(tolerance)

    wide.zero_grad()
    out = func(wide)
    if not np.isfinite(float(out.data)):
        report.failures.append("non-finite function value at base point")
        return report
    out.backward()

    analytic = {}
    for name in names:
        t = wide.entries[name]
        analytic[name] = np.zeros_like(t.data) if t.grad is None else t.grad.copy()

    for name in names:
        t = wide.entries[name]
        flat = t.data.reshape(-1)
        n = flat.shape[0]
        coords = rng.choice(n, size=min(max_coords, n), replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            fp = float(func(wide).data)
            flat[c] = orig - step
            fm = float(func(wide).data)
            flat[c] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                report.failures.append(f"non-finite function value at {name}[{c}]")
                continue
            numeric = (fp - fm) / (2.0 * step)
            report.record(f"{name}[{c}]", float(analytic[name].reshape(-1)[c]), numeric)
    return report
