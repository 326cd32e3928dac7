"""Dense tensors with reverse-mode automatic differentiation.

Every operation the encoder/decoder stack needs lives here as a pure
function over `Tensor` inputs. Forward kernels that are checked against
naive loop references (matmul, conv2d_valid, maxpool2, softmax) accumulate
in ascending index order so the comparison is bit-exact; backward kernels
only need to be deterministic and use numpy's fixed-order reductions.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Parameter",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "div_scalar",
    "matmul",
    "conv2d_valid",
    "maxpool2",
    "relu",
    "softmax",
    "layer_norm",
    "log",
    "clamp_min",
    "sum_all",
    "mean_all",
    "reshape",
    "transpose2d",
    "concat",
    "stack_rows",
    "narrow",
]


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class Tensor:
    """N-dimensional float array plus the bookkeeping for backprop.

    `data` is a row-major numpy array (float32 for training, float64 for
    gradient checks). `grad` is filled lazily during `backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), _backward_fn=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward_fn = _backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        np.add(self.grad, g, out=self.grad)

    def backward(self, seed=None):
        """Reverse-mode sweep from this tensor (scalar unless `seed` given)."""
        if seed is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar output, got shape {self.shape}")
            seed = np.ones_like(self.data)
        order = _topo_order(self)
        self._accumulate(seed)
        for node in reversed(order):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


class Parameter:
    """Named trainable leaf: value tensor plus a persistent grad buffer."""

    __slots__ = ("name", "value")

    def __init__(self, name: str, value: Tensor):
        self.name = name
        self.value = value
        value.requires_grad = True
        value.zero_grad()

    @property
    def grad(self) -> np.ndarray:
        return self.value.grad

    def zero_grad(self):
        self.value.zero_grad()

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={tuple(self.value.shape)})"


def _topo_order(root: Tensor):
    """Iterative post-order over the subgraph that requires gradients."""
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in visited:
            continue
        if expanded:
            visited.add(id(node))
            order.append(node)
        else:
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and (p.requires_grad or p._parents):
                    stack.append((p, False))
    return order


def _needs(*tensors):
    return any(t.requires_grad or t._parents for t in tensors)


def _result(data, parents, backward_fn):
    if _needs(*parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward_fn=backward_fn)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(-g)

    return _result(-a.data, (a,), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(out, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    def backward(g):
        a._accumulate(g * s)

    return _result(a.data * s, (a,), backward)


def div_scalar(a: Tensor, s: float) -> Tensor:
    def backward(g):
        a._accumulate(g / s)

    return _result(a.data / s, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g / a.data)

    return _result(np.log(a.data), (a,), backward)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    out = np.maximum(a.data, floor)

    def backward(g):
        a._accumulate(g * (a.data > floor))

    return _result(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def backward(g):
        # sub-gradient at exactly 0 is 0
        a._accumulate(g * (a.data > 0))

    return _result(out, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _result(a.data.reshape(shape), (a,), backward)


def transpose2d(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose2d needs a 2-d tensor, got shape {a.shape}")

    def backward(g):
        a._accumulate(np.ascontiguousarray(g.T))

    return _result(np.ascontiguousarray(a.data.T), (a,), backward)


def concat(tensors, axis=0) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + [t.data.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad or t._parents:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _result(out, tensors, backward)


def stack_rows(tensors) -> Tensor:
    """Stack 1-d tensors of equal length into a (len, n) matrix."""
    tensors = list(tensors)
    out = np.stack([t.data for t in tensors], axis=0)

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad or t._parents:
                t._accumulate(g[i])

    return _result(out, tensors, backward)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = a.data[idx].copy()

    def backward(g):
        buf = np.zeros_like(a.data)
        buf[idx] = g
        a._accumulate(buf)

    return _result(out, (a,), backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _seq_sum(arr: np.ndarray, axis: int) -> np.ndarray:
    """Sum along `axis` accumulating in ascending index order."""
    moved = np.moveaxis(arr, axis, 0)
    out = np.zeros(moved.shape[1:], dtype=arr.dtype)
    for i in range(moved.shape[0]):
        np.add(out, moved[i], out=out)
    return out


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(np.broadcast_to(g, a.shape).astype(a.dtype, copy=False))

    return _result(np.sum(a.data), (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g):
        a._accumulate(np.broadcast_to(g / n, a.shape).astype(a.dtype, copy=False))

    return _result(np.sum(a.data) / n, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product (m,n) @ (n,p); accumulates over n in ascending order."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {tuple(a.shape)} x {tuple(b.shape)}")
    out = _matmul_seq(a.data, b.data)

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(_matmul_seq(g, np.ascontiguousarray(b.data.T)))
        if b.requires_grad or b._parents:
            b._accumulate(_matmul_seq(np.ascontiguousarray(a.data.T), g))

    return _result(out, (a, b), backward)


def _matmul_seq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, n = a.shape
    p = b.shape[1]
    out = np.zeros((m, p), dtype=a.dtype)
    tmp = np.empty((m, p), dtype=a.dtype)
    for k in range(n):
        np.multiply(a[:, k : k + 1], b[k : k + 1, :], out=tmp)
        np.add(out, tmp, out=out)
    return out


# ---------------------------------------------------------------------------
# softmax / normalization
# ---------------------------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """exp(x - max x) / sum, stable; normalizer summed in ascending order."""
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    denom = np.expand_dims(_seq_sum(e, axis % e.ndim), axis % e.ndim)
    y = e / denom

    def backward(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        a._accumulate(y * (g - dot))

    return _result(y, (a,), backward)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """(x - mean) / sqrt(var + eps) * gain + shift over the last axis.

    Population variance; applied row-wise for 2-d inputs.
    """
    n = x.data.shape[-1]
    if n < 2:
        raise ShapeError(f"layer_norm needs at least 2 features, got {n}")
    mu = np.mean(x.data, axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + shift.data

    def backward(g):
        if gain.requires_grad or gain._parents:
            gain._accumulate(_unbroadcast(g * xhat, gain.shape))
        if shift.requires_grad or shift._parents:
            shift._accumulate(_unbroadcast(g, shift.shape))
        if x.requires_grad or x._parents:
            gx = g * gain.data
            dvar = np.sum(gx * centered, axis=-1, keepdims=True) * (-0.5) * inv**3
            dmu = np.sum(-gx * inv, axis=-1, keepdims=True) + dvar * np.mean(-2.0 * centered, axis=-1, keepdims=True)
            x._accumulate(gx * inv + dvar * 2.0 * centered / n + dmu / n)

    return _result(out, (x, gain, shift), backward)


# ---------------------------------------------------------------------------
# convolution / pooling
# ---------------------------------------------------------------------------


def conv2d_valid(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Unpadded stride-1 cross-correlation with per-channel bias.

    x is (C,H,W) or batched (B,C,H,W); kernels (O,C,Kh,Kw); bias (O,).
    Each output element accumulates products over (c, ki, kj) in ascending
    order, matching a naive quadruple loop.
    """
    batched = x.data.ndim == 4
    xd = x.data if batched else x.data[None]
    if xd.ndim != 4 or kernels.data.ndim != 4:
        raise ShapeError(f"conv2d_valid: input shape {tuple(x.shape)}, kernels {tuple(kernels.shape)}")
    B, C, H, W = xd.shape
    O, Ck, Kh, Kw = kernels.data.shape
    if Ck != C:
        raise ShapeError(f"conv2d_valid: channel mismatch, input {tuple(x.shape)} vs kernels {tuple(kernels.shape)}")
    if Kh > H or Kw > W:
        raise ShapeError(f"conv2d_valid: kernel {Kh}x{Kw} larger than input {H}x{W}")
    Ho, Wo = H - Kh + 1, W - Kw + 1

    kd = kernels.data
    out = np.zeros((B, O, Ho, Wo), dtype=xd.dtype)
    tmp = np.empty((B, O, Ho, Wo), dtype=xd.dtype)
    for c in range(C):
        for ki in range(Kh):
            for kj in range(Kw):
                np.multiply(
                    xd[:, c : c + 1, ki : ki + Ho, kj : kj + Wo],
                    kd[:, c, ki, kj][None, :, None, None],
                    out=tmp,
                )
                np.add(out, tmp, out=out)
    out += bias.data[None, :, None, None]

    def backward(g):
        gb = g if batched else g[None]
        if bias.requires_grad or bias._parents:
            bias._accumulate(gb.sum(axis=(0, 2, 3)))
        if kernels.requires_grad or kernels._parents:
            dk = np.empty_like(kd)
            for ki in range(Kh):
                for kj in range(Kw):
                    dk[:, :, ki, kj] = np.tensordot(
                        gb, xd[:, :, ki : ki + Ho, kj : kj + Wo], axes=([0, 2, 3], [0, 2, 3])
                    )
            kernels._accumulate(dk)
        if x.requires_grad or x._parents:
            dx = np.zeros_like(xd)
            for ki in range(Kh):
                for kj in range(Kw):
                    part = np.tensordot(gb, kd[:, :, ki, kj], axes=([1], [0]))
                    dx[:, :, ki : ki + Ho, kj : kj + Wo] += part.transpose(0, 3, 1, 2)
            x._accumulate(dx if batched else dx[0])

    return _result(out if batched else out[0], (x, kernels, bias), backward)


def maxpool2(x: Tensor) -> Tensor:
    """Max over non-overlapping 2x2 windows; (C,H,W) or (B,C,H,W), H and W even.

    Gradient routes to the first maximal element in row-major window order.
    """
    batched = x.data.ndim == 4
    xd = x.data if batched else x.data[None]
    B, C, H, W = xd.shape
    if H % 2 or W % 2:
        raise ShapeError(f"maxpool2: height/width must be even, got {tuple(x.shape)}")
    windows = xd.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // 2, W // 2, 4)
    idx = np.argmax(windows, axis=-1)
    out = np.max(windows, axis=-1)

    def backward(g):
        gb = g if batched else g[None]
        scatter = np.zeros_like(windows)
        np.put_along_axis(scatter, idx[..., None], gb[..., None], axis=-1)
        dx = scatter.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)
        x._accumulate(dx if batched else dx[0])

    return _result(out if batched else out[0], (x,), backward)
