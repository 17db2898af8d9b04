"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

Each operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients. Only tensors that
(transitively) depend on a ``requires_grad`` leaf record graph edges, so
forward passes on constants cost no bookkeeping.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

LOG_FLOOR = 1e-12


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {where}")


class Tensor:
    """Dense float64 array that can take part in a differentiation graph.

    Parameters
    ----------
    data : array_like
        Values; converted to a float64 array (copied only if needed).
    requires_grad : bool, default=False
        Mark as a leaf whose gradient :func:`backward` should populate.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 _parents: Sequence["Tensor"] = (), _backward=None):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, op)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.op = op
        self._parents = tuple(_parents)
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op) -> Tensor:
    track = any(p.requires_grad for p in parents)
    if track:
        return Tensor(data, True, op=op, _parents=parents, _backward=backward)
    return Tensor(data, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- primitives

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    if not np.isfinite(c):
        raise NumericError(f"scale: non-finite factor {c}")

    def backward(g):
        return (g * c,)

    return _make(a.data * c, (a,), backward, "scale")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def matmul(a, b) -> Tensor:
    """2-D matrix product ``(n, k) @ (k, m)``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot contract shapes {a.shape} and {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return _make(np.where(mask, a.data, 0.0), (a,), backward, "relu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):  # overflow is reported by the finiteness check
        out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _make(out, (a,), backward, "exp")


def power(a, p: float) -> Tensor:
    """Elementwise ``a ** p`` for a scalar exponent ``p``."""
    a = as_tensor(a)
    p = float(p)
    out = np.power(a.data, p)

    def backward(g):
        if p == 0.0:
            return (np.zeros_like(g),)
        return (g * p * np.power(a.data, p - 1.0),)

    return _make(out, (a,), backward, "power")


def clamp_log(a, eps: float = LOG_FLOOR) -> Tensor:
    """``log(max(a, eps))``; the gradient is zero where the floor is active."""
    a = as_tensor(a)
    clipped = np.maximum(a.data, eps)
    active = a.data > eps

    def backward(g):
        return (np.where(active, g / clipped, 0.0),)

    return _make(np.log(clipped), (a,), backward, "clamp_log")


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=-1, keepdims=True),)

    return _make(out, (a,), backward, "log_softmax")


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), backward, "sum")


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis), 1.0 / count)


def gather(a, index) -> Tensor:
    """Pick ``a[i, index[i]]`` for each row of a 2-D tensor."""
    a = as_tensor(a)
    index = np.asarray(index)
    if a.ndim != 2 or index.shape != (a.shape[0],):
        raise ShapeError(f"gather: index shape {index.shape} does not fit {a.shape}")
    if not np.issubdtype(index.dtype, np.integer):
        raise ContractError("gather: index must be integer")
    if index.size and (index.min() < 0 or index.max() >= a.shape[1]):
        raise ContractError("gather: index out of range")
    rows = np.arange(a.shape[0])

    def backward(g):
        full = np.zeros(a.shape)
        full[rows, index] = g
        return (full,)

    return _make(a.data[rows, index], (a,), backward, "gather")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None

    def backward(g):
        return (g.reshape(a.shape),)

    return _make(out, (a,), backward, "reshape")


def getitem(a, index) -> Tensor:
    """Basic (slice/int) indexing; used to carve layer weights from a flat vector."""
    a = as_tensor(a)
    out = a.data[index]

    def backward(g):
        full = np.zeros(a.shape)
        full[index] = g
        return (full,)

    return _make(out, (a,), backward, "getitem")


def maximum_zero(a) -> Tensor:
    return relu(a)


def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # (N, Cin, Ho, Wo, kh, kw) -> (N*Ho*Wo, Cin*kh*kw)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    n, cin, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)


def conv2d(x, w, b=None, padding: str = "same") -> Tensor:
    """Stride-1 2-D convolution (cross-correlation) via im2col + matmul.

    ``x`` is ``(N, Cin, H, W)``, ``w`` is ``(Cout, Cin, kh, kw)`` and the
    optional bias ``b`` is ``(Cout,)``. ``padding`` is ``"same"`` (odd
    kernels only) or ``"valid"``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    cout, cin, kh, kw = w.shape
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"conv2d: 'same' padding needs odd kernel, got {w.shape}")
        ph, pw = kh // 2, kw // 2
    elif padding == "valid":
        ph = pw = 0
    else:
        raise ContractError(f"conv2d: unknown padding {padding!r}")
    n, _, h, wd = x.shape
    ho, wo = h + 2 * ph - kh + 1, wd + 2 * pw - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(xp, kh, kw)
    wmat = w.data.reshape(cout, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise ShapeError(f"conv2d: bias {b.shape} does not match {cout} channels")
        out = out + b.data[None, :, None, None]
        parents.append(b)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        gw = (gmat.T @ cols).reshape(w.shape)
        gcols = (gmat @ wmat).reshape(n, ho, wo, cin, kh, kw)
        gxp = np.zeros(xp.shape)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + ho, j:j + wo] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, ph:ph + h, pw:pw + wd]
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _make(out, tuple(parents), backward, "conv2d")


def maxpool2x2(x) -> Tensor:
    """Non-overlapping 2x2 max pooling; ties route the gradient to the first maximum."""
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"maxpool2x2: need (N, C, even H, even W), got {x.shape}")
    n, c, h, w = x.shape
    win = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gwin = np.zeros(win.shape)
        np.put_along_axis(gwin, arg[..., None], g[..., None], axis=-1)
        gwin = gwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (gwin.reshape(n, c, h, w),)

    return _make(out, (x,), backward, "maxpool2x2")


# ------------------------------------------------------------------ backward

def topological_order(root: Tensor) -> list:
    """Nodes reachable from ``root`` that carry graph edges, parents first."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every ``requires_grad`` leaf."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones(loss.shape)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            _check_finite(g, "backward")
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def grad(fn: Callable[[Tensor], Tensor], point) -> np.ndarray:
    """Gradient of scalar ``fn`` at ``point`` as a fresh array."""
    leaf = Tensor(np.array(point, dtype=np.float64), requires_grad=True)
    backward(fn(leaf))
    return leaf.grad if leaf.grad is not None else np.zeros(leaf.shape)


def finite_diff(loss_fn: Callable, point, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    ``loss_fn`` receives a :class:`Tensor` without gradient tracking and may
    return a Tensor or a float.
    """
    if eps <= 0:
        raise ContractError("finite_diff: eps must be positive")
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    out = np.zeros(base.shape)
    flat, gflat = base.reshape(-1), out.reshape(-1)

    def value(arr):
        v = loss_fn(Tensor(arr))
        return v.item() if isinstance(v, Tensor) else float(v)

    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = value(base)
        flat[i] = orig - eps
        lo = value(base)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return out


def relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """Max over entries of ``|a - n| / max(|a|, |n|, floor)``."""
    a, n = np.asarray(analytic, float), np.asarray(numeric, float)
    if a.shape != n.shape:
        raise ShapeError(f"relative_error: shapes {a.shape} and {n.shape} differ")
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max()) if a.size else 0.0


def stack_sum(tensors: Iterable[Tensor]) -> Tensor:
    tensors = list(tensors)
    total = tensors[0]
    for t in tensors[1:]:
        total = add(total, t)
    return total
