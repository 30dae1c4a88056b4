"""Dense float64 tensors with reverse-mode automatic differentiation.

Values are C-contiguous float64 numpy arrays (flat row-major storage plus a
shape).  Every operation that touches a tensor requiring gradients appends a
node to a global tape; ``backward`` on a scalar root walks the tape once in
reverse execution order, accumulates gradients additively into ``.grad`` of
every reachable tensor, and clears the tape.

Design constraints:

* float64 everywhere -- finite-difference checks need the headroom.
* elementwise ops broadcast only a true scalar against a tensor; anything
  richer must go through an explicit op (``expand_last``, ``add_rowvec``),
  so shape bugs fail loudly instead of broadcasting silently.
* graph construction and backward are single-threaded; a tensor not on the
  tape is a plain value.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeError

_ZERO_NORM_EPS = 1e-12


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

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
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A view of the same values with no gradient history."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(negate(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- method-style ops ----------------------------------------------------
    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return tensor_max(self, axis=axis, keepdims=keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def relu(self):
        return relu(self)

    def reciprocal(self):
        return reciprocal(self)

    def clamp(self, lo: float, hi: float):
        return clamp(self, lo, hi)

    def narrow(self, axis: int, start: int, stop: int):
        return narrow(self, axis, start, stop)

    def expand_last(self, k: int):
        return expand_last(self, k)


# -- the tape ----------------------------------------------------------------

@dataclass
class _Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    grad_fns: tuple[Callable[[np.ndarray], np.ndarray], ...]


_TAPE: list[_Node] = []
_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Suspend tape recording (inference / finite-difference evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def tape_size() -> int:
    return len(_TAPE)


def clear_tape() -> None:
    _TAPE.clear()


def _record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
            grad_fns: Sequence[Callable[[np.ndarray], np.ndarray] | None]) -> Tensor:
    track = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        ins, fns = [], []
        for t, fn in zip(inputs, grad_fns):
            if fn is not None:
                ins.append(t)
                fns.append(fn)
        _TAPE.append(_Node(op, tuple(ins), out, tuple(fns)))
    return out


def backward(root: Tensor) -> None:
    """Accumulate gradients of ``root`` into every reachable tensor, then clear the tape."""
    if root.data.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.shape}")
    if root.grad is None:
        root.grad = np.ones_like(root.data)
    else:
        root.grad = root.grad + np.ones_like(root.data)
    for node in reversed(_TAPE):
        g = node.output.grad
        if g is None:
            continue
        for t, fn in zip(node.inputs, node.grad_fns):
            if not t.requires_grad:
                continue
            piece = fn(g)
            if t.grad is None:
                # never adopt g itself or a view of it: identity grad paths
                # would otherwise alias one buffer across several tensors
                if piece is g or not piece.flags["OWNDATA"]:
                    piece = piece.copy()
                t.grad = piece
            else:
                t.grad += piece
    _TAPE.clear()


# -- helpers -------------------------------------------------------------

def _as_scalar(x) -> float | None:
    """Python number, or the value of a 0-d/1-element constant; else None."""
    if isinstance(x, (int, float)):
        return float(x)
    return None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` -- the adjoint of numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary_operands(op: str, a, b):
    """Resolve (tensor, tensor-or-scalar) operands for an elementwise op."""
    if not isinstance(a, Tensor):
        a, b = b, a
    if isinstance(b, Tensor):
        if a.shape == b.shape:
            return a, b, "same"
        if b.data.size == 1:
            return a, b, "scalar_tensor"
        if a.data.size == 1:
            return a, b, "tensor_scalar_left"
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform "
                         "(only scalar-vs-tensor broadcasting is supported)")
    return a, b, "const"


# -- elementwise arithmetic -----------------------------------------------

def add(a, b) -> Tensor:
    a, b, kind = _binary_operands("add", a, b)
    if kind == "const":
        c = _as_scalar(b)
        return _record("add", [a], a.data + c, [lambda g: g])
    if kind == "same":
        return _record("add", [a, b], a.data + b.data, [lambda g: g, lambda g: g])
    if kind == "scalar_tensor":
        return _record("add", [a, b], a.data + b.data.reshape(()),
                       [lambda g: g, lambda g: g.sum().reshape(b.shape)])
    # a is the 1-element side
    return _record("add", [a, b], a.data.reshape(()) + b.data,
                   [lambda g: g.sum().reshape(a.shape), lambda g: g])


def sub(a, b) -> Tensor:
    if isinstance(b, Tensor):
        return add(a, negate(b))
    return add(a, -float(b))


def negate(a: Tensor) -> Tensor:
    return _record("negate", [a], -a.data, [lambda g: -g])


def mul(a, b) -> Tensor:
    a, b, kind = _binary_operands("mul", a, b)
    if kind == "const":
        c = _as_scalar(b)
        return _record("scale", [a], a.data * c, [lambda g: g * c])
    if kind == "same":
        return _record("mul", [a, b], a.data * b.data,
                       [lambda g: g * b.data, lambda g: g * a.data])
    if kind == "scalar_tensor":
        bv = b.data.reshape(())
        return _record("mul", [a, b], a.data * bv,
                       [lambda g: g * bv, lambda g: (g * a.data).sum().reshape(b.shape)])
    av = a.data.reshape(())
    return _record("mul", [a, b], av * b.data,
                   [lambda g: (g * b.data).sum().reshape(a.shape), lambda g: g * av])


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a Python scalar."""
    return mul(a, float(c))


def reciprocal(a: Tensor) -> Tensor:
    if np.any(a.data == 0.0):
        raise DomainError("reciprocal of zero")
    out = 1.0 / a.data
    return _record("reciprocal", [a], out, [lambda g: -g * out * out])


# -- matmul family ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 1 or b.ndim < 2:
        raise ShapeError(f"matmul: need matrices, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def ga(g):
        return _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)

    def gb(g):
        return _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)

    return _record("matmul", [a, b], out, [ga, gb])


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ShapeError(f"transpose: need ndim >= 2, got {a.shape}")
    out = np.ascontiguousarray(np.swapaxes(a.data, -1, -2))
    return _record("transpose", [a], out,
                   [lambda g: np.ascontiguousarray(np.swapaxes(g, -1, -2))])


def reshape(a: Tensor, *shape) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = a.shape
    return _record("reshape", [a], a.data.reshape(shape), [lambda g: g.reshape(old)])


# -- reductions -----------------------------------------------------------

def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def ga(g):
        if axis is None:
            return np.broadcast_to(g.reshape((1,) * a.ndim), a.shape).copy()
        gx = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gx, a.shape).copy()

    return _record("sum", [a], out, [ga])


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def ga(g):
        if axis is None:
            return np.broadcast_to(g.reshape((1,) * a.ndim), a.shape) / n
        gx = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gx, a.shape) / n

    return _record("mean", [a], out, [ga])


def tensor_max(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.max(axis=axis, keepdims=keepdims)

    def ga(g):
        # subgradient: split evenly across tied maxima
        if axis is None:
            full = np.broadcast_to(np.asarray(out).reshape((1,) * a.ndim), a.shape)
            gx = np.broadcast_to(np.asarray(g).reshape((1,) * a.ndim), a.shape)
        else:
            o = out if keepdims else np.expand_dims(out, axis)
            full = np.broadcast_to(o, a.shape)
            gk = g if keepdims else np.expand_dims(g, axis)
            gx = np.broadcast_to(gk, a.shape)
        mask = (a.data == full)
        counts = mask.sum(axis=axis, keepdims=True) if axis is not None else mask.sum()
        if axis is not None:
            counts = np.broadcast_to(counts, a.shape)
        return gx * mask / counts

    return _record("max", [a], out, [ga])


# -- pointwise nonlinearities ------------------------------------------------

def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record("exp", [a], out, [lambda g: g * out])


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("log of non-positive input")
    return _record("log", [a], np.log(a.data), [lambda g: g / a.data])


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0.0):
        raise DomainError("sqrt of negative input")
    out = np.sqrt(a.data)
    # guard the derivative at 0; upstream clamps are expected to zero it there
    return _record("sqrt", [a], out, [lambda g: g / (2.0 * np.maximum(out, 1e-150))])


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return _record("relu", [a], out, [lambda g: g * (a.data > 0.0)])


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(a.data, lo, hi)
    # pass-through strictly inside the interval; zero at and beyond the edges
    return _record("clamp", [a], out,
                   [lambda g: g * ((a.data > lo) & (a.data < hi))])


# -- structure ops ------------------------------------------------------------

def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ShapeError("concat of no tensors")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def make_fn(i):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
        sl = tuple(sl)
        return lambda g: np.ascontiguousarray(g[sl])

    return _record("concat", ts, out, [make_fn(i) for i in range(len(ts))])


def narrow(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Slice [start, stop) along one axis."""
    if not (0 <= start <= stop <= a.shape[axis]):
        raise ShapeError(f"narrow: [{start}, {stop}) out of range for axis {axis} of {a.shape}")
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def ga(g):
        full = np.zeros(a.shape)
        full[sl] = g
        return full

    return _record("slice", [a], np.ascontiguousarray(a.data[sl]), [ga])


def expand_last(a: Tensor, k: int) -> Tensor:
    """Tile a trailing axis of size 1 out to size k."""
    if a.shape[-1] != 1:
        raise ShapeError(f"expand_last: trailing dim must be 1, got {a.shape}")
    out = np.broadcast_to(a.data, a.shape[:-1] + (k,)).copy()
    return _record("expand_last", [a], out, [lambda g: g.sum(axis=-1, keepdims=True)])


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Add a 1-D vector along the last axis of ``a`` (explicit bias add)."""
    if v.ndim != 1 or v.shape[0] != a.shape[-1]:
        raise ShapeError(f"add_rowvec: {a.shape} + {v.shape}")
    lead = tuple(range(a.ndim - 1))
    return _record("add_rowvec", [a, v], a.data + v.data,
                   [lambda g: g, lambda g: g.sum(axis=lead) if lead else g])


# -- fused normalizations --------------------------------------------------

def l2_normalize(a: Tensor) -> Tensor:
    """Normalize along the last axis to unit Euclidean norm."""
    n = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    if np.any(n < _ZERO_NORM_EPS):
        raise DomainError("l2_normalize of (near-)zero-norm input")
    y = a.data / n

    def ga(g):
        return (g - y * (g * y).sum(axis=-1, keepdims=True)) / n

    return _record("l2_normalize", [a], y, [ga])


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis (max-shifted for stability)."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def ga(g):
        return y * (g - (g * y).sum(axis=-1, keepdims=True))

    return _record("softmax", [a], y, [ga])


def log_softmax(a: Tensor) -> Tensor:
    """Composite log(softmax) built from primitive ops, stable via a detached shift."""
    m = tensor_max(a, axis=-1, keepdims=True).detach()
    z = sub(a, expand_last(m, a.shape[-1]))
    lse = log(tensor_sum(exp(z), axis=-1, keepdims=True))
    return sub(z, expand_last(lse, a.shape[-1]))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis with learnable scale and shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: params {gamma.shape}/{beta.shape} vs feature dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    lead = tuple(range(x.ndim - 1))

    def gx(g):
        dxhat = g * gamma.data
        return inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                      - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))

    return _record("layer_norm", [x, gamma, beta], out,
                   [gx,
                    lambda g: (g * xhat).sum(axis=lead),
                    lambda g: g.sum(axis=lead)])


# -- fused 2-D ops for the audio encoder (channels-last) -------------------

def _pad1(a: np.ndarray) -> np.ndarray:
    # zero-pad H and W by one on each side without zero-filling the interior
    b, h, wd, c = a.shape
    p = np.empty((b, h + 2, wd + 2, c))
    p[:, 1:-1, 1:-1] = a
    p[:, 0] = 0.0
    p[:, -1] = 0.0
    p[:, 1:-1, 0] = 0.0
    p[:, 1:-1, -1] = 0.0
    return p


def _patches(padded: np.ndarray, h: int, wd: int) -> np.ndarray:
    # gather all 3x3 windows of a padded map into rows of [B*H*W, 9*C]
    b = padded.shape[0]
    c = padded.shape[3]
    s = padded.strides
    win = np.lib.stride_tricks.as_strided(
        padded, (b, h, wd, 3, 3, c), (s[0], s[1], s[2], s[1], s[2], s[3]))
    return np.ascontiguousarray(win).reshape(b * h * wd, 9 * c)


def conv3x3(x: Tensor, w: Tensor) -> Tensor:
    """3x3 same-padding 2-D convolution, channels last.

    x: [B, H, W, Cin], w: [9*Cin, Cout] with row index (dy*3+dx)*Cin + cin.
    Forward is one window-gather plus one matmul; the input gradient is the
    convolution of the padded upstream gradient with the rotated kernel, so
    backward reuses the same two-step shape instead of scatter-adds.
    """
    if x.ndim != 4 or w.ndim != 2 or w.shape[0] != 9 * x.shape[3]:
        raise ShapeError(f"conv3x3: {x.shape} with kernel {w.shape}")
    b, h, wd, cin = x.shape
    cout = w.shape[1]
    patches = _patches(_pad1(x.data), h, wd)
    out = (patches @ w.data).reshape(b, h, wd, cout)

    def gx(g):
        gp = _patches(_pad1(g), h, wd)
        w4 = w.data.reshape(3, 3, cin, cout)
        wrot = np.ascontiguousarray(
            w4[::-1, ::-1].transpose(0, 1, 3, 2)).reshape(9 * cout, cin)
        return (gp @ wrot).reshape(b, h, wd, cin)

    def gw(g):
        return patches.T @ g.reshape(b * h * wd, cout)

    return _record("conv3x3", [x, w], out, [gx, gw])


def avgpool2(x: Tensor) -> Tensor:
    """2x2 mean pooling, channels last; trailing odd row/column is dropped."""
    if x.ndim != 4:
        raise ShapeError(f"avgpool2: need [B, H, W, C], got {x.shape}")
    b, h, wd, c = x.shape
    he, we = h // 2, wd // 2
    d = x.data
    out = 0.25 * (d[:, 0:2 * he:2, 0:2 * we:2] + d[:, 1:2 * he:2, 0:2 * we:2]
                  + d[:, 0:2 * he:2, 1:2 * we:2] + d[:, 1:2 * he:2, 1:2 * we:2])

    def ga(g):
        dx = np.zeros(x.shape)
        q = 0.25 * g
        dx[:, 0:2 * he:2, 0:2 * we:2] = q
        dx[:, 1:2 * he:2, 0:2 * we:2] = q
        dx[:, 0:2 * he:2, 1:2 * we:2] = q
        dx[:, 1:2 * he:2, 1:2 * we:2] = q
        return dx

    return _record("avgpool2", [x], out, [ga])


# -- verification ------------------------------------------------------------

@dataclass
class GradCheckReport:
    name: str
    n_elements: int
    max_rel_err: float
    rel_tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.rel_tol

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"{status}  {self.name}: max rel err {self.max_rel_err:.3e} "
                f"over {self.n_elements} elements (tol {self.rel_tol:.0e})")


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor,
                      h: float = 1e-5, rel_tol: float = 1e-4,
                      name: str = "f") -> GradCheckReport:
    """Compare the autodiff gradient of scalar-valued ``f`` at ``x`` against
    central finite differences.

    Relative error per element is |ga - gn| / max(|ga|, |gn|, 1e-4); the
    1e-4 floor turns the comparison absolute near zero gradients, where
    central differences resolve roughly 1e-10.
    """
    clear_tape()
    xt = Tensor(x.data.copy(), requires_grad=True)
    out = f(xt)
    if out.data.size != 1:
        raise ContractError("finite_diff_check: f must return a scalar")
    backward(out)
    ga = (xt.grad if xt.grad is not None else np.zeros_like(xt.data)).ravel().copy()

    base = x.data.ravel()
    gn = np.empty(base.size)
    with no_grad():
        for i in range(base.size):
            xp = base.copy()
            xp[i] += h
            fp = f(Tensor(xp.reshape(x.shape))).item()
            xm = base.copy()
            xm[i] -= h
            fm = f(Tensor(xm.reshape(x.shape))).item()
            gn[i] = (fp - fm) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(ga), np.abs(gn)), 1e-4)
    max_rel = float(np.max(np.abs(ga - gn) / denom)) if base.size else 0.0
    return GradCheckReport(name, int(base.size), max_rel, rel_tol)
