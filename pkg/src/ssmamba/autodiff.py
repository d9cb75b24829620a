"""Dense-tensor arithmetic with reverse-mode automatic differentiation.

The engine is deliberately small: row-major contiguous numpy storage, a
tape of op records ordered by creation id, and hand-written backward rules
for exactly the operations the model needs.  Broadcasting is restricted to
scalar-vs-tensor and repeating a 1xD row across N rows; anything else is a
shape error.  float32 is the training dtype, float64 the dtype every
gradient check runs in.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NumericError",
    "add",
    "sub",
    "mul",
    "matmul",
    "sigmoid",
    "silu",
    "softplus",
    "exp",
    "log",
    "tsum",
    "tmean",
    "slice_cols",
    "take_row",
    "gather_concat_rows",
    "rms_norm",
    "causal_conv1d",
    "cross_entropy_logits",
    "backward",
    "grad_check",
    "GradCheckReport",
    "topo_nodes",
]


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NumericError(ValueError):
    """Domain violation (e.g. log of a non-positive value)."""


_ids = itertools.count()


class Tensor:
    """A dense real array participating in the differentiation graph.

    Leaves are created directly from data; op results carry the op kind,
    their parent tensors and a backward closure.  Creation ids give a total
    order on nodes, so reversed-id order is a deterministic reverse
    topological order for backward.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "parents", "_vjp", "id")

    def __init__(self, data, requires_grad=False, *, op=None, parents=(), vjp=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = op
        self.parents = parents
        self._vjp = vjp
        self.id = next(_ids)

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def needs_grad(self):
        return self.requires_grad or self.op is not None

    def zero_grad(self):
        self.grad = None

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        kind = self.op or ("leaf" if not self.requires_grad else "param")
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, {kind})"

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_as_tensor(other, self), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_as_tensor(other, self), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


def _as_tensor(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full((1, 1), x, dtype=like.dtype))


def _check_dtypes(*tensors):
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise ShapeError(f"mixed dtypes {dt} and {t.dtype}; cast explicitly")
    return dt


def _result(data, op, parents, vjp):
    if any(p.needs_grad for p in parents):
        return Tensor(data, op=op, parents=tuple(parents), vjp=vjp)
    return Tensor(data)


# -- broadcasting (scalar <-> tensor, 1xD row across NxD) --------------------


def _bcast_check(sa, sb):
    """Validate the restricted broadcast between two shapes.

    Returns the output shape.  Allowed: identical shapes, a size-1 operand
    against anything, or a (1, D) row against (N, D).
    """
    if sa == sb:
        return sa
    if math.prod(sa) == 1:
        return sb
    if math.prod(sb) == 1:
        return sa
    if len(sa) == 2 and len(sb) == 2 and sa[1] == sb[1]:
        if sa[0] == 1:
            return sb
        if sb[0] == 1:
            return sa
    raise ShapeError(f"unsupported broadcast between {sa} and {sb}")


def _reduce_to(g, shape):
    """Sum a gradient back down to a broadcast operand's shape."""
    if g.shape == tuple(shape):
        return g
    if math.prod(shape) == 1:
        return np.full(shape, g.sum(), dtype=g.dtype)
    # row case: (N, D) gradient -> (1, D)
    return g.sum(axis=0, keepdims=True)


def add(a, b):
    a, b = (a if isinstance(a, Tensor) else _as_tensor(a, b),
            b if isinstance(b, Tensor) else _as_tensor(b, a))
    _check_dtypes(a, b)
    _bcast_check(a.shape, b.shape)
    out = a.data + b.data

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _result(out, "add", (a, b), vjp)


def sub(a, b):
    a, b = (a if isinstance(a, Tensor) else _as_tensor(a, b),
            b if isinstance(b, Tensor) else _as_tensor(b, a))
    _check_dtypes(a, b)
    _bcast_check(a.shape, b.shape)
    out = a.data - b.data

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape) * -1.0

    return _result(out, "sub", (a, b), vjp)


def mul(a, b):
    a, b = (a if isinstance(a, Tensor) else _as_tensor(a, b),
            b if isinstance(b, Tensor) else _as_tensor(b, a))
    _check_dtypes(a, b)
    oshape = _bcast_check(a.shape, b.shape)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _reduce_to(g * np.broadcast_to(bd, oshape), a.shape)
        gb = _reduce_to(g * np.broadcast_to(ad, oshape), b.shape)
        return ga, gb

    return _result(out, "mul", (a, b), vjp)


def matmul(a, b):
    _check_dtypes(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return _result(out, "matmul", (a, b), vjp)


# -- elementwise nonlinearities ----------------------------------------------


def _sigmoid(x):
    # tanh form: overflow-free without branching
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    s = _sigmoid(a.data)

    def vjp(g):
        return (g * s * (1.0 - s),)

    return _result(s, "sigmoid", (a,), vjp)


def silu(a):
    s = _sigmoid(a.data)
    out = a.data * s
    x = a.data

    def vjp(g):
        return (g * s * (1.0 + x * (1.0 - s)),)

    return _result(out, "silu", (a,), vjp)


def softplus(a):
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    s = _sigmoid(x)

    def vjp(g):
        return (g * s,)

    return _result(out, "softplus", (a,), vjp)


def exp(a):
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _result(out, "exp", (a,), vjp)


def log(a):
    if np.any(a.data <= 0.0):
        raise NumericError("log requires strictly positive input")
    out = np.log(a.data)
    ad = a.data

    def vjp(g):
        return (g / ad,)

    return _result(out, "log", (a,), vjp)


# -- reductions ---------------------------------------------------------------


def tsum(a, axis=None):
    """Sum over everything (scalar result shaped (1,1)) or over axis 0/1."""
    if axis is None:
        out = np.full((1, 1), a.data.sum(), dtype=a.dtype)
    elif axis in (0, 1):
        if a.data.ndim != 2:
            raise ShapeError("axis reductions require a 2-D tensor")
        out = a.data.sum(axis=axis, keepdims=True)
    else:
        raise ShapeError(f"unsupported reduction axis {axis}")
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.full(shape, g.reshape(-1)[0], dtype=g.dtype),)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(out, "sum", (a,), vjp)


def tmean(a, axis=None):
    if axis is None:
        n = a.data.size
        out = np.full((1, 1), a.data.mean(), dtype=a.dtype)
    else:
        if a.data.ndim != 2 or axis not in (0, 1):
            raise ShapeError("axis reductions require a 2-D tensor")
        n = a.shape[axis]
        out = a.data.mean(axis=axis, keepdims=True)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.full(shape, g.reshape(-1)[0] / n, dtype=g.dtype),)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _result(out, "mean", (a,), vjp)


# -- structural ops -----------------------------------------------------------


def slice_cols(a, j0, j1):
    if a.data.ndim != 2 or not (0 <= j0 < j1 <= a.shape[1]):
        raise ShapeError(f"bad column slice [{j0}:{j1}] of {a.shape}")
    out = a.data[:, j0:j1].copy()
    shape = a.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[:, j0:j1] = g
        return (gx,)

    return _result(out, "slice_cols", (a,), vjp)


def take_row(a, i):
    if a.data.ndim != 2 or not (0 <= i < a.shape[0]):
        raise ShapeError(f"row {i} out of range for {a.shape}")
    out = a.data[i : i + 1].copy()
    shape = a.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[i] = g[0]
        return (gx,)

    return _result(out, "take_row", (a,), vjp)


def gather_concat_rows(a, idx):
    """Gather row groups and concatenate them along columns.

    idx is an integer (G, P) array; output row g is the concatenation of
    rows idx[g, 0..P-1] of a, giving shape (G, P*D).  Used to flatten
    non-overlapping patches; indices need not be unique, backward
    scatter-adds.
    """
    idx = np.asarray(idx)
    if a.data.ndim != 2 or idx.ndim != 2:
        raise ShapeError("gather_concat_rows expects 2-D input and index")
    if idx.min() < 0 or idx.max() >= a.shape[0]:
        raise ShapeError("gather index out of range")
    g_rows, p = idx.shape
    d = a.shape[1]
    out = a.data[idx.ravel()].reshape(g_rows, p * d)
    shape = a.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(gx, idx.ravel(), g.reshape(g_rows * p, d))
        return (gx,)

    return _result(out, "gather_concat_rows", (a,), vjp)


# -- fused layers -------------------------------------------------------------

RMS_EPS = 1e-6


def rms_norm(x, gain, bias):
    """Row-wise RMS normalization: x / rms(x) * gain + bias.

    gain and bias are (1, D) rows; saves the input and the per-row inverse
    rms for backward.
    """
    _check_dtypes(x, gain, bias)
    if x.data.ndim != 2 or gain.shape != (1, x.shape[1]) or bias.shape != (1, x.shape[1]):
        raise ShapeError("rms_norm expects x (N,D), gain (1,D), bias (1,D)")
    xd = x.data
    inv = 1.0 / np.sqrt((xd * xd).mean(axis=1, keepdims=True) + RMS_EPS)
    xhat = xd * inv
    out = xhat * gain.data + bias.data
    d = xd.shape[1]
    gd = gain.data

    def vjp(g):
        ggain = (g * xhat).sum(axis=0, keepdims=True)
        gbias = g.sum(axis=0, keepdims=True)
        u = g * gd
        gx = u * inv - (inv ** 3) * xd * ((u * xd).sum(axis=1, keepdims=True) / d)
        return gx, ggain, gbias

    return _result(out, "rms_norm", (x, gain, bias), vjp)


def causal_conv1d(x, w, bias):
    """Depthwise causal convolution over the sequence axis.

    x is (L, D), w is (k, D) with tap j applied to x[t-k+1+j], bias (1, D).
    Positions before the sequence start read zeros, so output t never sees
    inputs after t.
    """
    _check_dtypes(x, w, bias)
    if x.data.ndim != 2 or w.data.ndim != 2 or w.shape[1] != x.shape[1]:
        raise ShapeError("causal_conv1d expects x (L,D) and w (k,D)")
    if bias.shape != (1, x.shape[1]):
        raise ShapeError("conv bias must be (1,D)")
    length, d = x.shape
    k = w.shape[0]
    xp = np.zeros((length + k - 1, d), dtype=x.dtype)
    xp[k - 1 :] = x.data
    out = np.zeros((length, d), dtype=x.dtype)
    for j in range(k):
        out += w.data[j] * xp[j : j + length]
    out += bias.data
    wd = w.data

    def vjp(g):
        gw = np.empty_like(wd)
        for j in range(k):
            gw[j] = (g * xp[j : j + length]).sum(axis=0)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[j : j + length] += wd[j] * g
        gb = g.sum(axis=0, keepdims=True)
        return gxp[k - 1 :], gw, gb

    return _result(out, "causal_conv1d", (x, w, bias), vjp)


def cross_entropy_logits(logits, label):
    """Negative log softmax probability of the true class.

    logits is a (1, K) row, label an int in [0, K).  Stabilized by max
    subtraction; saves the softmax for backward.
    """
    if logits.data.ndim != 2 or logits.shape[0] != 1:
        raise ShapeError("cross_entropy_logits expects a (1, K) logit row")
    k = logits.shape[1]
    label = int(label)
    if not 0 <= label < k:
        raise ShapeError(f"label {label} out of range for {k} classes")
    z = logits.data - logits.data.max()
    ez = np.exp(z)
    p = ez / ez.sum()
    loss = np.log(ez.sum()) - z[0, label]
    out = np.full((1, 1), loss, dtype=logits.dtype)

    def vjp(g):
        gl = p.copy()
        gl[0, label] -= 1.0
        return (gl * g.reshape(-1)[0],)

    return _result(out, "cross_entropy", (logits,), vjp)


# -- backward pass ------------------------------------------------------------


def topo_nodes(root):
    """All op nodes reachable from root, in topological (creation) order."""
    seen = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if t.id in seen or t.op is None:
            continue
        seen[t.id] = t
        stack.extend(t.parents)
    return [seen[i] for i in sorted(seen)]


def backward(loss):
    """Populate .grad on every requires_grad leaf reachable from loss.

    loss must be scalar (a single element).  Repeated calls accumulate into
    existing leaf gradients; traversal follows reversed creation ids, which
    is a valid reverse topological order, visiting each node exactly once.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss.op is None:
        if loss.requires_grad:
            seed = np.ones_like(loss.data)
            loss.grad = seed if loss.grad is None else loss.grad + seed
        return
    grads = {loss.id: np.ones_like(loss.data)}
    for node in reversed(topo_nodes(loss)):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.needs_grad:
                continue
            if parent.op is None:
                if parent.requires_grad:
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            elif parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg


# -- finite-difference checking ------------------------------------------------

# Below this gradient magnitude, discrepancies are measured on an absolute
# scale; central differences in double precision carry ~1e-10 noise which
# would otherwise swamp the relative error of near-zero gradients.
_GRADCHECK_FLOOR = 1e-2


@dataclass
class GradCheckReport:
    tol: float
    max_rel_err: dict = field(default_factory=dict)
    nan_encountered: bool = False

    @property
    def passed(self):
        if self.nan_encountered:
            return False
        return all(v < self.tol for v in self.max_rel_err.values())

    def __str__(self):
        lines = [f"grad check (tol {self.tol:g}): {'PASS' if self.passed else 'FAIL'}"]
        for name, err in self.max_rel_err.items():
            lines.append(f"  {name}: max rel err {err:.3e}")
        if self.nan_encountered:
            lines.append("  NaN encountered")
        return "\n".join(lines)


def grad_check(f, leaves, h=1e-5, tol=1e-5):
    """Compare analytic gradients of f() against central differences.

    f rebuilds its graph from the current leaf values on every call and
    returns a scalar Tensor.  leaves is a dict name -> Tensor (or a list,
    named by index); every leaf should be float64 for the differences to be
    trustworthy.
    """
    if not isinstance(leaves, dict):
        leaves = {str(i): t for i, t in enumerate(leaves)}
    for t in leaves.values():
        t.zero_grad()
    loss = f()
    backward(loss)
    analytic = {
        name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
        for name, t in leaves.items()
    }

    report = GradCheckReport(tol=tol)
    for name, t in leaves.items():
        a = analytic[name]
        worst = 0.0
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            if not np.isfinite(num) or not np.isfinite(a.reshape(-1)[i]):
                report.nan_encountered = True
                continue
            ai = a.reshape(-1)[i]
            denom = max(abs(ai), abs(num), _GRADCHECK_FLOOR)
            worst = max(worst, abs(ai - num) / denom)
        report.max_rel_err[name] = worst
    return report
