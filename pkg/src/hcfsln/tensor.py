"""Dense float64 tensors with a reverse-mode gradient tape.

All model math runs through the primitives in this module. A Tensor wraps a
row-major numpy float64 array; while a Tape is active, every primitive whose
inputs require gradients records a backward closure on the tape. backward()
replays the tape in reverse creation order, which is a valid reverse
topological order because inputs are always created before outputs.
"""
from __future__ import annotations

import logging
import threading

import numpy as np

logger = logging.getLogger(__name__)


class ShapeError(ValueError):
    """Operand shapes violate a primitive's contract."""


class DomainError(ValueError):
    """Input outside a primitive's mathematical domain (e.g. acosh arg < 1)."""


class NumericError(ArithmeticError):
    """Non-finite value produced from finite inputs."""


# Count of acosh arguments nudged up to 1 + 1e-15; exposed for diagnostics.
acosh_clamp_count = 0

# When True every primitive checks its output for NaN/Inf. Costs a full pass
# over each result, so the training loop leaves it off and checks the loss.
check_finite = False

class _TapeStack(threading.local):
    # one tape stack per thread: independent tapes may run concurrently
    def __init__(self):
        self.stack = []


_TLS = _TapeStack()


class Tape:
    """Ordered record of primitives executed while the tape is active."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        _TLS.stack.append(self)
        return self

    def __exit__(self, *exc):
        _TLS.stack.pop()
        return False


def _recording():
    return bool(_TLS.stack)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_grad_borrowed", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._grad_borrowed = False
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None
        self._grad_borrowed = False

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _accum(t, g):
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        # store by reference; mark borrowed so a later accumulation does not
        # mutate an array that may also be another tensor's gradient
        t.grad = g
        t._grad_borrowed = True
    elif t._grad_borrowed:
        t.grad = t.grad + g
        t._grad_borrowed = False
    else:
        t.grad += g


def _make(data, parents, backward):
    if check_finite and not np.all(np.isfinite(data)):
        raise NumericError("non-finite value produced by a primitive")
    out = Tensor(data)
    if _recording() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        _TLS.stack[-1].nodes.append(out)
    return out


def backward(loss):
    """Populate grad buffers of every requires_grad leaf reachable from loss.

    The active tape is consumed: a new forward pass is needed before calling
    backward again.
    """
    if not _TLS.stack:
        raise RuntimeError("backward() called with no active tape")
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
    tape = _TLS.stack[-1]
    if loss._backward is None:
        raise RuntimeError(
            "loss was not recorded on the active tape (tape already consumed, "
            "or no input requires gradients)"
        )
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node.grad is not None and node._backward is not None:
            node._backward(node.grad)
        node._backward = None  # consumed: a second backward needs a new forward
    tape.nodes.clear()


def _check_broadcast(a, b):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.data.shape} and {b.data.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), bwd)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.data - b.data, (a, b), bwd)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * b.data)
        if b.requires_grad:
            _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), bwd)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g / b.data)
        if b.requires_grad:
            _accum(b, -g * a.data / (b.data * b.data))

    return _make(a.data / b.data, (a, b), bwd)


def neg(a):
    a = as_tensor(a)

    def bwd(g):
        _accum(a, -g)

    return _make(-a.data, (a,), bwd)


def square(a):
    a = as_tensor(a)

    def bwd(g):
        _accum(a, 2.0 * a.data * g)

    return _make(a.data * a.data, (a,), bwd)


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def bwd(g):
        _accum(a, g / (2.0 * out))

    return _make(out, (a,), bwd)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def bwd(g):
        _accum(a, g * out)

    return _make(out, (a,), bwd)


def log(a):
    a = as_tensor(a)

    def bwd(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), bwd)


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - out * out))

    return _make(out, (a,), bwd)


def relu(a):
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def bwd(g):
        _accum(a, g * (a.data > 0.0))

    return _make(out, (a,), bwd)


def clamp_min(a, floor):
    """max(a, floor) elementwise; gradient flows only where a > floor."""
    a = as_tensor(a)

    def bwd(g):
        _accum(a, g * (a.data > floor))

    return _make(np.maximum(a.data, floor), (a,), bwd)


def acosh(a):
    """Inverse hyperbolic cosine with the hyperbolic-distance domain guard.

    Arguments in [1 - 1e-9, 1) are treated as rounding at the coincident-point
    limit and clamped up to exactly 1 (so identical points give distance 0);
    anything smaller signals a broken ball invariant upstream and raises. The
    gradient denominator is floored to stay finite at the clamp point.
    """
    global acosh_clamp_count
    a = as_tensor(a)
    if np.any(a.data < 1.0 - 1e-9):
        raise DomainError(f"acosh argument below 1: min={a.data.min()}")
    n_clamped = int(np.count_nonzero(a.data < 1.0))
    if n_clamped:
        acosh_clamp_count += n_clamped
        logger.debug("acosh clamped %d argument(s) to 1", n_clamped)
    arg = np.maximum(a.data, 1.0)

    def bwd(g):
        _accum(a, g / np.sqrt(np.maximum(arg * arg - 1.0, 1e-15)))

    return _make(np.arccosh(arg), (a,), bwd)


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.data.shape))

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.data.shape[ax] for ax in axes]))

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g / n, a.data.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg / n, a.data.shape))

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd)


# ---------------------------------------------------------------------------
# fused neural primitives


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accum(a, out * (g - dot))

    return _make(out, (a,), bwd)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bwd(g):
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accum(x, (dxhat - m1 - xhat * m2) * inv)
        red = tuple(range(g.ndim - 1))
        _accum(gain, (g * xhat).sum(axis=red))
        _accum(bias, g.sum(axis=red))

    return _make(out, (x, gain, bias), bwd)


def dropout(x, rate, rng):
    """Inverted dropout; identity when rate == 0."""
    x = as_tensor(x)
    if rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)

    def bwd(g):
        _accum(x, g * mask)

    return _make(x.data * mask, (x,), bwd)


def l2norm(x, keepdims=False):
    """Euclidean norm over the last axis, with a zero-safe gradient."""
    x = as_tensor(x)
    n = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))

    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, -1)
        _accum(x, gg * x.data / np.maximum(n, 1e-30))

    return _make(n if keepdims else n[..., 0], (x,), bwd)


def clip_max_norm(x, max_norm):
    """Rescale rows (last axis) whose Euclidean norm exceeds max_norm."""
    x = as_tensor(x)
    n = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    factor = np.minimum(1.0, max_norm / np.maximum(n, 1e-30))
    out = x.data * factor

    def bwd(g):
        clipped = factor < 1.0
        gx = g * factor
        # on clipped rows the map is x -> max_norm * x / |x|
        dot = (g * x.data).sum(axis=-1, keepdims=True)
        gx_clipped = factor * (g - x.data * dot / (n * n))
        _accum(x, np.where(clipped, gx_clipped, gx))

    return _make(out, (x,), bwd)


# ---------------------------------------------------------------------------
# linear algebra and convolution


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 1 or b.data.ndim < 2:
        raise ShapeError("matmul operands must be at least rank 1 and 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, g @ b.data.swapaxes(-1, -2))
        if b.requires_grad:
            _accum(b, a.data.swapaxes(-1, -2) @ g)

    return _make(out, (a, b), bwd)


def conv1d(x, w, b=None):
    """Same-padded 1-D convolution over the second-to-last axis.

    x: (..., L, C_in), w: (k, C_in, C_out), b: (C_out,) optional.
    """
    x, w = as_tensor(x), as_tensor(w)
    k, cin, cout = w.data.shape
    if x.data.shape[-1] != cin:
        raise ShapeError(f"conv1d channels: input has {x.data.shape[-1]}, kernel expects {cin}")
    L = x.data.shape[-2]
    if k > L:
        raise ShapeError(f"conv1d kernel width {k} exceeds sequence length {L}")
    pl = k // 2
    pad = [(0, 0)] * (x.data.ndim - 2) + [(pl, k - 1 - pl), (0, 0)]
    xp = np.pad(x.data, pad)
    # same-padded conv as a sum of k shifted matmuls: batched GEMMs beat
    # einsum over strided windows by a wide margin here
    out = xp[..., 0:L, :] @ w.data[0]
    for j in range(1, k):
        out += xp[..., j : j + L, :] @ w.data[j]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data

    def bwd(g):
        if w.requires_grad:
            g2 = g.reshape(-1, L, cout)
            xp2 = xp.reshape(-1, L + k - 1, cin)
            dw = np.empty_like(w.data)
            for j in range(k):
                dw[j] = np.einsum("slc,slo->co", xp2[:, j : j + L, :], g2, optimize=True)
            _accum(w, dw)
        if b is not None and b.requires_grad:
            _accum(b, g.reshape(-1, cout).sum(axis=0))
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[..., j : j + L, :] += g @ w.data[j].T
            _accum(x, dxp[..., pl : pl + L, :])

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bwd)


# ---------------------------------------------------------------------------
# structural ops


def reshape(a, shape):
    a = as_tensor(a)

    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bwd)


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)

    def bwd(g):
        _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), bwd)


def getitem(a, idx):
    a = as_tensor(a)

    def bwd(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        _accum(a, buf)

    return _make(a.data[idx], (a,), bwd)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        for i, t in enumerate(tensors):
            _accum(t, np.take(g, i, axis=axis))

    return _make(out, tuple(tensors), bwd)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def bwd(g):
        offs = np.cumsum([0] + sizes)
        for i, t in enumerate(tensors):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offs[i], offs[i + 1])
            _accum(t, g[tuple(sl)])

    return _make(out, tuple(tensors), bwd)


# ---------------------------------------------------------------------------
# gradient checking


class GradCheckReport:
    def __init__(self, max_rel_error, per_param, tol):
        self.max_rel_error = max_rel_error
        self.per_param = per_param  # name -> max rel error
        self.tol = tol
        self.passed = max_rel_error < tol

    def __repr__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"GradCheckReport({status}, max_rel_error={self.max_rel_error:.3e}, tol={self.tol:.1e})"


def grad_check(f, params, step=1e-5, tol=1e-4):
    """Compare tape gradients of scalar f against central finite differences.

    params is a list of (name, Tensor) leaves with requires_grad set. f takes
    no arguments and reads the params; it must be deterministic (dropout off).
    Relative error uses a floor of 0.01 on the denominator so near-zero
    gradients are compared absolutely.
    """
    if step <= 0:
        raise ValueError("step must be positive")

    def feval():
        out = f()
        return out.item() if isinstance(out, Tensor) else float(out)

    if feval() != feval():
        raise RuntimeError("grad_check requires a deterministic function (got differing values)")

    for _, p in params:
        p.zero_grad()
    with Tape():
        loss = f()
        backward(loss)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in params}

    per_param = {}
    worst = 0.0
    for name, p in params:
        flat = p.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = feval()
            flat[i] = orig - step
            fm = feval()
            flat[i] = orig
            fd[i] = (fp - fm) / (2.0 * step)
        a = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-2)
        err = float(np.max(np.abs(a - fd) / denom)) if flat.size else 0.0
        per_param[name] = err
        worst = max(worst, err)
    return GradCheckReport(worst, per_param, tol)
