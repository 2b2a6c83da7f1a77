"""Reverse-mode automatic differentiation over numpy buffers.

A small tape engine in the micrograd style: every operation returns a new
``Tensor`` whose ``_backward`` closure scatters the upstream gradient into
its parents, and ``Tensor.backward()`` replays the closures once each in
reverse topological order.

Conventions used throughout the package:

* buffers are row-major contiguous; sequence data is time-major
  ``[T, features]``
* float32 is the working precision, float64 exists for verification
  (finite differences are unreliable at float32)
* broadcasting is limited to a trailing-suffix match (a ``[d]`` bias
  against a ``[T, d]`` activation); anything else needs an explicit
  reshape/expand, which keeps the correctness surface small
"""

from __future__ import annotations

import numpy as np

# Kept off by default; tests flip it on to assert ops do not manufacture
# NaN/Inf from finite inputs. logsumexp is exempt (-inf is a legal value
# there by contract).
CHECK_FINITE = False

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class ShapeError(ValueError):
    """Operand shapes (or dtypes) incompatible with the requested op."""


class DomainError(ValueError):
    """Input value outside an op's mathematical domain."""


def _as_buffer(data, dtype):
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """N-dimensional float buffer with optional gradient-tape participation."""

    __slots__ = ("data", "requires_grad", "grad", "_prev", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_buffer(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._prev = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def backward(self):
        """Populate ``.grad`` on every reachable tensor that requires it.

        Only defined for scalar outputs. Each recorded op is visited exactly
        once; fan-out accumulates with ``+=``.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        topo = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other, self.dtype))

    def __radd__(self, other):
        return add(self, _coerce(other, self.dtype))

    def __sub__(self, other):
        return add(self, neg(_coerce(other, self.dtype)))

    def __rsub__(self, other):
        return add(neg(self), _coerce(other, self.dtype))

    def __mul__(self, other):
        return mul(self, _coerce(other, self.dtype))

    def __rmul__(self, other):
        return mul(self, _coerce(other, self.dtype))

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return mul(self, _coerce(1.0 / float(other), self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)


def _coerce(value, dtype):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._prev:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad = t.grad + np.asarray(g, dtype=t.data.dtype)


def from_op(data, parents, backward):
    """Wrap a freshly computed buffer as a tape node.

    ``backward`` is invoked with the output tensor once the upstream
    gradient is available; it is responsible for calling ``accumulate``
    on each parent. Recording is skipped entirely when no parent needs
    gradients, so inference pays no tape cost.
    """
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = tuple(parents)
        out._backward = lambda: backward(out)
    return out


accumulate = _accumulate


def _check_binary(a, b, op):
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.dtype.name} vs {b.dtype.name}")


def _finite(arr, op):
    if CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{op} produced non-finite values")
    return arr


# -- arithmetic ----------------------------------------------------------


def _broadcast_kind(a_shape, b_shape):
    """'same', 'suffix' (b broadcasts over a's leading axes) or None."""
    if a_shape == b_shape:
        return "same"
    nb = len(b_shape)
    if nb < len(a_shape) and a_shape[len(a_shape) - nb:] == b_shape:
        return "suffix"
    return None


def _sum_to(g, shape):
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    return g


def add(a, b):
    _check_binary(a, b, "add")
    kind = _broadcast_kind(a.shape, b.shape)
    if kind is None and _broadcast_kind(b.shape, a.shape):
        return add(b, a)
    if kind is None:
        raise ShapeError(f"add: incompatible shapes {a.shape} vs {b.shape}")
    data = _finite(a.data + b.data, "add")

    def backward(out):
        _accumulate(a, out.grad)
        _accumulate(b, _sum_to(out.grad, b.shape))

    return from_op(data, (a, b), backward)


def mul(a, b):
    _check_binary(a, b, "mul")
    kind = _broadcast_kind(a.shape, b.shape)
    if kind is None and _broadcast_kind(b.shape, a.shape):
        return mul(b, a)
    if kind is None:
        raise ShapeError(f"mul: incompatible shapes {a.shape} vs {b.shape}")
    data = _finite(a.data * b.data, "mul")

    def backward(out):
        _accumulate(a, out.grad * b.data)
        _accumulate(b, _sum_to(out.grad * a.data, b.shape))

    return from_op(data, (a, b), backward)


def neg(a):
    def backward(out):
        _accumulate(a, -out.grad)

    return from_op(-a.data, (a,), backward)


def matmul(a, b):
    _check_binary(a, b, "matmul")
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    data = _finite(a.data @ b.data, "matmul")

    def backward(out):
        _accumulate(a, out.grad @ b.data.T)
        _accumulate(b, a.data.T @ out.grad)

    return from_op(data, (a, b), backward)


# -- elementwise nonlinearities ------------------------------------------

_GELU_K = 0.7978845608028654  # sqrt(2/pi)
_GELU_C = 0.044715


def exp(a):
    e = _finite(np.exp(a.data), "exp")

    def backward(out):
        _accumulate(a, out.grad * e)

    return from_op(e, (a,), backward)


def log(a):
    bad = a.data <= 0
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DomainError(f"log: non-positive input {a.data[idx]} at index {idx}")
    data = np.log(a.data)

    def backward(out):
        _accumulate(a, out.grad / a.data)

    return from_op(data, (a,), backward)


def _sigmoid(x):
    # piecewise form avoids exp overflow on large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    s = _sigmoid(a.data)

    def backward(out):
        _accumulate(a, out.grad * s * (1.0 - s))

    return from_op(s, (a,), backward)


def softplus(a):
    # log(1 + e^x) = logaddexp(0, x), stable on both tails
    data = np.logaddexp(np.zeros((), dtype=a.dtype), a.data)

    def backward(out):
        _accumulate(a, out.grad * _sigmoid(a.data))

    return from_op(data, (a,), backward)


def silu(a):
    s = _sigmoid(a.data)
    data = a.data * s

    def backward(out):
        _accumulate(a, out.grad * (s * (1.0 + a.data * (1.0 - s))))

    return from_op(data, (a,), backward)


def gelu(a):
    """tanh-approximation GELU: 0.5*x*(1 + tanh(K*(x + C*x^3)))."""
    x = a.data
    u = _GELU_K * (x + _GELU_C * x ** 3)
    t = np.tanh(u)
    data = 0.5 * x * (1.0 + t)

    def backward(out):
        du = _GELU_K * (1.0 + 3.0 * _GELU_C * x ** 2)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * du
        _accumulate(a, out.grad * d)

    return from_op(data, (a,), backward)


# -- reductions and normalizations ----------------------------------------


def tsum(a):
    data = np.asarray(a.data.sum(), dtype=a.dtype)

    def backward(out):
        _accumulate(a, np.broadcast_to(out.grad, a.shape))

    return from_op(data, (a,), backward)


def tmean(a):
    n = a.data.size
    data = np.asarray(a.data.mean(), dtype=a.dtype)

    def backward(out):
        _accumulate(a, np.broadcast_to(out.grad / n, a.shape))

    return from_op(data, (a,), backward)


def logsumexp(a, axis):
    """Max-shifted reduction along ``axis``; an all-(-inf) slice maps to -inf."""
    x = a.data
    if not isinstance(axis, int):
        raise ShapeError("logsumexp: axis must be an int")
    if axis < -x.ndim or axis >= x.ndim:
        raise ShapeError(f"logsumexp: axis {axis} invalid for shape {a.shape}")
    m = np.max(x, axis=axis, keepdims=True)
    safe_m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(invalid="ignore"):
        s = np.exp(x - safe_m).sum(axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        lse = np.where(np.isfinite(m), safe_m + np.log(s), m)
    data = np.squeeze(lse, axis=axis)

    def backward(out):
        g = np.expand_dims(out.grad, axis)
        with np.errstate(invalid="ignore"):
            w = np.exp(x - lse)
        w = np.where(np.isfinite(lse), w, 0.0)
        _accumulate(a, g * w)

    return from_op(data, (a,), backward)


def log_softmax(a):
    """Row-wise log softmax along the last axis."""
    x = a.data
    m = np.max(x, axis=-1, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True)) + m
    data = x - lse

    def backward(out):
        g = out.grad
        _accumulate(a, g - np.exp(data) * g.sum(axis=-1, keepdims=True))

    return from_op(data, (a,), backward)


def layer_norm(a, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if gamma.shape != a.shape[-1:] or beta.shape != a.shape[-1:]:
        raise ShapeError(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match feature dim of {a.shape}"
        )
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = _finite(xhat * gamma.data + beta.data, "layer_norm")

    def backward(out):
        g = out.grad
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accumulate(a, inv * (dxhat - m1 - xhat * m2))
        lead = tuple(range(g.ndim - 1))
        _accumulate(gamma, (g * xhat).sum(axis=lead))
        _accumulate(beta, g.sum(axis=lead))

    return from_op(data, (a, gamma, beta), backward)


# -- convolutions ----------------------------------------------------------


def conv1d_depthwise(x, kernel, bias=None, causal=True):
    """Per-channel 1-D convolution of a time-major ``[T, d]`` sequence.

    ``kernel`` is ``[k, d]``: each channel has its own length-k filter,
    ``y[t] = sum_j kernel[j] * x[t - j]`` (kernel index 0 sits at lag 0).
    Causal mode left-pads with ``k - 1`` zeros so frame t only sees inputs
    at or before t; non-causal mode centers the filter with symmetric zero
    padding. ``k > T`` is fine (the window is then mostly padding).
    """
    _check_binary(x, kernel, "conv1d_depthwise")
    if x.data.ndim != 2 or kernel.data.ndim != 2:
        raise ShapeError(f"conv1d_depthwise: expects [T,d] and [k,d], got {x.shape} and {kernel.shape}")
    k, d = kernel.shape
    if k < 1:
        raise ShapeError(f"conv1d_depthwise: kernel length must be >= 1, got {k}")
    if x.shape[1] != d:
        raise ShapeError(f"conv1d_depthwise: channel mismatch {x.shape} vs {kernel.shape}")
    T = x.shape[0]
    if causal:
        left, right = k - 1, 0
    else:
        center = (k - 1) // 2
        left, right = k - 1 - center, center
    xp = np.zeros((T + k - 1, d), dtype=x.data.dtype)
    xp[left:left + T] = x.data
    y = np.zeros_like(x.data)
    kd = kernel.data
    for j in range(k):
        y += kd[j] * xp[k - 1 - j:k - 1 - j + T]
    if bias is not None:
        _check_binary(x, bias, "conv1d_depthwise")
        if bias.shape != (d,):
            raise ShapeError(f"conv1d_depthwise: bias shape {bias.shape} != ({d},)")
        y = y + bias.data
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(out):
        g = out.grad
        dxp = np.zeros_like(xp)
        dk = np.zeros_like(kd)
        for j in range(k):
            sl = slice(k - 1 - j, k - 1 - j + T)
            dxp[sl] += kd[j] * g
            dk[j] = (g * xp[sl]).sum(axis=0)
        _accumulate(x, dxp[left:left + T])
        _accumulate(kernel, dk)
        if bias is not None:
            _accumulate(bias, g.sum(axis=0))

    return from_op(_finite(y, "conv1d_depthwise"), parents, backward)


def _same_pad(n, k, s):
    out = -(-n // s)  # ceil
    total = max((out - 1) * s + k - n, 0)
    return out, total // 2, total - total // 2


def conv2d(x, w, bias=None, stride=2):
    """2-D convolution with "same" zero padding (TF convention).

    ``x`` is ``[C_in, H, W]``, ``w`` is ``[C_out, C_in, kh, kw]``; output
    spatial extents are ``ceil(H/stride) x ceil(W/stride)`` with total
    padding split low-side-first. Used by the frame-rate subsampler.
    """
    _check_binary(x, w, "conv2d")
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: expects [C,H,W] and [O,C,kh,kw], got {x.shape} and {w.shape}")
    cin, H, W = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: channel mismatch {x.shape} vs {w.shape}")
    Ho, ph0, ph1 = _same_pad(H, kh, stride)
    Wo, pw0, pw1 = _same_pad(W, kw, stride)
    xp = np.zeros((cin, H + ph0 + ph1, W + pw0 + pw1), dtype=x.data.dtype)
    xp[:, ph0:ph0 + H, pw0:pw0 + W] = x.data
    y = np.zeros((cout, Ho, Wo), dtype=x.data.dtype)
    wd = w.data
    for di in range(kh):
        for dj in range(kw):
            sl = xp[:, di:di + (Ho - 1) * stride + 1:stride, dj:dj + (Wo - 1) * stride + 1:stride]
            y += np.einsum("oi,ihw->ohw", wd[:, :, di, dj], sl, optimize=True)
    if bias is not None:
        _check_binary(x, bias, "conv2d")
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
        y = y + bias.data[:, None, None]
    parents = (x, w) if bias is None else (x, w, bias)

    def backward(out):
        g = out.grad
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(wd)
        for di in range(kh):
            for dj in range(kw):
                view = np.s_[:, di:di + (Ho - 1) * stride + 1:stride, dj:dj + (Wo - 1) * stride + 1:stride]
                dw[:, :, di, dj] = np.einsum("ohw,ihw->oi", g, xp[view], optimize=True)
                dxp[view] += np.einsum("oi,ohw->ihw", wd[:, :, di, dj], g, optimize=True)
        _accumulate(x, dxp[:, ph0:ph0 + H, pw0:pw0 + W])
        _accumulate(w, dw)
        if bias is not None:
            _accumulate(bias, g.sum(axis=(1, 2)))

    return from_op(_finite(y, "conv2d"), parents, backward)


# -- shape manipulation ----------------------------------------------------


def reshape(a, shape):
    data = a.data.reshape(shape).copy()

    def backward(out):
        _accumulate(a, out.grad.reshape(a.shape))

    return from_op(data, (a,), backward)


def transpose(a, axes):
    inv = tuple(int(i) for i in np.argsort(axes))
    data = np.ascontiguousarray(np.transpose(a.data, axes))

    def backward(out):
        _accumulate(a, np.transpose(out.grad, inv))

    return from_op(data, (a,), backward)


def slice_last(a, start, stop):
    """Contiguous slice along the last axis (with gradient)."""
    data = np.ascontiguousarray(a.data[..., start:stop])

    def backward(out):
        g = np.zeros_like(a.data)
        g[..., start:stop] = out.grad
        _accumulate(a, g)

    return from_op(data, (a,), backward)


def reverse_time(a):
    """Flip the leading (time) axis."""
    data = np.ascontiguousarray(a.data[::-1])

    def backward(out):
        _accumulate(a, out.grad[::-1])

    return from_op(data, (a,), backward)


def expand_cols(a, n):
    """Repeat a ``[T, 1]`` column ``n`` times to ``[T, n]``."""
    if a.data.ndim != 2 or a.shape[1] != 1:
        raise ShapeError(f"expand_cols: expects [T, 1], got {a.shape}")
    data = np.repeat(a.data, n, axis=1)

    def backward(out):
        _accumulate(a, out.grad.sum(axis=1, keepdims=True))

    return from_op(data, (a,), backward)


def dropout(a, rate, rng, train):
    """Inverted dropout; identity when ``train`` is false or ``rate`` is 0."""
    if not train or rate == 0.0:
        return a
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    keep = (rng.random(a.shape) >= rate).astype(a.data.dtype)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=a.data.dtype)
    data = a.data * keep * scale

    def backward(out):
        _accumulate(a, out.grad * keep * scale)

    return from_op(data, (a,), backward)


# -- verification -----------------------------------------------------------


def backward(loss):
    """Free-function alias for ``loss.backward()``."""
    loss.backward()


def grad_check(f, inputs, eps=1e-5):
    """Compare tape gradients of ``f(*inputs)`` against central differences.

    ``inputs`` are float64 leaf tensors with ``requires_grad=True``. Returns
    the worst relative error ``|a - n| / (|a| + |n| + 1e-12)`` over every
    coordinate of every input. ``eps`` should sit in [1e-7, 1e-3].
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"grad_check: eps {eps} outside [1e-7, 1e-3]")
    for t in inputs:
        if t.dtype != np.float64:
            raise ValueError("grad_check: inputs must be float64")
        t.grad = None
    out = f(*inputs)
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(*inputs).data)
            flat[i] = orig - eps
            fm = float(f(*inputs).data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            rel = abs(gflat[i] - num) / (abs(gflat[i]) + abs(num) + 1e-12)
            worst = max(worst, rel)
    return worst
