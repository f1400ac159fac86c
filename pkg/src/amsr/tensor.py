"""Dense tensors with reverse-mode automatic differentiation on an explicit tape.

Values are numpy arrays; image tensors use the NCHW layout, attention math uses
plain 2-D matrices or batched (B, p, q) stacks.  Every differentiable operation
appends one node to a Tape; insertion order is a valid topological order, so a
single reverse sweep computes all gradients.  Tensors themselves are immutable
values; all randomness and mutation live outside this module.

Set AMSR_DEBUG_NAN=1 (or call set_debug_checks) to assert finiteness after
every operation.  An op trace (kind, shapes, value range) can be sent to a text
stream via set_op_trace for debugging.
"""

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, ShapeError

_check_finite = os.environ.get("AMSR_DEBUG_NAN", "0") not in ("0", "")
_trace_stream = None
_kink_collector = None


def set_debug_checks(enabled):
    """Enable/disable the after-every-op finiteness assertion."""
    global _check_finite
    _check_finite = bool(enabled)


def set_kink_collector(collector):
    """Install a list that relu/abs append their branch patterns to; None disables.

    Finite-difference checks use this to detect probes whose +-h interval
    straddles a kink, where central differences are meaningless.
    """
    global _kink_collector
    _kink_collector = collector


def set_op_trace(stream):
    """Send a one-line trace per op (kind, shapes, value range) to ``stream``; None disables."""
    global _trace_stream
    _trace_stream = stream


class Node:
    """One recorded operation: kind, parent node indices, and a backward closure.

    ``backward(grad_out)`` returns one gradient array per parent (None for
    parents that do not need a gradient).  Leaf nodes have backward None.
    """

    __slots__ = ("op", "parents", "backward")

    def __init__(self, op, parents, backward):
        self.op = op
        self.parents = parents
        self.backward = backward


class Tape:
    """Append-only record of operations; insertion order is topological order."""

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def record(self, op, parents, backward):
        k = len(self.nodes)
        for p in parents:
            if p is not None and not (0 <= p < k):
                raise ContractError(f"tape node {k} ({op}) has parent {p} out of order")
        self.nodes.append(Node(op, parents, backward))
        return k


class Tensor:
    """Immutable dense array, optionally attached to a tape node."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape=None, node=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, taped={self.node is not None})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)


def constant(data, dtype=None):
    """Tensor that participates in forward math but receives no gradient."""
    arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
    return Tensor(arr)


def leaf(data, tape, dtype=None):
    """Gradient-receiving input (parameter) registered on ``tape``."""
    arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
    t = Tensor(arr, tape=tape)
    t.node = tape.record("leaf", (), None)
    return t


def _result(op, out_data, inputs, backward):
    """Wrap op output; record on the inputs' tape when any input is taped."""
    if _check_finite and not np.all(np.isfinite(out_data)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    if _trace_stream is not None:
        shapes = ",".join(str(t.shape) for t in inputs)
        lo = float(np.min(out_data)) if out_data.size else float("nan")
        hi = float(np.max(out_data)) if out_data.size else float("nan")
        _trace_stream.write(f"{op} {shapes} -> {out_data.shape} range [{lo:.4g}, {hi:.4g}]\n")
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise ContractError(f"{op}: inputs live on different tapes")
            tape = t.tape
    out = Tensor(out_data, tape=tape)
    if tape is not None:
        parents = tuple(t.node for t in inputs)
        out.node = tape.record(op, parents, backward)
    return out


class GradMap:
    """Gradients from one backward pass, looked up by the tensor that owns them."""

    def __init__(self, tape, grads):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, t):
        if t.tape is not self._tape or t.node is None:
            raise ContractError("tensor does not belong to the differentiated tape")
        g = self._grads[t.node]
        if g is None:
            return np.zeros_like(t.data)
        return g


def backward(tape, loss):
    """Reverse sweep from a scalar loss; returns a GradMap over the tape's leaves.

    Visits nodes once, in reverse insertion order; leaves not reachable from
    the loss read back as zeros.
    """
    if loss.tape is not tape or loss.node is None:
        raise ContractError("loss was not produced on this tape")
    if loss.shape != ():
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    grads = [None] * len(tape.nodes)
    grads[loss.node] = np.ones((), dtype=loss.dtype)
    for k in range(loss.node, -1, -1):
        g = grads[k]
        node = tape.nodes[k]
        if g is None or node.backward is None:
            continue
        for p, pg in zip(node.parents, node.backward(g)):
            if p is None or pg is None:
                continue
            grads[p] = pg if grads[p] is None else grads[p] + pg
    return GradMap(tape, grads)


# ---------------------------------------------------------------------------
# convolution


def conv2d(x, w, b, pad):
    """2-D correlation, stride 1, zero padding; differentiable in x, w and b.

    x: (n, Ci, H, W); w: (Co, Ci, Kh, Kw) with odd Kh, Kw; b: (Co,).
    Same-size output needs pad = (K - 1) // 2.
    """
    if x.ndim != 4 or w.ndim != 4 or b.ndim != 1:
        raise ShapeError(f"conv2d expects 4-D x, 4-D w, 1-D b; got {x.shape}, {w.shape}, {b.shape}")
    n, ci, h, wd = x.shape
    co, ciw, kh, kw = w.shape
    if ciw != ci:
        raise ShapeError(f"conv2d channel mismatch: weights expect {ciw} input channels, x has {ci} (x {x.shape}, w {w.shape})")
    if b.shape[0] != co:
        raise ShapeError(f"conv2d bias has {b.shape[0]} channels, weights produce {co}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel dims must be odd, got {kh}x{kw}")
    if not (0 <= pad <= min(kh, kw) - 1):
        raise ShapeError(f"conv2d pad must lie in [0, K-1] for a {kh}x{kw} kernel, got {pad}")
    ho = h + 2 * pad - kh + 1
    wo = wd + 2 * pad - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be {ho}x{wo} for input {h}x{wd}, kernel {kh}x{kw}, pad {pad}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (n, Ci, Ho, Wo, Kh, Kw)
    out = np.tensordot(cols, w.data, axes=([1, 4, 5], [1, 2, 3]))  # (n, Ho, Wo, Co)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + b.data[None, :, None, None]

    def bw(g):
        q = kh - 1 - pad, kw - 1 - pad
        gp = np.pad(g, ((0, 0), (0, 0), (q[0], q[0]), (q[1], q[1])))
        gcols = sliding_window_view(gp, (kh, kw), axis=(2, 3))
        wrot = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # (Ci, Co, Kh, Kw)
        dx = np.tensordot(gcols, wrot, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        dw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        db = g.sum(axis=(0, 2, 3))
        return np.ascontiguousarray(dx), dw, db

    return _result("conv2d", out, (x, w, b), bw)


# ---------------------------------------------------------------------------
# pointwise ops


def relu(x):
    out = np.maximum(x.data, 0)
    if _kink_collector is not None:
        _kink_collector.append(x.data > 0)

    def bw(g):
        return (g * (x.data > 0).astype(g.dtype),)

    return _result("relu", out, (x,), bw)


def sigmoid(x):
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _result("sigmoid", out, (x,), bw)


def _binary_shapes(xs, ys, op):
    """Exact match, or y of shape (n, c, 1, 1) broadcast over the spatial axes of x."""
    if xs == ys:
        return False
    if len(xs) == 4 and ys == (xs[0], xs[1], 1, 1):
        return True
    raise ShapeError(f"{op}: shapes {xs} and {ys} neither match nor form a per-channel gate")


def add(x, y):
    gate = _binary_shapes(x.shape, y.shape, "add")
    out = x.data + y.data

    def bw(g):
        gy = g.sum(axis=(2, 3), keepdims=True) if gate else g
        return g, gy

    return _result("add", out, (x, y), bw)


def sub(x, y):
    gate = _binary_shapes(x.shape, y.shape, "sub")
    out = x.data - y.data

    def bw(g):
        gy = g.sum(axis=(2, 3), keepdims=True) if gate else g
        return g, -gy

    return _result("sub", out, (x, y), bw)


def mul(x, y):
    gate = _binary_shapes(x.shape, y.shape, "mul")
    out = x.data * y.data

    def bw(g):
        gy = g * x.data
        if gate:
            gy = gy.sum(axis=(2, 3), keepdims=True)
        return g * y.data, gy

    return _result("mul", out, (x, y), bw)


def scale(x, s):
    s = float(s)
    out = x.data * s

    def bw(g):
        return (g * s,)

    return _result("scale", out, (x,), bw)


def absolute(x):
    out = np.abs(x.data)
    sign = np.sign(x.data)  # derivative at 0 fixed to 0
    if _kink_collector is not None:
        _kink_collector.append(sign >= 0)

    def bw(g):
        return (g * sign,)

    return _result("abs", out, (x,), bw)


# ---------------------------------------------------------------------------
# channel layout ops


def concat_channels(parts):
    if len(parts) < 2:
        raise ShapeError("concat_channels needs at least 2 parts")
    base = parts[0].shape
    for t in parts:
        if t.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (base[0], base[2], base[3]):
            raise ShapeError(
                "concat_channels parts must share (n, h, w): "
                + ", ".join(str(p.shape) for p in parts)
            )
    out = np.concatenate([t.data for t in parts], axis=1)
    offsets = np.cumsum([t.shape[1] for t in parts])[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, offsets, axis=1))

    return _result("concat_channels", out, tuple(parts), bw)


def slice_channels(x, start, stop):
    if x.ndim != 4 or not (0 <= start < stop <= x.shape[1]):
        raise ShapeError(f"slice_channels[{start}:{stop}] invalid for shape {x.shape}")
    out = np.ascontiguousarray(x.data[:, start:stop])

    def bw(g):
        dx = np.zeros_like(x.data)
        dx[:, start:stop] = g
        return (dx,)

    return _result("slice_channels", out, (x,), bw)


def reshape(x, shape):
    shape = tuple(int(v) for v in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} ({x.size} values) to {shape}")
    out = x.data.reshape(shape)

    def bw(g):
        return (g.reshape(x.shape),)

    return _result("reshape", out, (x,), bw)


def transpose_last2(x):
    if x.ndim < 2:
        raise ShapeError(f"transpose_last2 needs rank >= 2, got {x.shape}")
    out = np.ascontiguousarray(x.data.swapaxes(-1, -2))

    def bw(g):
        return (np.ascontiguousarray(g.swapaxes(-1, -2)),)

    return _result("transpose_last2", out, (x,), bw)


def pixel_shuffle(x, r):
    """Rearrange (n, C*r^2, H, W) -> (n, C, r*H, r*W).

    out[n, c, y*r+dy, x*r+dx] = in[n, c*r*r + dy*r + dx, y, x].
    """
    r = int(r)
    if x.ndim != 4 or r < 1:
        raise ShapeError(f"pixel_shuffle expects 4-D input and r >= 1, got {x.shape}, r={r}")
    n, c2, h, w = x.shape
    if c2 % (r * r) != 0:
        raise ShapeError(f"pixel_shuffle: {c2} channels not divisible by r^2 = {r * r}")
    c = c2 // (r * r)
    out = (
        x.data.reshape(n, c, r, r, h, w)
        .transpose(0, 1, 4, 2, 5, 3)  # (n, c, h, dy, w, dx)
        .reshape(n, c, h * r, w * r)
    )

    def bw(g):
        return (
            g.reshape(n, c, h, r, w, r)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, c2, h, w)
            .copy(),
        )

    return _result("pixel_shuffle", np.ascontiguousarray(out), (x,), bw)


def pixel_unshuffle(x, r):
    """Inverse of pixel_shuffle: (n, C, r*H, r*W) -> (n, C*r^2, H, W)."""
    r = int(r)
    if x.ndim != 4 or r < 1:
        raise ShapeError(f"pixel_unshuffle expects 4-D input and r >= 1, got {x.shape}, r={r}")
    n, c, hr, wr = x.shape
    if hr % r != 0 or wr % r != 0:
        raise ShapeError(f"pixel_unshuffle: spatial dims {hr}x{wr} not divisible by r={r}")
    h, w = hr // r, wr // r
    out = (
        x.data.reshape(n, c, h, r, w, r)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, c * r * r, h, w)
    )

    def bw(g):
        return (
            g.reshape(n, c, r, r, h, w)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, c, hr, wr)
            .copy(),
        )

    return _result("pixel_unshuffle", np.ascontiguousarray(out), (x,), bw)


# ---------------------------------------------------------------------------
# matrix ops


def _matmul_check(a, b):
    if a.ndim != b.ndim or a.ndim not in (2, 3):
        raise ShapeError(f"matmul needs two 2-D or two 3-D operands, got {a.shape} and {b.shape}")
    if a.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ShapeError(f"matmul batch mismatch: {a.shape} vs {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} vs {b.shape}")


def matmul(a, b):
    _matmul_check(a, b)
    out = a.data @ b.data

    def bw(g):
        return g @ b.data.swapaxes(-1, -2), a.data.swapaxes(-1, -2) @ g

    return _result("matmul", out, (a, b), bw)


def softmax_rows(a):
    """Softmax over the last axis, stabilised by row-max subtraction."""
    if a.ndim < 2:
        raise ShapeError(f"softmax_rows needs rank >= 2, got {a.shape}")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result("softmax_rows", out, (a,), bw)


def row_mean(x):
    """Mean over the last axis: (..., q) -> (...)."""
    if x.ndim < 2:
        raise ShapeError(f"row_mean needs rank >= 2, got {x.shape}")
    q = x.shape[-1]
    out = x.data.mean(axis=-1)

    def bw(g):
        return (np.broadcast_to(g[..., None] / q, x.shape).copy(),)

    return _result("row_mean", out, (x,), bw)


def covariance_pool(x):
    """Per-sample channel covariance of an NCHW map: (n, C, H, W) -> (n, C, C).

    Equals X @ Ibar @ X^T with Ibar = (1/s)(I - 11^T/s), s = H*W; symmetric PSD.
    """
    if x.ndim != 4:
        raise ShapeError(f"covariance_pool expects 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    s = h * w
    if s < 1:
        raise ShapeError("covariance_pool needs at least one spatial position")
    flat = x.data.reshape(n, c, s)
    centered = flat - flat.mean(axis=2, keepdims=True)
    out = centered @ centered.swapaxes(-1, -2) / s

    def bw(g):
        dc = (g + g.swapaxes(-1, -2)) @ centered / s
        dflat = dc - dc.mean(axis=2, keepdims=True)
        return (dflat.reshape(x.shape),)

    return _result("covariance_pool", out, (x,), bw)


def newton_schulz_sqrt(a, iters=5):
    """Approximate matrix square root of symmetric PSD input, (C, C) or batched (n, C, C).

    Pre-normalises by the trace, runs the coupled iteration
    Y <- Y * T, Z <- T * Z with T = (3I - Z Y)/2, and compensates by sqrt(trace).
    Inputs with trace < 1e-12 map to the zero matrix.  The backward pass
    differentiates through the unrolled iteration.
    """
    if a.ndim not in (2, 3) or a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"newton_schulz_sqrt needs square matrices, got {a.shape}")
    if iters < 1:
        raise ContractError(f"newton_schulz_sqrt needs iters >= 1, got {iters}")
    batched = a.ndim == 3
    ad = a.data if batched else a.data[None]
    n, c, _ = ad.shape
    eye = np.eye(c, dtype=ad.dtype)[None]

    tr = np.trace(ad, axis1=-2, axis2=-1)
    alive = tr >= 1e-12
    tr_safe = np.where(alive, tr, 1.0)[:, None, None]
    ahat = ad / tr_safe
    ys = [ahat]
    zs = [np.broadcast_to(eye, ahat.shape).copy()]
    ts = []
    y, z = ys[0], zs[0]
    for _ in range(iters):
        t = 0.5 * (3.0 * eye - z @ y)
        y = y @ t
        z = t @ z
        ts.append(t)
        ys.append(y)
        zs.append(z)
    root = np.sqrt(tr_safe)
    out = root * y * alive[:, None, None]

    def bw(g):
        gb = g if batched else g[None]
        gb = gb * alive[:, None, None]
        yn = ys[iters]
        dy = root * gb
        dtr = (gb * yn).sum(axis=(-2, -1), keepdims=True) * (0.5 / root)
        dz = np.zeros_like(dy)
        for k in range(iters - 1, -1, -1):
            yk, zk, tk = ys[k], zs[k], ts[k]
            dt = yk.swapaxes(-1, -2) @ dy + dz @ zk.swapaxes(-1, -2)
            dyk = dy @ tk.swapaxes(-1, -2)
            dzk = tk.swapaxes(-1, -2) @ dz
            dyk += -0.5 * zk.swapaxes(-1, -2) @ dt
            dzk += -0.5 * dt @ yk.swapaxes(-1, -2)
            dy, dz = dyk, dzk
        da = dy / tr_safe
        dtr += -(dy * ad).sum(axis=(-2, -1), keepdims=True) / tr_safe**2
        da += dtr * eye
        da *= alive[:, None, None]
        return (da if batched else da[0],)

    return _result("newton_schulz_sqrt", out if batched else out[0], (a,), bw)


# ---------------------------------------------------------------------------
# reductions


def sum_all(x):
    out = np.asarray(x.data.sum(), dtype=x.dtype)

    def bw(g):
        return (np.full(x.shape, g, dtype=x.dtype),)

    return _result("sum_all", out, (x,), bw)


def mean_all(x):
    n = x.size
    out = np.asarray(x.data.mean(), dtype=x.dtype)

    def bw(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return _result("mean_all", out, (x,), bw)
