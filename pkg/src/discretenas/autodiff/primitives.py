"""The closed primitive catalog.

Each function takes :class:`Tensor` operands (plain arrays and Python
scalars are accepted where noted and treated as constants), computes the
forward value with numpy, and records a vector-Jacobian product on the
operands' tape.

Spatial primitives use NCHW layout and same-padding, so the output extent is
``ceil(H / stride)``.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np

from .tensor import ContractError, NumericError, ShapeError, Tape, Tensor

PROB_FLOOR = 1e-12
BN_EPS = 1e-5


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Tensor):
            return x.tape
    raise ContractError("at least one operand must be a Tensor")


def _lift(x, tape: Tape, like=None) -> Tensor:
    if isinstance(x, Tensor):
        if x.tape is not tape:
            raise ContractError("operands recorded on different tapes")
        return x
    dtype = like.data.dtype if isinstance(like, Tensor) else np.float64
    return tape.constant(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def _require_rank(name: str, x: Tensor, rank: int) -> None:
    if x.ndim != rank:
        raise ShapeError(f"{name}: expected rank-{rank} input, got shape {x.shape}")


# elementwise and linear algebra

def identity(x: Tensor) -> Tensor:
    return x.tape.record("identity", x.data, (x,), lambda g: (g,))


def add(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape, b), _lift(b, tape, a)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return tape.record("add", a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def multiply(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape, b), _lift(b, tape, a)
    _broadcast_shape("multiply", a, b)
    ad, bd = a.data, b.data
    return tape.record("multiply", ad * bd, (a, b),
                       lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(x, c: float) -> Tensor:
    if not isinstance(x, Tensor):
        raise ContractError("scale: operand must be a Tensor")
    c = x.data.dtype.type(c)
    return x.tape.record("scale", x.data * c, (x,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return tape.record("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return x.tape.record("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return x.tape.record("square", xd * xd, (x,), lambda g: (2.0 * xd * g,))


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return x.tape.record("absolute", np.abs(x.data), (x,), lambda g: (g * sign,))


def log(x: Tensor, floor: Optional[float] = None) -> Tensor:
    """Natural log; with ``floor``, inputs below it are clamped (zero gradient there)."""
    xd = x.data
    if floor is None:
        if np.any(xd <= 0):
            raise NumericError(f"log: non-positive input (shape {x.shape})")
        return x.tape.record("log", np.log(xd), (x,), lambda g: (g / xd,))
    live = xd > floor
    safe = np.where(live, xd, floor)
    return x.tape.record("log", np.log(safe), (x,), lambda g: (np.where(live, g / safe, 0.0),))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return x.tape.record("sum", np.asarray(out), (x,), vjp)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis=axis), 1.0 / float(n))


def take(x: Tensor, key) -> Tensor:
    """Indexing by ints, slices, or integer arrays; repeated indices accumulate gradient."""
    shape = x.shape
    dtype = x.data.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, key, g)
        return (full,)

    return x.tape.record("take", np.asarray(x.data[key]), (x,), vjp)


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not xs:
        raise ContractError("concat: empty input list")
    tape = _tape_of(*xs)
    xs = [_lift(x, tape) for x in xs]
    ref = list(xs[0].shape)
    for x in xs[1:]:
        other = list(x.shape)
        if len(other) != len(ref) or any(o != r for k, (o, r) in enumerate(zip(other, ref)) if k != axis):
            raise ShapeError(f"concat: shapes {[x.shape for x in xs]} differ off axis {axis}")
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return tape.record("concat", np.concatenate([x.data for x in xs], axis=axis), tuple(xs),
                       lambda g: tuple(np.split(g, bounds, axis=axis)))


# softmax family

def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    y = _softmax(x.data, axis)

    def vjp(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return x.tape.record("softmax", y, (x,), vjp)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    _require_rank("cross_entropy", logits, 2)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ShapeError(f"cross_entropy: labels outside [0, {k})")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(lse - z[rows, labels])

    def vjp(g):
        p = _softmax(z, 1)
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return logits.tape.record("cross_entropy", np.asarray(loss), (logits,), vjp)


# spatial primitives

def _same_pad(k: int, dilation: int) -> int:
    return dilation * (k - 1) // 2


def _out_extent(h: int, stride: int) -> int:
    return (h - 1) // stride + 1


def _tap(a: int, dilation: int, stride: int, n: int) -> slice:
    start = a * dilation
    return slice(start, start + stride * (n - 1) + 1, stride)


def _pad(x: np.ndarray, p: int, value: float = 0.0) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=value)


def _windows(xp: np.ndarray, k: int, dilation: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Strided view (B, C, Ho, Wo, k, k) of all kernel taps."""
    span = dilation * (k - 1) + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (span, span), axis=(2, 3))
    return win[:, :, :stride * (ho - 1) + 1:stride, :stride * (wo - 1) + 1:stride, ::dilation, ::dilation]


def conv2d(x: Tensor, w: Tensor, stride: int = 1, dilation: int = 1) -> Tensor:
    """Dense convolution, kernel shape (out, in, k, k), same-padding."""
    _require_rank("conv2d", x, 4)
    _require_rank("conv2d", w, 4)
    o, c, k, k2 = w.shape
    if k != k2 or k % 2 == 0 or x.shape[1] != c:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    b, _, h, wd = x.shape
    wt = w.data
    if k == 1 and stride == 1:
        xd = x.data
        w2 = wt[:, :, 0, 0]
        flat = xd.reshape(b, c, h * wd)
        out = np.matmul(w2, flat).reshape(b, o, h, wd)

        def vjp1(g):
            gf = g.reshape(b, o, h * wd)
            gx = np.matmul(w2.T, gf).reshape(xd.shape)
            gw = np.tensordot(gf, flat, axes=([0, 2], [0, 2]))
            return gx, gw[:, :, None, None]

        return x.tape.record("conv2d", out, (x, w), vjp1)

    p = _same_pad(k, dilation)
    ho, wo = _out_extent(h, stride), _out_extent(wd, stride)
    xp = _pad(x.data, p)
    cols = _windows(xp, k, dilation, stride, ho, wo)
    out = np.tensordot(cols, wt, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def vjp(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        gxp = np.zeros_like(xp)
        for i in range(k):
            ri = _tap(i, dilation, stride, ho)
            for j in range(k):
                rj = _tap(j, dilation, stride, wo)
                gxp[:, :, ri, rj] += np.einsum("bohw,oc->bchw", g, wt[:, :, i, j])
        gx = gxp[:, :, p:p + h, p:p + wd] if p else gxp
        return gx, gw

    return x.tape.record("conv2d", np.ascontiguousarray(out), (x, w), vjp)


def depthwise_conv2d(x: Tensor, w: Tensor, stride: int = 1, dilation: int = 1) -> Tensor:
    """Per-channel convolution, kernel shape (channels, k, k), same-padding."""
    _require_rank("depthwise_conv2d", x, 4)
    _require_rank("depthwise_conv2d", w, 3)
    c, k, k2 = w.shape
    if k != k2 or k % 2 == 0 or x.shape[1] != c:
        raise ShapeError(f"depthwise_conv2d: input {x.shape} incompatible with kernel {w.shape}")
    b, _, h, wd = x.shape
    p = _same_pad(k, dilation)
    ho, wo = _out_extent(h, stride), _out_extent(wd, stride)
    xp = _pad(x.data, p)
    wt = w.data
    cols = _windows(xp, k, dilation, stride, ho, wo)
    out = np.einsum("bchwij,cij->bchw", cols, wt)

    def vjp(g):
        gw = np.einsum("bchw,bchwij->cij", g, cols)
        gxp = np.zeros_like(xp)
        for i in range(k):
            ri = _tap(i, dilation, stride, ho)
            for j in range(k):
                gxp[:, :, ri, _tap(j, dilation, stride, wo)] += g * wt[None, :, i, j, None, None]
        gx = gxp[:, :, p:p + h, p:p + wd] if p else gxp
        return gx, gw

    return x.tape.record("depthwise_conv2d", out, (x, w), vjp)


def max_pool(x: Tensor, size: int = 3, stride: int = 1) -> Tensor:
    _require_rank("max_pool", x, 4)
    b, c, h, wd = x.shape
    p = (size - 1) // 2
    ho, wo = _out_extent(h, stride), _out_extent(wd, stride)
    xp = _pad(x.data, p, -np.inf)
    taps = [(_tap(i, 1, stride, ho), _tap(j, 1, stride, wo)) for i in range(size) for j in range(size)]
    stacked = np.stack([xp[:, :, ri, rj] for ri, rj in taps])
    arg = np.argmax(stacked, axis=0)
    out = np.take_along_axis(stacked, arg[None], axis=0)[0]

    def vjp(g):
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for t, (ri, rj) in enumerate(taps):
            gxp[:, :, ri, rj] += np.where(arg == t, g, 0.0)
        return (gxp[:, :, p:p + h, p:p + wd] if p else gxp,)

    return x.tape.record("max_pool", out, (x,), vjp)


def avg_pool(x: Tensor, size: int = 3, stride: int = 1) -> Tensor:
    """Average pooling; padded cells are excluded from each window's count."""
    _require_rank("avg_pool", x, 4)
    b, c, h, wd = x.shape
    p = (size - 1) // 2
    ho, wo = _out_extent(h, stride), _out_extent(wd, stride)
    xp = _pad(x.data, p)
    ones = _pad(np.ones((1, 1, h, wd), dtype=xp.dtype), p)
    taps = [(_tap(i, 1, stride, ho), _tap(j, 1, stride, wo)) for i in range(size) for j in range(size)]
    total = np.zeros((b, c, ho, wo), dtype=xp.dtype)
    count = np.zeros((1, 1, ho, wo), dtype=xp.dtype)
    for ri, rj in taps:
        total += xp[:, :, ri, rj]
        count += ones[:, :, ri, rj]
    inv = 1.0 / count

    def vjp(g):
        gs = g * inv
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for ri, rj in taps:
            gxp[:, :, ri, rj] += gs
        return (gxp[:, :, p:p + h, p:p + wd] if p else gxp,)

    return x.tape.record("avg_pool", total * inv, (x,), vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    _require_rank("global_avg_pool", x, 4)
    b, c, h, wd = x.shape
    n = float(h * wd)
    return x.tape.record("global_avg_pool", x.data.mean(axis=(2, 3)), (x,),
                         lambda g: (np.broadcast_to(g[:, :, None, None] / n, x.shape).copy(),))


def batch_norm(x: Tensor, stats: Optional[Tuple[np.ndarray, np.ndarray]] = None,
               eps: float = BN_EPS) -> Tuple[Tensor, Tuple[np.ndarray, np.ndarray]]:
    """Per-channel standardization without affine parameters.

    With ``stats=None`` the batch mean and (biased) variance are used and
    differentiated through. With fixed ``(mean, var)`` the transform is a
    constant affine map. Returns the output and the statistics used.
    """
    _require_rank("batch_norm", x, 4)
    xd = x.data
    if stats is None:
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        frozen = False
    else:
        mu, var = (np.asarray(s, dtype=xd.dtype) for s in stats)
        if mu.shape != (x.shape[1],):
            raise ShapeError(f"batch_norm: stats for {mu.shape[0]} channels, input {x.shape}")
        frozen = True
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu[None, :, None, None]) * inv[None, :, None, None]
    n = float(xd.shape[0] * xd.shape[2] * xd.shape[3])

    def vjp(g):
        if frozen:
            return (g * inv[None, :, None, None],)
        gs = g.sum(axis=(0, 2, 3))[None, :, None, None]
        gxh = (g * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
        gx = (inv[None, :, None, None] / n) * (n * g - gs - xhat * gxh)
        return (gx,)

    return x.tape.record("batch_norm", xhat, (x,), vjp), (mu, var)


CATALOG = (
    "identity", "add", "multiply", "scale", "matmul", "conv2d", "depthwise_conv2d", "relu",
    "max_pool", "avg_pool", "global_avg_pool", "concat", "batch_norm", "softmax", "log",
    "sum", "square", "absolute", "cross_entropy", "take",
)
