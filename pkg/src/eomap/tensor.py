"""A small reverse-mode autodiff engine on numpy arrays.

Only what the predictor and the losses need: elementwise arithmetic with
numpy broadcasting, reductions, sigmoid/ReLU/exp, dilated conv2d, nearest
and transposed-conv upsampling, max pooling, channel concat, a spatial
softmax, and batch normalization.
"""
from __future__ import annotations

import contextlib
import struct

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind in "iub":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other, self)))

    def __rsub__(self, other):
        return add(_lift(other, self), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __pow__(self, n):
        if n != 2:
            raise ValueError("only squaring is supported")
        return mul(self, self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def backward(self):
        backward(self)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _make(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if loss.data.size != 1:
        raise ValueError("backward() needs a scalar loss")
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            k = id(parent)
            grads[k] = pg if k not in grads else grads[k] + pg


# elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # branch-free stable logistic
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return _make(y, (a,), lambda g: (g * y * (1 - y),))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0).astype(a.dtype), (a,), lambda g: (g * pos,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors, axis=1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


# convolution --------------------------------------------------------------

def conv_output_size(n, k, stride, dilation, padding):
    return (n + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, dilation=1,
           padding=0) -> Tensor:
    """Cross-correlation of (B, C, H, W) input with (O, C, kh, kw) kernel."""
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d expects 4-d input and kernel")
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if C != Cw:
        raise ValueError(f"channel mismatch: input {C}, kernel {Cw}")
    if dilation < 1 or stride < 1:
        raise ValueError("stride and dilation must be >= 1")
    Ho = conv_output_size(H, kh, stride, dilation, padding)
    Wo = conv_output_size(W, kw, stride, dilation, padding)
    if Ho < 1 or Wo < 1:
        raise ValueError("kernel larger than padded input")
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    xt = xp.transpose(1, 0, 2, 3)
    cols = np.empty((kh, kw, C, B, Ho, Wo), dtype=np.result_type(x.dtype, w.dtype))
    hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            r, c = i * dilation, j * dilation
            cols[i, j] = xt[:, :, r:r + hs:stride, c:c + ws:stride]
    cols = cols.reshape(kh * kw * C, B * Ho * Wo)
    wm = w.data.transpose(0, 2, 3, 1).reshape(O, -1)
    out = (wm @ cols).reshape(O, B, Ho, Wo).transpose(1, 0, 2, 3)
    if b is not None:
        out = out + b.data.reshape(1, O, 1, 1)
    out = np.ascontiguousarray(out)

    def bw(g):
        gm = g.transpose(1, 0, 2, 3).reshape(O, -1)
        gw = gb = gx = None
        if w.requires_grad:
            gw = (gm @ cols.T).reshape(O, kh, kw, C).transpose(0, 3, 1, 2)
        if b is not None and b.requires_grad:
            gb = gm.sum(axis=1)
        if x.requires_grad:
            gcols = (wm.T @ gm).reshape(kh, kw, C, B, Ho, Wo)
            gxp = np.zeros((C, B) + xp.shape[2:], dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    r, c = i * dilation, j * dilation
                    gxp[:, :, r:r + hs:stride, c:c + ws:stride] += gcols[i, j]
            gxp = gxp.transpose(1, 0, 2, 3)
            if padding:
                gxp = gxp[:, :, padding:-padding, padding:-padding]
            gx = np.ascontiguousarray(gxp)
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bw)


def upsample_nearest(x: Tensor, factor=2) -> Tensor:
    y = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    B, C, H, W = x.shape

    def bw(g):
        return (g.reshape(B, C, H, factor, W, factor).sum(axis=(3, 5)),)

    return _make(y, (x,), bw)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=2) -> Tensor:
    """Transposed convolution with kernel size equal to stride (no overlap).

    Kernel layout (C_in, C_out, s, s).
    """
    B, C, H, W = x.shape
    Cw, O, kh, kw = w.shape
    if C != Cw or kh != stride or kw != stride:
        raise ValueError("conv_transpose2d needs C_in match and kernel == stride")
    y = np.einsum("bchw,coij->bohiwj", x.data, w.data, optimize=True)
    y = y.reshape(B, O, H * stride, W * stride)
    if b is not None:
        y = y + b.data.reshape(1, O, 1, 1)

    def bw(g):
        g6 = g.reshape(B, O, H, stride, W, stride)
        gx = np.einsum("bohiwj,coij->bchw", g6, w.data, optimize=True) if x.requires_grad else None
        gw = np.einsum("bchw,bohiwj->coij", x.data, g6, optimize=True) if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, w) if b is None else (x, w, b)
    return _make(y, parents, bw)


def max_pool2d(x: Tensor, size=2) -> Tensor:
    B, C, H, W = x.shape
    if H % size or W % size:
        raise ValueError("max_pool2d needs spatial size divisible by the pool size")
    h, w = H // size, W // size
    win = x.data.reshape(B, C, h, size, w, size).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, h, w, -1)
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gw = gw.reshape(B, C, h, w, size, size).transpose(0, 1, 2, 4, 3, 5)
        return (gw.reshape(B, C, H, W),)

    return _make(y, (x,), bw)


# attention / normalization --------------------------------------------------

def spatial_softmax(s: Tensor) -> Tensor:
    """Softmax over the last two axes, max-subtracted."""
    z = s.data - s.data.max(axis=(-2, -1), keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=(-2, -1), keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=(-2, -1), keepdims=True)),)

    return _make(y, (s,), bw)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean, running_var,
               training=True, momentum=0.1, eps=1e-5) -> Tensor:
    """Per-channel normalization; updates the running buffers in place when training."""
    shape = (1, -1, 1, 1)
    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        n = x.data.size // x.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * n / max(n - 1, 1)
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shape)) * inv.reshape(shape)
    y = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)
    y = y.astype(x.dtype, copy=False)

    def bw(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        gxhat = g * gamma.data.reshape(shape)
        if training:
            m = x.data.size // x.shape[1]
            gx = (inv.reshape(shape) / m) * (
                m * gxhat - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
        else:
            gx = gxhat * inv.reshape(shape)
        return gx.astype(x.dtype, copy=False), gg, gb

    return _make(y, (x, gamma, beta), bw)


# optimizer ------------------------------------------------------------------

def adam_init(params: dict) -> dict:
    return {"step": 0,
            "m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()}}


def adam_step(params: dict, grads: dict, state: dict, lr=1e-4, beta1=0.9, beta2=0.999,
              eps=1e-8):
    """Bias-corrected Adam update of the arrays in ``params`` (in place).

    Returns ``(params, state)``.
    """
    state["step"] += 1
    t = state["step"]
    c1 = 1 - beta1 ** t
    c2 = 1 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state["m"][name]
        v = state["v"][name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
    return params, state


# checkpoints ------------------------------------------------------------------

CKPT_MAGIC = b"EOMC"
CKPT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_DTYPE_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


def checkpoint_bytes(named: dict) -> bytes:
    """Serialize a name -> array table (names sorted)."""
    out = [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(named))]
    for name in sorted(named):
        arr = np.asarray(named[name])
        tag = _DTYPE_TAGS.get(arr.dtype)
        if tag is None:
            raise ValueError(f"unsupported dtype {arr.dtype} for {name}")
        raw = name.encode()
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<BB", tag, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    return b"".join(out)


def checkpoint_from_bytes(buf: bytes) -> dict:
    if buf[:4] != CKPT_MAGIC:
        raise ValueError("bad magic")
    version, count = struct.unpack_from("<HI", buf, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 10
    named = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2:pos + 2 + n].decode()
            pos += 2 + n
            tag, ndim = struct.unpack_from("<BB", buf, pos)
            shape = struct.unpack_from(f"<{ndim}I", buf, pos + 2)
            pos += 2 + 4 * ndim
            dt = _DTYPES[tag]
            size = int(np.prod(shape)) * dt.itemsize
            if pos + size > len(buf):
                raise ValueError("truncated checkpoint")
            named[name] = np.frombuffer(buf, dtype=dt, count=int(np.prod(shape)),
                                        offset=pos).reshape(shape).astype(dt.newbyteorder("="))
            pos += size
    except struct.error:
        raise ValueError("truncated checkpoint") from None
    return named


def save_checkpoint(path, named: dict):
    from .io import atomic_write_bytes
    atomic_write_bytes(path, checkpoint_bytes(named))


def load_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        return checkpoint_from_bytes(f.read())
