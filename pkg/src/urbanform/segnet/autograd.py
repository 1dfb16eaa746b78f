"""Minimal define-by-run autograd on float64 numpy arrays.

Tensors hold up to 4 dimensions (batch, channels, height, width).  Each
operation records a backward closure; Tensor.backward() walks the graph in
reverse topological order.  Convolutions run as matrix products over
strided window views, so the heavy lifting stays inside BLAS; the input
gradient is scattered back with one slice-add per kernel tap, which is
exact for every stride/dilation/padding combination.

All arithmetic is double precision; gradients are validated against central
differences (see gradcheck).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

_grad_enabled = True


class no_grad:
    """Context manager that disables graph construction (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 4:
            raise ValueError(f"tensors support up to 4 dims, got {self.data.ndim}")
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, grad: np.ndarray):
        # Callers hand over ownership of `grad`; closures never pass an array
        # aliased to another tensor's gradient.
        if grad.shape != self.data.shape:
            raise ValueError(f"gradient shape {grad.shape} != data shape {self.data.shape}")
        if self.grad is None:
            self.grad = grad
        else:
            self.grad = self.grad + grad

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() starts from a scalar loss")
        order: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
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
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def item(self) -> float:
        return float(self.data)


def _make(data: np.ndarray, parents, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _window_view(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, dh: int, dw: int):
    """(N, C, kh, kw, OH, OW) read-only view of sliding windows."""
    n, c, hp, wp = xp.shape
    oh = (hp - (kh - 1) * dh - 1) // sh + 1
    ow = (wp - (kw - 1) * dw - 1) // sw + 1
    sn, sc, srow, scol = xp.strides
    return as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, srow * dh, scol * dw, srow * sh, scol * sw),
        writeable=False,
    )


def _conv_geometry(h, w, kh, kw, stride, dilation, padding):
    ekh = (kh - 1) * dilation + 1
    ekw = (kw - 1) * dilation + 1
    if padding == "same":
        ph, pw = (ekh - 1) // 2, (ekw - 1) // 2
    elif padding == "valid":
        ph = pw = 0
    else:
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    if h + 2 * ph < ekh or w + 2 * pw < ekw:
        raise ValueError(f"input {h}x{w} smaller than effective kernel {ekh}x{ekw}")
    return ph, pw


def _pad(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _unpad(grad: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return grad
    return grad[:, :, ph : grad.shape[2] - ph, pw : grad.shape[3] - pw]


def _conv2d_1x1(x: Tensor, weights: Tensor, bias: Tensor | None) -> Tensor:
    """Pointwise convolution at stride 1 as a plain channel matmul."""
    n, c, h, w = x.data.shape
    f = weights.data.shape[0]
    kernel = weights.data.reshape(f, c)
    flat = x.data.reshape(n, c, h * w)
    out = np.matmul(kernel, flat).reshape(n, f, h, w)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        gf = g.reshape(n, f, h * w)
        if weights.requires_grad or weights._parents:
            gw = np.einsum("nfs,ncs->fc", gf, flat, optimize=True)
            weights.accumulate(gw.reshape(weights.data.shape))
        if bias is not None and (bias.requires_grad or bias._parents):
            bias.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad or x._parents:
            gx = np.matmul(kernel.T, gf).reshape(n, c, h, w)
            x.accumulate(gx)

    parents = (x, weights) if bias is None else (x, weights, bias)
    return _make(out, parents, backward)


def conv2d(
    x: Tensor,
    weights: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    dilation: int = 1,
    padding: str = "same",
) -> Tensor:
    """Cross-correlation with atrous support; weights are (F, C, kh, kw)."""
    n, c, h, w = x.data.shape
    f, cw, kh, kw = weights.data.shape
    if cw != c:
        raise ValueError(f"weight channels {cw} != input channels {c}")
    if dilation < 1 or stride < 1:
        raise ValueError("stride and dilation must be >= 1")
    if kh == 1 and kw == 1 and stride == 1:
        return _conv2d_1x1(x, weights, bias)
    ph, pw = _conv_geometry(h, w, kh, kw, stride, dilation, padding)
    xp = _pad(x.data, ph, pw)
    ekh = (kh - 1) * dilation + 1
    ekw = (kw - 1) * dilation + 1
    oh = (xp.shape[2] - ekh) // stride + 1
    ow = (xp.shape[3] - ekw) // stride + 1

    def tap(i, j):
        return xp[
            :, :,
            i * dilation : i * dilation + oh * stride : stride,
            j * dilation : j * dilation + ow * stride : stride,
        ]

    # One GEMM per kernel tap avoids materializing the full im2col matrix.
    out = np.zeros((f, n, oh, ow))
    for i in range(kh):
        for j in range(kw):
            out += np.tensordot(weights.data[:, :, i, j], tap(i, j), axes=([1], [1]))
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        if weights.requires_grad or weights._parents:
            gw = np.empty((f, c, kh, kw))
            for i in range(kh):
                for j in range(kw):
                    gw[:, :, i, j] = np.tensordot(g, tap(i, j), axes=([0, 2, 3], [0, 2, 3]))
            weights.accumulate(gw)
        if bias is not None and (bias.requires_grad or bias._parents):
            bias.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad or x._parents:
            gx = np.zeros(xp.shape)
            for i in range(kh):
                for j in range(kw):
                    cols = np.tensordot(weights.data[:, :, i, j], g, axes=([0], [1]))
                    gx[
                        :, :,
                        i * dilation : i * dilation + oh * stride : stride,
                        j * dilation : j * dilation + ow * stride : stride,
                    ] += cols.transpose(1, 0, 2, 3)
            x.accumulate(_unpad(gx, ph, pw))

    parents = (x, weights) if bias is None else (x, weights, bias)
    return _make(out, parents, backward)


def depthwise_conv2d(
    x: Tensor,
    weights: Tensor,
    stride: int = 1,
    dilation: int = 1,
    padding: str = "same",
) -> Tensor:
    """Per-channel convolution; weights are (C, kh, kw)."""
    n, c, h, w = x.data.shape
    cw, kh, kw = weights.data.shape
    if cw != c:
        raise ValueError(f"weight channels {cw} != input channels {c}")
    ph, pw = _conv_geometry(h, w, kh, kw, stride, dilation, padding)
    xp = _pad(x.data, ph, pw)
    view = _window_view(xp, kh, kw, stride, stride, dilation, dilation)
    oh, ow = view.shape[4], view.shape[5]
    out = np.zeros((n, c, oh, ow))
    for i in range(kh):
        for j in range(kw):
            out += view[:, :, i, j] * weights.data[None, :, i, j, None, None]

    def backward(g):
        if weights.requires_grad or weights._parents:
            gw = np.empty((c, kh, kw))
            for i in range(kh):
                for j in range(kw):
                    gw[:, i, j] = np.einsum("nchw,nchw->c", g, view[:, :, i, j])
            weights.accumulate(gw)
        if x.requires_grad or x._parents:
            gx = np.zeros(xp.shape)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i * dilation : i * dilation + oh * stride : stride,
                       j * dilation : j * dilation + ow * stride : stride] += (
                        g * weights.data[None, :, i, j, None, None]
                    )
            x.accumulate(_unpad(gx, ph, pw))

    return _make(out, (x, weights), backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def backward(g):
        if x.requires_grad or x._parents:
            x.accumulate(g * (x.data > 0))

    return _make(out, (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch {a.data.shape} vs {b.data.shape}")
    out = a.data + b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a.accumulate(g)
        if b.requires_grad or b._parents:
            b.accumulate(g.copy())  # never alias two tensors' gradients

    return _make(out, (a, b), backward)


def concat_channels(tensors: list[Tensor]) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=1)
    sizes = [t.data.shape[1] for t in tensors]

    def backward(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad or t._parents:
                t.accumulate(g[:, offset : offset + size])
            offset += size

    return _make(out, tuple(tensors), backward)


def max_pool2x2(x: Tensor) -> Tensor:
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"max_pool2x2 needs even spatial dims, got {h}x{w}")
    tiles = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    tiles = tiles.reshape(n, c, h // 2, w // 2, 4)
    arg = np.argmax(tiles, axis=4)
    out = np.take_along_axis(tiles, arg[..., None], axis=4)[..., 0]

    def backward(g):
        if x.requires_grad or x._parents:
            gt = np.zeros_like(tiles)
            np.put_along_axis(gt, arg[..., None], g[..., None], axis=4)
            gx = gt.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
            x.accumulate(np.ascontiguousarray(gx.reshape(n, c, h, w)))

    return _make(out, (x,), backward)


def avg_pool2x2(x: Tensor) -> Tensor:
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2x2 needs even spatial dims, got {h}x{w}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(g):
        if x.requires_grad or x._parents:
            gx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25
            x.accumulate(gx)

    return _make(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.data.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def backward(g):
        if x.requires_grad or x._parents:
            x.accumulate(np.broadcast_to(g / (h * w), x.data.shape).copy())

    return _make(out, (x,), backward)


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Align-corners linear interpolation matrix (n_out, n_in)."""
    m = np.zeros((n_out, n_in))
    if n_out == 1 or n_in == 1:
        m[:, 0] = 1.0
        return m
    src = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    m[np.arange(n_out), i0] += 1.0 - t
    m[np.arange(n_out), i1] += t
    return m


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Align-corners bilinear interpolation to (out_h, out_w)."""
    n, c, h, w = x.data.shape
    if h == 0 or w == 0:
        raise ValueError("cannot upsample a zero-sized input")
    if out_h < h or out_w < w:
        raise ValueError(f"output {out_h}x{out_w} smaller than input {h}x{w}")
    mr = _interp_matrix(h, out_h)
    mc = _interp_matrix(w, out_w)
    tmp = np.tensordot(mr, x.data, axes=(1, 2))  # (OH, N, C, W)
    out = np.tensordot(tmp, mc, axes=(3, 1))  # (OH, N, C, OW)
    out = np.ascontiguousarray(out.transpose(1, 2, 0, 3))

    def backward(g):
        if x.requires_grad or x._parents:
            tmp_g = np.tensordot(mr.T, g, axes=(1, 2))  # (H, N, C, OW)
            gx = np.tensordot(tmp_g, mc, axes=(3, 0))  # (H, N, C, W)
            x.accumulate(np.ascontiguousarray(gx.transpose(1, 2, 0, 3)))

    return _make(out, (x,), backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Channel-wise batch normalization.

    Training mode normalizes with batch statistics (population variance) and
    updates the running moments in place; inference mode is the affine map
    through the frozen running moments.
    """
    n, c, h, w = x.data.shape
    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        diff = x.data - mu[None, :, None, None]
        var = np.einsum("nchw,nchw->c", diff, diff) / (n * h * w)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = diff * inv_std[None, :, None, None]
    else:
        mu, var = running_mean, running_var
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    count = n * h * w

    def backward(g):
        if gamma.requires_grad or gamma._parents:
            gamma.accumulate(np.einsum("nchw,nchw->c", g, xhat))
        if beta.requires_grad or beta._parents:
            beta.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad or x._parents:
            scale = (gamma.data * inv_std)[None, :, None, None]
            if training:
                sum_g = g.sum(axis=(0, 2, 3))
                sum_gx = np.einsum("nchw,nchw->c", g, xhat)
                gx = (
                    g
                    - (sum_g / count)[None, :, None, None]
                    - xhat * (sum_gx / count)[None, :, None, None]
                ) * scale
            else:
                gx = g * scale
            x.accumulate(gx)

    return _make(out, (x, gamma, beta), backward)


def log_softmax_channels(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_channels(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    z = np.exp(logits - m)
    return z / z.sum(axis=1, keepdims=True)


def masked_cross_entropy(logits: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over mask-true cells only.

    labels is (N, H, W) int; mask is (N, H, W) bool.  Cells outside the mask
    contribute nothing to the loss or its gradient.
    """
    if not mask.any():
        raise ValueError("loss mask is empty")
    logp = log_softmax_channels(logits.data)
    n, cc, h, w = logits.data.shape
    safe_labels = np.where(mask, labels, 0).astype(np.int64)
    picked = np.take_along_axis(logp, safe_labels[:, None], axis=1)[:, 0]
    count = float(mask.sum())
    loss = -(picked * mask).sum() / count

    def backward(g):
        if logits.requires_grad or logits._parents:
            p = np.exp(logp)
            onehot = np.zeros_like(p)
            np.put_along_axis(onehot, safe_labels[:, None], 1.0, axis=1)
            glogits = (p - onehot) * (mask[:, None] / count) * g
            logits.accumulate(glogits)

    return _make(np.array(loss), (logits,), backward)


class Adam:
    """Adam optimizer over a name -> Tensor parameter map."""

    def __init__(self, params: dict[str, Tensor], lr: float = 2e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()
