"""Minimal dense-tensor engine with reverse-mode differentiation.

Covers exactly the layer set the denoising network needs: convolution,
batch norm, the usual activations, spatial dropout, pixel shuffle, average
pooling, concatenation and elementwise arithmetic. Data is float64 on the
training path; float32 is reserved for a fast inference mode.

Backward runs once over a topologically ordered tape; gradients accumulate
additively across fan-out. The finite-difference checker at the bottom is a
first-class utility so higher-level custom ops (the kNN front ends, the
losses) can reuse it in their tests.
"""

import numpy as np

from . import kernels
from .errors import ShapeMismatch


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        data = np.asarray(data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        self.data = data
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return (f"Tensor(shape={self.data.shape}, "
                f"requires_grad={self.requires_grad})")

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data.reshape(-1)[0])

    # graph traversal ------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ShapeMismatch("backward() needs a scalar output")
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # light operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn):
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


# --- elementwise and structural ops ---------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)
    return _node(a.data + b.data, (a, b), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}")

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * b.data)
        if b.requires_grad:
            b.accumulate(g * a.data)
    return _node(a.data * b.data, (a, b), bwd)


def scale(a, s: float):
    a = _as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * s)
    return _node(a.data * s, (a,), bwd)


def add_bias(x, b):
    """x [C,...] plus a per-channel bias [C]."""
    x, b = _as_tensor(x), _as_tensor(b)
    if b.data.ndim != 1 or b.shape[0] != x.shape[0]:
        raise ShapeMismatch(f"bias {b.shape} does not fit {x.shape}")
    expand = (slice(None),) + (None,) * (x.data.ndim - 1)

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g)
        if b.requires_grad:
            b.accumulate(g.reshape(g.shape[0], -1).sum(axis=1))
    return _node(x.data + b.data[expand], (x, b), bwd)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)
    return _node(a.data @ b.data, (a, b), bwd)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t.accumulate(g[tuple(sl)])
    return _node(np.concatenate([t.data for t in tensors], axis=axis),
                 tensors, bwd)


def reshape(x, shape):
    x = _as_tensor(x)
    old = x.shape

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g.reshape(old))
    return _node(x.data.reshape(shape), (x,), bwd)


def tsum(x):
    x = _as_tensor(x)

    def bwd(g):
        if x.requires_grad:
            x.accumulate(np.full_like(x.data, g.reshape(())))
    return _node(np.array(x.data.sum()), (x,), bwd)


def tmean(x):
    return scale(tsum(x), 1.0 / x.data.size)


# --- activations -----------------------------------------------------------

def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g * mask)
    return _node(x.data * mask, (x,), bwd)


def sigmoid(x):
    x = _as_tensor(x)
    y = 1.0 / (1.0 + np.exp(-x.data))

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g * y * (1.0 - y))
    return _node(y, (x,), bwd)


def softmax(x, axis=0):
    """Softmax along one axis; rows sum to 1."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if x.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            x.accumulate(y * (g - dot))
    return _node(y, (x,), bwd)


def spatial_dropout(x, p, rng, training):
    """Zero whole channels with probability p (training), scaling the
    survivors by 1/(1-p); identity in eval mode."""
    x = _as_tensor(x)
    if not training or p <= 0.0:
        def bwd_id(g):
            if x.requires_grad:
                x.accumulate(g)
        return _node(x.data.copy(), (x,), bwd_id)
    keep = (rng.random(x.shape[0]) >= p)
    factor = keep.astype(x.data.dtype) / (1.0 - p)
    expand = (slice(None),) + (None,) * (x.data.ndim - 1)
    f = factor[expand]

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g * f)
    return _node(x.data * f, (x,), bwd)


# --- spatial ops -----------------------------------------------------------

def conv2d(x, w, dilation=1, padding="same"):
    """Cross-correlation of x [C,H,W] with w [Co,C,kh,kw], stride 1, zero
    padding. padding='same' preserves the spatial size for odd kernels."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 4 or x.shape[0] != w.shape[1]:
        raise ShapeMismatch(f"conv2d: x {x.shape}, w {w.shape}")
    kh, kw = w.shape[2], w.shape[3]
    if isinstance(dilation, int):
        dilation = (dilation, dilation)
    if padding == "same":
        padding = (dilation[0] * (kh - 1) // 2, dilation[1] * (kw - 1) // 2)
    elif isinstance(padding, int):
        padding = (padding, padding)
    y = kernels.conv2d_forward(x.data, w.data, dilation, padding)

    def bwd(g):
        if w.requires_grad:
            w.accumulate(kernels.conv2d_backward_weight(
                g, x.data, kh, kw, dilation, padding))
        if x.requires_grad:
            x.accumulate(kernels.conv2d_backward_input(
                g, w.data, x.shape, dilation, padding))
    return _node(y, (x, w), bwd)


def avg_pool2d(x, kernel=2):
    """Non-overlapping average pooling (stride = kernel)."""
    x = _as_tensor(x)
    C, H, W = x.shape
    k = kernel
    if H % k or W % k:
        raise ShapeMismatch(f"avg_pool2d: {H}x{W} not divisible by {k}")
    y = x.data.reshape(C, H // k, k, W // k, k).mean(axis=(2, 4))

    def bwd(g):
        if x.requires_grad:
            gi = np.repeat(np.repeat(g, k, axis=1), k, axis=2) / (k * k)
            x.accumulate(gi)
    return _node(y, (x,), bwd)


def pixel_shuffle(x, r):
    """[C*r*r, H, W] -> [C, r*H, r*W]; a pure, invertible rearrangement."""
    x = _as_tensor(x)
    C2, H, W = x.shape
    if C2 % (r * r):
        raise ShapeMismatch(f"pixel_shuffle: {C2} channels not divisible "
                            f"by r^2={r * r}")
    C = C2 // (r * r)
    y = (x.data.reshape(C, r, r, H, W)
         .transpose(0, 3, 1, 4, 2)
         .reshape(C, H * r, W * r))

    def bwd(g):
        if x.requires_grad:
            gi = (g.reshape(C, H, r, W, r)
                  .transpose(0, 2, 4, 1, 3)
                  .reshape(C2, H, W))
            x.accumulate(gi)
    return _node(np.ascontiguousarray(y), (x,), bwd)


def pixel_unshuffle(data, r):
    """Inverse rearrangement on a plain array (round-trip checks)."""
    C, H, W = data.shape
    return (data.reshape(C, H // r, r, W // r, r)
            .transpose(0, 2, 4, 1, 3)
            .reshape(C * r * r, H // r, W // r))


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               eps=1e-5, momentum=0.1):
    """Per-channel batch normalization over the spatial dims of [C,H,W].

    Training mode normalizes by batch statistics and updates the running
    arrays in place (biased variance, exponential moving average); eval
    mode normalizes by the running statistics.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    C = x.shape[0]
    dtype = x.data.dtype
    flat = x.data.reshape(C, -1)
    if training:
        mean = flat.mean(axis=1, dtype=np.float64)
        var = flat.var(axis=1, dtype=np.float64)
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mean
        running_var *= (1.0 - momentum)
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var
    mean = mean.astype(dtype, copy=False)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(dtype, copy=False)
    expand = (slice(None),) + (None,) * (x.data.ndim - 1)
    xhat = (x.data - mean[expand]) * inv_std[expand]
    y = gamma.data[expand] * xhat + beta.data[expand]

    def bwd(g):
        gf = g.reshape(C, -1)
        xh = xhat.reshape(C, -1)
        if beta.requires_grad:
            beta.accumulate(gf.sum(axis=1))
        if gamma.requires_grad:
            gamma.accumulate((gf * xh).sum(axis=1))
        if x.requires_grad:
            gg = gamma.data[:, None] * gf
            if training:
                m1 = gg.mean(axis=1, keepdims=True)
                m2 = (gg * xh).mean(axis=1, keepdims=True)
                gx = inv_std[:, None] * (gg - m1 - xh * m2)
            else:
                gx = inv_std[:, None] * gg
            x.accumulate(gx.reshape(x.shape))
    return _node(y, (x, gamma, beta), bwd)


# --- finite-difference gradient checking -----------------------------------

def grad_error(fn, params, eps=1e-5, max_entries=None, rng=None):
    """Worst relative error between analytic and central-difference
    gradients of a scalar-valued fn over the given parameter tensors.

    fn must rebuild its graph on each call (it is invoked 2*m+1 times).
    max_entries limits the checked coordinates per tensor (random subset).
    """
    for p in params:
        p.zero_grad()
    out = fn()
    out.backward()
    analytic = [p.grad.copy() if p.grad is not None
                else np.zeros_like(p.data) for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        idxs = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            if rng is None:
                rng = np.random.default_rng(0)
            idxs = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn().item()
            flat[i] = orig - eps
            lo = fn().item()
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            ana = a.reshape(-1)[i]
            err = abs(ana - numeric) / max(1.0, abs(ana), abs(numeric))
            if err > worst:
                worst = err
    return worst


def check_gradients(fn, params, eps=1e-5, tol=1e-4, max_entries=None,
                    rng=None):
    return grad_error(fn, params, eps=eps, max_entries=max_entries,
                      rng=rng) < tol
