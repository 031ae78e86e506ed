"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every operation returns a new :class:`Tensor`. When at least one input
requires a gradient, the result keeps references to its parents and a
closure mapping the output gradient to parent gradients; those links form
the tape. :func:`backward` replays the tape in reverse topological order and
accumulates into leaf ``.grad`` arrays, while :func:`grad` returns gradients
for selected tensors without touching any ``.grad``.

Batched layouts used throughout: dense ``[B, N]``, sequences ``[B, C, T]``,
images ``[B, C, H, W]``. Unbatched inputs are accepted by the convolution and
pooling ops and get a batch axis of one internally.
"""

import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DomainError, LabelError, ParameterError, ShapeError

_node_ids = itertools.count()


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, *, _parents=(), _backward=None, op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = op
        self.node = next(_node_ids)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}, op={self.op}{flag})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by a scalar constant")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A named trainable leaf; ``grad`` always matches ``data`` once populated."""

    def __init__(self, data, name):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={list(self.shape)})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, _parents=parents, _backward=backward_fn, op=op)
    return Tensor(data, op=op)


# -- creation -----------------------------------------------------------------

def _check_shape(shape):
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if any(s < 1 for s in shape):
        raise ShapeError(f"invalid shape {list(shape)}: every dimension must be >= 1")
    return shape


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(_check_shape(shape)), requires_grad)


def full(shape, value, requires_grad=False):
    return Tensor(np.full(_check_shape(shape), float(value)), requires_grad)


def uniform(shape, lo=0.0, hi=1.0, seed=None, requires_grad=False):
    shape = _check_shape(shape)
    if lo > hi:
        raise ParameterError(f"uniform fill needs lo <= hi, got {lo} > {hi}")
    return Tensor(_rng(seed).uniform(lo, hi, size=shape), requires_grad)


def normal(shape, mu=0.0, sigma=1.0, seed=None, requires_grad=False):
    shape = _check_shape(shape)
    if sigma < 0:
        raise ParameterError(f"normal fill needs sigma >= 0, got {sigma}")
    return Tensor(_rng(seed).normal(mu, sigma, size=shape), requires_grad)


def tensor_create(shape, fill="zeros", *, value=0.0, lo=0.0, hi=1.0, mu=0.0, sigma=1.0,
                  seed=None, requires_grad=False):
    """Create a tensor from one of the fill rules ``zeros | value | uniform | normal``."""
    if fill == "zeros":
        return zeros(shape, requires_grad)
    if fill == "value":
        return full(shape, value, requires_grad)
    if fill == "uniform":
        return uniform(shape, lo, hi, seed, requires_grad)
    if fill == "normal":
        return normal(shape, mu, sigma, seed, requires_grad)
    raise ParameterError(f"unknown fill {fill!r}")


# -- tape replay --------------------------------------------------------------

def _topological(root):
    """Post-order over the requires-grad subgraph: parents precede consumers."""
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


def _backprop(root, seed, wrt=None):
    order = _topological(root)
    if wrt is not None:
        targets = {id(t) for t in wrt}
        relevant = set()
        for node in order:
            if id(node) in targets or any(id(p) in relevant for p in node._parents):
                relevant.add(id(node))
    grads = {id(root): seed}
    out = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if wrt is None:
            if node.is_leaf:
                out[id(node)] = (node, g)
                continue
        else:
            if id(node) in targets:
                out[id(node)] = (node, g)
            if node.is_leaf:
                continue
        parents = node._parents
        if wrt is None:
            need = tuple(p.requires_grad for p in parents)
        else:
            need = tuple(p.requires_grad and id(p) in relevant for p in parents)
        if not any(need):
            continue
        for parent, pg, n in zip(parents, node._backward(g, need), need):
            if not n or pg is None:
                continue
            key = id(parent)
            prev = grads.get(key)
            grads[key] = pg if prev is None else prev + pg
    return out


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires-grad leaf."""
    loss = as_tensor(loss)
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    if not loss.requires_grad:
        return
    for node, g in _backprop(loss, np.ones_like(loss.data)).values():
        g = np.asarray(g, dtype=np.float64).reshape(node.shape)
        node.grad = g.copy() if node.grad is None else node.grad + g


def grad(output, inputs):
    """Return d(output)/d(input) for each input, leaving ``.grad`` untouched."""
    output = as_tensor(output)
    if output.size != 1:
        raise ContractError(f"grad needs a scalar output, got shape {list(output.shape)}")
    found = _backprop(output, np.ones_like(output.data), wrt=inputs) if output.requires_grad else {}
    result = []
    for t in inputs:
        hit = found.get(id(t))
        result.append(np.zeros_like(t.data) if hit is None else np.array(hit[1]).reshape(t.shape))
    return result


def finite_diff_check(f, x, h=1e-5):
    """Max over coordinates of |g_ad - g_fd| / max(1, |g_fd|) using central differences.

    Nondifferentiable points (relu and max kinks) are not handled; callers
    sample inputs away from them.
    """
    if h <= 0:
        raise ParameterError("finite-difference step must be positive")
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    (g_ad,) = grad(f(xt), [xt])
    g_fd = np.empty_like(x0)
    flat = x0.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = as_tensor(f(Tensor(x0))).item()
        flat[i] = orig - h
        fm = as_tensor(f(Tensor(x0))).item()
        flat[i] = orig
        g_fd.reshape(-1)[i] = (fp - fm) / (2 * h)
    return float(np.max(np.abs(g_ad - g_fd) / np.maximum(1.0, np.abs(g_fd))))


# -- elementwise --------------------------------------------------------------

def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {list(a.shape)} and {list(b.shape)} do not match") from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a, b, "add")

    def back(g, need):
        return (_unbroadcast(g, a.shape) if need[0] else None,
                _unbroadcast(g, b.shape) if need[1] else None)

    return _make(a.data + b.data, (a, b), back, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a, b, "sub")

    def back(g, need):
        return (_unbroadcast(g, a.shape) if need[0] else None,
                _unbroadcast(-g, b.shape) if need[1] else None)

    return _make(a.data - b.data, (a, b), back, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a, b, "mul")

    def back(g, need):
        return (_unbroadcast(g * b.data, a.shape) if need[0] else None,
                _unbroadcast(g * a.data, b.shape) if need[1] else None)

    return _make(a.data * b.data, (a, b), back, "mul")


def relu(a):
    a = as_tensor(a)
    on = a.data > 0
    # keep NaN visible so numeric failures surface instead of being zeroed
    return _make(np.where(on | np.isnan(a.data), a.data, 0.0), (a,), lambda g, need: (g * on,), "relu")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _make(s, (a,), lambda g, need: (g * s * (1.0 - s),), "sigmoid")


def tanh(a):
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g, need: (g * (1.0 - t * t),), "tanh")


def exp(a):
    a = as_tensor(a)
    e = np.exp(a.data)
    return _make(e, (a,), lambda g, need: (g * e,), "exp")


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive inputs")
    return _make(np.log(a.data), (a,), lambda g, need: (g / a.data,), "log")


_UNARY = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh, "exp": exp, "log": log}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(kind, a, b=None):
    if kind in _BINARY:
        if b is None:
            raise ParameterError(f"{kind} needs two operands")
        return _BINARY[kind](a, b)
    if kind in _UNARY:
        return _UNARY[kind](a)
    raise ParameterError(f"unknown elementwise kind {kind!r}")


# -- structural ---------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g, need):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(out, (a,), back, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(tsum(a, axis, keepdims), 1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {list(a.shape)} into {list(shape)}") from None
    return _make(out, (a,), lambda g, need: (g.reshape(a.shape),), "reshape")


def getitem(a, index):
    a = as_tensor(a)

    def back(g, need):
        full_g = np.zeros_like(a.data)
        np.add.at(full_g, index, g)
        return (full_g,)

    return _make(a.data[index], (a,), back, "getitem")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {list(a.shape)} and {list(b.shape)}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {list(a.shape)} @ {list(b.shape)}")

    def back(g, need):
        return (g @ b.data.T if need[0] else None, a.data.T @ g if need[1] else None)

    return _make(a.data @ b.data, (a, b), back, "matmul")


# -- convolution and pooling --------------------------------------------------

def conv1d(x, kernels, dilation=1, causal=True):
    """Same-length 1-D convolution ``[B, C_in, T] -> [B, C_out, T]``.

    Causal mode pads only the past so output[t] reads x[<= t]; otherwise the
    padding is split around the window.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if int(dilation) != dilation or dilation < 1:
        raise ParameterError(f"dilation must be a positive integer, got {dilation}")
    dilation = int(dilation)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or kernels.ndim != 3:
        raise ShapeError("conv1d expects x [B, C, T] and kernels [C_out, C_in, W]")
    c_out, c_in, width = kernels.shape
    if xd.shape[1] != c_in:
        raise ShapeError(f"conv1d: input has {xd.shape[1]} channels, kernels expect {c_in}")
    n, _, t = xd.shape
    span = (width - 1) * dilation
    left = span if causal else span // 2
    padded = np.zeros((n, c_in, t + span))
    padded[:, :, left:left + t] = xd
    # taps[b, c, t, j] = padded[b, c, t + j*dilation]
    taps = np.stack([padded[:, :, j * dilation:j * dilation + t] for j in range(width)], axis=-1)
    cols = taps.transpose(0, 2, 1, 3).reshape(n * t, c_in * width)
    wmat = kernels.data.reshape(c_out, c_in * width)
    out = (cols @ wmat.T).reshape(n, t, c_out).transpose(0, 2, 1)
    if squeeze:
        out = out[0]

    def back(g, need):
        g3 = g[None] if squeeze else g
        g2 = g3.transpose(0, 2, 1).reshape(n * t, c_out)
        gx = gk = None
        if need[1]:
            gk = (g2.T @ cols).reshape(kernels.shape)
        if need[0]:
            gcols = (g2 @ wmat).reshape(n, t, c_in, width)
            gpad = np.zeros_like(padded)
            for j in range(width):
                gpad[:, :, j * dilation:j * dilation + t] += gcols[:, :, :, j].transpose(0, 2, 1)
            gx = gpad[:, :, left:left + t]
            if squeeze:
                gx = gx[0]
        return gx, gk

    return _make(np.ascontiguousarray(out), (x, kernels), back, "conv1d")


def conv2d(x, kernels):
    """Valid stride-1 2-D convolution ``[B, C_in, H, W] -> [B, C_out, H-kh+1, W-kw+1]``."""
    x, kernels = as_tensor(x), as_tensor(kernels)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernels.ndim != 4:
        raise ShapeError("conv2d expects x [B, C, H, W] and kernels [C_out, C_in, kh, kw]")
    c_out, c_in, kh, kw = kernels.shape
    n, c, h, w = xd.shape
    if c != c_in:
        raise ShapeError(f"conv2d: input has {c} channels, kernels expect {c_in}")
    if h < kh or w < kw:
        raise ShapeError(f"conv2d: input {h}x{w} is smaller than the {kh}x{kw} kernel")
    ho, wo = h - kh + 1, w - kw + 1
    win = sliding_window_view(xd, (kh, kw), axis=(2, 3))  # [n, c, ho, wo, kh, kw]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c_in * kh * kw)
    wmat = kernels.data.reshape(c_out, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)
    if squeeze:
        out = out[0]

    def back(g, need):
        g4 = g[None] if squeeze else g
        g2 = g4.transpose(0, 2, 3, 1).reshape(n * ho * wo, c_out)
        gx = gk = None
        if need[1]:
            gk = (g2.T @ cols).reshape(kernels.shape)
        if need[0]:
            gcols = (g2 @ wmat).reshape(n, ho, wo, c_in, kh, kw)
            gx = np.zeros_like(xd)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i:i + ho, j:j + wo] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            if squeeze:
                gx = gx[0]
        return gx, gk

    return _make(np.ascontiguousarray(out), (x, kernels), back, "conv2d")


def maxpool2d(x, window=2):
    """Non-overlapping max pooling; gradient goes to the first maximal cell of each window."""
    x = as_tensor(x)
    if window != 2:
        raise ParameterError("only 2x2 pooling is supported")
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ShapeError("maxpool2d expects [B, C, H, W] or [C, H, W]")
    n, c, h, w = xd.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2d needs even spatial dimensions, got {h}x{w}")
    blocks = xd.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    if squeeze:
        out = out[0]

    def back(g, need):
        g4 = g[None] if squeeze else g
        gb = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(gb, arg[..., None], g4[..., None], axis=-1)
        gx = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx[0] if squeeze else gx,)

    return _make(out, (x,), back, "maxpool2d")


# -- recurrent ----------------------------------------------------------------

def lstm(x, w_input, w_hidden, bias):
    """Single-layer LSTM over ``x [B, F, T]``; returns the final hidden state ``[B, H]``.

    Gate blocks in the 4H axis are ordered input, forget, cell, output.
    Backward is hand-written truncation-free BPTT.
    """
    x, w_input, w_hidden, bias = (as_tensor(v) for v in (x, w_input, w_hidden, bias))
    if x.ndim != 3:
        raise ShapeError(f"lstm expects x [B, F, T], got {list(x.shape)}")
    n, f, t = x.shape
    hsz = w_hidden.shape[0]
    if w_input.shape != (f, 4 * hsz) or w_hidden.shape != (hsz, 4 * hsz) or bias.shape != (4 * hsz,):
        raise ShapeError("lstm weight shapes do not match input features / hidden size")
    xs = x.data.transpose(0, 2, 1)  # [B, T, F]
    pre_x = (xs.reshape(n * t, f) @ w_input.data).reshape(n, t, 4 * hsz) + bias.data
    wh = w_hidden.data
    hs = np.zeros((t + 1, n, hsz))
    cs = np.zeros((t + 1, n, hsz))
    gates = np.empty((t, n, 4 * hsz))
    tanh_c = np.empty((t, n, hsz))
    for s in range(t):
        a = pre_x[:, s] + hs[s] @ wh
        a[:, :2 * hsz] = _sigmoid(a[:, :2 * hsz])
        a[:, 2 * hsz:3 * hsz] = np.tanh(a[:, 2 * hsz:3 * hsz])
        a[:, 3 * hsz:] = _sigmoid(a[:, 3 * hsz:])
        gates[s] = a
        i_g, f_g, c_g, o_g = a[:, :hsz], a[:, hsz:2 * hsz], a[:, 2 * hsz:3 * hsz], a[:, 3 * hsz:]
        cs[s + 1] = f_g * cs[s] + i_g * c_g
        tanh_c[s] = np.tanh(cs[s + 1])
        hs[s + 1] = o_g * tanh_c[s]

    def back(g, need):
        dpre = np.empty((n, t, 4 * hsz))
        dh = g.copy()
        dc = np.zeros((n, hsz))
        for s in range(t - 1, -1, -1):
            a = gates[s]
            i_g, f_g, c_g, o_g = a[:, :hsz], a[:, hsz:2 * hsz], a[:, 2 * hsz:3 * hsz], a[:, 3 * hsz:]
            tc = tanh_c[s]
            dc = dc + dh * o_g * (1.0 - tc * tc)
            da = dpre[:, s]
            da[:, :hsz] = dc * c_g * i_g * (1.0 - i_g)
            da[:, hsz:2 * hsz] = dc * cs[s] * f_g * (1.0 - f_g)
            da[:, 2 * hsz:3 * hsz] = dc * i_g * (1.0 - c_g * c_g)
            da[:, 3 * hsz:] = dh * tc * o_g * (1.0 - o_g)
            dh = da @ wh.T
            dc = dc * f_g
        d2 = dpre.reshape(n * t, 4 * hsz)
        gx = (d2 @ w_input.data.T).reshape(n, t, f).transpose(0, 2, 1) if need[0] else None
        gwi = xs.reshape(n * t, f).T @ d2 if need[1] else None
        gwh = None
        if need[2]:
            gwh = hs[:t].transpose(1, 0, 2).reshape(n * t, hsz).T @ d2
        gb = d2.sum(axis=0) if need[3] else None
        return gx, gwi, gwh, gb

    return _make(hs[t].copy(), (x, w_input, w_hidden, bias), back, "lstm")


# -- losses and regularizers --------------------------------------------------

def log_softmax(z):
    """Row-wise log-softmax of a numpy array, stabilized by the row max."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z):
    return np.exp(log_softmax(z))


def softmax_cross_entropy(logits, labels):
    """Mean over the batch of -log softmax(logits)[label]."""
    logits = as_tensor(logits)
    if logits.ndim == 1:
        logits = reshape(logits, (1, -1))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, c = logits.shape
    if n < 1 or labels.shape[0] != n:
        raise LabelError(f"need one label per row: {labels.shape[0]} labels for {n} rows")
    if np.any(labels < 0) or np.any(labels >= c):
        raise LabelError(f"labels must lie in [0, {c})")
    lsm = log_softmax(logits.data)
    rows = np.arange(n)
    loss = -lsm[rows, labels].mean()

    def back(g, need):
        d = np.exp(lsm)
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return _make(loss, (logits,), back, "cross_entropy")


def kl_divergence(p_logits, q_logits):
    """Mean over the batch of KL(softmax(p) || softmax(q)); both arguments get gradients."""
    p_logits, q_logits = as_tensor(p_logits), as_tensor(q_logits)
    if p_logits.shape != q_logits.shape:
        raise ShapeError(f"kl_divergence: shapes {list(p_logits.shape)} and {list(q_logits.shape)} differ")
    pd, qd = p_logits.data, q_logits.data
    if pd.ndim == 1:
        pd, qd = pd[None], qd[None]
    n = pd.shape[0]
    logp, logq = log_softmax(pd), log_softmax(qd)
    prob_p, prob_q = np.exp(logp), np.exp(logq)
    diff = logp - logq
    rows = (prob_p * diff).sum(axis=1)
    value = rows.mean()

    def back(g, need):
        scale = g / n
        gp = prob_p * (diff - rows[:, None]) * scale if need[0] else None
        gq = (prob_q - prob_p) * scale if need[1] else None
        if p_logits.ndim == 1:
            gp = None if gp is None else gp[0]
            gq = None if gq is None else gq[0]
        return gp, gq

    return _make(value, (p_logits, q_logits), back, "kl_divergence")


def dropout_mask(shape, p, rng):
    keep = _rng(rng).random(shape) >= p
    return keep / (1.0 - p)


def dropout(x, p, training=True, seed=None, mask=None):
    """Inverted dropout; identity when ``training`` is false or ``p == 0``.

    ``mask`` replays a previously drawn scaled mask instead of sampling.
    """
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if mask is None:
        mask = dropout_mask(x.shape, p, seed)
    return mul(x, Tensor(mask))
