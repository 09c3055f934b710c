"""Small reverse-mode autodiff engine over float64 numpy arrays.

Tensors record the op that produced them and a closure that pushes the
output gradient back to their parents.  ``backward`` walks the graph in
reverse topological order, visiting each node once.
"""
import builtins
import struct
from contextlib import contextmanager

import numpy as np

DTYPE = np.float64
LOG_FLOOR = 1e-12

_grad_enabled = True


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


@contextmanager
def no_grad():
    """Run forward computations without recording a graph."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "name", "_parents", "_backward")
    __array_ufunc__ = None  # make ndarray (op) Tensor defer to Tensor's reflected ops

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, op, backward_fn):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    if not np.all(np.isfinite(data)):
        raise NumericError(f"numeric overflow at node {op}")
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# elementwise binary ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), "add", bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), "sub", bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), "mul", bw)


def minimum(a, b):
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("minimum", a, b)
    pick_a = a.data <= b.data

    def bw(g):
        _accum(a, _unbroadcast(np.where(pick_a, g, 0.0), a.shape))
        _accum(b, _unbroadcast(np.where(pick_a, 0.0, g), b.shape))

    return _node(np.where(pick_a, a.data, b.data), (a, b), "minimum", bw)


def scale(a, c):
    c = float(c)

    def bw(g):
        _accum(a, g * c)

    return _node(a.data * c, (a,), "scale", bw)


def matmul(a, b):
    """Matrix product with numpy semantics for operands of rank >= 2."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _node(out, (a, b), "matmul", bw)


# unary ops


def sigmoid(a):
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bw(g):
        _accum(a, g * out * (1.0 - out))

    return _node(out, (a,), "sigmoid", bw)


def tanh(a):
    out = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - out * out))

    return _node(out, (a,), "tanh", bw)


def log(a, floor=None):
    """Natural log.  With ``floor`` the input is clamped from below and the
    clamped entries receive no gradient."""
    x = a.data
    if floor is not None:
        clamped = x < floor
        x = np.where(clamped, floor, x)
    elif np.any(x <= 0):
        raise NumericError("numeric overflow at node log")

    def bw(g):
        d = g / x
        if floor is not None:
            d = np.where(clamped, 0.0, d)
        _accum(a, d)

    return _node(np.log(x), (a,), "log", bw)


def softmax(a):
    """Softmax over the last axis (max-subtracted)."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        _accum(a, out * (g - (g * out).sum(axis=-1, keepdims=True)))

    return _node(out, (a,), "softmax", bw)


# shape ops


def reshape(a, shape):
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} to {shape}") from None

    def bw(g):
        _accum(a, g.reshape(old))

    return _node(out, (a,), "reshape", bw)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes}") from None
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, cuts, axis=axis)):
            _accum(t, piece)

    return _node(out, tuple(tensors), "concat", bw)


def split(a, sizes, axis=-1):
    """Split along ``axis`` into pieces of the given sizes."""
    if builtins.sum(sizes) != a.shape[axis]:
        raise ShapeError(f"split: sizes {sizes} do not cover axis of length {a.shape[axis]}")
    outs = []
    start = 0
    for n in sizes:
        sl = [slice(None)] * a.ndim
        sl[axis] = slice(start, start + n)
        outs.append(index(a, tuple(sl)))
        start += n
    return outs


def index(a, idx):
    """Basic or integer-array indexing with a scatter-add adjoint."""
    out = a.data[idx]
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (int, slice)) or i is None or i is Ellipsis for i in parts)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        _accum(a, full)

    return _node(np.array(out, dtype=DTYPE), (a,), "index", bw)


def gather(table, ids):
    """Embedding lookup: rows of ``table`` selected by an integer array."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"gather: id out of range for table with {table.shape[0]} rows")
    out = table.data[ids]

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        _accum(table, full)

    return _node(out, (table,), "gather", bw)


def take_last(a, ids):
    """out[..., ] = a[..., ids[...]]: pick one entry per row of the last axis."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != a.shape[:-1]:
        raise ShapeError(f"take_last: ids shape {ids.shape} vs tensor {a.shape}")
    out = np.take_along_axis(a.data, ids[..., None], axis=-1)[..., 0]

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, ids[..., None], g[..., None], axis=-1)
        _accum(a, full)

    return _node(out, (a,), "take_last", bw)


def scatter_add(values, ids, size):
    """out[b, ids[b, i]] += values[b, i] for a (B, L) tensor into (B, size)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != values.shape or values.ndim != 2:
        raise ShapeError(f"scatter_add: ids {ids.shape} vs values {values.shape}")
    if ids.size and ids.max() >= size:
        raise ShapeError(f"scatter_add: id {ids.max()} out of range {size}")
    B = values.shape[0]
    rows = np.broadcast_to(np.arange(B)[:, None], ids.shape)
    out = np.zeros((B, size), dtype=DTYPE)
    np.add.at(out, (rows, ids), values.data)

    def bw(g):
        _accum(values, g[rows, ids])

    return _node(out, (values,), "scatter_add", bw)


def pad_last(a, n):
    """Append ``n`` zero columns on the last axis."""
    if n == 0:
        return a
    width = a.shape[-1]
    out = np.concatenate([a.data, np.zeros(a.shape[:-1] + (n,), dtype=DTYPE)], axis=-1)

    def bw(g):
        _accum(a, g[..., :width])

    return _node(out, (a,), "pad", bw)


# reductions


def sum(a, axis=None):
    out = a.data.sum(axis=axis)
    shape = a.shape

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, shape))

    return _node(np.asarray(out, dtype=DTYPE), (a,), "sum", bw)


def mean(a, axis=None):
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


def max_over_time(a):
    """Max over axis -2 of a (..., T, F) tensor."""
    if a.ndim < 2 or a.shape[-2] == 0:
        raise ShapeError(f"max_over_time: need a non-empty time axis, got {a.shape}")
    arg = a.data.argmax(axis=-2)
    out = np.take_along_axis(a.data, arg[..., None, :], axis=-2)[..., 0, :]

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, arg[..., None, :], g[..., None, :], axis=-2)
        _accum(a, full)

    return _node(out, (a,), "max_over_time", bw)


def conv1d(x, w, b):
    """Valid 1-D convolution over the token axis.

    x: (L, E), w: (k, E, F), b: (F,) -> (L - k + 1, F)
    """
    L, E = x.shape
    k, E2, F = w.shape
    if E != E2 or b.shape != (F,):
        raise ShapeError(f"conv1d: input {x.shape}, filters {w.shape}, bias {b.shape}")
    if L < k:
        raise ShapeError(f"conv1d: sequence length {L} shorter than filter width {k}")
    n = L - k + 1
    windows = np.stack([x.data[j:j + n] for j in range(k)], axis=1).reshape(n, k * E)
    wmat = w.data.reshape(k * E, F)
    out = windows @ wmat + b.data

    def bw(g):
        if w.requires_grad:
            _accum(w, (windows.T @ g).reshape(k, E, F))
        if b.requires_grad:
            _accum(b, g.sum(axis=0))
        if x.requires_grad:
            dwin = (g @ wmat.T).reshape(n, k, E)
            dx = np.zeros_like(x.data)
            for j in range(k):
                dx[j:j + n] += dwin[:, j]
            _accum(x, dx)

    return _node(out, (x, w, b), "conv1d", bw)


# graph driver


def _topo_order(root):
    order = []
    seen = set()
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(node) into ``.grad`` of every node reachable from
    ``loss``; interior nodes are visited once, in reverse topological order."""
    if loss.data.shape != ():
        raise ShapeError(f"backward needs a scalar output, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    _accum(loss, np.ones((), dtype=DTYPE))
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)


def gradients(loss, params):
    """Return {name: gradient} for ``params`` (a name -> Tensor dict).

    Leaf ``.grad`` buffers are reset first; unreachable parameters get zeros.
    """
    for p in params.values():
        p.grad = None
    backward(loss)
    return {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}


def evaluate(fn, bindings):
    """Bind numpy inputs to tensors and run ``fn(**tensors)``."""
    inputs = {k: as_tensor(v) for k, v in bindings.items()}
    return fn(**inputs)


def grad_check(loss_fn, param, eps=1e-5):
    """Max relative error between the analytic and central-difference
    gradient of ``loss_fn()`` with respect to every entry of ``param``."""
    was = param.requires_grad
    param.requires_grad = True
    param.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = param.grad if param.grad is not None else np.zeros_like(param.data)
    analytic = np.array(analytic, copy=True)
    param.grad = None
    flat = param.data.reshape(-1)
    worst = 0.0
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn().item()
            flat[i] = orig - eps
            down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    param.requires_grad = was
    return worst


# optimisation


def clip_by_global_norm(grads, max_norm):
    """Scale every gradient by max_norm / g when the global l2 norm g exceeds it."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    arrays = list(grads.values()) if isinstance(grads, dict) else list(grads)
    norm = float(np.sqrt(np.sum([np.sum(np.square(g)) for g in arrays])))
    if norm <= max_norm:
        return grads, norm
    s = max_norm / norm
    if isinstance(grads, dict):
        return {k: g * s for k, g in grads.items()}, norm
    return [g * s for g in arrays], norm


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** t)
            vhat = self.v[k] / (1 - b2 ** t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class SGD:
    def __init__(self, params, lr):
        self.params = params
        self.lr = lr

    def step(self, grads):
        for k, p in self.params.items():
            p.data -= self.lr * grads[k]


# checkpoints

MAGIC = b"HFCK"
FORMAT_VERSION = 1


def save_checkpoint(path, arrays):
    """Write {name: ndarray} in the HFCK binary layout (names sorted)."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        for name in sorted(arrays):
            arr = np.array(arrays[name], dtype="<f8", order="C")  # keeps rank 0
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())


class CheckpointError(ValueError):
    pass


def load_checkpoint(path):
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos = 8
    out = {}
    try:
        while pos < len(buf):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            count = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(dims)
            pos += 8 * count
            out[name] = arr.astype(DTYPE)
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"{path}: truncated or corrupt ({e})") from None
    return out
