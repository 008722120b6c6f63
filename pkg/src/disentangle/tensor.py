"""Dense double-precision tensors with a closed reverse-mode tape.

Every forward op records its parents and a backward closure on the output
tensor. :func:`backward` walks the recorded graph once, in a fixed
topological order, and writes ``d loss / d parameter`` into each reachable
:class:`Parameter`.

Only the handful of ops the model needs are provided; this is not a
general autodiff system.
"""

import numpy as np
from scipy.special import expit

from .exceptions import DegenerateRowError, DimensionError, NumericError, StaleGraphError

#: Additive stand-in for ``-inf`` in attention masks and logit masks.
MASK_VALUE = -1e9


class Tensor:
    """An immutable array node in the computation graph.

    Parameters
    ----------
    data : array_like
        Values, converted to ``float64``.
    parents : tuple of Tensor, optional
        Inputs of the op that produced this tensor.
    backward_fn : callable, optional
        Maps the upstream gradient to a tuple of gradients, one per parent
        (``None`` for parents that receive nothing).
    """

    __slots__ = ("data", "_parents", "_backward_fn", "_needs_grad", "_consumed", "op")

    def __init__(self, data, parents=(), backward_fn=None, op=None):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self._parents = tuple(parents)
        self._backward_fn = backward_fn
        self._needs_grad = any(p._needs_grad for p in self._parents)
        self._consumed = False
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        """Return a writable copy of the values."""
        return np.array(self.data)

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    """A trainable leaf tensor with an accumulated gradient.

    ``value`` is replaced (never mutated in place) by the optimizer so that
    tensors produced earlier keep their values.
    """

    __slots__ = ("name", "grad")

    def __init__(self, value, name="param"):
        super().__init__(value, op="parameter")
        self._needs_grad = True
        self.name = name
        self.grad = np.zeros_like(self.data)

    @property
    def value(self):
        return self.data

    @value.setter
    def value(self, new):
        arr = np.asarray(new, dtype=np.float64)
        if arr is new or arr.base is not None:
            arr = arr.copy()
        if arr.shape != self.data.shape:
            raise DimensionError(f"cannot assign shape {arr.shape} to parameter {self.name!r} of shape {self.data.shape}")
        arr.flags.writeable = False
        self.data = arr

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x, op="constant")


def _result(data, parents, backward_fn, op):
    data = np.asarray(data, dtype=np.float64)
    if not np.isfinite(data).all():
        raise NumericError(f"non-finite value produced by {op}")
    data.flags.writeable = False
    out = Tensor.__new__(Tensor)
    out.data = data
    out.op = op
    out._consumed = False
    out._needs_grad = any(p._needs_grad for p in parents)
    if out._needs_grad:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    else:
        out._parents = ()
        out._backward_fn = None
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise DimensionError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise DimensionError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise DimensionError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(data, (a, b), backward, "mul")


def scale(x, c):
    x = as_tensor(x)
    c = float(c)
    return _result(x.data * c, (x,), lambda g: (g * c,), "scale")


def _sigmoid(z):
    return expit(z)


def unary(kind, x):
    """Apply ``tanh``, ``sigmoid`` or ``relu`` elementwise."""
    x = as_tensor(x)
    if kind == "tanh":
        y = np.tanh(x.data)
        backward = lambda g: (g * (1.0 - y * y),)
    elif kind == "sigmoid":
        y = _sigmoid(x.data)
        backward = lambda g: (g * y * (1.0 - y),)
    elif kind == "relu":
        y = np.maximum(x.data, 0.0)
        backward = lambda g: (g * (x.data > 0),)
    else:
        raise ValueError(f"unknown unary op {kind!r}")
    return _result(y, (x,), backward, kind)


def tanh(x):
    return unary("tanh", x)


def sigmoid(x):
    return unary("sigmoid", x)


def relu(x):
    return unary("relu", x)


# ---------------------------------------------------------------------------
# linear algebra and shape


def matmul(a, b):
    """Matrix product over the last two axes, numpy broadcasting elsewhere.

    1-D operands are treated as a row (left) or column (right) vector.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError(f"matmul needs at least 1-D operands, got {a.shape} and {b.shape}")
    k_a = a.shape[-1]
    k_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if k_a != k_b:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul batch extents differ: {a.shape} @ {b.shape}") from None

    if a.ndim >= 2 and b.ndim == 2:
        # shared right operand: fold the batch axes into rows
        def backward(g):
            A2 = a.data.reshape(-1, k_a)
            G2 = g.reshape(-1, g.shape[-1])
            return (g @ b.data.T), A2.T @ G2

        return _result(data, (a, b), backward, "matmul")

    def backward(g):
        A = a.data[None, :] if a.ndim == 1 else a.data
        B = b.data[:, None] if b.ndim == 1 else b.data
        G = g
        if a.ndim == 1:
            G = G[..., None, :]
        if b.ndim == 1:
            G = G[..., None]
        ga = np.matmul(G, np.swapaxes(B, -1, -2))
        gb = np.matmul(np.swapaxes(A, -1, -2), G)
        if a.ndim == 1:
            ga = ga.sum(axis=tuple(range(ga.ndim - 2))) if ga.ndim > 2 else ga
            ga = ga.reshape(a.shape)
        else:
            ga = _unbroadcast(ga, a.shape)
        if b.ndim == 1:
            gb = gb.sum(axis=tuple(range(gb.ndim - 2))) if gb.ndim > 2 else gb
            gb = gb.reshape(b.shape)
        else:
            gb = _unbroadcast(gb, b.shape)
        return ga, gb

    return _result(data, (a, b), backward, "matmul")


def sparse_matmul(s, b):
    """Product of a constant scipy sparse matrix with a dense 2-D tensor."""
    b = as_tensor(b)
    if s.shape[1] != b.shape[0] or b.ndim != 2:
        raise DimensionError(f"sparse_matmul inner extents differ: {s.shape} @ {b.shape}")
    data = np.asarray(s @ b.data)
    st = s.T.tocsr()
    return _result(data, (b,), lambda g: (np.asarray(st @ g),), "sparse_matmul")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _result(data, tuple(tensors), backward, "concat")


def reshape(x, shape):
    x = as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from None
    return _result(data, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None):
    """Permute axes; by default swap the last two."""
    x = as_tensor(x)
    if axes is None:
        axes = list(range(x.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def take(x, index):
    """Basic or advanced indexing; the gradient scatters back with ``np.add.at``."""
    x = as_tensor(x)
    data = x.data[index]

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return _result(data, (x,), backward, "take")


def tensor_sum(x):
    x = as_tensor(x)
    return _result(x.data.sum(), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def mean(x):
    x = as_tensor(x)
    n = x.data.size
    return _result(x.data.mean(), (x,), lambda g: (np.full(x.shape, float(g) / n),), "mean")


# ---------------------------------------------------------------------------
# normalisation and loss


def masked_softmax(logits, mask):
    """Row-wise softmax of ``logits + mask`` over the last axis.

    ``mask`` holds 0 for visible positions and :data:`MASK_VALUE` (or
    ``-inf``) for hidden ones; hidden outputs are exactly zero. A row with no
    visible position raises :class:`DegenerateRowError`.
    """
    logits = as_tensor(logits)
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
    hidden = m <= MASK_VALUE / 2
    try:
        hidden = np.broadcast_to(hidden, logits.shape)
    except ValueError:
        raise DimensionError(f"mask shape {m.shape} does not fit logits {logits.shape}") from None
    if np.any(hidden.all(axis=-1)):
        raise DegenerateRowError("softmax row has every position masked")
    z = np.where(hidden, MASK_VALUE, logits.data + np.where(hidden, 0.0, m))
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    e[hidden] = 0.0
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (logits,), backward, "masked_softmax")


def log_softmax_np(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, gold):
    """Mean negative log-likelihood of ``gold`` under ``softmax(logits)``.

    ``logits`` is ``[n]`` with an integer ``gold``, or ``[B, n]`` with ``B``
    gold indices.
    """
    logits = as_tensor(logits)
    single = logits.ndim == 1
    z = logits.data[None, :] if single else logits.data
    gold = np.atleast_1d(np.asarray(gold))
    if gold.shape != (z.shape[0],):
        raise DimensionError(f"gold shape {gold.shape} does not match logits {logits.shape}")
    if not np.issubdtype(gold.dtype, np.integer):
        raise IndexError("gold indices must be integers")
    n = z.shape[-1]
    if np.any(gold < 0) or np.any(gold >= n):
        raise IndexError(f"gold index out of range for {n} classes: {gold.tolist()}")
    logp = log_softmax_np(z)
    rows = np.arange(z.shape[0])
    loss = -logp[rows, gold].mean()

    def backward(g):
        d = np.exp(logp)
        d[rows, gold] -= 1.0
        d *= float(g) / z.shape[0]
        return (d[0] if single else d,)

    return _result(loss, (logits,), backward, "cross_entropy")


# ---------------------------------------------------------------------------
# reverse pass


def _topological(root):
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
        for p in reversed(node._parents):
            if p._needs_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Accumulate ``d loss / d p`` into ``p.grad`` for every reachable parameter.

    The graph is consumed: a second call on the same ``loss`` raises
    :class:`StaleGraphError`.
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise StaleGraphError("graph already consumed by backward; run the forward pass again")
    loss._consumed = True
    if not loss._needs_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad = node.grad + g
            continue
        if node._backward_fn is None:
            continue
        for parent, pg in zip(node._parents, node._backward_fn(g)):
            if pg is None or not parent._needs_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=np.float64)
        node._backward_fn = None
