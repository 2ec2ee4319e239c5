"""Dense float64 tensors with reverse-mode differentiation.

Just enough machinery to train small MLPs and differentiate
logsumexp-style contrastive losses: matmul, bias add, relu, row-wise L2
normalization, row-wise dot products against constant embedding stacks,
logsumexp reductions, and elementwise scalar arithmetic.

Every public operation checks its result for NaN/Inf and raises
``NonFiniteError`` instead of propagating poison silently. Graphs are
built define-by-run: evaluating an expression records the node list in
topological order, and ``Tensor.backward`` visits each node exactly once.
"""

from __future__ import annotations

import numpy as np


class DomainError(ValueError):
    """An operation was called outside its mathematical domain."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared in the result of an operation."""


class GraphStateError(RuntimeError):
    """Backward was requested in a state where no gradient is defined."""


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """A float64 array node in a dynamically recorded computation graph.

    Leaf tensors created with ``requires_grad=True`` are parameters and
    receive a ``.grad`` array after ``backward``. Intermediate nodes hold
    a closure that routes the incoming gradient to their parents.

    Tensors are immutable after construction as far as the graph is
    concerned; mutating ``.data`` in place between forward and backward
    invalidates gradients. A graph instance is single-owner during a
    forward/backward pair.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError("tensor created with non-finite values")
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self._op = "leaf"

    # -- construction helper used by every op ---------------------------------

    @classmethod
    def _result(cls, data: np.ndarray, parents: tuple, backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"non-finite values produced by op '{op}'")
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = parents if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        out._op = op
        return out

    # -- basic protocol --------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DomainError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        return f"Tensor(op={self._op}, shape={self.shape}, requires_grad={self.requires_grad})"

    # -- autodiff ---------------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from a scalar: fills ``.grad`` on every parameter.

        Gradients accumulate into ``.grad``; call ``zero_grad`` on the
        parameters (or via the optimizer) between steps.
        """
        if self.data.size != 1:
            raise GraphStateError("backward() requires a scalar loss tensor")
        if not self.requires_grad:
            raise GraphStateError("backward() on a graph with no trainable leaves")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None:
                for parent, pg in node._backward(g):
                    if not parent.requires_grad:
                        continue
                    acc = grads.get(id(parent))
                    if acc is None:
                        # Own the buffer before in-place accumulation: closures
                        # may hand back g itself, views, or read-only broadcasts.
                        if pg is g or not pg.flags.owndata or not pg.flags.writeable:
                            pg = pg.copy()
                        grads[id(parent)] = pg
                    else:
                        acc += pg
            else:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise DomainError("tensor/tensor division is not supported; divide by a scalar")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- elementwise and reduction ops ------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum; also supports adding a 1-D bias to each row or a scalar."""
    a = _wrap(a)
    if not isinstance(b, Tensor) and np.isscalar(b):
        c = float(b)

        def backward(g):
            return ((a, g),)

        return Tensor._result(a.data + c, (a,), backward, "add_scalar")
    b = _wrap(b)
    if a.data.shape == b.data.shape:

        def backward(g):
            return ((a, g), (b, g))

        return Tensor._result(a.data + b.data, (a, b), backward, "add")
    if a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]:

        def backward(g):
            return ((a, g), (b, g.sum(axis=0)))

        return Tensor._result(a.data + b.data, (a, b), backward, "add_bias")
    raise DomainError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a: Tensor, b) -> Tensor:
    a = _wrap(a)
    if not isinstance(b, Tensor) and np.isscalar(b):
        return add(a, -float(b))
    b = _wrap(b)
    if a.data.shape != b.data.shape:
        raise DomainError(f"sub: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        return ((a, g), (b, -g))

    return Tensor._result(a.data - b.data, (a, b), backward, "sub")


def neg(a: Tensor) -> Tensor:
    a = _wrap(a)

    def backward(g):
        return ((a, -g),)

    return Tensor._result(-a.data, (a,), backward, "neg")


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product with a same-shape tensor or a python scalar."""
    a = _wrap(a)
    if not isinstance(b, Tensor) and np.isscalar(b):
        c = float(b)

        def backward(g):
            return ((a, g * c),)

        return Tensor._result(a.data * c, (a,), backward, "mul_scalar")
    b = _wrap(b)
    if a.data.shape != b.data.shape:
        raise DomainError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        return ((a, g * b.data), (b, g * a.data))

    return Tensor._result(a.data * b.data, (a, b), backward, "mul")


def exp(a: Tensor) -> Tensor:
    """Elementwise exp. Overflow raises ``NonFiniteError``."""
    a = _wrap(a)
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)

    def backward(g):
        return ((a, g * out_data),)

    return Tensor._result(out_data, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    a = _wrap(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log requires strictly positive inputs")

    def backward(g):
        return ((a, g / a.data),)

    return Tensor._result(np.log(a.data), (a,), backward, "log")


def relu(a: Tensor) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0.0

    def backward(g):
        return ((a, g * mask),)

    return Tensor._result(np.where(mask, a.data, 0.0), (a,), backward, "relu")


def sum_all(a: Tensor) -> Tensor:
    a = _wrap(a)

    def backward(g):
        return ((a, np.broadcast_to(g, a.data.shape)),)

    return Tensor._result(np.asarray(a.data.sum()), (a,), backward, "sum")


def sum_rows(a: Tensor) -> Tensor:
    """Row sums of a [B, K] tensor, giving a [B] tensor."""
    a = _wrap(a)
    if a.data.ndim != 2:
        raise DomainError("sum_rows expects a 2-D tensor")

    def backward(g):
        return ((a, np.repeat(g[:, None], a.data.shape[1], axis=1)),)

    return Tensor._result(a.data.sum(axis=1), (a,), backward, "sum_rows")


def mean_all(a: Tensor) -> Tensor:
    a = _wrap(a)
    n = a.data.size
    if n == 0:
        raise DomainError("mean of an empty tensor")

    def backward(g):
        return ((a, np.broadcast_to(g / n, a.data.shape)),)

    return Tensor._result(np.asarray(a.data.mean()), (a,), backward, "mean")


# -- linear algebra ----------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DomainError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return Tensor._result(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    a = _wrap(a)
    if a.data.ndim != 2:
        raise DomainError("transpose expects a 2-D tensor")

    def backward(g):
        return ((a, g.T),)

    return Tensor._result(a.data.T.copy(), (a,), backward, "transpose")


def l2_normalize_rows(a: Tensor, eps: float = 0.0) -> Tensor:
    """Scale every row of a 2-D tensor to unit L2 norm.

    Zero rows have no direction to normalize; they raise ``DomainError``.
    """
    a = _wrap(a)
    if a.data.ndim != 2:
        raise DomainError("l2_normalize_rows expects a 2-D tensor")
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    if np.any(norms <= eps):
        raise DomainError("cannot L2-normalize a zero row")
    out_data = a.data / norms

    def backward(g):
        radial = np.sum(g * out_data, axis=1, keepdims=True)
        return ((a, (g - out_data * radial) / norms),)

    return Tensor._result(out_data, (a,), backward, "l2norm_rows")


def rowwise_dot(a: Tensor, b: Tensor) -> Tensor:
    """Per-row inner products of two [B, d] tensors, giving a [B] tensor."""
    a, b = _wrap(a), _wrap(b)
    if a.data.shape != b.data.shape or a.data.ndim != 2:
        raise DomainError(f"rowwise_dot: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        return ((a, g[:, None] * b.data), (b, g[:, None] * a.data))

    return Tensor._result(np.sum(a.data * b.data, axis=1), (a, b), backward, "rowwise_dot")


def paired_dot(a: Tensor, stack: np.ndarray) -> Tensor:
    """Dot each row a[b] against a per-row stack of constant vectors.

    ``stack`` has shape [B, K, d] (or [K, d], shared across rows) and does
    not receive gradients; the result has shape [B, K].
    """
    a = _wrap(a)
    stack = _as_array(stack)
    if stack.ndim == 2:
        if a.data.ndim != 2 or a.data.shape[1] != stack.shape[1]:
            raise DomainError(f"paired_dot: incompatible shapes {a.shape} and {stack.shape}")
        out_data = a.data @ stack.T

        def backward(g):
            return ((a, g @ stack),)

        return Tensor._result(out_data, (a,), backward, "paired_dot")
    if stack.ndim != 3 or a.data.ndim != 2 or stack.shape[0] != a.data.shape[0] or stack.shape[2] != a.data.shape[1]:
        raise DomainError(f"paired_dot: incompatible shapes {a.shape} and {stack.shape}")
    out_data = np.einsum("bd,bkd->bk", a.data, stack)

    def backward(g):
        return ((a, np.einsum("bk,bkd->bd", g, stack)),)

    return Tensor._result(out_data, (a,), backward, "paired_dot")


def pair_concat(a: Tensor, stack: np.ndarray) -> Tensor:
    """Concatenate each row a[b] with every constant vector stack[b, k].

    Returns a [B*K, 2d] tensor, rows ordered (b, k) row-major. Gradients
    flow to ``a`` only. Used by concatenation-style witness heads scoring
    an embedding against a block of stored negatives.
    """
    a = _wrap(a)
    stack = _as_array(stack)
    if stack.ndim != 3 or a.data.ndim != 2 or stack.shape[0] != a.data.shape[0] or stack.shape[2] != a.data.shape[1]:
        raise DomainError(f"pair_concat: incompatible shapes {a.shape} and {stack.shape}")
    B, K, d = stack.shape
    left = np.repeat(a.data, K, axis=0)
    right = stack.reshape(B * K, d)
    out_data = np.concatenate([left, right], axis=1)

    def backward(g):
        return ((a, g[:, :d].reshape(B, K, d).sum(axis=1)),)

    return Tensor._result(out_data, (a,), backward, "pair_concat")


def concat_cols(tensors: list) -> Tensor:
    """Column-concatenate [B] and [B, k] tensors into one [B, K] tensor."""
    ts = [_wrap(t) for t in tensors]
    if not ts:
        raise DomainError("concat_cols of an empty list")
    blocks = []
    widths = []
    rows = ts[0].data.shape[0]
    for t in ts:
        if t.data.ndim == 1:
            blocks.append(t.data[:, None])
            widths.append(1)
        elif t.data.ndim == 2:
            blocks.append(t.data)
            widths.append(t.data.shape[1])
        else:
            raise DomainError("concat_cols expects 1-D or 2-D tensors")
        if blocks[-1].shape[0] != rows:
            raise DomainError("concat_cols: row counts differ")
    out_data = np.concatenate(blocks, axis=1)
    offsets = np.cumsum([0] + widths)

    def backward(g):
        grads = []
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            piece = g[:, lo:hi]
            grads.append((t, piece[:, 0] if t.data.ndim == 1 else piece))
        return tuple(grads)

    return Tensor._result(out_data, tuple(ts), backward, "concat_cols")


def reshape(a: Tensor, shape: tuple) -> Tensor:
    a = _wrap(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        return ((a, g.reshape(a.data.shape)),)

    return Tensor._result(out_data, (a,), backward, "reshape")


def take_per_row(a: Tensor, idx) -> Tensor:
    """Gather several columns per row: out[b, k] = a[b, idx[b, k]]."""
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.intp)
    if a.data.ndim != 2 or idx.ndim != 2 or idx.shape[0] != a.data.shape[0]:
        raise DomainError("take_per_row expects a [B, N] tensor and a [B, K] index array")
    rows = np.arange(a.data.shape[0])[:, None]

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (np.broadcast_to(rows, idx.shape), idx), g)
        return ((a, ga),)

    return Tensor._result(a.data[rows, idx], (a,), backward, "take_per_row")


def tile_pairs(a: Tensor, b: Tensor) -> Tensor:
    """All-pairs concatenation: row (i, j) of the result is [a[i], b[j]].

    Output shape [A*B, da+db], rows in row-major (i, j) order; gradients
    reach both inputs.
    """
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DomainError("tile_pairs expects two 2-D tensors")
    na, da = a.data.shape
    nb, db = b.data.shape
    left = np.repeat(a.data, nb, axis=0)
    right = np.tile(b.data, (na, 1))
    out_data = np.concatenate([left, right], axis=1)

    def backward(g):
        ga = g[:, :da].reshape(na, nb, da).sum(axis=1)
        gb = g[:, da:].reshape(na, nb, db).sum(axis=0)
        return ((a, ga), (b, gb))

    return Tensor._result(out_data, (a, b), backward, "tile_pairs")


def gather_rows(a: Tensor, idx) -> Tensor:
    """Pick one column per row: out[b] = a[b, idx[b]]."""
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.intp)
    if a.data.ndim != 2 or idx.shape != (a.data.shape[0],):
        raise DomainError("gather_rows expects a [B, C] tensor and a [B] index vector")
    rows = np.arange(a.data.shape[0])

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (rows, idx), g)
        return ((a, ga),)

    return Tensor._result(a.data[rows, idx], (a,), backward, "gather_rows")


# -- logsumexp ------------------------------------------------------------------------


def logsumexp_array(values: np.ndarray) -> float:
    """max(v) + log sum exp(v - max(v)) over a non-empty 1-D array.

    Never overflows for finite inputs and stays within rounding noise of
    the naive formula whenever that formula does not overflow.
    """
    values = _as_array(values)
    if values.size == 0:
        raise DomainError("logsumexp of an empty collection")
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("logsumexp received non-finite values")
    m = float(values.max())
    return m + float(np.log(np.sum(np.exp(values - m))))


def logsumexp(a: Tensor | np.ndarray) -> Tensor | float:
    """Scalar logsumexp over all elements; tensors stay differentiable."""
    if not isinstance(a, Tensor):
        return logsumexp_array(np.asarray(a))
    if a.data.size == 0:
        raise DomainError("logsumexp of an empty tensor")
    m = a.data.max()
    out_val = m + np.log(np.sum(np.exp(a.data - m)))
    softmax = np.exp(a.data - out_val)

    def backward(g):
        return ((a, g * softmax),)

    return Tensor._result(np.asarray(out_val), (a,), backward, "logsumexp")


def logsumexp_rows(a: Tensor) -> Tensor:
    """Row-wise logsumexp of a [B, K] tensor, giving a [B] tensor."""
    a = _wrap(a)
    if a.data.ndim != 2 or a.data.shape[1] == 0:
        raise DomainError("logsumexp_rows expects a non-empty [B, K] tensor")
    m = a.data.max(axis=1, keepdims=True)
    out_data = (m + np.log(np.sum(np.exp(a.data - m), axis=1, keepdims=True))).ravel()
    softmax = np.exp(a.data - out_data[:, None])

    def backward(g):
        return ((a, g[:, None] * softmax),)

    return Tensor._result(out_data, (a,), backward, "logsumexp_rows")
