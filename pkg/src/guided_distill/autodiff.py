"""Dense float64 tensors with reverse-mode automatic differentiation.

numpy holds the storage; every differentiable primitive used by the
networks (matmul, bias add, relu, softmax, concat, the two losses) is
written here together with its vector-Jacobian product.
"""

from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, LabelError, ShapeError, UsageError

_grad_enabled = contextvars.ContextVar("grad_enabled", default=True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    """An n-dimensional float64 array that may take part in a recorded graph.

    Values coming from outside (constructor) are checked for NaN/Inf;
    results of primitives are built through :meth:`_from_op` and skip the
    check so that a diverging loss surfaces to the trainer instead of
    raising deep inside an op.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor data must be finite (NaN/Inf rejected)")
        self.data = arr
        self._requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    @classmethod
    def _from_op(cls, data, parents, vjp, op):
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.grad = None
        out.op = op
        if _grad_enabled.get() and any(p.requires_grad for p in parents):
            out._requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        else:
            out._requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    @property
    def requires_grad(self) -> bool:
        return self._requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self.shape)

    def detach(self) -> "Tensor":
        return Tensor._from_op(self.data.copy(), (), None, "detach")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def backward(self):
        backward(self)


def _raise_item(shape):
    raise UsageError(f"item() needs a single-element tensor, got shape {shape}")


class Parameter(Tensor):
    """Trainable tensor with an accumulated gradient and a ``frozen`` flag.

    A frozen parameter behaves like a constant while graphs are recorded,
    so no gradient ever reaches it and optimizers skip it.
    """

    def __init__(self, data, frozen: bool = False, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.frozen = frozen
        self.name = name

    @property
    def requires_grad(self) -> bool:
        return not self.frozen

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, frozen={self.frozen})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- graph


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that require grad, parents before children."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable trainable leaf."""
    if loss.size != 1:
        raise UsageError(f"backward() needs a scalar root, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            # leaf: Parameter or user tensor with requires_grad
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ----------------------------------------------------------- primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    av, bv = a.data, b.data

    def vjp(g):
        return (g @ bv.T if a.requires_grad else None,
                av.T @ g if b.requires_grad else None)

    return Tensor._from_op(av @ bv, (a, b), vjp, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return Tensor._from_op(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub shape mismatch: {a.shape} - {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return Tensor._from_op(out, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul shape mismatch: {a.shape} * {b.shape}") from exc
    av, bv = a.data, b.data
    return Tensor._from_op(
        out, (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
        "mul",
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0  # subgradient 0 at exactly 0
    return Tensor._from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def tsum(x: Tensor) -> Tensor:
    shape = x.shape
    return Tensor._from_op(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def tmean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return Tensor._from_op(np.array(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),), "mean")


def _softmax_np(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax_np(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: Tensor) -> Tensor:
    if logits.data.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError(f"softmax expects n x K logits with K >= 2, got {logits.shape}")
    s = _softmax_np(logits.data)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return Tensor._from_op(s, (logits,), vjp, "softmax")


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Column-wise concatenation ``[a ⌢ b]``."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat needs equal leading dimension: {a.shape} vs {b.shape}")
    p = a.shape[1]
    return Tensor._from_op(
        np.concatenate([a.data, b.data], axis=1), (a, b),
        lambda g: (g[:, :p], g[:, p:]), "concat",
    )


def split(x: Tensor, p: int) -> tuple[Tensor, Tensor]:
    """Inverse of :func:`concat`: columns ``[:p]`` and ``[p:]``."""
    if x.data.ndim != 2 or not 0 <= p <= x.shape[1]:
        raise ShapeError(f"cannot split {x.shape} at column {p}")
    n, width = x.shape

    def left_vjp(g):
        full = np.zeros((n, width))
        full[:, :p] = g
        return (full,)

    def right_vjp(g):
        full = np.zeros((n, width))
        full[:, p:] = g
        return (full,)

    return (Tensor._from_op(x.data[:, :p].copy(), (x,), left_vjp, "split"),
            Tensor._from_op(x.data[:, p:].copy(), (x,), right_vjp, "split"))


# --------------------------------------------------------------- losses


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def vjp(g):
        d = (2.0 * float(g) / n) * diff
        return (d, -d)

    return Tensor._from_op(np.array(np.mean(diff * diff)), (pred, target), vjp, "mse")


def weighted_cross_entropy(logits: Tensor, labels, weights=None) -> Tensor:
    """sum_i w[y_i] * -log softmax(logits_i)[y_i] / sum_i w[y_i].

    ``weights=None`` is plain mean cross-entropy.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be n x K, got {logits.shape}")
    n, k = logits.shape
    y = np.asarray(labels)
    if y.shape != (n,):
        raise ShapeError(f"labels shape {y.shape} does not match logits {logits.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise LabelError("labels must be integer class indices")
        y = y.astype(np.int64)
    if n and (y.min() < 0 or y.max() >= k):
        raise LabelError(f"label out of range [0, {k}): min={y.min()}, max={y.max()}")
    if weights is None:
        w = np.ones(k)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (k,):
            raise ConfigError(f"expected {k} class weights, got {w.shape}")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ConfigError(f"class weights must be positive and finite, got {w.tolist()}")
    sw = w[y]
    total = sw.sum()
    logp = _log_softmax_np(logits.data)
    rows = np.arange(n)
    loss = -(sw * logp[rows, y]).sum() / total

    def vjp(g):
        d = np.exp(logp)
        d[rows, y] -= 1.0
        return (d * (sw / total)[:, None] * float(g),)

    return Tensor._from_op(np.array(loss), (logits,), vjp, "weighted_ce")


# ----------------------------------------------------------- optimizers


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _check_lr(lr):
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")


class SGD:
    def __init__(self, params: Iterable[Parameter], lr: float):
        _check_lr(lr)
        self.params = list(params)
        self.lr = lr

    def step(self):
        for p in self.params:
            if not p.frozen:
                p.data -= self.lr * p.grad
            p.zero_grad()

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


class Adam:
    def __init__(self, params: Iterable[Parameter], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        _check_lr(lr)
        b1, b2 = betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0) or not eps > 0:
            raise ConfigError(f"invalid Adam hyperparameters betas={betas}, eps={eps}")
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, b1, b2, eps
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._t = [0] * len(self.params)

    def step(self):
        for i, p in enumerate(self.params):
            if not p.frozen:
                g = p.grad
                self._t[i] += 1
                t = self._t[i]
                self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
                self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * g * g
                m_hat = self._m[i] / (1.0 - self.beta1 ** t)
                v_hat = self._v[i] / (1.0 - self.beta2 ** t)
                p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.zero_grad()

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def sgd_step(params: Iterable[Parameter], lr: float) -> None:
    SGD(params, lr).step()


def make_optimizer(kind: str, params: Iterable[Parameter], lr: float):
    kind = kind.lower()
    if kind == "sgd":
        return SGD(params, lr)
    if kind == "adam":
        return Adam(params, lr)
    raise ConfigError(f"unknown optimizer {kind!r} (expected 'sgd' or 'adam')")
