"""Dense float64 tensors with a small reverse-mode tape, Adam, and a gradient checker.

Only the operations the models in this package need are provided. Each op
computes its forward value with numpy and registers a closure that maps the
output gradient onto its inputs. Broadcasting follows numpy rules; gradients
are summed back to the input shape.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64
COS_EPS = 1e-8

# dtype new tensors are cast to; switched only by compute_dtype()
_active_dtype = [DTYPE]


@contextlib.contextmanager
def compute_dtype(dtype):
    """Temporarily build every new tensor in ``dtype`` (e.g. np.longdouble)."""
    _active_dtype.append(dtype)
    try:
        yield
    finally:
        _active_dtype.pop()


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class TrainingError(RuntimeError):
    """Raised when an optimizer step sees a non-finite gradient."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, parents: tuple = (), backward=None, name: str | None = None):
        self.data = np.asarray(data, dtype=_active_dtype[-1])
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward
        self.requires_grad = any(p.requires_grad for p in parents)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)


class Parameter(Tensor):
    """A named leaf tensor whose gradient accumulates across backward passes."""

    __slots__ = ()

    def __init__(self, value, name: str):
        super().__init__(value, name=name)
        self.requires_grad = True
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.data.shape)
    t.grad = g if t.grad is None else t.grad + g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# primitive ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    out = Tensor(a.data + b.data, (a, b))

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    out._backward = backward
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    out = Tensor(a.data - b.data, (a, b))

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    out = Tensor(a.data * b.data, (a, b))

    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    out._backward = backward
    return out


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    out = Tensor(data, (a, b))

    def backward(g):
        if a.requires_grad:
            _accumulate(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            _accumulate(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    out._backward = backward
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    out = Tensor(y, (x,))

    def backward(g):
        _accumulate(x, g * y * (1.0 - y))

    out._backward = backward
    return out


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    out = Tensor(y, (x,))

    def backward(g):
        _accumulate(x, g * (1.0 - y * y))

    out._backward = backward
    return out


def softplus(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.logaddexp(0.0, x.data), (x,))

    def backward(g):
        z = np.exp(-np.abs(x.data))
        s = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
        _accumulate(x, g * s)

    out._backward = backward
    return out


def absolute(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.abs(x.data), (x,))

    def backward(g):
        _accumulate(x, g * np.sign(x.data))

    out._backward = backward
    return out


def softmax_array(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    y = softmax_array(x.data, axis)
    out = Tensor(y, (x,))

    def backward(g):
        _accumulate(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    out._backward = backward
    return out


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = " and ".join(str(t.shape) for t in tensors)
        raise DimensionError(f"concat: incompatible shapes {shapes}") from None
    out = Tensor(data, tuple(tensors))
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            _accumulate(t, piece)

    out._backward = backward
    return out


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = " and ".join(str(t.shape) for t in tensors)
        raise DimensionError(f"stack: incompatible shapes {shapes}") from None
    out = Tensor(data, tuple(tensors))

    def backward(g):
        for i, t in enumerate(tensors):
            _accumulate(t, np.take(g, i, axis=axis))

    out._backward = backward
    return out


def getitem(x, index) -> Tensor:
    """Slice or gather; repeated fancy indices accumulate in backward."""
    x = as_tensor(x)
    out = Tensor(x.data[index], (x,))

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        _accumulate(x, full)

    out._backward = backward
    return out


def slice_(x, start: int, stop: int, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = Tensor(x.data[index], (x,))

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        _accumulate(x, full)

    out._backward = backward
    return out


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    out = Tensor(data, (x,))

    def backward(g):
        _accumulate(x, g.reshape(x.data.shape))

    out._backward = backward
    return out


def swapaxes(x, a: int, b: int) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.swapaxes(x.data, a, b), (x,))

    def backward(g):
        _accumulate(x, np.swapaxes(g, a, b))

    out._backward = backward
    return out


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims), (x,))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.data.shape))

    out._backward = backward
    return out


def cosine_similarity(a, b, eps: float = COS_EPS) -> Tensor:
    """Cosine similarity along the last axis with norms floored at ``eps``.

    Leading axes broadcast, so a key of shape (B, 1, W) against a memory of
    shape (B, N, W) yields (B, N).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"cosine_similarity: incompatible shapes {a.shape} and {b.shape}")
    _broadcast_shape(a, b, "cosine_similarity")
    norm_a = np.sqrt((a.data * a.data).sum(-1, keepdims=True))
    norm_b = np.sqrt((b.data * b.data).sum(-1, keepdims=True))
    den_a = np.maximum(norm_a, eps)
    den_b = np.maximum(norm_b, eps)
    dot = (a.data * b.data).sum(-1, keepdims=True)
    sim = dot / (den_a * den_b)
    out = Tensor(sim[..., 0], (a, b))

    def backward(g):
        g = g[..., None]
        if a.requires_grad:
            live = (norm_a > eps).astype(DTYPE)
            ga = b.data / (den_a * den_b) - sim * a.data * live / (den_a * den_a)
            _accumulate(a, g * ga)
        if b.requires_grad:
            live = (norm_b > eps).astype(DTYPE)
            gb = a.data / (den_a * den_b) - sim * b.data * live / (den_b * den_b)
            _accumulate(b, g * gb)

    out._backward = backward
    return out


def cross_entropy(logits, targets: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Weighted sum of negative log-likelihoods of integer ``targets``.

    ``logits`` has shape (..., V); ``targets`` and ``weights`` have shape (...).
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    w = np.ones(targets.shape, dtype=DTYPE) if weights is None else np.asarray(weights, dtype=DTYPE)
    shifted = logits.data - logits.data.max(-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(-1))
    picked = np.take_along_axis(shifted, targets[..., None], -1)[..., 0]
    out = Tensor((w * (lse - picked)).sum(), (logits,))

    def backward(g):
        probs = np.exp(shifted - lse[..., None])
        np.put_along_axis(probs, targets[..., None], np.take_along_axis(probs, targets[..., None], -1) - 1.0, -1)
        _accumulate(logits, g * probs * w[..., None])

    out._backward = backward
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor that ``loss`` depends on."""
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_ = [(loss, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack_.append((p, False))
    loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            # free interior gradients and closures as we go
            node.grad = None
            node._backward = None
            node._parents = ()


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


@dataclass
class Adam:
    """Adam with bias correction.  Gradients are zeroed after every step."""

    params: list[Parameter]
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict[str, AdamState] = field(default_factory=dict)

    def __post_init__(self):
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        for p in self.params:
            self.states.setdefault(p.name, AdamState(np.zeros_like(p.data), np.zeros_like(p.data)))

    def step(self) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise TrainingError(f"non-finite gradient in parameter {p.name!r}")
        for p in self.params:
            st = self.states[p.name]
            st.t += 1
            g = p.grad
            st.m = self.beta1 * st.m + (1.0 - self.beta1) * g
            st.v = self.beta2 * st.v + (1.0 - self.beta2) * (g * g)
            m_hat = st.m / (1.0 - self.beta1**st.t)
            v_hat = st.v / (1.0 - self.beta2**st.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def adam_step(params: Sequence[Parameter], states: dict[str, AdamState], lr: float = 0.001,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Functional form of :meth:`Adam.step`; ``states`` is filled on first use."""
    opt = Adam(list(params), lr=lr, beta1=beta1, beta2=beta2, eps=eps, states=states)
    opt.step()


def clip_grad_norm(params: Iterable[Parameter], max_norm: float = 10.0) -> float:
    params = list(params)
    total = float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params)))
    if np.isfinite(total) and total > max_norm:
        scale = max_norm / total
        for p in params:
            p.grad = p.grad * scale
    return total


def uniform_init(rng: np.random.Generator, shape, scale: float = 0.08) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


# ---------------------------------------------------------------------------
# verification


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    delta: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    extended: bool = True,
) -> float:
    """Max relative error between backprop and central differences.

    ``loss_fn`` rebuilds the graph from the current parameter values on every
    call. With ``max_entries`` set, each parameter is checked on a random
    subsample of that many entries. The analytic gradient is always float64.
    With ``extended`` the finite differences are evaluated in np.longdouble,
    whose round-off is about 2000x below float64; this keeps entries with
    gradients near 1e-8 resolvable at ``delta=1e-5``.
    """
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}
    rng = rng or np.random.default_rng(0)
    dtype = np.longdouble if extended else DTYPE
    originals = {p.name: p.data for p in params}
    worst = 0.0
    try:
        with compute_dtype(dtype):
            for p in params:
                p.data = originals[p.name].astype(dtype)
            for p in params:
                flat = p.data.reshape(-1)
                idx = np.arange(flat.size)
                if max_entries is not None and flat.size > max_entries:
                    idx = rng.choice(flat.size, size=max_entries, replace=False)
                grad_flat = analytic[p.name].reshape(-1)
                for i in idx:
                    orig = flat[i]
                    flat[i] = orig + dtype(delta)
                    up = loss_fn().data
                    hi = flat[i]
                    flat[i] = orig - dtype(delta)
                    down = loss_fn().data
                    lo = flat[i]
                    flat[i] = orig
                    numeric = float((up - down) / (hi - lo))
                    worst = max(worst, relative_error(float(grad_flat[i]), numeric))
    finally:
        for p in params:
            p.data = originals[p.name]
            p.zero_grad()
    return worst
