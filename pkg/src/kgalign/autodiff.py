"""Minimal dense tensors with reverse-mode gradients, Adam, and checkpoints.

Values are numpy arrays, float32 by default (float64 is accepted for
high-precision checks). Operations record a tape whenever an input requires
gradients and recording is enabled; ``backward`` replays the tape and
accumulates into ``grad`` buffers additively. Reductions accumulate in
float64 regardless of the storage dtype.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, FormatError, ShapeError

DEFAULT_DTYPE = np.float32

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, (np.ndarray, np.generic)) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out dimensions that were broadcast during the forward pass."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _result_dtype(*tensors: Tensor):
    return np.float64 if any(t.dtype == np.float64 for t in tensors) else np.float32


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Wrap operands; a bare python scalar adopts its partner's dtype."""
    if isinstance(a, Tensor) and not isinstance(b, (Tensor, np.ndarray)):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and not isinstance(a, (Tensor, np.ndarray)):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


# ---------------------------------------------------------------------------
# elementwise and scalar ops


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from exc

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}") from exc

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}") from exc
    a_data, b_data = a.data, b.data

    def back(g):
        return _unbroadcast(g * b_data, a.shape), _unbroadcast(g * a_data, b.shape)

    return _node(data, (a, b), back)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def back(g):
        return (g * data,)

    return _node(data, (a,), back)


def log(a) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)
    a_data = a.data

    def back(g):
        return (g / a_data,)

    return _node(data, (a,), back)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    data = np.sqrt(a.data)

    def back(g):
        return (g * (0.5 / np.where(data == 0.0, np.inf, data)),)

    return _node(data, (a,), back)


def reciprocal(a) -> Tensor:
    a = as_tensor(a)
    data = 1.0 / a.data
    a_data = a.data

    def back(g):
        return (-g / (a_data * a_data),)

    return _node(data.astype(a.dtype, copy=False), (a,), back)


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    positive = a.data > 0
    data = np.where(positive, a.data, a.data * slope)

    def back(g):
        return (g * np.where(positive, 1.0, slope),)

    return _node(data.astype(a.dtype), (a,), back)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    data = a.data @ b.data
    a_data, b_data = a.data, b.data

    def back(g):
        return g @ b_data.T, a_data.T @ g

    return _node(data, (a, b), back)


def dot(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot: {a.shape} . {b.shape}")
    dtype = _result_dtype(a, b)
    data = np.array(np.sum(a.data.astype(np.float64) * b.data.astype(np.float64)), dtype=dtype)
    a_data, b_data = a.data, b.data

    def back(g):
        return g * b_data, g * a_data

    return _node(data, (a, b), back)


def l2_distance(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"l2_distance: {a.shape} vs {b.shape}")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    dist = float(np.sqrt(np.sum(diff * diff)))
    data = np.array(dist, dtype=_result_dtype(a, b))
    # subgradient 0 at coincident points
    scale = diff / dist if dist > 0.0 else np.zeros_like(diff)

    def back(g):
        return g * scale.astype(a.dtype), -g * scale.astype(b.dtype)

    return _node(data, (a, b), back)


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = np.sum(a.data, axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)
    shape = a.shape

    def back(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(g.dtype, copy=False),)

    return _node(data, (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(a) -> Tensor:
    """Stable softmax over a 1-d tensor."""
    a = as_tensor(a)
    if a.data.ndim != 1:
        raise ShapeError(f"softmax expects a vector, got {a.shape}")
    shifted = a.data.astype(np.float64) - a.data.max()
    e = np.exp(shifted)
    p64 = e / np.sum(e)
    data = p64.astype(a.dtype)

    def back(g):
        g64 = g.astype(np.float64)
        inner = np.sum(g64 * p64)
        return ((p64 * (g64 - inner)).astype(a.dtype),)

    return _node(data, (a,), back)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    data = a.data.reshape(shape)

    def back(g):
        return (g.reshape(old),)

    return _node(data, (a,), back)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in tensors]}") from exc
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(data, tuple(tensors), back)


def take_rows(a, indices) -> Tensor:
    """Gather rows of a matrix; backward scatter-adds into the source."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"take_rows expects a matrix, got {a.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    data = a.data[idx]
    shape = a.shape

    def back(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, idx, g)
        return (out,)

    return _node(data, (a,), back)


def stack_rows(vectors) -> Tensor:
    """Stack 1-d tensors into a matrix, one per row."""
    vectors = [as_tensor(v) for v in vectors]
    if any(v.data.ndim != 1 for v in vectors):
        raise ShapeError("stack_rows expects vectors")
    data = np.stack([v.data for v in vectors], axis=0)

    def back(g):
        return tuple(g[i] for i in range(len(vectors)))

    return _node(data, tuple(vectors), back)


# ---------------------------------------------------------------------------
# backward driver


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable grad buffer."""
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
            if id(p) not in seen and (p.requires_grad or p._parents):
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and not node._parents:
            # leaf: accumulate into the public buffer
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g.astype(node.data.dtype, copy=False)
            continue
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if not parent._parents:
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += pg.astype(parent.data.dtype, copy=False)
            else:
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg


# ---------------------------------------------------------------------------
# parameter initialization and Adam


def init_uniform(rng: np.random.Generator, shape, dtype=DEFAULT_DTYPE) -> Tensor:
    """Uniform in [-1/sqrt(fan), +1/sqrt(fan)]; fan is the input extent."""
    shape = tuple(shape)
    fan = shape[0] if len(shape) == 2 else shape[-1]
    bound = 1.0 / np.sqrt(max(fan, 1))
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


class Adam:
    """Standard Adam with bias correction; grads are zeroed after each step."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self._v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for key, tensor in self.params.items():
            g = tensor.grad
            if g is None:
                g = np.zeros_like(tensor.data)
            m = self._m[key]
            v = self._v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / b1c
            v_hat = v / b2c
            tensor.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(tensor.dtype)
            tensor.grad = None


# ---------------------------------------------------------------------------
# checkpoint serialization

CHECKPOINT_MAGIC = b"ICLC"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, named_arrays: dict[str, np.ndarray]) -> None:
    """Write named float32 tensors; payload is little-endian row-major."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<B", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(named_arrays)))
        for name, arr in named_arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<I", extent))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic in {path}")
    offset = 4
    (version,) = struct.unpack_from("<B", blob, offset)
    offset += 1
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        end = offset + 4 * n
        if end > len(blob):
            raise FormatError(f"checkpoint payload truncated for tensor {name!r}")
        arr = np.frombuffer(blob[offset:end], dtype="<f4").reshape(shape)
        offset = end
        out[name] = arr.copy()
    if offset != len(blob):
        raise FormatError("trailing bytes after last checkpoint tensor")
    return out
