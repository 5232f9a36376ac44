"""Dense tensors with a reverse-mode graph and live-element accounting."""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class _LiveCounter:
    """Counts scalar elements held by graph tensors and in-flight gradients."""

    __slots__ = ("live", "peak", "enabled")

    def __init__(self) -> None:
        self.live = 0
        self.peak = 0
        self.enabled = True

    def alloc(self, n: int) -> None:
        if self.enabled:
            self.live += n
            if self.live > self.peak:
                self.peak = self.live

    def free(self, n: int) -> None:
        if self.enabled:
            self.live -= n


_COUNTER = _LiveCounter()
_GRAD_ENABLED = True


def live_elements() -> int:
    return _COUNTER.live


def peak_live_elements() -> int:
    """Maximum simultaneously-live element count since the last reset."""
    return _COUNTER.peak


def reset_peak() -> None:
    """Restart peak tracking from the current live count."""
    _COUNTER.peak = _COUNTER.live


def set_instrumentation(enabled: bool) -> None:
    _COUNTER.enabled = enabled


@contextlib.contextmanager
def track_peak():
    """Yield a dict whose ``"peak"`` entry is filled with the peak element
    count reached inside the block, measured above the count at entry."""
    base = _COUNTER.live
    outer_peak = _COUNTER.peak
    _COUNTER.peak = base
    out = {"peak": 0, "base": base}
    try:
        yield out
    finally:
        out["peak"] = _COUNTER.peak - base
        _COUNTER.peak = max(outer_peak, _COUNTER.peak)


@contextlib.contextmanager
def no_grad():
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
    """A dense array that can take part in a reverse-mode graph.

    Leaves created with ``requires_grad=True`` receive ``.grad`` after
    :func:`backward`. Non-leaf gradients are transient and not retained.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_saved")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(DEFAULT_DTYPE)
        else:
            arr = np.asarray(data, dtype=dtype)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple | None = None
        self._backward: Callable | None = None
        self._saved = 0
        _COUNTER.alloc(arr.size)

    def __del__(self):
        try:
            n = self.data.size + self._saved
            if self.grad is not None:
                n += self.grad.size
            _COUNTER.free(n)
        except Exception:  # interpreter teardown
            pass

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._parents is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            _COUNTER.free(self.grad.size)
            self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
            _COUNTER.alloc(self.grad.size)
        else:
            self.grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from . import ops
        return ops.getitem(self, idx)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def needs_grad(*ts: Tensor) -> bool:
    if not _GRAD_ENABLED:
        return False
    return any(t.requires_grad for t in ts)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, saved: int = 0) -> Tensor:
    """Wrap an op output, attaching the graph edge only when a parent needs it.

    ``backward`` maps the output gradient to one gradient (or None) per parent
    and must not hold a reference to the output tensor.
    """
    out = Tensor(data)
    if needs_grad(*parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        if saved:
            out._saved = saved
            _COUNTER.alloc(saved)
    return out


def _toposort(roots: Iterable[Tensor]) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    for root in roots:
        if id(root) in seen:
            continue
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
            if node._parents:
                for p in reversed(node._parents):
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))
    return order


def backward(roots, grads=None) -> None:
    """Propagate gradients from ``roots`` to every reachable leaf.

    With a single scalar root and no seed the seed is 1. Leaf gradients
    accumulate across calls until ``zero_grad``.
    """
    if isinstance(roots, Tensor):
        roots = [roots]
        if grads is not None and not isinstance(grads, (list, tuple)):
            grads = [grads]
    roots = list(roots)
    if grads is None:
        if len(roots) != 1 or roots[0].size != 1:
            shapes = [r.shape for r in roots]
            raise ValueError(f"backward needs a scalar loss or explicit seed gradients, got shapes {shapes}")
        grads = [np.ones_like(roots[0].data)]
    if len(grads) != len(roots):
        raise ValueError("one seed gradient per root required")

    order = _toposort(roots)
    pending: dict[int, np.ndarray] = {}

    def push(node: Tensor, g: np.ndarray) -> None:
        key = id(node)
        prev = pending.get(key)
        if prev is None:
            pending[key] = g
            _COUNTER.alloc(g.size)
        else:
            pending[key] = prev + g

    for r, g in zip(roots, grads):
        if not r.requires_grad:
            continue
        g = np.asarray(g, dtype=r.data.dtype)
        if g.shape != r.shape:
            raise ValueError(f"seed gradient shape {g.shape} does not match root {r.shape}")
        push(r, g)

    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        _COUNTER.free(g.size)
        if node._parents is None:
            node._accumulate(g)
            continue
        pgrads = node._backward(g)
        for p, pg in zip(node._parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            push(p, pg)

    for node in order:
        if node._parents is None and node.requires_grad and node.grad is None:
            node._accumulate(np.zeros_like(node.data))
