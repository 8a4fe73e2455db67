"""Tensors and the append-only tape that records operations for reverse mode."""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import NonScalarLoss, ShapeMismatch

DTYPE = np.float64
MAX_RANK = 3


class Tensor:
    """Dense float64 array (rank <= 3) with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim > MAX_RANK:
            raise ShapeMismatch(f"rank {arr.ndim} exceeds the supported maximum {MAX_RANK}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = None  # TapeNode that produced this tensor, if recorded
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; the op implementations live in ops.py
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

    def __getitem__(self, key):
        from . import ops

        return ops.slice_(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class TapeNode:
    __slots__ = ("id", "op", "inputs", "saved", "output", "backward")

    def __init__(self, op: str, inputs: tuple, output: Tensor, backward: Callable, saved=None):
        self.id = -1
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward
        self.saved = saved

    def describe(self) -> dict:
        return {
            "id": self.id,
            "op": self.op,
            "inputs": [list(t.shape) for t in self.inputs],
            "output": list(self.output.shape),
        }


class Tape:
    """Append-only list of nodes; topological by construction."""

    def __init__(self):
        self.nodes: list = []

    def record(self, node: TapeNode) -> None:
        node.id = len(self.nodes)
        self.nodes.append(node)

    def clear(self) -> None:
        for n in self.nodes:
            n.output.node = None
        self.nodes = []

    def trace(self) -> list:
        return [n.describe() for n in self.nodes]


_local = threading.local()


def current_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


def make_op(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward: Callable, saved=None) -> Tensor:
    """Wrap ``out_data`` in a Tensor and record a tape node when any input needs gradients.

    ``backward(grad_out)`` must return one gradient array (or None) per input.
    """
    inputs = tuple(inputs)
    needs = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        node = TapeNode(op, inputs, out, backward, saved)
        current_tape().record(node)
        out.node = node
    return out


def backward(loss: Tensor, wrt: Optional[Iterable[Tensor]] = None, keep_tape: bool = False):
    """Reverse sweep from a scalar ``loss``.

    Gradients of leaf tensors (``requires_grad`` and not produced by an op)
    are summed into ``.grad``. With ``wrt`` the gradients of those tensors are
    returned as arrays (zeros where the tensor does not influence the loss).
    The tape is cleared afterwards unless ``keep_tape``.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    tape = current_tape()
    grads: dict = {}
    if loss.node is not None:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(tape.nodes[: loss.node.id + 1]):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if gi.shape != t.shape:
                    raise ShapeMismatch(f"{node.op}: gradient shape {gi.shape} != input shape {t.shape}")
                if t.node is None:
                    t.grad = gi.copy() if t.grad is None else t.grad + gi
                    # leaves stay in grads so ``wrt`` can report them
                    grads[("leaf", id(t))] = t.grad
                elif id(t) in grads:
                    grads[id(t)] = grads[id(t)] + gi
                else:
                    grads[id(t)] = gi
    elif loss.requires_grad:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
    result = None
    if wrt is not None:
        result = []
        for t in wrt:
            if t is loss:
                result.append(np.ones_like(t.data))
            else:
                g = grads.get(("leaf", id(t)))
                result.append(np.zeros_like(t.data) if g is None else g.copy())
    if not keep_tape:
        tape.clear()
    return result
