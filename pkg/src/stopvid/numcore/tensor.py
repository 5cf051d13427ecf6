"""Tensor value type and the gradient tape."""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


# flip on in tests to assert finiteness after every recorded forward op
CHECK_FINITE = False

_ids = itertools.count(1)


class Tensor:
    """Dense float64 array with optional participation in the gradient tape.

    ``grad_enabled`` marks a trainable leaf. Derived tensors carry ``tracked``
    when any of their inputs was tracked while a tape was recording.
    """

    __slots__ = ("data", "grad_enabled", "tracked", "node_id")

    def __init__(self, data, grad_enabled: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad_enabled = bool(grad_enabled)
        self.tracked = self.grad_enabled
        self.node_id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        flag = ", grad_enabled=True" if self.grad_enabled else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # arithmetic sugar; the functional ops live in numcore.ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.add(ops.scale(self, -1.0), other)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.scale(self, 1.0 / float(other))

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis)

    def mean(self, axis=None):
        from . import ops
        return ops.mean(self, axis)


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class _Node:
    __slots__ = ("out_id", "inputs", "backward")

    def __init__(self, out_id: int, inputs: tuple[Tensor, ...], backward: BackwardFn):
        self.out_id = out_id
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended as ops execute, so the record is already in
    topological order and the backward pass is a single reverse sweep.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn) -> None:
        self.nodes.append(_Node(out.node_id, inputs, backward))

    def clear(self) -> None:
        self.nodes = []

    def backward(self, loss: Tensor) -> dict[int, Tensor]:
        """Accumulate d(loss)/d(leaf) for every grad-enabled leaf on the tape.

        Returns ``{node_id: gradient}``. Leaves that appear on the tape but
        receive no gradient flow map to zeros. The tape is cleared afterwards.
        """
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.tracked:
            raise ContractError("loss is not on the tape (no grad-enabled input reached it)")

        grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        leaf_grads: dict[int, np.ndarray] = {}
        for node in reversed(self.nodes):
            for t in node.inputs:
                if t.grad_enabled and t.node_id not in leaves:
                    leaves[t.node_id] = t
            g = grads.pop(node.out_id, None)
            if g is None:
                continue
            in_grads = node.backward(g)
            if _FAULTS:
                fault = _FAULTS.get(_op_name(node.backward))
                if fault is not None:
                    in_grads = fault(tuple(in_grads))
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.tracked:
                    continue
                store = leaf_grads if t.grad_enabled else grads
                prev = store.get(t.node_id)
                store[t.node_id] = gi if prev is None else prev + gi
        if loss.grad_enabled:
            leaves[loss.node_id] = loss
            leaf_grads[loss.node_id] = np.ones_like(loss.data)
        self.clear()
        out = {}
        for nid, leaf in leaves.items():
            g = leaf_grads.get(nid)
            out[nid] = Tensor(np.zeros_like(leaf.data) if g is None else g.reshape(leaf.shape))
        return out


_FAULTS: dict[str, Callable[[tuple], tuple]] = {}


def _op_name(fn) -> str:
    return getattr(fn, "__qualname__", "").split(".", 1)[0]


@contextmanager
def backward_fault(op: str, fault: Callable[[tuple], tuple]):
    """Test hook: pass the local input-gradients of every ``op`` node through ``fault``.

    ``op`` is the name of the function in :mod:`ops` that recorded the node
    (``"linear"``, ``"gelu"``, ...). Used to check that gradient checking
    catches a broken backward rule.
    """
    prev = _FAULTS.get(op)
    _FAULTS[op] = fault
    try:
        yield
    finally:
        if prev is None:
            _FAULTS.pop(op, None)
        else:
            _FAULTS[op] = prev


class _TapeState(threading.local):
    def __init__(self):
        self.tape = Tape()
        self.recording = True


_state = _TapeState()


def current_tape() -> Tape:
    return _state.tape


def is_recording() -> bool:
    return _state.recording


@contextmanager
def no_grad():
    prev = _state.recording
    _state.recording = False
    try:
        yield
    finally:
        _state.recording = prev


@contextmanager
def fresh_tape():
    """Run a block on a private tape (restores the previous one on exit)."""
    prev = _state.tape
    _state.tape = Tape()
    try:
        yield _state.tape
    finally:
        _state.tape = prev


def backward(loss: Tensor) -> dict[int, Tensor]:
    return current_tape().backward(loss)


def make_result(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    out = Tensor(data)
    if CHECK_FINITE and not np.all(np.isfinite(out.data)):
        if all(np.all(np.isfinite(t.data)) for t in inputs):
            raise FloatingPointError("non-finite output from finite inputs")
    if _state.recording and any(t.tracked for t in inputs):
        out.tracked = True
        _state.tape.record(out, inputs, backward_fn)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
