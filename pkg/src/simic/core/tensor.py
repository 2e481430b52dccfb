#!/usr/bin/env python
from __future__ import annotations

# std-lib imports
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Iterator, List, Optional, Sequence, Tuple, Union

# 3 party imports
import numpy as np


DTYPE = np.float64

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when tensor dimensions do not line up for an operation."""


@contextmanager
def no_grad() -> Iterator[None]:
    """Disables tape recording inside the block (inference only)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Function:
    """
    A recorded operation on the autodiff tape.

    Subclasses implement `forward` on raw numpy arrays and `backward`, which
    receives the gradient w.r.t. the output and returns one gradient (or `None`)
    per input tensor, in input order.
    """

    def __init__(self, *parents: Tensor):
        self.parents = parents

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__} has no backward pass")

    @classmethod
    def apply(cls, *tensors: Tensor, **kwargs: Any) -> Tensor:
        func = cls(*tensors)
        out_data = func.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = _grad_enabled and any(t.requires_grad for t in tensors)
        return Tensor(out_data, requires_grad=requires_grad, node=func if requires_grad else None)

    @staticmethod
    def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        """Sums `grad` over the axes numpy broadcasting expanded to reach `shape`."""
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for axis, size in enumerate(shape):
            if size == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


class Tensor:
    """
    Dense float64 array with optional gradient state.

    `node` points at the `Function` that produced the tensor when it was recorded
    on the tape; leaves (parameters, inputs) have `node=None`.
    """

    __array_priority__ = 100

    def __init__(
        self,
        data: Union[np.ndarray, Sequence, float, int],
        requires_grad: bool = False,
        node: Optional[Function] = None,
    ):
        self.data = np.array(data, dtype=DTYPE) if not isinstance(data, np.ndarray) or data.dtype != DTYPE else data
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node = node

    # --- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(*shape: int, requires_grad: bool = False) -> Tensor:
        return Tensor(np.zeros(shape, dtype=DTYPE), requires_grad=requires_grad)

    @staticmethod
    def ones(*shape: int, requires_grad: bool = False) -> Tensor:
        return Tensor(np.ones(shape, dtype=DTYPE), requires_grad=requires_grad)

    # --- properties -----------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
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

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # --- operators --------------------------------------------------------------

    def __add__(self, other: Union[Tensor, float]) -> Tensor:
        from simic.core import functional as F
        return F.add(self, _as_tensor(other))

    def __radd__(self, other: Union[Tensor, float]) -> Tensor:
        return self.__add__(other)

    def __sub__(self, other: Union[Tensor, float]) -> Tensor:
        from simic.core import functional as F
        return F.sub(self, _as_tensor(other))

    def __rsub__(self, other: Union[Tensor, float]) -> Tensor:
        from simic.core import functional as F
        return F.sub(_as_tensor(other), self)

    def __mul__(self, other: Union[Tensor, float]) -> Tensor:
        from simic.core import functional as F
        return F.mul(self, _as_tensor(other))

    def __rmul__(self, other: Union[Tensor, float]) -> Tensor:
        return self.__mul__(other)

    def __neg__(self) -> Tensor:
        return self.__mul__(-1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        from simic.core import functional as F
        return F.matmul(self, other)

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
        from simic.core import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
        from simic.core import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> Tensor:
        from simic.core import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes: int) -> Tensor:
        from simic.core import functional as F
        return F.transpose(self, axes if axes else None)

    # --- autodiff -------------------------------------------------------------

    def backward(self) -> None:
        """
        Runs the reverse sweep from this scalar tensor.

        Gradients accumulate into `.grad` of every tensor on the tape that
        requires grad; call `zero_grad` on leaves before the next step.

        Raises:
            ShapeError: If the tensor holds more than one element.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        Tape.build(self).backward(self)


def _as_tensor(value: Union[Tensor, np.ndarray, float, int]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class TapeEntry:
    output: Tensor
    function: Function

    @property
    def output_id(self) -> int:
        return id(self.output)

    @property
    def input_ids(self) -> List[int]:
        return [id(parent) for parent in self.function.parents]


@dataclass
class Tape:
    """Recorded operations reachable from one root, in topological order."""

    entries: List[TapeEntry] = field(default_factory=list)

    @classmethod
    def build(cls, root: Tensor) -> Tape:
        # iterative post-order DFS; every entry's inputs precede it
        entries: List[TapeEntry] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            tensor, expanded = stack.pop()
            if tensor.node is None:
                continue
            if expanded:
                entries.append(TapeEntry(tensor, tensor.node))
                continue
            if id(tensor) in visited:
                continue
            visited.add(id(tensor))
            stack.append((tensor, True))
            for parent in reversed(tensor.node.parents):
                if parent.node is not None and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(entries)

    def __len__(self) -> int:
        return len(self.entries)

    def backward(self, root: Tensor) -> None:
        if not root.requires_grad:
            return
        pending = {id(root): np.ones_like(root.data)}
        for entry in reversed(self.entries):
            grad = pending.pop(entry.output_id, None)
            if grad is None:
                continue
            _accumulate(entry.output, grad)
            parent_grads = entry.function.backward(grad)
            for parent, parent_grad in zip(entry.function.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if parent.node is None:
                    _accumulate(parent, parent_grad)
                elif id(parent) in pending:
                    pending[id(parent)] = pending[id(parent)] + parent_grad
                else:
                    pending[id(parent)] = parent_grad
        # a root without a recorded node is itself a leaf
        if root.node is None:
            _accumulate(root, np.ones_like(root.data))


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if grad.shape != tensor.shape:
        raise ShapeError(f"gradient shape {grad.shape} does not match tensor shape {tensor.shape}")
    tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
