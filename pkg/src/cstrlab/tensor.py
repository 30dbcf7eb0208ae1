"""Dense tensors, the reverse-mode gradient tape, and named parameter storage.

The engine is deliberately small: a Tensor wraps a contiguous row-major
numpy buffer (float32 or float64), and a Tape records every primitive
operation executed while it is active. Backward replays the records once,
in reverse execution order, accumulating gradients into a table keyed by
tensor id. Anything not reached from the loss simply never appears in the
table, which is the "unreached gradients are zero" convention.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import DtypeError, GraphError, ShapeError

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_ids = itertools.count(1)
_tape_stack: list["Tape"] = []


class Tensor:
    """N-dimensional float array with a unique id for gradient bookkeeping.

    Tensors are value-like: code never mutates ``data`` while a tape is
    recording. Parameter updates between steps replace ``data`` wholesale,
    so graphs captured earlier keep referencing the buffers they saw.
    """

    __slots__ = ("data", "requires_grad", "grad", "id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.data.shape)}, dtype={self.data.dtype}{flag})"

    # Arithmetic sugar; the real work lives in cstrlab.ops.
    def __add__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            return ops.add(self, other)
        return ops.add_scalar(self, float(other))

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)

    def __sub__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            return ops.sub(self, other)
        return ops.add_scalar(self, -float(other))


def check_same_dtype(*tensors: Optional[Tensor]) -> np.dtype:
    """All tensors entering one op must share a precision tag."""
    present = [t for t in tensors if t is not None]
    dt = present[0].data.dtype
    for t in present[1:]:
        if t.data.dtype != dt:
            raise DtypeError(
                f"mixed precision operands: {dt} vs {t.data.dtype}"
            )
    return dt


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered record of executed primitive ops for reverse-mode gradients.

    Records are appended in execution order, so the list is already a
    topological order of the graph; backward walks it once in reverse.
    """

    __slots__ = ("_records", "_produced")

    def __init__(self):
        # (op name, input tensors, output id, backward fn)
        self._records: list[tuple[str, tuple[Tensor, ...], int, BackwardFn]] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack.pop()
        if popped is not self:
            raise GraphError("tape stack corrupted: unbalanced enter/exit")
        return False

    def __len__(self) -> int:
        return len(self._records)

    def record(
        self,
        op: str,
        inputs: tuple[Tensor, ...],
        output: Tensor,
        backward: BackwardFn,
    ) -> None:
        output.requires_grad = True
        self._records.append((op, inputs, output.id, backward))
        self._produced.add(output.id)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Accumulate d(loss)/d(tensor) for every tensor reached from ``loss``.

        Returns the gradient table keyed by tensor id. Leaf tensors that
        require gradients additionally get their ``.grad`` attribute set
        (``None`` when unreached, meaning an exactly-zero gradient).
        """
        if loss.data.shape != ():
            raise GraphError(
                f"backward root must be scalar, got shape {loss.data.shape}"
            )
        table: dict[int, np.ndarray] = {
            loss.id: np.ones((), dtype=loss.data.dtype)
        }
        for _op, inputs, out_id, backward in reversed(self._records):
            g = table.get(out_id)
            if g is None:
                continue
            in_grads = backward(g)
            for t, gi in zip(inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                prev = table.get(t.id)
                # Never mutate stored arrays in place: backward fns may
                # return views into upstream gradients.
                table[t.id] = gi if prev is None else prev + gi
        for _op, inputs, _out_id, _backward in self._records:
            for t in inputs:
                if t.requires_grad and t.id not in self._produced:
                    t.grad = table.get(t.id)
        return table


def active_tape() -> Optional[Tape]:
    return _tape_stack[-1] if _tape_stack else None


def recording(*inputs: Optional[Tensor]) -> Optional[Tape]:
    """Return the active tape if any input wants gradients, else None."""
    tape = active_tape()
    if tape is None:
        return None
    for t in inputs:
        if t is not None and t.requires_grad:
            return tape
    return None


class ParameterStore:
    """Map from hierarchical names to tensors, with a trainable flag.

    Names are unique and iteration is always lexicographic, which keeps
    checkpoints, gradient dictionaries, and optimizer state deterministic.
    """

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, data, trainable: bool = True) -> Tensor:
        if name in self._tensors:
            raise ShapeError(f"duplicate parameter name: {name!r}")
        t = data if isinstance(data, Tensor) else Tensor(data)
        t.requires_grad = trainable
        self._tensors[name] = t
        self._trainable[name] = trainable
        return t

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in sorted(self._tensors):
            yield name, self._tensors[name]

    def trainable_items(self) -> Iterator[tuple[str, Tensor]]:
        for name in sorted(self._tensors):
            if self._trainable[name]:
                yield name, self._tensors[name]

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def num_parameters(self) -> int:
        """Exact count of trainable scalars."""
        return sum(t.data.size for _n, t in self.trainable_items())

    def to_dtype(self, dtype) -> "ParameterStore":
        """Convert every stored buffer in place (layers keep their refs)."""
        for t in self._tensors.values():
            t.data = t.data.astype(dtype)
        return self

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        missing = sorted(set(self._tensors) - set(arrays))
        extra = sorted(set(arrays) - set(self._tensors))
        if missing or extra:
            raise ShapeError(
                f"parameter name mismatch: missing={missing[:4]} extra={extra[:4]}"
            )
        for name, arr in arrays.items():
            t = self._tensors[name]
            if tuple(arr.shape) != tuple(t.data.shape):
                raise ShapeError(
                    f"shape mismatch for {name!r}: stored {arr.shape}, "
                    f"expected {t.data.shape}"
                )
            t.data = np.ascontiguousarray(arr, dtype=t.data.dtype)

    def gradients(self, table: dict[int, np.ndarray]) -> dict[str, Optional[np.ndarray]]:
        """Gradient per trainable parameter; None means exactly zero."""
        return {name: table.get(t.id) for name, t in self.trainable_items()}
