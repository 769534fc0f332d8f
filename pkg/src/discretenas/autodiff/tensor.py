"""Tape-recorded tensors and reverse-mode differentiation.

Every primitive applied to a :class:`Tensor` appends one node to the tape
that owns its operands. :meth:`Tape.gradients` sweeps the tape once in
reverse recording order and accumulates vector-Jacobian products.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

ROLES = ("theta", "alpha", "beta")

_DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes do not satisfy a primitive's signature."""


class NumericError(ArithmeticError):
    """A forward value or gradient became NaN or infinite."""


class ContractError(ValueError):
    """A caller violated a documented precondition."""


def set_default_dtype(dtype) -> None:
    """Select float64 (default) or float32 for newly created leaves."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ContractError(f"unsupported precision {dtype}; use float64 or float32")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """A value recorded on a tape.

    Leaves have no parents; ``role`` is set for trainable leaves only.
    """

    __slots__ = ("data", "tape", "parents", "vjp", "index", "role", "name", "primitive")

    def __init__(self, data, tape: "Tape", parents=(), vjp: Optional[VJP] = None,
                 role: Optional[str] = None, name: Optional[str] = None, primitive: str = "leaf"):
        self.data = data
        self.tape = tape
        self.parents: Tuple[Tensor, ...] = tuple(parents)
        self.vjp = vjp
        self.role = role
        self.name = name
        self.primitive = primitive
        self.index = -1

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor({self.primitive}, shape={self.shape})"

    # Operator sugar; the primitives module does the recording.
    def __add__(self, other):
        from . import primitives as P
        return P.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import primitives as P
        return P.add(self, P.scale(other, -1.0))

    def __rsub__(self, other):
        from . import primitives as P
        return P.add(P.scale(self, -1.0), other)

    def __mul__(self, other):
        from . import primitives as P
        if np.isscalar(other):
            return P.scale(self, float(other))
        return P.multiply(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import primitives as P
        return P.scale(self, -1.0)

    def __getitem__(self, key):
        from . import primitives as P
        return P.take(self, key)


class Tape:
    """Ordered record of primitive applications.

    A tape is single-use: build it by running a forward computation, then
    call :meth:`gradients` once or several times on scalar outputs.
    """

    def __init__(self, check_finite: bool = True):
        self.nodes: List[Tensor] = []
        self.leaves: Dict[str, Tensor] = {}
        self.check_finite = check_finite

    def _append(self, node: Tensor) -> Tensor:
        node.index = len(self.nodes)
        self.nodes.append(node)
        return node

    def leaf(self, value, role: Optional[str] = None, name: Optional[str] = None) -> Tensor:
        """Record an input or trainable leaf.

        Trainable leaves need a ``role`` from ``ROLES`` and a unique name.
        """
        if role is not None:
            if role not in ROLES:
                raise ContractError(f"unknown leaf role {role!r}; expected one of {ROLES}")
            if name is None:
                raise ContractError("trainable leaves need a name")
            if name in self.leaves:
                raise ContractError(f"leaf {name!r} registered twice")
        data = np.asarray(value)
        if data.dtype.kind != "f":
            data = data.astype(_DEFAULT_DTYPE)
        node = self._append(Tensor(data, self, role=role, name=name))
        if role is not None:
            self.leaves[name] = node
        return node

    def constant(self, value) -> Tensor:
        return self.leaf(value)

    def bind(self, params: "ParamStore") -> Dict[str, Tensor]:
        """Record every parameter of ``params`` as a trainable leaf."""
        return {name: self.leaf(value, role=params.role(name), name=name)
                for name, value in params.items()}

    def record(self, primitive: str, data: np.ndarray, parents: Sequence[Tensor], vjp: VJP) -> Tensor:
        if self.check_finite and not np.all(np.isfinite(data)):
            shapes = ", ".join(str(p.shape) for p in parents)
            raise NumericError(f"{primitive}: non-finite output (input shapes {shapes})")
        return self._append(Tensor(data, self, parents, vjp, primitive=primitive))

    def leaves_by_role(self, role: str) -> Dict[str, Tensor]:
        return {k: v for k, v in self.leaves.items() if v.role == role}

    def backward(self, loss: Tensor) -> List[Optional[np.ndarray]]:
        """Gradient of ``loss`` for every node, indexed by recording order."""
        if loss.tape is not self:
            raise ContractError("loss was recorded on a different tape")
        if loss.data.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")
        grads: List[Optional[np.ndarray]] = [None] * (loss.index + 1)
        grads[loss.index] = np.ones_like(loss.data)
        for idx in range(loss.index, -1, -1):
            g = grads[idx]
            node = self.nodes[idx]
            if g is None or not node.parents:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None:
                    continue
                j = parent.index
                if grads[j] is None:
                    grads[j] = pg
                else:
                    grads[j] = grads[j] + pg
        return grads

    def gradients(self, loss: Tensor, leaves: Optional[Iterable[str]] = None) -> Dict[str, np.ndarray]:
        """Map leaf name to gradient; unreached leaves get zeros."""
        grads = self.backward(loss)
        names = list(self.leaves) if leaves is None else list(leaves)
        out = {}
        for name in names:
            leaf = self.leaves[name]
            g = grads[leaf.index] if leaf.index < len(grads) else None
            if g is None:
                g = np.zeros_like(leaf.data)
            elif self.check_finite and not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for leaf {name!r}")
            out[name] = g
        return out


class ParamStore:
    """Named trainable arrays, each tagged with exactly one role."""

    def __init__(self):
        self._values: Dict[str, np.ndarray] = {}
        self._roles: Dict[str, str] = {}

    def add(self, name: str, value: np.ndarray, role: str) -> None:
        if role not in ROLES:
            raise ContractError(f"unknown role {role!r}")
        if name in self._values:
            raise ContractError(f"parameter {name!r} already exists")
        self._values[name] = np.asarray(value, dtype=_DEFAULT_DTYPE)
        self._roles[name] = role

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self._values:
            raise KeyError(name)
        old = self._values[name]
        if np.shape(value) != old.shape:
            raise ShapeError(f"parameter {name!r}: shape {np.shape(value)} != {old.shape}")
        self._values[name] = np.asarray(value, dtype=old.dtype)

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def role(self, name: str) -> str:
        return self._roles[name]

    def items(self):
        return self._values.items()

    def names(self, role: Optional[str] = None) -> List[str]:
        return [k for k in self._values if role is None or self._roles[k] == role]

    def subset(self, role: str) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self._values.items() if self._roles[k] == role}

    def copy(self) -> "ParamStore":
        new = ParamStore()
        for k, v in self._values.items():
            new.add(k, v.copy(), self._roles[k])
        return new

    def count(self, role: Optional[str] = None) -> int:
        return int(sum(v.size for k, v in self._values.items() if role is None or self._roles[k] == role))


class Graph:
    """A re-evaluable computation over a parameter store.

    ``build(tape, leaves, **inputs)`` records the forward pass and returns a
    mapping of named output tensors. Each :meth:`evaluate` records a fresh
    tape, so evaluation is deterministic for fixed parameters and inputs.
    """

    def __init__(self, build: Callable[..., Mapping[str, Tensor]], params: Optional[ParamStore] = None,
                 check_finite: bool = True):
        self.build = build
        self.params = params if params is not None else ParamStore()
        self.check_finite = check_finite
        self.tape: Optional[Tape] = None
        self.outputs: Dict[str, Tensor] = {}

    def evaluate(self, **inputs) -> Dict[str, np.ndarray]:
        tape = Tape(check_finite=self.check_finite)
        leaves = tape.bind(self.params)
        bound = {k: tape.leaf(v) if _is_float_array(v) else v for k, v in inputs.items()}
        self.outputs = dict(self.build(tape, leaves, **bound))
        self.tape = tape
        return {k: v.data for k, v in self.outputs.items()}

    def gradients(self, output: str = "loss") -> Dict[str, np.ndarray]:
        if self.tape is None:
            raise ContractError("evaluate() must run before gradients()")
        if output not in self.outputs:
            raise ContractError(f"unknown output {output!r}")
        return self.tape.gradients(self.outputs[output], self.params.names())


def _is_float_array(v) -> bool:
    return isinstance(v, np.ndarray) and v.dtype.kind == "f"
