"""Reverse-mode automatic differentiation on dense numpy tensors.

A :class:`Tape` records elementary operations in creation order, so parent
indices are always smaller than child indices and a single reverse sweep over
the node list propagates adjoints.  Adjoints carry a leading batch axis, which
lets one sweep return several vector-Jacobian products at once (a full
Jacobian when the seeds are the identity).

Model code is written against the module-level helpers (:func:`exp`,
:func:`log`, :func:`sum` ...) which accept either plain ``ndarray`` values or
:class:`Var` handles, so the same equations run fast on arrays and recorded on
a tape when derivatives are needed.
"""

from __future__ import annotations

import builtins
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "TapeMismatchError",
    "Tape",
    "Var",
    "exp",
    "log",
    "sum",
    "matvec",
    "broadcast_to",
    "reshape",
    "transpose",
    "concat",
    "take",
    "record",
    "gradient",
    "vjp",
    "jacobian",
]


class DomainError(ValueError):
    """An elementary operation was applied outside its domain."""


class TapeMismatchError(ValueError):
    """Variables from different tapes were mixed."""


# backward(g, parent_values, out_value) -> tuple of parent adjoints, each with a
# leading batch axis and the parent's shape (broadcast reduction is applied by
# the sweep).
Backward = Callable[[np.ndarray], Sequence[np.ndarray]]


@dataclass
class Node:
    op: str
    parents: tuple[int, ...]
    shape: tuple[int, ...]
    backward: Backward | None


@dataclass
class Tape:
    """Append-only record of operations."""

    nodes: list[Node] = field(default_factory=list)
    # number of nodes touched by the most recent backward sweep
    last_visits: int = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def var(self, value, name: str = "input") -> "Var":
        """Create a leaf variable holding a copy of ``value``."""
        arr = np.array(value, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise DomainError(f"non-finite value for leaf {name!r}")
        return self._push(name, (), arr, None)

    def _push(self, op, parents, value, backward) -> "Var":
        for p in parents:
            assert p < len(self.nodes)
        self.nodes.append(Node(op, tuple(parents), value.shape, backward))
        return Var(self, len(self.nodes) - 1, value)

    def backward(self, seeds: dict[int, np.ndarray], batch: int) -> list[np.ndarray | None]:
        """Propagate batched adjoints from ``seeds`` back to every node.

        ``seeds`` maps node index to an array of shape ``(batch, *node.shape)``.
        Returns the adjoint list indexed by node (``None`` where unreachable).
        """
        adj: list[np.ndarray | None] = [None] * len(self.nodes)
        for idx, s in seeds.items():
            adj[idx] = s if adj[idx] is None else adj[idx] + s
        visits = 0
        for idx in range(len(self.nodes) - 1, -1, -1):
            visits += 1
            g = adj[idx]
            node = self.nodes[idx]
            if g is None or node.backward is None:
                continue
            grads = node.backward(g)
            for p, gp in zip(node.parents, grads):
                if gp is None:
                    continue
                gp = _unbroadcast(gp, self.nodes[p].shape)
                adj[p] = gp if adj[p] is None else adj[p] + gp
        self.last_visits = visits
        return adj


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # g has a leading batch axis followed by a shape that broadcasts from `shape`
    extra = g.ndim - 1 - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(1, 1 + extra)))
    axes = tuple(
        k + 1 for k, n in enumerate(shape) if n == 1 and g.shape[k + 1] != 1
    )
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Var:
    """Handle to a recorded tensor value."""

    __array_priority__ = 1000  # make ndarray <op> Var dispatch to Var

    def __init__(self, tape: Tape, index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Var(#{self.index}, shape={self.shape})"

    def __add__(self, other):
        return record("add", self, other)

    def __radd__(self, other):
        return record("add", other, self)

    def __sub__(self, other):
        return record("sub", self, other)

    def __rsub__(self, other):
        return record("sub", other, self)

    def __mul__(self, other):
        return record("mul", self, other)

    def __rmul__(self, other):
        return record("mul", other, self)

    def __truediv__(self, other):
        return record("div", self, other)

    def __rtruediv__(self, other):
        return record("div", other, self)

    def __pow__(self, exponent):
        return record("pow", self, exponent)

    def __neg__(self):
        return record("neg", self)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None):
        return record("sum", self, axis=axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


def _tape_of(*args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise TapeMismatchError("operands live on different tapes")
    return tape


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _check(op: str, tape: Tape, out: np.ndarray) -> None:
    if not np.all(np.isfinite(out)):
        raise DomainError(f"non-finite result in node #{len(tape.nodes)} ({op})")


def record(op: str, *inputs, **kw) -> Var:
    """Record one elementary operation on the tape shared by ``inputs``.

    Non-``Var`` operands are treated as constants and get no adjoint.
    """
    tape = _tape_of(*inputs)
    if tape is None:
        raise TypeError(f"record({op!r}) needs at least one Var operand")
    vals = [_val(x) for x in inputs]
    is_var = [isinstance(x, Var) for x in inputs]
    where = f"node #{len(tape.nodes)} ({op})"

    if op == "add":
        a, b = vals
        out = a + b
        bw = lambda g: (g, g)
    elif op == "sub":
        a, b = vals
        out = a - b
        bw = lambda g: (g, -g)
    elif op == "mul":
        a, b = vals
        out = a * b
        bw = lambda g: (g * b, g * a)
    elif op == "div":
        a, b = vals
        if np.any(b == 0):
            raise DomainError(f"division by zero in {where}")
        inv = 1.0 / b
        out = a * inv
        bw = lambda g: (g * inv, -g * out * inv)
    elif op == "pow":
        a, p = vals
        if is_var[1]:
            raise TypeError("pow supports constant exponents only")
        integral = np.all(p == np.round(p))
        if np.any(a < 0) and not integral:
            raise DomainError(f"negative base with real exponent in {where}")
        if np.any((a == 0) & (p < 1)):
            raise DomainError(f"zero base with exponent < 1 in {where}")
        out = a**p
        bw = lambda g: (g * (p * a ** (p - 1)), None)
    elif op == "exp":
        (a,) = vals
        out = np.exp(a)
        bw = lambda g: (g * out,)
    elif op == "log":
        (a,) = vals
        if np.any(a <= 0):
            raise DomainError(f"log of non-positive value in {where}")
        out = np.log(a)
        bw = lambda g: (g / a,)
    elif op == "neg":
        out = -vals[0]
        bw = lambda g: (-g,)
    elif op == "sum":
        (a,) = vals
        axis = kw.get("axis")
        out = np.asarray(a.sum(axis=axis))
        if axis is None:
            bw = lambda g: (np.broadcast_to(g.reshape((g.shape[0],) + (1,) * a.ndim), (g.shape[0],) + a.shape),)
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            axes = tuple(ax % a.ndim + 1 for ax in axes)
            bw = lambda g: (np.broadcast_to(np.expand_dims(g, axes), (g.shape[0],) + a.shape),)
    elif op == "matvec":
        A, x = vals
        if A.ndim != 2 or x.ndim != 1 or A.shape[1] != x.shape[0]:
            raise ValueError(f"matvec shape mismatch {A.shape} @ {x.shape}")
        out = A @ x
        bw = lambda g: (g[:, :, None] * x[None, None, :], g @ A)
    elif op == "broadcast":
        (a,) = vals
        out = np.broadcast_to(a, kw["shape"]).copy()
        bw = lambda g: (g,)
    elif op == "reshape":
        (a,) = vals
        out = a.reshape(kw["shape"])
        bw = lambda g: (g.reshape((g.shape[0],) + a.shape),)
    elif op == "transpose":
        (a,) = vals
        axes = tuple(kw["axes"])
        inv = tuple(np.argsort(axes))
        out = a.transpose(axes)
        bw = lambda g: (g.transpose((0,) + tuple(i + 1 for i in inv)),)
    elif op == "concat":
        flat = [v.ravel() for v in vals]
        out = np.concatenate(flat)
        bounds = np.cumsum([0] + [f.size for f in flat])
        shapes = [v.shape for v in vals]
        bw = lambda g: tuple(
            g[:, bounds[k] : bounds[k + 1]].reshape((g.shape[0],) + shapes[k])
            for k in range(len(shapes))
        )
    elif op == "take":
        (a,) = vals
        key = kw["key"]
        out = np.array(a[key], dtype=float)

        def bw(g):
            full = np.zeros((g.shape[0],) + a.shape)
            idx = (slice(None),) + (key if isinstance(key, tuple) else (key,))
            np.add.at(full, idx, g)
            return (full,)

    else:
        raise ValueError(f"unknown operation {op!r}")

    _check(op, tape, out)
    parents = tuple(x.index for x in inputs if isinstance(x, Var))

    def backward(g, _bw=bw, _mask=is_var):
        grads = _bw(g)
        return tuple(gr for gr, m in zip(grads, _mask) if m)

    return tape._push(op, parents, np.asarray(out, dtype=float), backward)


# ---------------------------------------------------------------------------
# helpers usable on arrays and Vars alike


def exp(x):
    return record("exp", x) if isinstance(x, Var) else np.exp(x)


def log(x):
    return record("log", x) if isinstance(x, Var) else np.log(x)


def sum(x, axis=None):  # noqa: A001 - mirrors numpy
    return record("sum", x, axis=axis) if isinstance(x, Var) else np.sum(x, axis=axis)


def matvec(A, x):
    if isinstance(A, Var) or isinstance(x, Var):
        return record("matvec", A, x)
    return np.asarray(A) @ np.asarray(x)


def broadcast_to(x, shape):
    if isinstance(x, Var):
        return record("broadcast", x, shape=tuple(shape))
    return np.broadcast_to(x, shape)


def reshape(x, shape):
    if isinstance(x, Var):
        return record("reshape", x, shape=tuple(shape))
    return np.reshape(x, shape)


def transpose(x, axes):
    if isinstance(x, Var):
        return record("transpose", x, axes=tuple(axes))
    return np.transpose(x, axes)


def concat(parts):
    if builtins.any(isinstance(p, Var) for p in parts):
        return record("concat", *parts)
    return np.concatenate([np.ravel(p) for p in parts])


def take(x, key):
    if isinstance(x, Var):
        return record("take", x, key=key)
    return np.asarray(x)[key]


# ---------------------------------------------------------------------------
# derivative queries


def _common_tape(outputs: Sequence[Var], inputs: Sequence[Var]) -> Tape:
    tape = outputs[0].tape
    for v in list(outputs) + list(inputs):
        if not isinstance(v, Var):
            raise TypeError(f"expected Var, got {type(v).__name__}")
        if v.tape is not tape:
            raise TapeMismatchError("inputs and outputs must share one tape")
    return tape


def _collect(adj, inputs, batch):
    res = []
    for v in inputs:
        a = adj[v.index]
        res.append(np.zeros((batch,) + v.shape) if a is None else np.array(a))
    return res


def gradient(output: Var, inputs: Sequence[Var]) -> list[np.ndarray]:
    """d output / d input for a scalar ``output``; unreachable inputs get zeros."""
    if output.value.size != 1:
        raise ValueError(f"gradient needs a scalar output, got shape {output.shape}")
    tape = _common_tape([output], inputs)
    seed = np.ones((1,) + output.shape)
    adj = tape.backward({output.index: seed}, 1)
    return [g[0] for g in _collect(adj, inputs, 1)]


def vjp(outputs: Sequence[Var] | Var, seed, inputs: Sequence[Var]) -> list[np.ndarray]:
    """Return ``seed^T d(outputs)/d(inputs)`` without forming the Jacobian.

    ``outputs`` may be a single Var or a list; ``seed`` is flat with one entry
    per output element (outputs raveled and concatenated in order).  A 2-D
    ``seed`` of shape ``(B, m)`` returns ``B`` products stacked on axis 0.
    """
    outs = [outputs] if isinstance(outputs, Var) else list(outputs)
    tape = _common_tape(outs, inputs)
    seed = np.asarray(seed, dtype=float)
    batched = seed.ndim == 2
    seed2 = seed if batched else seed[None, :]
    sizes = [o.value.size for o in outs]
    if seed2.shape[1] != builtins.sum(sizes):
        raise ValueError(
            f"seed length {seed2.shape[1]} does not match output size {builtins.sum(sizes)}"
        )
    B = seed2.shape[0]
    seeds: dict[int, np.ndarray] = {}
    off = 0
    for o, n in zip(outs, sizes):
        s = seed2[:, off : off + n].reshape((B,) + o.shape)
        seeds[o.index] = seeds[o.index] + s if o.index in seeds else s
        off += n
    adj = tape.backward(seeds, B)
    res = _collect(adj, inputs, B)
    return res if batched else [r[0] for r in res]


def jacobian(outputs: Sequence[Var] | Var, inputs: Sequence[Var]) -> list[np.ndarray]:
    """Full Jacobians ``d outputs / d input`` in one batched reverse sweep.

    Returns one array per input of shape ``(m, *input.shape)`` where ``m`` is
    the total number of output elements.
    """
    outs = [outputs] if isinstance(outputs, Var) else list(outputs)
    m = builtins.sum(o.value.size for o in outs)
    return vjp(outs, np.eye(m), inputs)
