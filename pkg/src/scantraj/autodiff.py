"""Reverse-mode automatic differentiation on a linear tape.

Everything is float64. Forward values are computed eagerly; each operation
appends one record to the active tape, and ``Tape.backward`` replays the
records in reverse. Gradient buffers are dense and allocated lazily, so a
node that never receives gradient reads as all zeros.

Broadcasting is deliberately restricted: a binary op accepts two operands of
identical shape, or one of them may be a scalar (shape ``()``). Anything
fancier raises :class:`ShapeError` naming the op and both shapes.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError

__all__ = [
    "TensorNode", "Tape", "active_tape", "constant", "zeros",
    "add", "sub", "mul", "div", "neg", "matmul", "dot", "concat", "stack",
    "relu", "tanh", "sigmoid", "exp", "log", "softplus",
    "softmax", "masked_softmax", "reduce_sum", "reduce_mean", "l2norm",
    "apply", "ParamStore", "Adam", "RngHub", "numeric_gradient",
]


class OpRecord:
    """Back-reference from a node into the tape that produced it."""

    __slots__ = ("tape", "op", "index")

    def __init__(self, tape: "Tape", op: str, index: int):
        self.tape = tape
        self.op = op
        self.index = index

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"OpRecord({self.op!r}, index={self.index})"


class TensorNode:
    """A float64 array participating in a recorded computation.

    ``grad`` is allocated on first access and accumulates d(loss)/d(node)
    during backward passes. Leaf nodes (constants, parameters) have
    ``op_record is None``.
    """

    __slots__ = ("values", "_grad", "op_record")

    def __init__(self, values, op_record: OpRecord | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self._grad = None
        self.op_record = op_record

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        return float(self.values)

    def __repr__(self):  # pragma: no cover - debugging aid
        tag = self.op_record.op if self.op_record is not None else "leaf"
        return f"TensorNode({tag}, shape={self.shape})"

    # Operator sugar. Python scalars are lifted to constant leaves.
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return _getitem(self, key)


class Tape:
    """Linear record of operations for one thread of execution.

    Can be used as a context manager to scope work to a fresh tape; a
    module-level default tape is active otherwise.
    """

    def __init__(self):
        self._records: list[tuple[TensorNode, tuple[TensorNode, ...], Callable]] = []

    def __len__(self) -> int:
        return len(self._records)

    def add(self, op: str, out: TensorNode, inputs: tuple, backward: Callable) -> OpRecord:
        self._records.append((out, inputs, backward))
        return OpRecord(self, op, len(self._records) - 1)

    def backward(self, loss: TensorNode) -> None:
        """Accumulate d(loss)/d(node) into every node reachable from loss.

        ``loss`` must be scalar-shaped and recorded on this tape (or a leaf).
        Each call propagates its own unit seed, so repeated calls sum
        gradients instead of double-counting earlier passes.
        """
        if loss.values.shape != ():
            raise ValueError(
                f"backward requires a scalar loss, got shape {loss.values.shape}")
        if loss.op_record is not None and loss.op_record.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        if not np.isfinite(loss.values):
            raise ValueError(f"backward on non-finite loss ({float(loss.values)})")
        adjoints: dict[int, tuple[TensorNode, np.ndarray]] = {
            id(loss): (loss, np.ones_like(loss.values))}
        _ADJOINT_STACK.append(adjoints)
        try:
            for out, _inputs, backward_fn in reversed(self._records):
                entry = adjoints.get(id(out))
                if entry is None:
                    continue
                backward_fn(entry[1])
        finally:
            _ADJOINT_STACK.pop()
        for node, buf in adjoints.values():
            node.grad.__iadd__(buf)

    def reset(self) -> None:
        """Drop all records and zero every gradient the tape has touched.

        Parameter values are left intact; only gradient buffers are cleared.
        """
        for out, inputs, _ in self._records:
            out.zero_grad()
            for node in inputs:
                node.zero_grad()
        self._records.clear()

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.pop()


_TAPE_STACK: list[Tape] = [Tape()]


def active_tape() -> Tape:
    return _TAPE_STACK[-1]


def constant(values) -> TensorNode:
    """A leaf node; gradient may accumulate into it but nothing updates it."""
    return TensorNode(values)


def zeros(shape) -> TensorNode:
    return TensorNode(np.zeros(shape, dtype=np.float64))


def _lift(x) -> TensorNode:
    if isinstance(x, TensorNode):
        return x
    return TensorNode(x)


_ADJOINT_STACK: list[dict] = []


def _add_grad(node: TensorNode, delta) -> None:
    if _ADJOINT_STACK:
        adjoints = _ADJOINT_STACK[-1]
        entry = adjoints.get(id(node))
        if entry is None:
            buf = np.zeros_like(node.values)
            adjoints[id(node)] = (node, buf)
        else:
            buf = entry[1]
        buf += delta
    else:
        node.grad.__iadd__(delta)


def _record(op: str, out_values, inputs: tuple, backward: Callable) -> TensorNode:
    node = TensorNode(out_values)
    node.op_record = active_tape().add(op, node, inputs, backward)
    return node


def _binary(op, a, b, fwd, da, db) -> TensorNode:
    a, b = _lift(a), _lift(b)
    av, bv = a.values, b.values
    if av.shape != bv.shape and av.shape != () and bv.shape != ():
        raise ShapeError(
            f"{op}: shapes {av.shape} and {bv.shape} do not match "
            f"(only scalar broadcast is allowed)")
    outv = np.asarray(fwd(av, bv), dtype=np.float64)

    def backward(g):
        ga = da(g, av, bv)
        gb = db(g, av, bv)
        _add_grad(a, ga if av.shape == outv.shape else np.sum(ga))
        _add_grad(b, gb if bv.shape == outv.shape else np.sum(gb))

    return _record(op, outv, (a, b), backward)


def _unary(op, a, fwd, dfn) -> TensorNode:
    a = _lift(a)
    outv = np.asarray(fwd(a.values), dtype=np.float64)

    def backward(g):
        _add_grad(a, dfn(g, a.values, outv))

    return _record(op, outv, (a,), backward)


def add(a, b) -> TensorNode:
    return _binary("add", a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> TensorNode:
    return _binary("sub", a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> TensorNode:
    return _binary("mul", a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> TensorNode:
    return _binary("div", a, b, lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def neg(a) -> TensorNode:
    return _unary("neg", a, lambda x: -x, lambda g, x, y: -g)


def matmul(a, b) -> TensorNode:
    a, b = _lift(a), _lift(b)
    av, bv = a.values, b.values
    if av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]:
        def backward(g):
            _add_grad(a, np.outer(g, bv))
            _add_grad(b, av.T @ g)
    elif av.ndim == 2 and bv.ndim == 2 and av.shape[1] == bv.shape[0]:
        def backward(g):
            _add_grad(a, g @ bv.T)
            _add_grad(b, av.T @ g)
    else:
        raise ShapeError(f"matmul: shapes {av.shape} and {bv.shape} do not conform")
    return _record("matmul", av @ bv, (a, b), backward)


def dot(a, b) -> TensorNode:
    a, b = _lift(a), _lift(b)
    av, bv = a.values, b.values
    if av.ndim != 1 or av.shape != bv.shape:
        raise ShapeError(f"dot: shapes {av.shape} and {bv.shape} must be equal 1-D")

    def backward(g):
        _add_grad(a, g * bv)
        _add_grad(b, g * av)

    return _record("dot", np.asarray(av @ bv), (a, b), backward)


def concat(nodes: Sequence[TensorNode], axis: int = 0) -> TensorNode:
    nodes = [_lift(n) for n in nodes]
    if not nodes:
        raise ShapeError("concat: needs at least one input")
    ndim = nodes[0].values.ndim
    for n in nodes:
        if n.values.ndim != ndim:
            raise ShapeError(
                f"concat: rank mismatch {nodes[0].shape} vs {n.shape}")
    outv = np.concatenate([n.values for n in nodes], axis=axis)
    sizes = [n.values.shape[axis] for n in nodes]
    split_at = np.cumsum(sizes)[:-1]

    def backward(g):
        for n, piece in zip(nodes, np.split(g, split_at, axis=axis)):
            _add_grad(n, piece)

    return _record("concat", outv, tuple(nodes), backward)


def stack(nodes: Sequence[TensorNode]) -> TensorNode:
    """Stack equal-shaped nodes along a new leading axis."""
    nodes = [_lift(n) for n in nodes]
    if not nodes:
        raise ShapeError("stack: needs at least one input")
    shp = nodes[0].shape
    for n in nodes:
        if n.shape != shp:
            raise ShapeError(f"stack: shape mismatch {shp} vs {n.shape}")
    outv = np.stack([n.values for n in nodes])

    def backward(g):
        for i, n in enumerate(nodes):
            _add_grad(n, g[i])

    return _record("stack", outv, tuple(nodes), backward)


def _getitem(a: TensorNode, key) -> TensorNode:
    # Basic (integer / slice / tuple) indexing only; keys must not alias.
    outv = np.array(a.values[key], dtype=np.float64)

    def backward(g):
        delta = np.zeros_like(a.values)
        delta[key] += g
        _add_grad(a, delta)

    return _record("slice", outv, (a,), backward)


def relu(a) -> TensorNode:
    return _unary("relu", a, lambda x: np.maximum(x, 0.0),
                  lambda g, x, y: g * (x > 0.0))


def tanh(a) -> TensorNode:
    return _unary("tanh", a, np.tanh, lambda g, x, y: g * (1.0 - y * y))


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a) -> TensorNode:
    return _unary("sigmoid", a, _sigmoid_values,
                  lambda g, x, y: g * y * (1.0 - y))


def exp(a) -> TensorNode:
    return _unary("exp", a, np.exp, lambda g, x, y: g * y)


def log(a) -> TensorNode:
    return _unary("log", a, np.log, lambda g, x, y: g / x)


def softplus(a) -> TensorNode:
    """log(1 + exp(x)), computed without overflow."""
    return _unary("softplus", a, lambda x: np.logaddexp(0.0, x),
                  lambda g, x, y: g * _sigmoid_values(x))


def softmax(a, axis: int = -1) -> TensorNode:
    a = _lift(a)
    xv = a.values
    if xv.size == 0:
        return _record("softmax", xv.copy(), (a,), lambda g: None)
    m = xv.max(axis=axis, keepdims=True)
    e = np.exp(xv - m)
    outv = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = np.sum(g * outv, axis=axis, keepdims=True)
        _add_grad(a, outv * (g - inner))

    return _record("softmax", outv, (a,), backward)


def masked_softmax(a, mask) -> TensorNode:
    """Softmax over the entries of a 1-D node where ``mask`` is True.

    Masked-out entries get weight exactly 0.0 and receive no gradient; if
    the mask is all False the result is all zeros.
    """
    a = _lift(a)
    xv = a.values
    mask = np.asarray(mask, dtype=bool)
    if xv.ndim != 1 or mask.shape != xv.shape:
        raise ShapeError(
            f"masked_softmax: values {xv.shape} and mask {mask.shape} must be equal 1-D")
    outv = np.zeros_like(xv)
    any_active = bool(mask.any())
    if any_active:
        sub_ = xv[mask]
        e = np.exp(sub_ - sub_.max())
        outv[mask] = e / e.sum()

    def backward(g):
        if not any_active:
            return
        inner = np.sum(g * outv)  # masked entries hold weight 0
        _add_grad(a, np.where(mask, outv * (g - inner), 0.0))

    return _record("masked_softmax", outv, (a,), backward)


def reduce_sum(a) -> TensorNode:
    a = _lift(a)
    return _record("sum", np.asarray(a.values.sum()), (a,),
                   lambda g: _add_grad(a, g))


def reduce_mean(a) -> TensorNode:
    a = _lift(a)
    n = a.values.size

    def backward(g):
        _add_grad(a, g / n)

    return _record("mean", np.asarray(a.values.mean()), (a,), backward)


def l2norm(a) -> TensorNode:
    """Euclidean norm of all entries, as a scalar node.

    At exactly zero the subgradient 0 is used.
    """
    a = _lift(a)
    y = float(np.sqrt(np.sum(a.values * a.values)))

    def backward(g):
        if y > 0.0:
            _add_grad(a, g * (a.values / y))

    return _record("l2norm", np.asarray(y), (a,), backward)


_OPS: dict[str, Callable] = {
    "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg,
    "matmul": matmul, "dot": dot, "concat": concat, "stack": stack,
    "slice": _getitem, "relu": relu, "tanh": tanh, "sigmoid": sigmoid,
    "exp": exp, "log": log, "softplus": softplus, "softmax": softmax,
    "masked_softmax": masked_softmax, "sum": reduce_sum, "mean": reduce_mean,
    "l2norm": l2norm,
}


def apply(op_kind: str, *inputs, **kwargs) -> TensorNode:
    """Generic dispatch into the op set; handy for enumerating ops in tests."""
    try:
        fn = _OPS[op_kind]
    except KeyError:
        raise KeyError(f"unknown op kind {op_kind!r}") from None
    return fn(*inputs, **kwargs)


class ParamStore:
    """Named trainable leaves. Registration order is update order."""

    def __init__(self):
        self._params: dict[str, TensorNode] = {}

    def register(self, name: str, values) -> TensorNode:
        if name in self._params:
            raise ValueError(f"parameter {name!r} registered twice")
        node = TensorNode(np.array(values, dtype=np.float64))
        self._params[name] = node
        return node

    def __getitem__(self, name: str) -> TensorNode:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.values.copy() for k, v in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, values in state.items():
            self._params[name].values[...] = values


class Adam:
    """Bias-corrected Adam over a ParamStore.

    ``step`` consumes the current gradients, updates parameter values in
    place, bumps the step counter, and zeroes the gradients it used.
    """

    def __init__(self, params: ParamStore, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0.0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        self.params = params
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {name: np.zeros_like(p.values) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.values) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.values -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.zero_grad()

    def state(self) -> dict:
        return {
            "t": self.t, "lr": self.lr, "beta1": self.beta1,
            "beta2": self.beta2, "eps": self.eps,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        self.lr = float(state["lr"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        for k in self.m:
            self.m[k][...] = state["m"][k]
            self.v[k][...] = state["v"][k]


class RngHub:
    """Named, independently seeded random streams over a counter-based generator.

    Each call site owns a stream keyed by name, so adding or removing one
    stream never shifts the draws of another. ``derive`` builds a throwaway
    generator for stateless uses (e.g. evaluation noise), keyed by extra
    integers.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    @staticmethod
    def _name_key(name: str) -> int:
        return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")

    def stream(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            ss = np.random.SeedSequence(entropy=(self.seed, self._name_key(name)))
            self._streams[name] = np.random.Generator(np.random.Philox(ss))
        return self._streams[name]

    def derive(self, name: str, *indices: int) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=(self.seed, self._name_key(name), *[int(i) for i in indices]))
        return np.random.Generator(np.random.Philox(ss))

    def state(self) -> dict[str, dict]:
        return {name: gen.bit_generator.state for name, gen in self._streams.items()}

    def load_state(self, state: dict[str, dict]) -> None:
        for name, st in state.items():
            self.stream(name).bit_generator.state = st


def numeric_gradient(f: Callable[[], float], values: np.ndarray,
                     h: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``f()`` w.r.t. ``values``.

    ``values`` is perturbed in place and restored; ``f`` must recompute the
    scalar from the current contents of ``values`` on every call.
    """
    grad = np.zeros_like(values)
    it = np.nditer(values, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        saved = values[idx]
        values[idx] = saved + h
        fp = f()
        values[idx] = saved - h
        fm = f()
        values[idx] = saved
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad
