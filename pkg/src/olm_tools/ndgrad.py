"""
Reverse-mode differentiation over dense float64 arrays, and Adam.

A `Graph` is a define-by-run tape: every primitive called on it computes its
value immediately and appends a node, so data-dependent control flow (the
sampler's stopping rule) is recorded as it actually ran. The recorded graph can
then be replayed on new leaf bindings (`eval`) or differentiated (`grad`).

`NumpyOps` exposes the same primitives on plain arrays. Code written against
the shared interface runs the identical arithmetic eagerly or on a tape.

Broadcasting is deliberately narrow: operands must have equal shapes, or one is
a scalar, or one equals the other's shape without its leading batch dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Any

import numpy as np

if TYPE_CHECKING:
    from collections.abc import Callable, Mapping, Sequence

    import numpy.typing as npt

    from olm_tools.type import Tensor


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class UnboundLeafError(KeyError):
    pass


def as_tensor(value: npt.ArrayLike) -> Tensor:
    """
    Convert `value` to a C-contiguous float64 array, rejecting NaN and Inf.
    """
    array = np.ascontiguousarray(value, dtype=np.float64)
    if not np.all(np.isfinite(array)):
        msg = f"Expected finite values, got an array of shape {array.shape} with non-finite entries"
        raise NonFiniteError(msg)
    return array


def broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    if a == b:
        return a
    if a == ():
        return b
    if b == ():
        return a
    if len(a) == len(b) + 1 and a[1:] == b:
        return a
    if len(b) == len(a) + 1 and b[1:] == a:
        return b
    msg = (
        f"Shapes {a} and {b} are not compatible. Only scalars and a leading batch "
        "dimension broadcast."
    )
    raise ShapeError(msg)


def _unbroadcast(grad: Tensor, shape: tuple[int, ...]) -> Tensor:
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(np.sum(grad))
    return np.sum(grad, axis=0)


# forward rules


def _elementwise_shape(shapes: Sequence[tuple[int, ...]], attrs: Mapping[str, Any]) -> tuple[int, ...]:
    return broadcast_shape(shapes[0], shapes[1])


def _matmul_shape(shapes: Sequence[tuple[int, ...]], attrs: Mapping[str, Any]) -> tuple[int, ...]:
    a, b = shapes
    if len(a) != 2 or len(b) != 2 or a[1] != b[0]:
        msg = f"matmul needs two matrices with matching inner dimension, got {a} and {b}"
        raise ShapeError(msg)
    return (a[0], b[1])


def _unary_shape(shapes: Sequence[tuple[int, ...]], attrs: Mapping[str, Any]) -> tuple[int, ...]:
    return shapes[0]


def _reduce_shape(shapes: Sequence[tuple[int, ...]], attrs: Mapping[str, Any]) -> tuple[int, ...]:
    shape = shapes[0]
    axis = attrs["axis"]
    if axis is None:
        return ()
    if not -len(shape) <= axis < len(shape):
        msg = f"Cannot reduce axis {axis} of an array with shape {shape}"
        raise ShapeError(msg)
    return shape[: axis % len(shape)] + shape[axis % len(shape) + 1 :]


def _concat_shape(shapes: Sequence[tuple[int, ...]], attrs: Mapping[str, Any]) -> tuple[int, ...]:
    axis = attrs["axis"]
    first = shapes[0]
    for shape in shapes[1:]:
        if len(shape) != len(first) or any(
            s != f for i, (s, f) in enumerate(zip(shape, first)) if i != axis
        ):
            msg = f"Cannot concatenate shapes {tuple(shapes)} along axis {axis}"
            raise ShapeError(msg)
    out = list(first)
    out[axis] = sum(shape[axis] for shape in shapes)
    return tuple(out)


def _slice_shape(shapes: Sequence[tuple[int, ...]], attrs: Mapping[str, Any]) -> tuple[int, ...]:
    return np.empty(shapes[0], dtype=np.bool_)[attrs["index"]].shape


def _reshape_shape(shapes: Sequence[tuple[int, ...]], attrs: Mapping[str, Any]) -> tuple[int, ...]:
    shape = tuple(attrs["shape"])
    if int(np.prod(shape)) != int(np.prod(shapes[0])):
        msg = f"Cannot reshape {shapes[0]} into {shape}"
        raise ShapeError(msg)
    return shape


def _transpose_shape(shapes: Sequence[tuple[int, ...]], attrs: Mapping[str, Any]) -> tuple[int, ...]:
    if len(shapes[0]) != 2:
        msg = f"transpose expects a matrix, got shape {shapes[0]}"
        raise ShapeError(msg)
    return shapes[0][::-1]


# reverse rules: (grad of output, operand values, output value, attrs) -> operand grads


def _vjp_add(g: Tensor, xs: Sequence[Tensor], out: Tensor, attrs: Mapping[str, Any]) -> tuple[Tensor, ...]:
    return _unbroadcast(g, xs[0].shape), _unbroadcast(g, xs[1].shape)


def _vjp_sub(g: Tensor, xs: Sequence[Tensor], out: Tensor, attrs: Mapping[str, Any]) -> tuple[Tensor, ...]:
    return _unbroadcast(g, xs[0].shape), _unbroadcast(-g, xs[1].shape)


def _vjp_mul(g: Tensor, xs: Sequence[Tensor], out: Tensor, attrs: Mapping[str, Any]) -> tuple[Tensor, ...]:
    a, b = xs
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _vjp_div(g: Tensor, xs: Sequence[Tensor], out: Tensor, attrs: Mapping[str, Any]) -> tuple[Tensor, ...]:
    a, b = xs
    return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)


def _vjp_scale(g: Tensor, xs: Sequence[Tensor], out: Tensor, attrs: Mapping[str, Any]) -> tuple[Tensor, ...]:
    return (g * attrs["factor"],)


def _vjp_matmul(g: Tensor, xs: Sequence[Tensor], out: Tensor, attrs: Mapping[str, Any]) -> tuple[Tensor, ...]:
    a, b = xs
    return g @ b.T, a.T @ g


def _vjp_relu(g: Tensor, xs: Sequence[Tensor], out: Tensor, attrs: Mapping[str, Any]) -> tuple[Tensor, ...]:
    # subgradient 0 at the kink
    return (g * (xs[0] > 0),)


def _expand(g: Tensor, shape: tuple[int, ...], axis: int | None) -> Tensor:
    if axis is not None:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


def _vjp_sum(g: Tensor, xs: Sequence[Tensor], out: Tensor, attrs: Mapping[str, Any]) -> tuple[Tensor, ...]:
    return (_expand(g, xs[0].shape, attrs["axis"]),)


def _vjp_mean(g: Tensor, xs: Sequence[Tensor], out: Tensor, attrs: Mapping[str, Any]) -> tuple[Tensor, ...]:
    x = xs[0]
    axis = attrs["axis"]
    count = x.size if axis is None else x.shape[axis]
    return (_expand(g, x.shape, axis) / count,)


def _vjp_square(g: Tensor, xs: Sequence[Tensor], out: Tensor, attrs: Mapping[str, Any]) -> tuple[Tensor, ...]:
    return (2.0 * xs[0] * g,)


def _vjp_exp(g: Tensor, xs: Sequence[Tensor], out: Tensor, attrs: Mapping[str, Any]) -> tuple[Tensor, ...]:
    return (g * out,)


def _vjp_sqrt(g: Tensor, xs: Sequence[Tensor], out: Tensor, attrs: Mapping[str, Any]) -> tuple[Tensor, ...]:
    # zero at sqrt(0) instead of an infinite slope
    result = np.zeros_like(out)
    np.divide(g, 2.0 * out, out=result, where=out > 0)
    return (result,)


def _vjp_concat(g: Tensor, xs: Sequence[Tensor], out: Tensor, attrs: Mapping[str, Any]) -> tuple[Tensor, ...]:
    axis = attrs["axis"]
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return tuple(np.split(g, bounds, axis=axis))


def _vjp_slice(g: Tensor, xs: Sequence[Tensor], out: Tensor, attrs: Mapping[str, Any]) -> tuple[Tensor, ...]:
    result = np.zeros_like(xs[0])
    result[attrs["index"]] = g
    return (result,)


def _vjp_reshape(g: Tensor, xs: Sequence[Tensor], out: Tensor, attrs: Mapping[str, Any]) -> tuple[Tensor, ...]:
    return (g.reshape(xs[0].shape),)


def _vjp_transpose(g: Tensor, xs: Sequence[Tensor], out: Tensor, attrs: Mapping[str, Any]) -> tuple[Tensor, ...]:
    return (np.ascontiguousarray(g.T),)


@dataclass(frozen=True)
class Primitive:
    forward: Callable[..., Tensor]
    vjp: Callable[..., tuple[Tensor, ...]]
    shape: Callable[[Sequence[tuple[int, ...]], Mapping[str, Any]], tuple[int, ...]]


PRIMITIVES: dict[str, Primitive] = {
    "add": Primitive(lambda xs, at: xs[0] + xs[1], _vjp_add, _elementwise_shape),
    "sub": Primitive(lambda xs, at: xs[0] - xs[1], _vjp_sub, _elementwise_shape),
    "mul": Primitive(lambda xs, at: xs[0] * xs[1], _vjp_mul, _elementwise_shape),
    "div": Primitive(lambda xs, at: xs[0] / xs[1], _vjp_div, _elementwise_shape),
    "scale": Primitive(lambda xs, at: xs[0] * at["factor"], _vjp_scale, _unary_shape),
    "matmul": Primitive(lambda xs, at: xs[0] @ xs[1], _vjp_matmul, _matmul_shape),
    "relu": Primitive(lambda xs, at: np.maximum(xs[0], 0.0), _vjp_relu, _unary_shape),
    "sum": Primitive(
        lambda xs, at: np.asarray(np.sum(xs[0], axis=at["axis"])), _vjp_sum, _reduce_shape
    ),
    "mean": Primitive(
        lambda xs, at: np.asarray(np.mean(xs[0], axis=at["axis"])), _vjp_mean, _reduce_shape
    ),
    "square": Primitive(lambda xs, at: xs[0] * xs[0], _vjp_square, _unary_shape),
    "sqrt": Primitive(lambda xs, at: np.sqrt(xs[0]), _vjp_sqrt, _unary_shape),
    "exp": Primitive(lambda xs, at: np.exp(xs[0]), _vjp_exp, _unary_shape),
    "concat": Primitive(
        lambda xs, at: np.concatenate(xs, axis=at["axis"]), _vjp_concat, _concat_shape
    ),
    "slice": Primitive(
        lambda xs, at: np.ascontiguousarray(xs[0][at["index"]]), _vjp_slice, _slice_shape
    ),
    "reshape": Primitive(lambda xs, at: xs[0].reshape(at["shape"]), _vjp_reshape, _reshape_shape),
    "transpose": Primitive(
        lambda xs, at: np.ascontiguousarray(xs[0].T), _vjp_transpose, _transpose_shape
    ),
}


class _Primitives:
    """
    The primitive vocabulary shared by `Graph` and `NumpyOps`. Subclasses decide
    what applying a primitive means.
    """

    def _apply(self, op: str, operands: Sequence[Any], **attrs: Any) -> Any:
        raise NotImplementedError

    def _lift(self, value: Any) -> Any:
        raise NotImplementedError

    def constant(self, value: npt.ArrayLike) -> Any:
        raise NotImplementedError

    def value(self, handle: Any) -> Tensor:
        raise NotImplementedError

    def add(self, a: Any, b: Any) -> Any:
        return self._apply("add", (a, b))

    def sub(self, a: Any, b: Any) -> Any:
        return self._apply("sub", (a, b))

    def mul(self, a: Any, b: Any) -> Any:
        return self._apply("mul", (a, b))

    def div(self, a: Any, b: Any) -> Any:
        return self._apply("div", (a, b))

    def scale(self, a: Any, factor: float) -> Any:
        return self._apply("scale", (a,), factor=float(factor))

    def matmul(self, a: Any, b: Any) -> Any:
        return self._apply("matmul", (a, b))

    def relu(self, a: Any) -> Any:
        return self._apply("relu", (a,))

    def sum(self, a: Any, axis: int | None = None) -> Any:
        return self._apply("sum", (a,), axis=axis)

    def mean(self, a: Any, axis: int | None = None) -> Any:
        return self._apply("mean", (a,), axis=axis)

    def square(self, a: Any) -> Any:
        return self._apply("square", (a,))

    def sqrt(self, a: Any) -> Any:
        return self._apply("sqrt", (a,))

    def exp(self, a: Any) -> Any:
        return self._apply("exp", (a,))

    def concat(self, parts: Sequence[Any], axis: int = 0) -> Any:
        return self._apply("concat", tuple(parts), axis=axis)

    def slice(self, a: Any, index: tuple[slice, ...]) -> Any:
        if not all(isinstance(s, slice) for s in index):
            msg = f"slice accepts only slice objects, got {index}"
            raise ShapeError(msg)
        return self._apply("slice", (a,), index=tuple(index))

    def reshape(self, a: Any, shape: tuple[int, ...]) -> Any:
        return self._apply("reshape", (a,), shape=tuple(shape))

    def transpose(self, a: Any) -> Any:
        return self._apply("transpose", (a,))


class NumpyOps(_Primitives):
    """
    Eager evaluation of the primitives on plain arrays.
    """

    nbytes = 0

    def _lift(self, value: Any) -> Tensor:
        return np.asarray(value, dtype=np.float64)

    def _apply(self, op: str, operands: Sequence[Any], **attrs: Any) -> Tensor:
        prim = PRIMITIVES[op]
        values = [self._lift(x) for x in operands]
        prim.shape([v.shape for v in values], attrs)
        return prim.forward(values, attrs)

    def leaf(self, name: str, value: npt.ArrayLike) -> Tensor:
        return as_tensor(value)

    def constant(self, value: npt.ArrayLike) -> Tensor:
        return np.asarray(value, dtype=np.float64)

    def value(self, handle: Any) -> Tensor:
        return np.asarray(handle, dtype=np.float64)


numpy_ops = NumpyOps()


@dataclass(frozen=True)
class Node:
    index: int
    op: str
    operands: tuple[int, ...]
    shape: tuple[int, ...]
    attrs: dict[str, Any] = field(default_factory=dict, compare=False)


class Graph(_Primitives):
    """
    A recorded computation. Node order is a topological order.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.leaves: dict[str, int] = {}
        self.root: int | None = None
        self._values: list[Tensor] = []
        self._nbytes = 0

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def nbytes(self) -> int:
        return self._nbytes

    def _record(self, op: str, operands: tuple[int, ...], value: Tensor, attrs: dict[str, Any]) -> Node:
        if not np.all(np.isfinite(value)):
            msg = f"Non-finite value produced by {op} at node {len(self.nodes)}"
            raise NonFiniteError(msg)
        node = Node(len(self.nodes), op, operands, value.shape, attrs)
        self.nodes.append(node)
        self._values.append(value)
        self._nbytes += value.nbytes
        return node

    def _lift(self, value: Any) -> Node:
        if isinstance(value, Node):
            if value.index >= len(self.nodes) or self.nodes[value.index] is not value:
                msg = f"Node {value.index} does not belong to this graph"
                raise ValueError(msg)
            return value
        return self.constant(value)

    def _apply(self, op: str, operands: Sequence[Any], **attrs: Any) -> Node:
        prim = PRIMITIVES[op]
        nodes = [self._lift(x) for x in operands]
        prim.shape([n.shape for n in nodes], attrs)
        value = prim.forward([self._values[n.index] for n in nodes], attrs)
        return self._record(op, tuple(n.index for n in nodes), value, attrs)

    def leaf(self, name: str, value: npt.ArrayLike) -> Node:
        if name in self.leaves:
            msg = f"A leaf named {name!r} already exists in this graph"
            raise ValueError(msg)
        node = self._record("leaf", (), as_tensor(value), {"name": name})
        self.leaves[name] = node.index
        return node

    def constant(self, value: npt.ArrayLike) -> Node:
        return self._record("constant", (), np.asarray(value, dtype=np.float64), {})

    def value(self, handle: Node) -> Tensor:
        return self._values[handle.index]

    def set_root(self, node: Node) -> None:
        self.root = self._lift(node).index

    def bindings(self) -> dict[str, Tensor]:
        """
        The leaf values the graph was recorded with.
        """
        return {name: self._values[index] for name, index in self.leaves.items()}

    def backward(self, wrt: Sequence[str], root: Node | None = None) -> dict[str, Tensor]:
        """
        Gradients of the (scalar) root with respect to the named leaves, using
        the values stored while recording.
        """
        index = self._root_index(root)
        return _backward(self.nodes, self._values, index, self._leaf_indices(wrt))

    def _root_index(self, root: Node | None) -> int:
        if root is not None:
            return self._lift(root).index
        if self.root is None:
            msg = "The graph has no root. Call `set_root` first."
            raise ValueError(msg)
        return self.root

    def _leaf_indices(self, wrt: Sequence[str]) -> dict[str, int]:
        missing = [name for name in wrt if name not in self.leaves]
        if missing:
            msg = f"Leaves {missing} are not in the graph. Known leaves: {sorted(self.leaves)}"
            raise UnboundLeafError(msg)
        return {name: self.leaves[name] for name in wrt}


def _replay(graph: Graph, inputs: Mapping[str, npt.ArrayLike]) -> list[Tensor]:
    unbound = [name for name in graph.leaves if name not in inputs]
    if unbound:
        msg = f"Leaves {unbound} are not bound by the inputs"
        raise UnboundLeafError(msg)
    unknown = [name for name in inputs if name not in graph.leaves]
    if unknown:
        msg = f"Inputs {unknown} do not name leaves of the graph"
        raise UnboundLeafError(msg)

    values: list[Tensor] = []
    for node in graph.nodes:
        if node.op == "leaf":
            value = as_tensor(inputs[node.attrs["name"]])
        elif node.op == "constant":
            value = graph.value(node)
        else:
            prim = PRIMITIVES[node.op]
            operands = [values[i] for i in node.operands]
            prim.shape([v.shape for v in operands], node.attrs)
            value = prim.forward(operands, node.attrs)
            if not np.all(np.isfinite(value)):
                msg = f"Non-finite value produced by {node.op} at node {node.index}"
                raise NonFiniteError(msg)
        values.append(value)
    return values


def _backward(
    nodes: Sequence[Node], values: Sequence[Tensor], root: int, wrt: Mapping[str, int]
) -> dict[str, Tensor]:
    if values[root].size != 1:
        msg = f"Gradients need a scalar root, got shape {values[root].shape}"
        raise ShapeError(msg)
    adjoints: list[Tensor | None] = [None] * (root + 1)
    adjoints[root] = np.ones_like(values[root])
    for node in reversed(nodes[: root + 1]):
        g = adjoints[node.index]
        if g is None or node.op in ("leaf", "constant"):
            continue
        prim = PRIMITIVES[node.op]
        operands = [values[i] for i in node.operands]
        grads = prim.vjp(g, operands, values[node.index], node.attrs)
        for i, gi in zip(node.operands, grads):
            current = adjoints[i]
            adjoints[i] = gi if current is None else current + gi

    result = {}
    for name, index in wrt.items():
        g = adjoints[index] if index <= root else None
        result[name] = np.zeros_like(values[index]) if g is None else np.asarray(g)
    return result


def eval(graph: Graph, inputs: Mapping[str, npt.ArrayLike]) -> Tensor:  # noqa: A001
    """
    Replay `graph` on new leaf bindings and return the root value. Pure: the
    graph is not modified.
    """
    values = _replay(graph, inputs)
    return values[graph._root_index(None)]


def value_and_grad(
    graph: Graph, inputs: Mapping[str, npt.ArrayLike], wrt: Sequence[str]
) -> tuple[float, dict[str, Tensor]]:
    """
    Replay `graph` on `inputs` and return the scalar root value together with
    its gradients with respect to the leaves named in `wrt`.
    """
    leaves = graph._leaf_indices(wrt)
    values = _replay(graph, inputs)
    root = graph._root_index(None)
    grads = _backward(graph.nodes, values, root, leaves)
    return float(values[root].reshape(())), grads


def grad(
    graph: Graph, inputs: Mapping[str, npt.ArrayLike], wrt: Sequence[str]
) -> dict[str, Tensor]:
    """
    Gradients of the scalar root of `graph` with respect to the leaves in `wrt`,
    evaluated at `inputs`.
    """
    return value_and_grad(graph, inputs, wrt)[1]


def finite_diff_grad(
    f: Callable[[Tensor], float | Tensor], x: npt.ArrayLike, h: float = 1e-5
) -> Tensor:
    """
    Central-difference gradient of the scalar function `f` at `x`.
    """
    if h <= 0:
        msg = f"Step size must be positive, got {h}"
        raise ValueError(msg)
    x = as_tensor(x)
    result = np.zeros_like(x)
    for i in range(x.size):
        plus = x.copy()
        minus = x.copy()
        plus.flat[i] += h
        minus.flat[i] -= h
        f_plus = float(np.asarray(f(plus)).reshape(()))
        f_minus = float(np.asarray(f(minus)).reshape(()))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            msg = f"Function evaluation was not finite around coordinate {i}"
            raise NonFiniteError(msg)
        result.flat[i] = (f_plus - f_minus) / (2 * h)
    return result


@dataclass(frozen=True)
class AdamState:
    m: dict[str, Tensor]
    v: dict[str, Tensor]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 1.0

    def __post_init__(self) -> None:
        if self.lr <= 0:
            msg = f"Learning rate must be positive, got {self.lr}"
            raise ValueError(msg)
        if self.t < 0:
            msg = f"Step counter must be non-negative, got {self.t}"
            raise ValueError(msg)
        for name, moment in self.m.items():
            if name not in self.v or self.v[name].shape != moment.shape:
                msg = f"First and second moments of {name!r} disagree in shape"
                raise ShapeError(msg)

    @classmethod
    def create(
        cls,
        params: Mapping[str, Tensor],
        *,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        decay: float = 1.0,
    ) -> AdamState:
        zeros = {name: np.zeros_like(p, dtype=np.float64) for name, p in params.items()}
        return cls(
            m=zeros,
            v={name: z.copy() for name, z in zeros.items()},
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            decay=decay,
        )

    def decayed(self) -> AdamState:
        """
        The state after one epoch of learning-rate decay.
        """
        return replace(self, lr=self.lr * self.decay)


def adam_step(
    params: Mapping[str, Tensor], grads: Mapping[str, Tensor], state: AdamState
) -> tuple[dict[str, Tensor], AdamState]:
    """
    One bias-corrected Adam update. Parameters whose gradient is identically
    zero are left where they are; their moments still decay.
    """
    if set(params) != set(grads) or set(params) != set(state.m):
        msg = (
            f"Parameters {sorted(params)}, gradients {sorted(grads)} and optimizer "
            f"state {sorted(state.m)} must name the same tensors"
        )
        raise ShapeError(msg)
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_params: dict[str, Tensor] = {}
    new_m: dict[str, Tensor] = {}
    new_v: dict[str, Tensor] = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape or state.m[name].shape != p.shape:
            msg = f"Gradient of {name!r} has shape {g.shape}, expected {p.shape}"
            raise ShapeError(msg)
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        if np.any(g):
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            new_params[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        else:
            new_params[name] = p
        new_m[name] = m
        new_v[name] = v
    return new_params, replace(state, m=new_m, v=new_v, t=t)
