# coding: utf-8

# Copyright (c) bnfold developers.
# Distributed under the terms of the Modified BSD License.
"""Computation graph data model

This module contains the operator taxonomy, the immutable Graph value, graph
validation and shape inference. Every other module consumes these types.
"""

import enum
import hashlib
import heapq
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from typing import ClassVar, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .affine import ChannelAffine


class GraphError(ValueError):
    """Base class for invalid graphs, naming the offending node."""

    def __init__(self, node_id, message):
        super().__init__("%s: %s" % (node_id, message))
        self.node_id = node_id


class CycleDetected(GraphError):
    pass


class UnknownId(GraphError):
    pass


class ArityMismatch(GraphError):
    pass


class ShapeMismatch(GraphError):
    pass


class DuplicateId(GraphError):
    pass


class LayerClass(enum.Enum):
    EXPRESSIVE = "Expressive"
    BATCH_NORM = "BatchNorm"
    OTHER_AFFINE = "OtherAffine"
    NON_AFFINE = "NonAffine"


@dataclass(frozen=True)
class TensorShape:
    """Tensor extents; ``dims[0]`` is the symbolic batch and is always 0."""

    dims: Tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 2:
            raise ValueError("shape %r needs a batch and a channel axis" % (dims,))
        if any(d < 1 for d in dims[1:]):
            raise ValueError("shape %r has a non-positive extent" % (dims,))
        object.__setattr__(self, "dims", (0,) + dims[1:])

    @property
    def rank(self) -> int:
        return len(self.dims)

    @property
    def channels(self) -> int:
        return self.dims[1]

    @property
    def spatial(self) -> Tuple[int, ...]:
        return self.dims[2:]

    @property
    def positions(self) -> int:
        """Number of entries per channel (product of the spatial extents)."""
        return int(np.prod(self.spatial, dtype=np.int64))

    @property
    def size(self) -> int:
        return self.channels * self.positions

    def __str__(self):
        return "[%s]" % ",".join(map(str, self.dims))


def _as_shape(value) -> TensorShape:
    return value if isinstance(value, TensorShape) else TensorShape(tuple(value))


def _as_array(value, ndim, name):
    arr = np.array(value, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError("%s must have %d dimensions, got %d" % (name, ndim, arr.ndim))
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NodeKind:
    """Operator of a node. Equality compares parameters bit for bit."""

    op: ClassVar[str] = ""
    layer_class: ClassVar[LayerClass]
    # None means "two or more"
    arity: ClassVar[Optional[int]] = 1

    def attrs(self) -> Dict[str, object]:
        return {}

    def weights(self) -> Dict[str, np.ndarray]:
        return {}

    def param_count(self) -> int:
        return sum(int(w.size) for w in self.weights().values())

    def infer_shape(self, node_id: str, shapes: Sequence[TensorShape]) -> TensorShape:
        return shapes[0]

    def __eq__(self, other):
        if type(self) is not type(other):
            return NotImplemented
        if self.attrs() != other.attrs():
            return False
        mine, theirs = self.weights(), other.weights()
        return all(
            mine[k].shape == theirs[k].shape and mine[k].tobytes() == theirs[k].tobytes()
            for k in mine
        )

    __hash__ = None


def _require_rank(node_id, shape, rank, op):
    if shape.rank != rank:
        raise ShapeMismatch(node_id, "%s expects a rank-%d input, got %s" % (op, rank, shape))


@dataclass(frozen=True, eq=False)
class Dense(NodeKind):
    weight: np.ndarray
    bias: np.ndarray

    op = "Dense"
    layer_class = LayerClass.EXPRESSIVE

    def __post_init__(self):
        weight = _as_array(self.weight, 2, "Dense weight")
        bias = _as_array(self.bias, 1, "Dense bias")
        if bias.shape[0] != weight.shape[0]:
            raise ValueError(
                "Dense bias has %d entries for %d outputs" % (bias.shape[0], weight.shape[0])
            )
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def weights(self):
        return {"weight": self.weight, "bias": self.bias}

    def infer_shape(self, node_id, shapes):
        (shape,) = shapes
        _require_rank(node_id, shape, 2, self.op)
        if shape.channels != self.in_channels:
            raise ShapeMismatch(
                node_id, "Dense expects %d input channels, got %s" % (self.in_channels, shape)
            )
        return TensorShape((0, self.out_channels))

    def precompose(self, affine: ChannelAffine) -> "Dense":
        """Parameters computing ``self(affine(x))``."""
        return Dense(self.weight * affine.scale[None, :], self.bias + self.weight @ affine.shift)

    def postcompose(self, affine: ChannelAffine) -> "Dense":
        """Parameters computing ``affine(self(x))``."""
        return Dense(
            self.weight * affine.scale[:, None], affine.scale * self.bias + affine.shift
        )


@dataclass(frozen=True, eq=False)
class Conv2D(NodeKind):
    """Valid cross-correlation with stride 1; kernel is ``[out, in, kh, kw]``."""

    kernel: np.ndarray
    bias: np.ndarray

    op = "Conv2D"
    layer_class = LayerClass.EXPRESSIVE

    def __post_init__(self):
        kernel = _as_array(self.kernel, 4, "Conv2D kernel")
        bias = _as_array(self.bias, 1, "Conv2D bias")
        if bias.shape[0] != kernel.shape[0]:
            raise ValueError(
                "Conv2D bias has %d entries for %d outputs" % (bias.shape[0], kernel.shape[0])
            )
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "bias", bias)

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    def weights(self):
        return {"kernel": self.kernel, "bias": self.bias}

    def infer_shape(self, node_id, shapes):
        (shape,) = shapes
        _require_rank(node_id, shape, 4, self.op)
        _, _, kh, kw = self.kernel.shape
        height, width = shape.spatial
        if shape.channels != self.in_channels:
            raise ShapeMismatch(
                node_id, "Conv2D expects %d input channels, got %s" % (self.in_channels, shape)
            )
        if height < kh or width < kw:
            raise ShapeMismatch(node_id, "%dx%d kernel does not fit %s" % (kh, kw, shape))
        return TensorShape((0, self.out_channels, height - kh + 1, width - kw + 1))

    def precompose(self, affine: ChannelAffine) -> "Conv2D":
        # valid padding: every window sees the shift on all of its taps
        return Conv2D(
            self.kernel * affine.scale[None, :, None, None],
            self.bias + np.einsum("oikl,i->o", self.kernel, affine.shift),
        )

    def postcompose(self, affine: ChannelAffine) -> "Conv2D":
        return Conv2D(
            self.kernel * affine.scale[:, None, None, None],
            affine.scale * self.bias + affine.shift,
        )


@dataclass(frozen=True, eq=False)
class BatchNorm(NodeKind):
    """Inference batch normalization ``γ(x − μ)/(σ + ε) + β`` per channel."""

    gamma: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    epsilon: float = 1e-3

    op = "BatchNorm"
    layer_class = LayerClass.BATCH_NORM

    def __post_init__(self):
        arrays = {}
        for name in ("gamma", "beta", "mu", "sigma"):
            arrays[name] = _as_array(getattr(self, name), 1, "BatchNorm %s" % name)
            object.__setattr__(self, name, arrays[name])
        if len({a.shape for a in arrays.values()}) != 1:
            raise ValueError("BatchNorm parameter vectors differ in length")
        if np.any(self.sigma < 0):
            raise ValueError("BatchNorm sigma must be non-negative")
        epsilon = float(self.epsilon)
        if not epsilon > 0:
            raise ValueError("BatchNorm epsilon must be positive, got %r" % (epsilon,))
        object.__setattr__(self, "epsilon", epsilon)

    @property
    def channels(self) -> int:
        return len(self.gamma)

    def attrs(self):
        return {"epsilon": self.epsilon}

    def weights(self):
        return {"gamma": self.gamma, "beta": self.beta, "mu": self.mu, "sigma": self.sigma}

    def infer_shape(self, node_id, shapes):
        (shape,) = shapes
        if shape.channels != self.channels:
            raise ShapeMismatch(
                node_id, "BatchNorm has %d channels, input is %s" % (self.channels, shape)
            )
        return shape

    def affine(self) -> ChannelAffine:
        denominator = self.sigma + self.epsilon
        return ChannelAffine(
            self.gamma / denominator, self.beta - self.gamma * self.mu / denominator
        )

    def precompose(self, affine: ChannelAffine) -> "BatchNorm":
        denominator = self.sigma + self.epsilon
        beta = self.beta + self.gamma * (affine.shift + (affine.scale - 1.0) * self.mu) / denominator
        return BatchNorm(affine.scale * self.gamma, beta, self.mu, self.sigma, self.epsilon)

    def postcompose(self, affine: ChannelAffine) -> "BatchNorm":
        return BatchNorm(
            affine.scale * self.gamma,
            affine.scale * self.beta + affine.shift,
            self.mu,
            self.sigma,
            self.epsilon,
        )


@dataclass(frozen=True, eq=False)
class _Pointwise(NodeKind):
    layer_class = LayerClass.NON_AFFINE


class ReLU(_Pointwise):
    op = "ReLU"


class Sigmoid(_Pointwise):
    op = "Sigmoid"


class Tanh(_Pointwise):
    op = "Tanh"


@dataclass(frozen=True, eq=False)
class _Pool2D(NodeKind):
    """Non-overlapping ``kh × kw`` windows (stride equals the window)."""

    kh: int = 2
    kw: int = 2

    def __post_init__(self):
        for name in ("kh", "kw"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError("%s %s must be a positive integer" % (self.op, name))
            object.__setattr__(self, name, int(value))

    def attrs(self):
        return {"kh": self.kh, "kw": self.kw}

    def infer_shape(self, node_id, shapes):
        (shape,) = shapes
        _require_rank(node_id, shape, 4, self.op)
        height, width = shape.spatial
        if height < self.kh or width < self.kw:
            raise ShapeMismatch(
                node_id, "%dx%d window does not fit %s" % (self.kh, self.kw, shape)
            )
        return TensorShape((0, shape.channels, height // self.kh, width // self.kw))


class MaxPool2D(_Pool2D):
    op = "MaxPool2D"
    layer_class = LayerClass.NON_AFFINE


class AvgPool2D(_Pool2D):
    op = "AvgPool2D"
    layer_class = LayerClass.OTHER_AFFINE


@dataclass(frozen=True, eq=False)
class Add(NodeKind):
    op = "Add"
    layer_class = LayerClass.OTHER_AFFINE
    arity = None

    def infer_shape(self, node_id, shapes):
        first = shapes[0]
        for shape in shapes[1:]:
            if shape != first:
                raise ShapeMismatch(node_id, "Add operands differ: %s vs %s" % (first, shape))
        return first


@dataclass(frozen=True, eq=False)
class Concat(NodeKind):
    """Concatenation along the channel axis."""

    op = "Concat"
    layer_class = LayerClass.OTHER_AFFINE
    arity = None

    def infer_shape(self, node_id, shapes):
        first = shapes[0]
        for shape in shapes[1:]:
            if shape.rank != first.rank or shape.spatial != first.spatial:
                raise ShapeMismatch(
                    node_id, "Concat operands differ outside the channel axis: %s vs %s"
                    % (first, shape)
                )
        channels = sum(shape.channels for shape in shapes)
        return TensorShape((0, channels) + first.spatial)


@dataclass(frozen=True, eq=False)
class Flatten(NodeKind):
    op = "Flatten"
    layer_class = LayerClass.OTHER_AFFINE

    def infer_shape(self, node_id, shapes):
        (shape,) = shapes
        return TensorShape((0, shape.size))


@dataclass(frozen=True, eq=False)
class Identity(NodeKind):
    op = "Identity"
    layer_class = LayerClass.OTHER_AFFINE


NODE_KINDS: Dict[str, type] = {
    kind.op: kind
    for kind in (
        Dense,
        Conv2D,
        BatchNorm,
        ReLU,
        Sigmoid,
        Tanh,
        MaxPool2D,
        Add,
        Concat,
        AvgPool2D,
        Flatten,
        Identity,
    )
}


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind
    inputs: Tuple[str, ...]
    out_shape: Optional[TensorShape] = None

    def __post_init__(self):
        if isinstance(self.inputs, str):
            raise TypeError("inputs of %s must be a sequence of ids" % self.id)
        object.__setattr__(self, "inputs", tuple(self.inputs))

    @property
    def op(self) -> str:
        return self.kind.op

    @property
    def layer_class(self) -> LayerClass:
        return self.kind.layer_class


@dataclass(frozen=True)
class GraphInput:
    id: str
    shape: TensorShape

    def __post_init__(self):
        object.__setattr__(self, "shape", _as_shape(self.shape))


@dataclass(frozen=True)
class Graph:
    """Validated, topologically ordered DAG. Build instances with :func:`build_graph`."""

    name: str
    inputs: Tuple[GraphInput, ...]
    nodes: Tuple[Node, ...]
    outputs: Tuple[str, ...]

    @cached_property
    def _index(self) -> Dict[str, Node]:
        return {node.id: node for node in self.nodes}

    @cached_property
    def _input_ids(self) -> Dict[str, GraphInput]:
        return {inp.id: inp for inp in self.inputs}

    @cached_property
    def position(self) -> Dict[str, int]:
        """Topological index of every node."""
        return {node.id: i for i, node in enumerate(self.nodes)}

    @cached_property
    def consumers(self) -> Mapping[str, Tuple[str, ...]]:
        """Consumer node ids per id, one entry per edge, in node order."""
        result = defaultdict(list)
        for node in self.nodes:
            for source in node.inputs:
                result[source].append(node.id)
        return {key: tuple(value) for key, value in result.items()}

    def __contains__(self, node_id) -> bool:
        return node_id in self._index

    def node(self, node_id: str) -> Node:
        try:
            return self._index[node_id]
        except KeyError:
            raise UnknownId(node_id, "no such node in graph %r" % self.name) from None

    def is_input(self, node_id: str) -> bool:
        return node_id in self._input_ids

    def shape_of(self, node_id: str) -> TensorShape:
        if node_id in self._input_ids:
            return self._input_ids[node_id].shape
        return self.node(node_id).out_shape

    def consumers_of(self, node_id: str) -> Tuple[str, ...]:
        return self.consumers.get(node_id, ())

    def fan_out(self, node_id: str) -> int:
        """Number of outgoing edges, counting each graph output use as one."""
        return len(self.consumers_of(node_id)) + self.outputs.count(node_id)

    def batch_norms(self) -> List[str]:
        return [node.id for node in self.nodes if node.layer_class is LayerClass.BATCH_NORM]

    @cached_property
    def fingerprint(self) -> str:
        digest = hashlib.sha256()

        def feed(*parts):
            for part in parts:
                digest.update(repr(part).encode("utf-8"))

        feed(self.name, [(i.id, i.shape.dims) for i in self.inputs], self.outputs)
        for node in self.nodes:
            feed(node.id, node.op, node.inputs, sorted(node.kind.attrs().items()))
            for name, array in sorted(node.kind.weights().items()):
                feed(name, array.shape)
                digest.update(array.tobytes())
        return digest.hexdigest()

    def rebuild(self, nodes: Iterable[Node], outputs: Optional[Iterable[str]] = None) -> "Graph":
        """Validate a modified node list against this graph's inputs."""
        return build_graph(
            self.name, self.inputs, nodes, self.outputs if outputs is None else outputs
        )


def _kahn(nodes: Sequence[Node], input_ids) -> List[str]:
    pending = {}
    dependents = defaultdict(list)
    for node in nodes:
        deps = {source for source in node.inputs if source not in input_ids}
        pending[node.id] = len(deps)
        for dep in deps:
            dependents[dep].append(node.id)
    ready = [node_id for node_id, count in pending.items() if count == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        node_id = heapq.heappop(ready)
        order.append(node_id)
        for dependent in dependents[node_id]:
            pending[dependent] -= 1
            if pending[dependent] == 0:
                heapq.heappush(ready, dependent)
    if len(order) < len(nodes):
        stuck = sorted(set(pending) - set(order))
        raise CycleDetected(stuck[0], "node is part of a cycle")
    return order


def _infer(nodes: Sequence[Node], input_shapes: Mapping[str, TensorShape]) -> List[Node]:
    shapes = dict(input_shapes)
    result = []
    for node in nodes:
        out_shape = node.kind.infer_shape(node.id, [shapes[source] for source in node.inputs])
        shapes[node.id] = out_shape
        result.append(Node(node.id, node.kind, node.inputs, out_shape))
    return result


def build_graph(
    name: str,
    inputs: Iterable,
    nodes: Iterable[Node],
    outputs: Iterable[str],
) -> Graph:
    """Validate a raw node list and return a Graph in canonical topological order.

    Parameters
    ----------
    name : str
        Graph name.
    inputs : iterable
        ``GraphInput`` values or ``(id, shape)`` pairs.
    nodes : iterable of Node
        Nodes in any order; ``out_shape`` is recomputed.
    outputs : iterable of str
        Ids of the nodes whose values the graph returns.

    Raises
    ------
    DuplicateId, UnknownId, ArityMismatch, CycleDetected, ShapeMismatch
    """
    graph_inputs = tuple(
        inp if isinstance(inp, GraphInput) else GraphInput(*inp) for inp in inputs
    )
    nodes = list(nodes)
    outputs = tuple(outputs)

    seen = set()
    for ident in [inp.id for inp in graph_inputs] + [node.id for node in nodes]:
        if ident in seen:
            raise DuplicateId(ident, "id is defined more than once")
        seen.add(ident)

    input_ids = {inp.id for inp in graph_inputs}
    for node in nodes:
        expected = node.kind.arity
        count = len(node.inputs)
        if (expected is None and count < 2) or (expected is not None and count != expected):
            raise ArityMismatch(
                node.id,
                "%s takes %s inputs, got %d"
                % (node.op, "at least 2" if expected is None else expected, count),
            )
        for source in node.inputs:
            if source not in seen:
                raise UnknownId(node.id, "input %r does not exist" % source)
    node_ids = seen - input_ids
    for output in outputs:
        if output not in node_ids:
            raise UnknownId(output, "graph output is not a node")

    order = _kahn(nodes, input_ids)
    by_id = {node.id: node for node in nodes}
    ordered = _infer(
        [by_id[node_id] for node_id in order], {inp.id: inp.shape for inp in graph_inputs}
    )
    return Graph(name, graph_inputs, tuple(ordered), outputs)


def topo_order(graph: Graph) -> List[str]:
    """Deterministic topological order, ties broken by id."""
    return _kahn(graph.nodes, {inp.id for inp in graph.inputs})


def infer_shapes(graph: Graph) -> Graph:
    nodes = _infer(graph.nodes, {inp.id: inp.shape for inp in graph.inputs})
    return Graph(graph.name, graph.inputs, tuple(nodes), graph.outputs)


def classify_node(node) -> LayerClass:
    """Layer class of a Node or NodeKind."""
    return node.layer_class


def param_count(graph: Graph) -> int:
    return sum(node.kind.param_count() for node in graph.nodes)


__all__ = [
    "Add",
    "ArityMismatch",
    "AvgPool2D",
    "BatchNorm",
    "Concat",
    "Conv2D",
    "CycleDetected",
    "Dense",
    "DuplicateId",
    "Flatten",
    "Graph",
    "GraphError",
    "GraphInput",
    "Identity",
    "LayerClass",
    "MaxPool2D",
    "NODE_KINDS",
    "Node",
    "NodeKind",
    "ReLU",
    "ShapeMismatch",
    "Sigmoid",
    "Tanh",
    "TensorShape",
    "UnknownId",
    "build_graph",
    "classify_node",
    "infer_shapes",
    "param_count",
    "topo_order",
]
