# coding: utf-8

# Copyright (c) bnfold developers.
# Distributed under the terms of the Modified BSD License.
"""Model archetypes

Deterministic toy graphs reproducing the BatchNorm placements that matter for
folding, each shipped with the expected fold labels.
"""

from dataclasses import dataclass, field, fields
from typing import Callable, Dict, FrozenSet, List, Mapping, Optional, Tuple

import numpy as np

from .graph import (
    Add,
    AvgPool2D,
    BatchNorm,
    Concat,
    Conv2D,
    Dense,
    Flatten,
    Graph,
    GraphInput,
    Identity,
    LayerClass,
    MaxPool2D,
    Node,
    NodeKind,
    ReLU,
    Sigmoid,
    Tanh,
    TensorShape,
    build_graph,
)


class InvalidDims(ValueError):
    pass


@dataclass(frozen=True)
class Dims:
    channels: int = 16
    features: int = 16
    width: int = 32
    size: int = 8
    classes: int = 10
    blocks: int = 3
    nodes: int = 12

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise InvalidDims("%s must be a positive integer, got %r" % (f.name, value))


def parse_dims(text: Optional[str]) -> Dims:
    """Parse ``"key=value,..."`` into Dims, defaults filling the rest."""
    values = {}
    known = {f.name for f in fields(Dims)}
    for item in (text or "").split(","):
        item = item.strip()
        if not item:
            continue
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in known:
            raise InvalidDims("cannot parse %r; expected one of %s as key=value" % (item, sorted(known)))
        try:
            values[key] = int(value)
        except ValueError:
            raise InvalidDims("%s must be an integer, got %r" % (key, value.strip())) from None
    return Dims(**values)


@dataclass(frozen=True)
class Labels:
    """Expected outcome per BatchNorm: check_foldable verdicts and the ids each pass folds."""

    foldable: Mapping[str, bool] = field(default_factory=dict)
    naive: FrozenSet[str] = frozenset()
    banoff: FrozenSet[str] = frozenset()


class _Builder:
    def __init__(self, name, seed):
        self.name = name
        self.rng = np.random.default_rng(seed)
        self.inputs: List[GraphInput] = []
        self.nodes: List[Node] = []
        self.shapes: Dict[str, TensorShape] = {}

    def input(self, node_id, dims):
        shape = TensorShape(dims)
        self.inputs.append(GraphInput(node_id, shape))
        self.shapes[node_id] = shape
        return node_id

    def add(self, node_id, kind: NodeKind, *inputs):
        self.shapes[node_id] = kind.infer_shape(node_id, [self.shapes[i] for i in inputs])
        self.nodes.append(Node(node_id, kind, inputs))
        return node_id

    def channels(self, node_id):
        return self.shapes[node_id].channels

    def dense(self, node_id, source, out):
        fan_in = self.channels(source)
        weight = self.rng.normal(0.0, 1.0 / np.sqrt(fan_in), (out, fan_in))
        bias = self.rng.normal(0.0, 0.1, out)
        return self.add(node_id, Dense(weight, bias), source)

    def conv(self, node_id, source, out, kh=3, kw=3):
        fan_in = self.channels(source)
        kernel = self.rng.normal(0.0, 1.0 / np.sqrt(fan_in * kh * kw), (out, fan_in, kh, kw))
        bias = self.rng.normal(0.0, 0.1, out)
        return self.add(node_id, Conv2D(kernel, bias), source)

    def expressive(self, node_id, source, out):
        if self.shapes[source].rank == 2:
            return self.dense(node_id, source, out)
        return self.conv(node_id, source, out, 1, 1)

    def batch_norm(self, node_id, source):
        c = self.channels(source)
        kind = BatchNorm(
            gamma=self.rng.uniform(0.5, 1.5, c),
            beta=self.rng.normal(0.0, 0.5, c),
            mu=self.rng.normal(0.0, 0.5, c),
            sigma=self.rng.uniform(0.5, 1.5, c),
            epsilon=1e-3,
        )
        return self.add(node_id, kind, source)

    def build(self, outputs) -> Graph:
        return build_graph(self.name, self.inputs, self.nodes, outputs)


ARCHETYPES: Dict[str, Callable] = {}


def _archetype(name):
    def register(func):
        ARCHETYPES[name] = func
        return func

    return register


def _needs_image(dims, archetype):
    if dims.size < 4:
        raise InvalidDims("%s needs size >= 4, got %d" % (archetype, dims.size))


def _all(ids, foldable=True):
    return {bn_id: foldable for bn_id in ids}


@_archetype("fig2a")
def _fig2a(b: _Builder, dims: Dims):
    """Sequential dense -> BN -> ReLU blocks."""
    h = b.input("x", (0, dims.features))
    bns = []
    for k in range(1, dims.blocks + 1):
        h = b.dense("dense%d" % k, h, dims.width)
        bns.append(b.batch_norm("bn%d" % k, h))
        h = b.add("relu%d" % k, ReLU(), bns[-1])
    return [h], Labels(_all(bns), frozenset(bns), frozenset(bns))


@_archetype("fig2b")
def _fig2b(b: _Builder, dims: Dims):
    """Sequential, with parameterless affine interiors and a BN trapped between activations."""
    _needs_image(dims, "fig2b")
    b.input("x", (0, 3, dims.size, dims.size))
    b.conv("conv", "x", dims.channels)
    b.add("pool", AvgPool2D(2, 2), "conv")
    b.batch_norm("bn1", "pool")
    b.add("relu1", ReLU(), "bn1")
    b.batch_norm("bn2", "relu1")
    b.add("relu2", ReLU(), "bn2")
    b.batch_norm("bn3", "relu2")
    b.add("flatten", Flatten(), "bn3")
    b.dense("dense1", "flatten", dims.width)
    b.add("relu3", ReLU(), "dense1")
    b.batch_norm("bn4", "relu3")
    b.add("identity", Identity(), "bn4")
    b.dense("dense2", "identity", dims.classes)
    folded = frozenset(["bn1", "bn3", "bn4"])
    labels = {"bn1": True, "bn2": False, "bn3": True, "bn4": True}
    return ["dense2"], Labels(labels, folded, folded)


@_archetype("fig2c")
def _fig2c(b: _Builder, dims: Dims):
    """Skip connections around both BNs, so nothing is strictly sequential."""
    b.input("x", (0, dims.features))
    b.dense("dense1", "x", dims.width)
    b.dense("dense2", "x", dims.width)
    b.add("add1", Add(), "dense1", "dense2")
    b.batch_norm("bn1", "add1")
    b.add("relu1", ReLU(), "bn1")
    b.batch_norm("bn2", "relu1")
    b.dense("dense3", "relu1", dims.width)
    b.add("add2", Add(), "bn2", "dense3")
    b.dense("dense4", "add2", dims.classes)
    return ["dense4"], Labels(_all(["bn1", "bn2"]), frozenset(), frozenset(["bn1", "bn2"]))


@_archetype("fig4")
def _fig4(b: _Builder, dims: Dims):
    """Two paths leave a shared node; the one without the BN ends in an activation."""
    _needs_image(dims, "fig4")
    b.input("x", (0, 3, dims.size, dims.size))
    b.conv("conv", "x", dims.channels)
    b.add("shared", Identity(), "conv")
    b.batch_norm("bn", "shared")
    b.add("relu_eta", ReLU(), "bn")
    b.add("pool_rho", AvgPool2D(2, 2), "shared")
    b.add("relu_rho", ReLU(), "pool_rho")
    return ["relu_eta", "relu_rho"], Labels({"bn": False})


def _fig5_trunk(b: _Builder, dims: Dims):
    b.input("x", (0, dims.features))
    b.dense("dense1", "x", dims.width)
    b.dense("dense2", "dense1", dims.width)
    b.dense("dense3", "dense1", dims.width)
    b.add("add", Add(), "dense2", "dense3")
    b.add("identity", Identity(), "add")
    b.batch_norm("bn", "identity")
    b.add("relu1", ReLU(), "bn")


@_archetype("fig5a")
def _fig5a(b: _Builder, dims: Dims):
    """Junction whose input part has two I-leaves and one O-leaf."""
    _fig5_trunk(b, dims)
    b.dense("dense4", "identity", dims.width)
    b.add("relu2", ReLU(), "dense4")
    return ["relu1", "relu2"], Labels({"bn": True}, frozenset(), frozenset(["bn"]))


@_archetype("fig5b")
def _fig5b(b: _Builder, dims: Dims):
    """Like fig5a, but an activation reads the junction directly."""
    _fig5_trunk(b, dims)
    b.add("relu2", ReLU(), "identity")
    return ["relu1", "relu2"], Labels({"bn": False})


@_archetype("resnet")
def _resnet(b: _Builder, dims: Dims):
    """Residual blocks with 1x1 projection shortcuts and a BN after every Add."""
    _needs_image(dims, "resnet")
    b.input("x", (0, 3, dims.size, dims.size))
    b.conv("stem_conv", "x", dims.channels)
    b.batch_norm("stem_bn", "stem_conv")
    h = b.add("stem_relu", ReLU(), "stem_bn")
    naive = ["stem_bn"]
    banoff = ["stem_bn"]
    for k in range(1, dims.blocks + 1):
        p = "b%d_" % k
        b.conv(p + "conv_a", h, dims.channels, 1, 1)
        b.batch_norm(p + "bn_a", p + "conv_a")
        b.add(p + "relu_a", ReLU(), p + "bn_a")
        b.conv(p + "conv_b", p + "relu_a", dims.channels, 1, 1)
        b.batch_norm(p + "bn_b", p + "conv_b")
        b.conv(p + "conv_s", h, dims.channels, 1, 1)
        b.add(p + "add", Add(), p + "bn_b", p + "conv_s")
        b.batch_norm(p + "bn_out", p + "add")
        h = b.add(p + "relu_out", ReLU(), p + "bn_out")
        naive += [p + "bn_a", p + "bn_b"]
        banoff += [p + "bn_a", p + "bn_b", p + "bn_out"]
    b.add("pool", AvgPool2D(2, 2), h)
    b.add("flatten", Flatten(), "pool")
    b.dense("dense", "flatten", dims.classes)
    return ["dense"], Labels(_all(banoff), frozenset(naive), frozenset(banoff))


# Relative frequency of each production of the random grammar
_RANDOM_OPS = {
    "expressive": 3,
    "bn": 3,
    "act": 2,
    "identity": 1,
    "pool": 1,
    "flatten": 1,
    "add": 2,
    "concat": 1,
}

_MAX_CONCAT_CHANNELS = 32


def _pick_source(b: _Builder, available, step):
    if step == 0:
        return "x"
    if b.rng.random() < 0.7:
        return available[-1 - int(b.rng.integers(min(3, len(available))))]
    return available[int(b.rng.integers(len(available)))]


def _random_step(b: _Builder, step, source, available, force_bn):
    shape = b.shapes[source]
    image = shape.rank == 4
    fits_window = image and min(shape.spatial) >= 2
    partners_add = [a for a in available if b.shapes[a] == shape]
    partners_concat = [
        a
        for a in available
        if b.shapes[a].rank == shape.rank
        and b.shapes[a].spatial == shape.spatial
        and b.shapes[a].channels + shape.channels <= _MAX_CONCAT_CHANNELS
    ]
    options = {
        "expressive": True,
        "bn": True,
        "act": True,
        "identity": True,
        "pool": fits_window,
        "flatten": image,
        "add": bool(partners_add),
        "concat": bool(partners_concat),
    }
    if force_bn:
        choice = "bn"
    else:
        names = [name for name, ok in options.items() if ok]
        weights = np.array([_RANDOM_OPS[name] for name in names], dtype=float)
        choice = names[int(b.rng.choice(len(names), p=weights / weights.sum()))]

    prefix = "n%02d_" % step
    if choice == "expressive":
        out = int(b.rng.integers(2, 9))
        if image:
            k = 3 if min(shape.spatial) >= 3 and b.rng.random() < 0.5 else 1
            return b.conv(prefix + "conv", source, out, k, k)
        return b.dense(prefix + "dense", source, out)
    if choice == "bn":
        return b.batch_norm(prefix + "bn", source)
    if choice == "act":
        acts = [ReLU, Sigmoid, Tanh] + ([MaxPool2D] if fits_window else [])
        kind = acts[int(b.rng.integers(len(acts)))]
        name = kind.op.lower()
        return b.add(prefix + name, kind(2, 2) if kind is MaxPool2D else kind(), source)
    if choice == "identity":
        return b.add(prefix + "identity", Identity(), source)
    if choice == "pool":
        return b.add(prefix + "avgpool", AvgPool2D(2, 2), source)
    if choice == "flatten":
        return b.add(prefix + "flatten", Flatten(), source)
    if choice == "add":
        other = partners_add[int(b.rng.integers(len(partners_add)))]
        return b.add(prefix + "add", Add(), source, other)
    other = partners_concat[int(b.rng.integers(len(partners_concat)))]
    return b.add(prefix + "concat", Concat(), source, other)


@_archetype("random")
def _random_dag(b: _Builder, dims: Dims):
    """Random DAG over the whole operator set, with at least one BatchNorm."""
    if b.rng.random() < 0.5 and dims.size >= 2:
        b.input("x", (0, 3, dims.size, dims.size))
    else:
        b.input("x", (0, dims.features))
    available = []
    made_bn = False
    for step in range(dims.nodes):
        source = _pick_source(b, available, step)
        force_bn = not made_bn and step == dims.nodes - 1
        node_id = _random_step(b, step, source, available + ["x"], force_bn)
        made_bn = made_bn or isinstance(b.nodes[-1].kind, BatchNorm)
        available.append(node_id)

    consumed = {s for node in b.nodes for s in node.inputs}
    dangling = [node for node in b.nodes if node.id not in consumed]
    outputs = [node.id for node in dangling]
    if all(node.layer_class is LayerClass.NON_AFFINE for node in dangling):
        last = outputs[-1]
        head = b.expressive("n%02d_head" % dims.nodes, last, int(b.rng.integers(2, 9)))
        outputs = outputs[:-1] + [head]
    return outputs, Labels()


def generate(archetype: str, dims: Optional[Dims] = None, weight_seed: int = 0) -> Tuple[Graph, Labels]:
    """Build archetype ``archetype`` with weights drawn from ``weight_seed``.

    Raises
    ------
    ValueError
        Unknown archetype.
    InvalidDims
        Dimensions the archetype cannot be built with.
    """
    try:
        build = ARCHETYPES[archetype]
    except KeyError:
        raise ValueError(
            "unknown archetype %r; choose from %s" % (archetype, ", ".join(ARCHETYPES))
        ) from None
    dims = dims or Dims()
    builder = _Builder(archetype, weight_seed)
    outputs, labels = build(builder, dims)
    return builder.build(outputs), labels


__all__ = ["ARCHETYPES", "Dims", "InvalidDims", "Labels", "generate", "parse_dims"]
