# coding: utf-8

# Copyright (c) bnfold developers.
# Distributed under the terms of the Modified BSD License.
"""Fold analysis

Decides whether a BatchNorm node can be removed, and compiles the parameter
updates that compensate for its removal.

The affine component of a BatchNorm node N is grown breadth first from N over
undirected adjacency: affine neighbours join, expressive nodes join but are
not expanded, non-affine neighbours stop the growth. The component splits into
an input part (grown from N's producer) and an output part (grown from N's
consumers). A part qualifies when it is more than ``{N}`` and all of its leaves
can absorb a per-channel affine transform.

Given a qualifying part, a push solver assigns to every node output in the part
a :class:`~bnfold.affine.ChannelAffine` relating its value before and after the
fold, and derives the leaf parameter updates from those relations:

- Backward folds keep ``new = A(old)``; N's producer must become ``BN(old)``
  while N's consumers see no change.
- Forward folds keep ``old = A(new)``; N's producer is unchanged while N's
  consumers see the BatchNorm transform on their input edge.
"""

import enum
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Tuple

import numpy as np
from traitlets.log import get_logger

from .affine import ChannelAffine, FoldError, NonInvertibleAffine
from .graph import (
    Add,
    AvgPool2D,
    BatchNorm,
    Concat,
    Flatten,
    Graph,
    Identity,
    LayerClass,
    Node,
    NodeKind,
)

#: Pseudo-neighbour recorded when a node is one of the graph outputs
GRAPH_OUTPUT = "<output>"

SIDES = ("in", "out")

# shifts are recomputed through sums and conjugations; scales are only ever copied
_RTOL = 1e-12
_ATOL = 1e-12


class Direction(enum.Enum):
    BACKWARD = "Backward"
    FORWARD = "Forward"

    @property
    def side(self) -> str:
        return "in" if self is Direction.BACKWARD else "out"


class Reason(enum.Enum):
    OK = "OK"
    SURROUNDED = "SurroundedByNonAffine"
    BLOCKED_LEAF = "BlockedLeaf"
    NON_INVERTIBLE = "NonInvertibleBN"
    UNREPRESENTABLE = "UnrepresentablePush"
    NON_SEQUENTIAL = "NonSequential"


# Reported reason when both directions fail: the one that got furthest
_RANK = {
    Reason.NON_SEQUENTIAL: 0,
    Reason.SURROUNDED: 1,
    Reason.BLOCKED_LEAF: 2,
    Reason.UNREPRESENTABLE: 3,
    Reason.NON_INVERTIBLE: 4,
}


class LeafClass(enum.Enum):
    EXPRESSIVE = "Expressive"
    BATCH_NORM_TERMINAL = "BatchNormTerminal"
    BLOCKED = "Blocked"


class NotABatchNorm(FoldError):
    pass


class UnsupportedPush(FoldError):
    """A transform cannot be pushed to where it needs to go."""

    def __init__(self, node_id, message, reason=Reason.UNREPRESENTABLE):
        super().__init__(node_id, message)
        self.reason = reason


def _check_side(side):
    if side not in SIDES:
        raise ValueError("side must be one of %s, got %r" % (SIDES, side))


@dataclass(frozen=True)
class Component:
    """Affine region around a BatchNorm node, split into input and output parts.

    ``halted_in``/``halted_out`` hold ``(member, neighbour)`` pairs where growth
    stopped: non-affine neighbours, graph inputs, :data:`GRAPH_OUTPUT`, and
    outside consumers of a terminal whose output feeds the part.
    """

    bn_id: str
    part_in: FrozenSet[str]
    part_out: FrozenSet[str]
    halted_in: FrozenSet[Tuple[str, str]]
    halted_out: FrozenSet[Tuple[str, str]]
    edges_in: FrozenSet[Tuple[str, str]]
    edges_out: FrozenSet[Tuple[str, str]]
    classes: Mapping[str, LayerClass]
    strict_paper: bool = False

    @property
    def members(self) -> FrozenSet[str]:
        return self.part_in | self.part_out

    @property
    def halted_at(self) -> FrozenSet[Tuple[str, str]]:
        return self.halted_in | self.halted_out

    def part(self, side: str) -> FrozenSet[str]:
        _check_side(side)
        return self.part_in if side == "in" else self.part_out

    def halted(self, side: str) -> FrozenSet[Tuple[str, str]]:
        _check_side(side)
        return self.halted_in if side == "in" else self.halted_out

    def edges(self, side: str) -> FrozenSet[Tuple[str, str]]:
        _check_side(side)
        return self.edges_in if side == "in" else self.edges_out

    def is_terminal(self, node_id: str) -> bool:
        """Whether a member absorbs transforms instead of passing them on."""
        if node_id == self.bn_id:
            return False
        cls = self.classes[node_id]
        if cls is LayerClass.EXPRESSIVE:
            return True
        return cls is LayerClass.BATCH_NORM and not self.strict_paper

    def to_dict(self):
        return {
            "bn_id": self.bn_id,
            "members": sorted(self.members),
            "part_in": sorted(self.part_in),
            "part_out": sorted(self.part_out),
            "halted_at": sorted([list(pair) for pair in self.halted_at]),
        }


@dataclass(frozen=True)
class LeafSet:
    side: str
    classes: Mapping[str, LeafClass]

    @property
    def leaves(self) -> FrozenSet[str]:
        return frozenset(self.classes)

    def __len__(self):
        return len(self.classes)

    def __contains__(self, node_id):
        return node_id in self.classes

    def __iter__(self):
        return iter(sorted(self.classes))

    def blocked(self) -> List[str]:
        return sorted(u for u, cls in self.classes.items() if cls is LeafClass.BLOCKED)


@dataclass(frozen=True)
class FoldDecision:
    bn_id: str
    foldable: bool
    direction: Optional[Direction]
    reason: Reason
    component: Component
    # O-leaf count of every qualifying direction
    o_leaves: Mapping[Direction, int] = field(default_factory=dict)
    detail: str = ""

    def to_dict(self):
        return {
            "bn_id": self.bn_id,
            "foldable": self.foldable,
            "direction": self.direction.value if self.direction else None,
            "reason": self.reason.value,
            "detail": self.detail,
            "o_leaves": {d.value: n for d, n in self.o_leaves.items()},
            "component": self.component.to_dict(),
        }


@dataclass(frozen=True)
class ParameterUpdate:
    """New operator for a leaf, with the transforms applied to its input and output."""

    node_id: str
    kind: NodeKind
    input_affine: Optional[ChannelAffine] = None
    output_affine: Optional[ChannelAffine] = None


@dataclass(frozen=True)
class FoldPlan:
    bn_id: str
    direction: Direction
    bn_affine: ChannelAffine
    edge_affines: Mapping[Tuple[str, str], ChannelAffine]
    leaf_updates: Mapping[str, ParameterUpdate]
    partition: Tuple[FrozenSet[str], FrozenSet[str]]
    fingerprint: str

    def to_dict(self):
        inner, outer = self.partition
        return {
            "bn_id": self.bn_id,
            "direction": self.direction.value,
            "I": sorted(inner),
            "O": sorted(outer),
            "updated": sorted(self.leaf_updates),
            "bn_affine": self.bn_affine.to_dict(),
            "edges": [
                dict(source=source, target=target, **affine.to_dict())
                for (source, target), affine in sorted(self.edge_affines.items())
            ],
        }


def _batch_norm(graph: Graph, bn_id: str) -> Node:
    node = graph.node(bn_id)
    if not isinstance(node.kind, BatchNorm):
        raise NotABatchNorm(bn_id, "node is a %s, not a BatchNorm" % node.op)
    return node


def _grow(graph: Graph, bn_id: str, side: str, strict_paper: bool):
    def terminal(node_id):
        cls = graph.node(node_id).layer_class
        if cls is LayerClass.EXPRESSIVE:
            return True
        return cls is LayerClass.BATCH_NORM and not strict_paper

    members = {bn_id}
    halted = set()
    queue = deque()

    def visit(member, neighbour):
        if graph.is_input(neighbour):
            halted.add((member, neighbour))
            return
        if graph.node(neighbour).layer_class is LayerClass.NON_AFFINE:
            halted.add((member, neighbour))
            return
        if neighbour in members:
            return
        members.add(neighbour)
        if not terminal(neighbour):
            queue.append(neighbour)

    bn = graph.node(bn_id)
    if side == "in":
        for source in bn.inputs:
            visit(bn_id, source)
    else:
        for consumer in graph.consumers_of(bn_id):
            visit(bn_id, consumer)
        if bn_id in graph.outputs:
            halted.add((bn_id, GRAPH_OUTPUT))

    while queue:
        member = queue.popleft()
        for source in graph.node(member).inputs:
            visit(member, source)
        for consumer in graph.consumers_of(member):
            visit(member, consumer)
        if member in graph.outputs:
            halted.add((member, GRAPH_OUTPUT))

    # A terminal feeding the part changes its output, so every outside reader is a boundary
    for member in members - {bn_id}:
        if not terminal(member):
            continue
        readers = graph.consumers_of(member)
        if not any(reader in members for reader in readers):
            continue
        for reader in readers:
            if reader not in members:
                halted.add((member, reader))
        if member in graph.outputs:
            halted.add((member, GRAPH_OUTPUT))

    edges = {
        (source, node.id)
        for node in graph.nodes
        if node.id in members
        for source in node.inputs
        if source in members
    }
    return frozenset(members), frozenset(halted), frozenset(edges)


def affine_component(graph: Graph, bn_id: str, strict_paper: bool = False) -> Component:
    """Grow the affine region around BatchNorm ``bn_id``.

    With ``strict_paper`` other BatchNorm nodes are expanded like parameterless
    affine nodes instead of acting as terminals.
    """
    _batch_norm(graph, bn_id)
    part_in, halted_in, edges_in = _grow(graph, bn_id, "in", strict_paper)
    part_out, halted_out, edges_out = _grow(graph, bn_id, "out", strict_paper)
    classes = {u: graph.node(u).layer_class for u in part_in | part_out}
    component = Component(
        bn_id,
        part_in,
        part_out,
        halted_in,
        halted_out,
        edges_in,
        edges_out,
        classes,
        strict_paper,
    )
    get_logger().debug(
        "Component of %s: %d input-side and %d output-side members",
        bn_id,
        len(part_in),
        len(part_out),
    )
    return component


def component_leaves(component: Component, side: str) -> LeafSet:
    """Leaves of one part: terminals, members of degree one, and members on a boundary."""
    part = component.part(side)
    neighbours = defaultdict(set)
    for producer, consumer in component.edges(side):
        neighbours[producer].add(consumer)
        neighbours[consumer].add(producer)
    boundary = {member for member, _ in component.halted(side)}

    classes = {}
    for member in part - {component.bn_id}:
        terminal = component.is_terminal(member)
        if not (terminal or len(neighbours[member]) <= 1 or member in boundary):
            continue
        layer_class = component.classes[member]
        if member in boundary:
            classes[member] = LeafClass.BLOCKED
        elif layer_class is LayerClass.EXPRESSIVE:
            classes[member] = LeafClass.EXPRESSIVE
        elif terminal:
            classes[member] = LeafClass.BATCH_NORM_TERMINAL
        else:
            classes[member] = LeafClass.BLOCKED
    return LeafSet(side, classes)


def _reachable(start, edges, reverse=False):
    adjacency = defaultdict(list)
    for producer, consumer in edges:
        if reverse:
            adjacency[consumer].append(producer)
        else:
            adjacency[producer].append(consumer)
    seen = {start}
    queue = deque([start])
    while queue:
        for nxt in adjacency[queue.popleft()]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def partition_io(component: Component, side: str) -> Tuple[FrozenSet[str], FrozenSet[str]]:
    """Split the leaves of a part into I (on a directed path with N) and O (the rest)."""
    leaves = component_leaves(component, side).leaves
    reach = _reachable(component.bn_id, component.edges(side), reverse=(side == "in"))
    inner = leaves & reach
    return frozenset(inner), frozenset(leaves - inner)


def _qualify(component: Component, side: str, leaves: LeafSet):
    bn_id = component.bn_id
    if component.part(side) == {bn_id}:
        return Reason.SURROUNDED, "%s has no affine neighbour on its %s side" % (bn_id, side)
    blocked = leaves.blocked()
    if blocked:
        return Reason.BLOCKED_LEAF, "%s-side leaves %s cannot absorb the transform" % (
            side,
            ", ".join(blocked),
        )
    if side == "out":
        readers = sorted(n for member, n in component.halted_out if member == bn_id)
        if readers:
            return Reason.BLOCKED_LEAF, "%s feeds %s directly" % (bn_id, ", ".join(readers))
    return Reason.OK, ""


def _same_scale(a: np.ndarray, b: np.ndarray) -> bool:
    return bool(np.array_equal(a, b))


def _agrees(a: ChannelAffine, b: ChannelAffine) -> bool:
    """Equal scales, and shifts equal up to rounding."""
    return _same_scale(a.scale, b.scale) and bool(
        np.allclose(a.shift, b.shift, rtol=_RTOL, atol=_ATOL)
    )


def _unchanged(a: ChannelAffine, b: ChannelAffine) -> bool:
    return _same_scale(a.scale, b.scale) and _same_scale(a.shift, b.shift)


class _PushSolver:
    """Assigns a relation to every node output of one part and checks it is consistent.

    Relations pinned by a demand are fixed; relations derived from inputs are
    recomputed whenever an input changes. A final pass re-checks the whole
    graph, so the worklist only has to find an assignment, not prove it.
    """

    def __init__(self, graph: Graph, component: Component, direction: Direction):
        self.graph = graph
        self.component = component
        self.direction = direction
        self.backward = direction is Direction.BACKWARD
        self.bn_id = component.bn_id
        bn = graph.node(self.bn_id)
        self.bn_affine = bn.kind.affine()
        self.producer = bn.inputs[0]
        self.part = component.part(direction.side)
        if self.backward:
            self.folded_edge = ChannelAffine.identity(self.bn_affine.channels)
        else:
            self.folded_edge = self.bn_affine
        self.relation: Dict[str, ChannelAffine] = {}
        self.pinned = set()
        self.max_steps = 64 * (len(graph.nodes) + 1)

    def _identity(self, node_id):
        return ChannelAffine.identity(self.graph.shape_of(node_id).channels)

    def _edge(self, source) -> ChannelAffine:
        if source == self.bn_id:
            return self.folded_edge
        relation = self.relation.get(source)
        return self._identity(source) if relation is None else relation

    def _is_fixed(self, node_id) -> bool:
        if self.graph.is_input(node_id) or node_id not in self.part:
            return True
        return not self.backward and node_id == self.producer

    def _is_known(self, node_id) -> bool:
        return node_id == self.bn_id or self._is_fixed(node_id) or node_id in self.pinned

    def _is_interior(self, node_id) -> bool:
        return (
            node_id in self.part
            and node_id != self.bn_id
            and not self.component.is_terminal(node_id)
        )

    def _outside(self, node_id) -> Reason:
        if self.graph.is_input(node_id) or node_id not in self.part:
            return Reason.BLOCKED_LEAF
        return Reason.UNREPRESENTABLE

    def solve(self) -> Dict[str, ParameterUpdate]:
        queue = deque()
        if self.backward:
            queue.append(("demand", self.producer, self.bn_affine))
        for consumer in dict.fromkeys(self.graph.consumers_of(self.bn_id)):
            queue.append(("changed", consumer, None))
        steps = 0
        while queue:
            steps += 1
            if steps > self.max_steps:
                raise UnsupportedPush(self.bn_id, "pushed transforms do not settle")
            event, node_id, affine = queue.popleft()
            if event == "demand":
                self._demand(node_id, affine, queue)
            else:
                self._changed(node_id, queue)
        self._validate()
        return self._leaf_updates()

    def _notify(self, node_id, queue):
        for consumer in dict.fromkeys(self.graph.consumers_of(node_id)):
            queue.append(("changed", consumer, None))

    def _demand(self, node_id, affine, queue):
        if node_id == self.bn_id:
            if not _agrees(affine, self.folded_edge):
                raise UnsupportedPush(node_id, "conflicting transforms demanded of the folded node")
            return
        if self._is_fixed(node_id):
            if not affine.is_identity():
                raise UnsupportedPush(
                    node_id, "output would have to change but is fixed", self._outside(node_id)
                )
            return
        if node_id in self.pinned:
            if not _agrees(self.relation[node_id], affine):
                raise UnsupportedPush(node_id, "conflicting transforms demanded")
            return
        self.pinned.add(node_id)
        self.relation[node_id] = affine
        if self._is_interior(node_id):
            for source, demanded in self._pull(self.graph.node(node_id), affine):
                queue.append(("demand", source, demanded))
        self._notify(node_id, queue)

    def _pull(self, node: Node, affine: ChannelAffine):
        """Input transforms that make ``node`` produce ``affine`` on its output."""
        kind = node.kind
        if isinstance(kind, (Identity, AvgPool2D)):
            return [(node.inputs[0], affine)]
        if isinstance(kind, Flatten):
            positions = self.graph.shape_of(node.inputs[0]).positions
            collapsed = affine.collapse(positions)
            if collapsed is None:
                raise UnsupportedPush(
                    node.id, "transform varies within a channel and cannot pass Flatten"
                )
            return [(node.inputs[0], collapsed)]
        if isinstance(kind, Concat):
            demands, start = [], 0
            for source in node.inputs:
                width = self.graph.shape_of(source).channels
                demands.append((source, affine.slice(start, start + width)))
                start += width
            return demands
        if isinstance(kind, Add):
            return self._pull_add(node, affine)
        if isinstance(kind, BatchNorm):
            return [(node.inputs[0], affine.conjugate_inverse(kind.affine(), node.id))]
        raise UnsupportedPush(node.id, "no push rule for %s" % kind.op)

    def _pull_add(self, node: Node, affine: ChannelAffine):
        # every operand takes the scale; the free operand first in topological order carries the shift
        known_shift = np.zeros(affine.channels)
        for source in node.inputs:
            if not self._is_known(source):
                continue
            edge = self._edge(source)
            if not _same_scale(edge.scale, affine.scale):
                raise UnsupportedPush(
                    node.id, "operand %s cannot take the demanded scale" % source,
                    self._outside(source),
                )
            known_shift = known_shift + edge.shift
        remainder = affine.shift - known_shift
        free = [s for s in dict.fromkeys(node.inputs) if not self._is_known(s)]
        if not free:
            if not np.allclose(remainder, 0.0, rtol=_RTOL, atol=_ATOL):
                raise UnsupportedPush(node.id, "no operand left to carry the shift")
            return []
        counts = Counter(node.inputs)
        carrier = min(free, key=self.graph.position.get)
        zeros = np.zeros(affine.channels)
        return [
            (
                source,
                ChannelAffine(
                    affine.scale, remainder / counts[source] if source == carrier else zeros
                ),
            )
            for source in free
        ]

    def _derive(self, node: Node, edges: List[ChannelAffine]) -> Optional[ChannelAffine]:
        """Output transform of an interior node given its input transforms."""
        kind = node.kind
        if isinstance(kind, (Identity, AvgPool2D)):
            return edges[0]
        if isinstance(kind, Flatten):
            return edges[0].repeat(self.graph.shape_of(node.inputs[0]).positions)
        if isinstance(kind, Concat):
            return ChannelAffine.concat(edges)
        if isinstance(kind, Add):
            scale = edges[0].scale
            for edge in edges[1:]:
                if not _same_scale(edge.scale, scale):
                    return None
            return ChannelAffine(scale, np.sum([edge.shift for edge in edges], axis=0))
        if isinstance(kind, BatchNorm):
            return edges[0].conjugate(kind.affine())
        raise UnsupportedPush(node.id, "no push rule for %s" % kind.op)

    def _changed(self, node_id, queue):
        if node_id == self.bn_id or node_id in self.pinned or not self._is_interior(node_id):
            return
        node = self.graph.node(node_id)
        edges = [self._edge(source) for source in node.inputs]
        if isinstance(node.kind, Add):
            target = next((e.scale for e in edges if np.any(e.scale != 1.0)), None)
            pending = False
            for source, edge in zip(node.inputs, edges):
                if target is None or _same_scale(edge.scale, target):
                    continue
                if self._is_known(source):
                    raise UnsupportedPush(
                        node_id, "operands carry different scales", self._outside(source)
                    )
                queue.append(("demand", source, ChannelAffine(target, np.zeros(len(target)))))
                pending = True
            if pending:
                return
        derived = self._derive(node, edges)
        if derived is None:
            raise UnsupportedPush(node_id, "operands carry different scales")
        previous = self.relation.get(node_id)
        self.relation[node_id] = derived
        if previous is None:
            previous = self._identity(node_id)
        if not _unchanged(previous, derived):
            self._notify(node_id, queue)

    def _validate(self):
        graph = self.graph
        for node in graph.nodes:
            if node.id == self.bn_id:
                continue
            edges = [self._edge(source) for source in node.inputs]
            if node.id in self.part:
                if self.component.is_terminal(node.id):
                    continue
                derived = self._derive(node, edges)
                current = self.relation.get(node.id)
                if current is None:
                    current = self._identity(node.id)
                if derived is None or not _agrees(derived, current):
                    raise UnsupportedPush(node.id, "pushed transforms disagree")
                continue
            for source, edge in zip(node.inputs, edges):
                if not edge.is_identity():
                    raise UnsupportedPush(
                        node.id,
                        "reads %s, which changes, but lies outside the region" % source,
                        Reason.BLOCKED_LEAF,
                    )
        for output in graph.outputs:
            if output == self.bn_id and self.backward:
                continue
            if not self._edge(output).is_identity():
                raise UnsupportedPush(output, "graph output would change", Reason.BLOCKED_LEAF)
        if self.backward and not _agrees(self._edge(self.producer), self.bn_affine):
            raise UnsupportedPush(
                self.producer, "cannot absorb the folded transform", self._outside(self.producer)
            )

    def _leaf_updates(self) -> Dict[str, ParameterUpdate]:
        updates = {}
        for node_id in sorted(self.part, key=self.graph.position.get):
            if not self.component.is_terminal(node_id):
                continue
            node = self.graph.node(node_id)
            rin = self._edge(node.inputs[0])
            rout = self.relation.get(node_id)
            in_changed = not rin.is_identity()
            out_changed = rout is not None and not rout.is_identity()
            if not (in_changed or out_changed):
                continue
            kind = node.kind
            if self.backward:
                if in_changed:
                    kind = kind.precompose(rin.inverse(node_id))
                if out_changed:
                    kind = kind.postcompose(rout)
            else:
                if in_changed:
                    kind = kind.precompose(rin)
                if out_changed:
                    kind = kind.postcompose(rout.inverse(node_id))
            updates[node_id] = ParameterUpdate(
                node_id, kind, rin if in_changed else None, rout if out_changed else None
            )
        return updates

    def edge_affines(self) -> Dict[Tuple[str, str], ChannelAffine]:
        result = {}
        for node in self.graph.nodes:
            if node.id == self.bn_id:
                continue
            for source in node.inputs:
                edge = self._edge(source)
                if not edge.is_identity():
                    result[(source, node.id)] = edge
        return result


def _try_directions(graph, component, directions, o_leaves, failures):
    for direction in directions:
        try:
            _PushSolver(graph, component, direction).solve()
        except NonInvertibleAffine as e:
            failures.append((Reason.NON_INVERTIBLE, str(e)))
        except UnsupportedPush as e:
            failures.append((e.reason, str(e)))
        else:
            get_logger().debug("%s folds %s", component.bn_id, direction.value.lower())
            return FoldDecision(component.bn_id, True, direction, Reason.OK, component, o_leaves)
    return None


def _refuse(component, failures, o_leaves):
    reason, detail = max(failures, key=lambda failure: _RANK[failure[0]])
    get_logger().debug("%s is not foldable: %s", component.bn_id, detail)
    return FoldDecision(component.bn_id, False, None, reason, component, o_leaves, detail)


def check_foldable(graph: Graph, bn_id: str, strict_paper: bool = False) -> FoldDecision:
    """Decide whether BatchNorm ``bn_id`` can be folded, and in which direction.

    Qualifying parts are tried in order of fewer O-leaves, Backward first on a
    tie; a part whose push fails falls back to the other one.
    """
    component = affine_component(graph, bn_id, strict_paper)
    failures = []
    o_leaves = {}
    for direction in Direction:
        leaves = component_leaves(component, direction.side)
        reason, detail = _qualify(component, direction.side, leaves)
        if reason is not Reason.OK:
            failures.append((reason, detail))
            continue
        o_leaves[direction] = len(partition_io(component, direction.side)[1])
    ordered = sorted(o_leaves, key=lambda d: (o_leaves[d], d is Direction.FORWARD))
    decision = _try_directions(graph, component, ordered, o_leaves, failures)
    return decision or _refuse(component, failures, o_leaves)


def _passes_through(graph: Graph, node: Node) -> bool:
    return (
        isinstance(node.kind, (Identity, AvgPool2D, Flatten))
        and len(graph.consumers_of(node.id)) == 1
        and node.id not in graph.outputs
    )


def _sequential_path(graph: Graph, bn: Node, direction: Direction):
    """Nodes between ``bn`` and the nearest expressive node on a strictly sequential path."""
    if len(graph.consumers_of(bn.id)) != 1 or bn.id in graph.outputs:
        return None
    path = []
    if direction is Direction.BACKWARD:
        current = bn.inputs[0]
        while not graph.is_input(current):
            node = graph.node(current)
            if node.layer_class is LayerClass.EXPRESSIVE:
                return path + [current] if graph.fan_out(current) == 1 else None
            if not _passes_through(graph, node):
                return None
            path.append(current)
            current = node.inputs[0]
        return None
    current = graph.consumers_of(bn.id)[0]
    while True:
        node = graph.node(current)
        if node.layer_class is LayerClass.EXPRESSIVE:
            return path + [current]
        if not _passes_through(graph, node):
            return None
        path.append(current)
        current = graph.consumers_of(current)[0]


def _path_component(graph: Graph, bn_id: str, direction: Direction, path) -> Component:
    members = frozenset([bn_id, *path])
    chain = [bn_id] + list(path)
    if direction is Direction.BACKWARD:
        edges = frozenset(zip(path, chain))
        parts = (members, frozenset([bn_id]))
        edge_sets = (edges, frozenset())
    else:
        edges = frozenset(zip(chain, path))
        parts = (frozenset([bn_id]), members)
        edge_sets = (frozenset(), edges)
    classes = {u: graph.node(u).layer_class for u in members}
    return Component(
        bn_id, parts[0], parts[1], frozenset(), frozenset(), edge_sets[0], edge_sets[1], classes
    )


def _has_affine_neighbour(graph: Graph, bn: Node) -> bool:
    neighbours = [s for s in bn.inputs if not graph.is_input(s)]
    neighbours += list(graph.consumers_of(bn.id))
    return any(graph.node(n).layer_class is not LayerClass.NON_AFFINE for n in neighbours)


def sequential_decision(graph: Graph, bn_id: str) -> FoldDecision:
    """Naive decision: fold only into an expressive node on a strictly sequential path.

    Backward is searched before forward.
    """
    bn = _batch_norm(graph, bn_id)
    failures = []
    for direction in Direction:
        path = _sequential_path(graph, bn, direction)
        if path is None:
            continue
        component = _path_component(graph, bn_id, direction, path)
        decision = _try_directions(graph, component, [direction], {direction: 0}, failures)
        if decision is not None:
            return decision
    if not failures:
        if _has_affine_neighbour(graph, bn):
            failures.append((Reason.NON_SEQUENTIAL, "no strictly sequential path to an expressive node"))
        else:
            failures.append((Reason.SURROUNDED, "%s has no affine neighbour" % bn_id))
    return _refuse(_path_component(graph, bn_id, Direction.BACKWARD, []), failures, {})


def plan_fold(graph: Graph, bn_id: str, decision: FoldDecision) -> FoldPlan:
    """Compile the leaf parameter updates that remove ``bn_id``.

    Raises
    ------
    FoldError
        The decision is not foldable or belongs to another node.
    NonInvertibleAffine, UnsupportedPush
        The decision no longer holds on ``graph``.
    """
    if decision.bn_id != bn_id:
        raise FoldError(bn_id, "decision was made for %s" % decision.bn_id)
    if not decision.foldable:
        raise FoldError(bn_id, "not foldable (%s)" % decision.reason.value)
    _batch_norm(graph, bn_id)
    solver = _PushSolver(graph, decision.component, decision.direction)
    updates = solver.solve()
    plan = FoldPlan(
        bn_id=bn_id,
        direction=decision.direction,
        bn_affine=solver.bn_affine,
        edge_affines=solver.edge_affines(),
        leaf_updates=updates,
        partition=partition_io(decision.component, decision.direction.side),
        fingerprint=graph.fingerprint,
    )
    get_logger().debug("Plan for %s updates %s", bn_id, ", ".join(sorted(updates)) or "nothing")
    return plan


__all__ = [
    "Component",
    "Direction",
    "FoldDecision",
    "FoldError",
    "FoldPlan",
    "GRAPH_OUTPUT",
    "LeafClass",
    "LeafSet",
    "NonInvertibleAffine",
    "NotABatchNorm",
    "ParameterUpdate",
    "Reason",
    "UnsupportedPush",
    "affine_component",
    "check_foldable",
    "component_leaves",
    "partition_io",
    "plan_fold",
    "sequential_decision",
]
