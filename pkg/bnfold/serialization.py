# coding: utf-8

# Copyright (c) bnfold developers.
# Distributed under the terms of the Modified BSD License.
"""JSON graph files

One JSON document per graph, written with one node per line so files diff
well. Floats are written in their shortest round-trip form, so saving and
loading preserves every weight bit.
"""

import json
from typing import Optional

import numpy as np

from .graph import NODE_KINDS, Graph, GraphError, GraphInput, Node, build_graph

FORMAT_VERSION = 1


class SerializationError(Exception):
    pass


class ParseError(SerializationError):
    def __init__(self, line: int, reason: str, source: Optional[str] = None):
        super().__init__("%s:%d: %s" % (source or "<string>", line, reason))
        self.line = line
        self.reason = reason
        self.source = source


class VersionMismatch(ParseError):
    pass


def graph_to_dict(graph: Graph):
    return {
        "format_version": FORMAT_VERSION,
        "name": graph.name,
        "inputs": [{"id": inp.id, "shape": list(inp.shape.dims)} for inp in graph.inputs],
        "nodes": [
            {
                "id": node.id,
                "op": node.op,
                "inputs": list(node.inputs),
                "attrs": node.kind.attrs(),
                "weights": {k: v.tolist() for k, v in node.kind.weights().items()},
            }
            for node in graph.nodes
        ],
        "outputs": list(graph.outputs),
    }


def dumps(graph: Graph) -> str:
    doc = graph_to_dict(graph)
    nodes = ",\n".join("    " + json.dumps(node) for node in doc["nodes"])
    lines = [
        "{",
        '  "format_version": %d,' % FORMAT_VERSION,
        '  "name": %s,' % json.dumps(doc["name"]),
        '  "inputs": %s,' % json.dumps(doc["inputs"]),
        '  "nodes": [',
    ]
    if nodes:
        lines.append(nodes)
    lines += [
        "  ],",
        '  "outputs": %s' % json.dumps(doc["outputs"]),
        "}",
    ]
    return "\n".join(lines) + "\n"


class _Reader:
    def __init__(self, text, source):
        self.text = text
        self.source = source

    def line_of(self, *needles) -> int:
        for needle in needles:
            index = self.text.find(needle)
            if index >= 0:
                return self.text.count("\n", 0, index) + 1
        return 1

    def fail(self, line, reason, cls=ParseError):
        raise cls(line, reason, self.source)

    def node_line(self, node_id):
        return self.line_of('"id": %s' % json.dumps(node_id), json.dumps(node_id))

    def require(self, mapping, key, kind, line, where):
        if not isinstance(mapping, dict) or key not in mapping:
            self.fail(line, "%s is missing %r" % (where, key))
        value = mapping[key]
        if not isinstance(value, kind):
            self.fail(line, "%s has a malformed %r" % (where, key))
        return value

    def read(self) -> Graph:
        try:
            doc = json.loads(self.text)
        except json.JSONDecodeError as e:
            self.fail(e.lineno, e.msg)
        if not isinstance(doc, dict):
            self.fail(1, "top level must be an object")
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            self.fail(
                self.line_of('"format_version"'),
                "unsupported format_version %r (expected %d)" % (version, FORMAT_VERSION),
                VersionMismatch,
            )
        name = self.require(doc, "name", str, 1, "graph")

        inputs = []
        defined = set()
        for entry in self.require(doc, "inputs", list, self.line_of('"inputs"'), "graph"):
            input_id = self.require(entry, "id", str, self.line_of('"inputs"'), "input")
            line = self.node_line(input_id)
            shape = self.require(entry, "shape", list, line, "input %r" % input_id)
            try:
                inputs.append(GraphInput(input_id, tuple(shape)))
            except (TypeError, ValueError) as e:
                self.fail(line, "input %r: %s" % (input_id, e))
            defined.add(input_id)

        nodes = []
        for entry in self.require(doc, "nodes", list, self.line_of('"nodes"'), "graph"):
            node_id = self.require(entry, "id", str, self.line_of('"nodes"'), "node")
            nodes.append(self._read_node(entry, node_id, defined))
            defined.add(node_id)

        outputs = self.require(doc, "outputs", list, self.line_of('"outputs"'), "graph")
        try:
            return build_graph(name, inputs, nodes, outputs)
        except GraphError as e:
            self.fail(self.node_line(e.node_id), str(e))

    def _read_node(self, entry, node_id, defined) -> Node:
        line = self.node_line(node_id)
        where = "node %r" % node_id
        op = self.require(entry, "op", str, line, where)
        if op not in NODE_KINDS:
            self.fail(
                self.line_of('"op": %s' % json.dumps(op), json.dumps(op)), "unknown op %r" % op
            )
        sources = self.require(entry, "inputs", list, line, where)
        for source in sources:
            if source not in defined:
                self.fail(line, "%s reads %r before it is defined" % (where, source))
        attrs = entry.get("attrs", {})
        weights = entry.get("weights", {})
        if not isinstance(attrs, dict) or not isinstance(weights, dict):
            self.fail(line, "%s has malformed attrs or weights" % where)
        try:
            arrays = {k: np.array(v, dtype=np.float64) for k, v in weights.items()}
            kind = NODE_KINDS[op](**attrs, **arrays)
        except (TypeError, ValueError) as e:
            self.fail(line, "invalid %s parameters for %s: %s" % (op, where, e))
        return Node(node_id, kind, tuple(sources))


def loads(text: str, source: Optional[str] = None) -> Graph:
    """Parse a graph document.

    Raises
    ------
    ParseError
        Malformed document, with the offending line.
    VersionMismatch
        Unsupported ``format_version``.
    """
    return _Reader(text, source).read()


def save_graph(graph: Graph, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(dumps(graph))
    except OSError as e:
        raise SerializationError("cannot write %s: %s" % (path, e.strerror or e)) from e


def load_graph(path) -> Graph:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise SerializationError("cannot read %s: %s" % (path, e.strerror or e)) from e
    return loads(text, str(path))


__all__ = [
    "FORMAT_VERSION",
    "ParseError",
    "SerializationError",
    "VersionMismatch",
    "dumps",
    "graph_to_dict",
    "load_graph",
    "loads",
    "save_graph",
]
