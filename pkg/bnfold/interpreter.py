# coding: utf-8

# Copyright (c) bnfold developers.
# Distributed under the terms of the Modified BSD License.
"""Reference interpreter

Straightforward numpy evaluation of a Graph, one node at a time in
topological order. It is the oracle every fold is checked against, so it
favours clarity over speed.
"""

from typing import Dict, Mapping, Sequence

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
    Identity,
    MaxPool2D,
    NodeKind,
    ReLU,
    ShapeMismatch,
    Sigmoid,
    Tanh,
)


def _channel_vector(vec, ndim):
    return vec.reshape((1, -1) + (1,) * (ndim - 2))


def _pool_windows(x, kh, kw):
    batch, channels, height, width = x.shape
    rows, cols = height // kh, width // kw
    x = x[:, :, : rows * kh, : cols * kw]
    return x.reshape(batch, channels, rows, kh, cols, kw)


def eval_node(kind: NodeKind, inputs: Sequence[np.ndarray]) -> np.ndarray:
    """Evaluate one operator on batched float64 inputs."""
    if isinstance(kind, Dense):
        (x,) = inputs
        return x @ kind.weight.T + kind.bias
    if isinstance(kind, Conv2D):
        (x,) = inputs
        _, _, kh, kw = kind.kernel.shape
        windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
        out = np.einsum("bchwij,ocij->bohw", windows, kind.kernel)
        return out + _channel_vector(kind.bias, 4)
    if isinstance(kind, BatchNorm):
        (x,) = inputs
        ndim = x.ndim
        centered = x - _channel_vector(kind.mu, ndim)
        scaled = centered * _channel_vector(kind.gamma / (kind.sigma + kind.epsilon), ndim)
        return scaled + _channel_vector(kind.beta, ndim)
    if isinstance(kind, ReLU):
        return np.maximum(inputs[0], 0.0)
    if isinstance(kind, Sigmoid):
        return np.exp(-np.logaddexp(0.0, -inputs[0]))
    if isinstance(kind, Tanh):
        return np.tanh(inputs[0])
    if isinstance(kind, MaxPool2D):
        return _pool_windows(inputs[0], kind.kh, kind.kw).max(axis=(3, 5))
    if isinstance(kind, AvgPool2D):
        return _pool_windows(inputs[0], kind.kh, kind.kw).mean(axis=(3, 5))
    if isinstance(kind, Add):
        out = inputs[0]
        for x in inputs[1:]:
            out = out + x
        return out
    if isinstance(kind, Concat):
        return np.concatenate(inputs, axis=1)
    if isinstance(kind, Flatten):
        (x,) = inputs
        return x.reshape(x.shape[0], -1)
    if isinstance(kind, Identity):
        return inputs[0]
    raise TypeError("No evaluation rule for %r" % (kind.op,))


def _check_bindings(graph: Graph, bindings: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    values = {}
    batch = None
    for inp in graph.inputs:
        if inp.id not in bindings:
            raise ShapeMismatch(inp.id, "graph input is not bound")
        value = np.asarray(bindings[inp.id], dtype=np.float64)
        if value.shape[1:] != inp.shape.dims[1:] or value.ndim != inp.shape.rank:
            raise ShapeMismatch(
                inp.id, "bound value has shape %s, expected %s" % (value.shape, inp.shape)
            )
        if batch is not None and value.shape[0] != batch:
            raise ShapeMismatch(inp.id, "batch size %d differs from %d" % (value.shape[0], batch))
        batch = value.shape[0]
        values[inp.id] = value
    return values


def eval_graph(graph: Graph, bindings: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Evaluate ``graph`` and return its outputs keyed by output id."""
    values = _check_bindings(graph, bindings)
    for node in graph.nodes:
        values[node.id] = eval_node(node.kind, [values[source] for source in node.inputs])
    return {output: values[output] for output in graph.outputs}


__all__ = ["eval_graph", "eval_node"]
