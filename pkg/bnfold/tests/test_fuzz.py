"""Randomized checks of the fold passes against the interpreter."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ..analysis import Reason, check_foldable, plan_fold
from ..graph import (
    Add,
    AvgPool2D,
    Concat,
    Conv2D,
    Flatten,
    GraphInput,
    Identity,
    Node,
    ReLU,
    build_graph,
)
from ..models import Dims, generate
from ..transform import apply_fold, banoff_pass, naive_pass
from ..verify import check_equivalence
from .utils import bn_kind, dense_kind


def _random_graph(seed):
    return generate("random", Dims(nodes=6 + seed % 9), weight_seed=seed)[0]


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(1000))
def test_random_dag(seed):
    graph = _random_graph(seed)
    naive_graph, _ = naive_pass(graph)
    banoff_graph, _ = banoff_pass(graph)
    for folded in (naive_graph, banoff_graph):
        report = check_equivalence(graph, folded, n_samples=10, seed=seed)
        assert report.passed, report.max_l1

    remaining = banoff_graph.batch_norms()
    assert len(remaining) <= len(naive_graph.batch_norms())
    for bn_id in remaining:
        assert not check_foldable(banoff_graph, bn_id).foldable

    again, report = banoff_pass(banoff_graph)
    assert report.folded == []
    assert again == banoff_graph

    for scan_seed in range(3):
        shuffled, _ = banoff_pass(graph, scan_seed=scan_seed)
        assert len(shuffled.batch_norms()) == len(remaining)


@pytest.mark.parametrize("seed", range(25))
def test_random_dag_sample(seed):
    graph = _random_graph(seed)
    folded, _ = banoff_pass(graph)
    assert check_equivalence(graph, folded, n_samples=5, seed=seed).passed


_CHAIN_OPS = ["identity", "pool", "flatten", "add_self", "add_branch", "concat_branch"]


class _Chain:
    """Builds a random chain of parameterless affine operators between a BN and an expressive node."""

    def __init__(self, seed, input_shape):
        self.rng = np.random.default_rng(seed)
        self.inputs = [GraphInput("x", input_shape)]
        self.nodes = []
        self.shapes = {"x": self.inputs[0].shape}
        self.count = 0

    def add(self, prefix, kind, *inputs):
        self.count += 1
        node_id = "%s%d" % (prefix, self.count)
        self.nodes.append(Node(node_id, kind, inputs))
        probe = build_graph("probe", self.inputs, self.nodes, [node_id])
        self.shapes[node_id] = probe.shape_of(node_id)
        return node_id

    def expressive(self, source, out):
        shape = self.shapes[source]
        if shape.rank == 2:
            return self.add("dense", dense_kind(self.rng, out, shape.channels), source)
        kernel = self.rng.normal(size=(out, shape.channels, 1, 1))
        return self.add("conv", Conv2D(kernel, self.rng.normal(size=out)), source)

    def step(self, op, h):
        """Apply ``op`` to ``h``; returns the new head and whether a per-position transform was introduced."""
        shape = self.shapes[h]
        if op == "pool" and shape.rank == 4 and min(shape.spatial) >= 2:
            return self.add("pool", AvgPool2D(2, 2), h), False
        if op == "flatten" and shape.rank == 4:
            return self.add("flatten", Flatten(), h), shape.positions > 1
        if op == "add_self":
            return self.add("add", Add(), h, h), False
        if op == "add_branch":
            return self.add("add", Add(), h, self.expressive(h, shape.channels)), False
        if op == "concat_branch":
            branch = self.expressive(h, int(self.rng.integers(1, 4)))
            return self.add("concat", Concat(), h, branch), False
        return self.add("identity", Identity(), h), False


def _chain_graph(ops, seed, backward):
    channels = 1 + seed % 3
    chain = _Chain(seed, (0, channels, 4, 4))
    flattened = False
    if backward:
        h = chain.expressive("x", channels)
        for op in ops:
            h, spread = chain.step(op, h)
            flattened = flattened or spread
        bn = chain.add("bn", bn_kind(chain.rng, chain.shapes[h].channels), h)
        out = chain.add("relu", ReLU(), bn)
    else:
        h = chain.add("relu", ReLU(), "x")
        bn = h = chain.add("bn", bn_kind(chain.rng, channels), h)
        for op in ops:
            h, _ = chain.step(op, h)
        out = chain.expressive(h, 2)
    graph = build_graph("chain", chain.inputs, chain.nodes, [out])
    return graph, bn, flattened


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.sampled_from(_CHAIN_OPS), min_size=1, max_size=5),
    st.integers(0, 2**16),
    st.booleans(),
)
def test_push_chain_matches_interpreter(ops, seed, backward):
    graph, bn, flattened = _chain_graph(ops, seed, backward)
    decision = check_foldable(graph, bn)
    if flattened:
        # a per-feature transform cannot be pulled back through Flatten
        assert decision.reason is Reason.UNREPRESENTABLE
        return
    assert decision.foldable, decision.detail
    folded = apply_fold(graph, plan_fold(graph, bn, decision))
    report = check_equivalence(graph, folded, n_samples=5, seed=seed)
    assert report.passed, report.max_l1
