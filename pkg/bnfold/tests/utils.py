"""Small hand-built graphs and assertions shared by the tests."""

from unittest import TestCase

import numpy as np

from ..graph import (
    Add,
    BatchNorm,
    Dense,
    GraphInput,
    Node,
    ReLU,
    build_graph,
)
from ..verify import check_equivalence


def dense_kind(rng, out, inp):
    return Dense(rng.normal(size=(out, inp)), rng.normal(size=out))


def bn_kind(rng, channels, epsilon=1e-3):
    return BatchNorm(
        gamma=rng.uniform(0.5, 1.5, channels),
        beta=rng.normal(size=channels),
        mu=rng.normal(size=channels),
        sigma=rng.uniform(0.5, 1.5, channels),
        epsilon=epsilon,
    )


def dense_bn_relu(seed=0, width=4, features=3):
    """x -> dense -> bn -> relu"""
    rng = np.random.default_rng(seed)
    nodes = [
        Node("dense", dense_kind(rng, width, features), ("x",)),
        Node("bn", bn_kind(rng, width), ("dense",)),
        Node("relu", ReLU(), ("bn",)),
    ]
    return build_graph("dense_bn_relu", [GraphInput("x", (0, features))], nodes, ["relu"])


def relu_bn_dense(seed=0, width=4, features=3):
    """x -> relu -> bn -> dense"""
    rng = np.random.default_rng(seed)
    nodes = [
        Node("relu", ReLU(), ("x",)),
        Node("bn", bn_kind(rng, features), ("relu",)),
        Node("dense", dense_kind(rng, width, features), ("bn",)),
    ]
    return build_graph("relu_bn_dense", [GraphInput("x", (0, features))], nodes, ["dense"])


def trapped_bn(seed=0, width=4):
    """x -> relu -> bn -> relu; nothing to fold into"""
    rng = np.random.default_rng(seed)
    nodes = [
        Node("relu1", ReLU(), ("x",)),
        Node("bn", bn_kind(rng, width), ("relu1",)),
        Node("relu2", ReLU(), ("bn",)),
    ]
    return build_graph("trapped", [GraphInput("x", (0, width))], nodes, ["relu2"])


def add_of_denses(seed=0, width=4, features=3):
    """Two dense layers summed, then BN and ReLU: the BN folds backward through Add."""
    rng = np.random.default_rng(seed)
    nodes = [
        Node("dense1", dense_kind(rng, width, features), ("x",)),
        Node("dense2", dense_kind(rng, width, features), ("x",)),
        Node("add", Add(), ("dense1", "dense2")),
        Node("bn", bn_kind(rng, width), ("add",)),
        Node("relu", ReLU(), ("bn",)),
    ]
    return build_graph("add_of_denses", [GraphInput("x", (0, features))], nodes, ["relu"])


class EquivalenceAssertions(TestCase):
    # Prevent the base class from being collected directly
    __test__ = False

    def assertEquivalent(self, g1, g2, samples=20):
        report = check_equivalence(g1, g2, n_samples=samples, seed=7)
        self.assertTrue(report.passed, "max L1 %.3g" % report.max_l1)
        return report
