# coding: utf-8

# Copyright (c) bnfold developers.
# Distributed under the terms of the Modified BSD License.
"""bnfold - fold BatchNorm layers into neighbouring affine layers
"""

from ._version import __version__

from .affine import ChannelAffine, FoldError, NonInvertibleAffine
from .analysis import (
    Component,
    Direction,
    FoldDecision,
    FoldPlan,
    LeafClass,
    NotABatchNorm,
    Reason,
    UnsupportedPush,
    affine_component,
    check_foldable,
    component_leaves,
    partition_io,
    plan_fold,
    sequential_decision,
)
from .graph import (
    Graph,
    GraphError,
    GraphInput,
    LayerClass,
    Node,
    TensorShape,
    build_graph,
    classify_node,
    infer_shapes,
    param_count,
    topo_order,
)
from .interpreter import eval_graph, eval_node
from .models import ARCHETYPES, Dims, generate
from .serialization import load_graph, loads, dumps, save_graph
from .transform import BanOffFolder, FoldReport, NaiveFolder, apply_fold, banoff_pass, naive_pass
from .verify import (
    Benchmark,
    EquivalenceReport,
    Verifier,
    VerificationFailed,
    audit_decisions,
    check_equivalence,
    param_stats,
    speedup_ratio,
)

__all__ = [
    "__version__",
    "ARCHETYPES",
    "BanOffFolder",
    "Benchmark",
    "ChannelAffine",
    "Component",
    "Dims",
    "Direction",
    "EquivalenceReport",
    "FoldDecision",
    "FoldError",
    "FoldPlan",
    "FoldReport",
    "Graph",
    "GraphError",
    "GraphInput",
    "LayerClass",
    "LeafClass",
    "NaiveFolder",
    "Node",
    "NonInvertibleAffine",
    "NotABatchNorm",
    "Reason",
    "TensorShape",
    "UnsupportedPush",
    "VerificationFailed",
    "Verifier",
    "affine_component",
    "apply_fold",
    "audit_decisions",
    "banoff_pass",
    "build_graph",
    "check_equivalence",
    "check_foldable",
    "classify_node",
    "component_leaves",
    "dumps",
    "eval_graph",
    "eval_node",
    "generate",
    "infer_shapes",
    "load_graph",
    "loads",
    "naive_pass",
    "param_count",
    "param_stats",
    "partition_io",
    "plan_fold",
    "save_graph",
    "sequential_decision",
    "speedup_ratio",
    "topo_order",
]
