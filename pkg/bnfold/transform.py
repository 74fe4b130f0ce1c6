# coding: utf-8

# Copyright (c) bnfold developers.
# Distributed under the terms of the Modified BSD License.
"""Fold passes

Applies fold plans to graphs and drives the naive and the BaN-OFF passes.
Passes never modify a graph in place; they return a new one together with a
FoldReport.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from traitlets import Bool, Integer
from traitlets.config import LoggingConfigurable

from .affine import FoldError
from .analysis import (
    Direction,
    FoldDecision,
    FoldPlan,
    Reason,
    check_foldable,
    plan_fold,
    sequential_decision,
)
from .graph import Graph, Node, param_count


class StalePlan(FoldError):
    pass


@dataclass
class FoldReport:
    algorithm: str
    folded: List[Tuple[str, Direction]] = field(default_factory=list)
    skipped: List[Tuple[str, Reason]] = field(default_factory=list)
    params_before: int = 0
    params_after: int = 0
    plans: List[FoldPlan] = field(default_factory=list)

    @property
    def removed_percent(self) -> float:
        if not self.params_before:
            return 0.0
        return 100.0 * (self.params_before - self.params_after) / self.params_before

    @property
    def folded_ids(self) -> List[str]:
        return [bn_id for bn_id, _ in self.folded]

    def to_dict(self):
        return {
            "algorithm": self.algorithm,
            "folded": [{"bn_id": b, "direction": d.value} for b, d in self.folded],
            "skipped": [{"bn_id": b, "reason": r.value} for b, r in self.skipped],
            "params_before": self.params_before,
            "params_after": self.params_after,
            "removed_percent": self.removed_percent,
            "plans": [plan.to_dict() for plan in self.plans],
        }


def apply_fold(graph: Graph, plan: FoldPlan) -> Graph:
    """Delete the planned BatchNorm node and apply the leaf updates.

    Consumers of the deleted node (and graph outputs naming it) are rewired to
    its producer.
    """
    if graph.fingerprint != plan.fingerprint:
        raise StalePlan(plan.bn_id, "graph changed since the plan was made")
    producer = graph.node(plan.bn_id).inputs[0]

    def rewire(node_id):
        return producer if node_id == plan.bn_id else node_id

    nodes = []
    for node in graph.nodes:
        if node.id == plan.bn_id:
            continue
        update = plan.leaf_updates.get(node.id)
        kind = node.kind if update is None else update.kind
        nodes.append(Node(node.id, kind, tuple(rewire(s) for s in node.inputs)))
    return graph.rebuild(nodes, [rewire(o) for o in graph.outputs])


class NaiveFolder(LoggingConfigurable):
    """Folds each BatchNorm into an expressive node on a strictly sequential path."""

    algorithm = "naive"

    def decide(self, graph: Graph, bn_id: str) -> FoldDecision:
        return sequential_decision(graph, bn_id)

    def fold(self, graph: Graph, decision: FoldDecision) -> Tuple[Graph, FoldPlan]:
        plan = plan_fold(graph, decision.bn_id, decision)
        inner, outer = plan.partition
        self.log.info(
            "Folding %s %s (I: %s; O: %s)",
            decision.bn_id,
            decision.direction.value.lower(),
            ", ".join(sorted(inner)) or "-",
            ", ".join(sorted(outer)) or "-",
        )
        return apply_fold(graph, plan), plan

    def run(self, graph: Graph) -> Tuple[Graph, FoldReport]:
        report = FoldReport(self.algorithm, params_before=param_count(graph))
        current = graph
        for bn_id in graph.batch_norms():
            decision = self.decide(current, bn_id)
            if decision.foldable:
                current, plan = self.fold(current, decision)
                report.folded.append((bn_id, decision.direction))
                report.plans.append(plan)
            else:
                report.skipped.append((bn_id, decision.reason))
        return self._finish(current, report)

    def _finish(self, graph, report):
        report.params_after = param_count(graph)
        self.log.info(
            "%s pass on %s: folded %d, kept %d, removed %.3f%% of parameters",
            self.algorithm,
            graph.name,
            len(report.folded),
            len(report.skipped),
            report.removed_percent,
        )
        return graph, report


class BanOffFolder(NaiveFolder):
    """Folds every BatchNorm whose affine component allows it, until nothing changes."""

    algorithm = "banoff"

    strict_paper = Bool(
        False,
        config=True,
        help="Treat BatchNorm leaves as non-expressive instead of absorbing the fold into them",
    )

    scan_seed = Integer(
        None,
        allow_none=True,
        config=True,
        help="Shuffle the BatchNorm scan order of every round with this seed",
    )

    def decide(self, graph: Graph, bn_id: str) -> FoldDecision:
        return check_foldable(graph, bn_id, strict_paper=self.strict_paper)

    def run(self, graph: Graph) -> Tuple[Graph, FoldReport]:
        report = FoldReport(self.algorithm, params_before=param_count(graph))
        rng = None if self.scan_seed is None else np.random.default_rng(self.scan_seed)
        current = graph
        while True:
            order = current.batch_norms()
            if rng is not None:
                order = [order[i] for i in rng.permutation(len(order))]
            refused = {}
            for bn_id in order:
                decision = self.decide(current, bn_id)
                if decision.foldable:
                    current, plan = self.fold(current, decision)
                    report.folded.append((bn_id, decision.direction))
                    report.plans.append(plan)
                    break
                refused[bn_id] = decision.reason
            else:
                break
        report.skipped = [(bn_id, refused[bn_id]) for bn_id in current.batch_norms()]
        return self._finish(current, report)


def naive_pass(graph: Graph, config=None) -> Tuple[Graph, FoldReport]:
    return NaiveFolder(config=config).run(graph)


def banoff_pass(
    graph: Graph,
    strict_paper: bool = False,
    scan_seed: Optional[int] = None,
    config=None,
) -> Tuple[Graph, FoldReport]:
    folder = BanOffFolder(config=config)
    if strict_paper:
        folder.strict_paper = True
    if scan_seed is not None:
        folder.scan_seed = scan_seed
    return folder.run(graph)


__all__ = [
    "BanOffFolder",
    "FoldReport",
    "NaiveFolder",
    "StalePlan",
    "apply_fold",
    "banoff_pass",
    "naive_pass",
]
