# coding: utf-8

# Copyright (c) bnfold developers.
# Distributed under the terms of the Modified BSD License.
"""Equivalence checking, decision auditing and metrics

The interpreter is the ground truth: two graphs are equivalent when they map
the same sampled inputs to outputs whose L1 distance stays within tolerance.
"""

import asyncio
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from traitlets import Float, Integer, TraitError, default, validate
from traitlets.config import LoggingConfigurable

from .analysis import Reason, check_foldable, plan_fold
from .async_utils import run_sync
from .graph import Graph, param_count
from .interpreter import eval_graph
from .transform import apply_fold


class SignatureMismatch(ValueError):
    pass


@dataclass(frozen=True)
class EquivalenceReport:
    samples: int
    max_l1: float
    max_linf: float
    passed: bool
    seed: int
    tolerance: float
    # fraction of rows whose argmax over the channel axis agrees
    prediction_agreement: float = 1.0

    def to_dict(self):
        return {
            "samples": self.samples,
            "max_l1": self.max_l1,
            "max_linf": self.max_linf,
            "pass": self.passed,
            "seed": self.seed,
            "tolerance": self.tolerance,
            "prediction_agreement": self.prediction_agreement,
        }


class VerificationFailed(Exception):
    def __init__(self, report: EquivalenceReport):
        super().__init__(
            "max L1 deviation %.3g exceeds tolerance %.3g" % (report.max_l1, report.tolerance)
        )
        self.report = report


def _check_signature(g1: Graph, g2: Graph):
    inputs1 = [(i.id, i.shape) for i in g1.inputs]
    inputs2 = [(i.id, i.shape) for i in g2.inputs]
    if inputs1 != inputs2:
        raise SignatureMismatch("graph inputs differ: %s vs %s" % (inputs1, inputs2))
    shapes1 = [g1.shape_of(o) for o in g1.outputs]
    shapes2 = [g2.shape_of(o) for o in g2.outputs]
    if shapes1 != shapes2:
        raise SignatureMismatch(
            "graph outputs differ: %s vs %s"
            % ([str(s) for s in shapes1], [str(s) for s in shapes2])
        )


def sample_bindings(graph: Graph, seed: int, index: int, batch: int) -> Dict[str, np.ndarray]:
    """Standard normal inputs for sample ``index``, independent of every other sample."""
    rng = np.random.default_rng([seed, index])
    return {
        inp.id: rng.standard_normal((batch,) + inp.shape.dims[1:]) for inp in graph.inputs
    }


class Verifier(LoggingConfigurable):
    samples = Integer(100, config=True, help="Number of sampled input batches")

    seed = Integer(config=True, help="Sampling seed (default: $BNFOLD_SEED, or 42)")

    tolerance = Float(
        1e-9,
        config=True,
        help="Largest accepted L1 deviation of one output tensor on one sampled batch",
    )

    batch = Integer(8, config=True, help="Rows per sampled input batch")

    workers = Integer(
        0,
        config=True,
        help="Evaluate samples on a thread pool of this size (0 evaluates them one by one)",
    )

    @default("seed")
    def _seed_default(self):
        value = os.environ.get("BNFOLD_SEED")
        if value is None:
            return 42
        try:
            return int(value)
        except ValueError:
            raise TraitError("BNFOLD_SEED must be an integer, got %r" % value) from None

    @validate("samples", "batch")
    def _validate_positive(self, proposal):
        if proposal.value < 1:
            raise TraitError("%s must be at least 1" % proposal.trait.name)
        return proposal.value

    @validate("workers")
    def _validate_workers(self, proposal):
        if proposal.value < 0:
            raise TraitError("workers cannot be negative")
        return proposal.value

    def _compare(self, g1: Graph, g2: Graph, index: int):
        bindings = sample_bindings(g1, self.seed, index, self.batch)
        out1 = eval_graph(g1, bindings)
        out2 = eval_graph(g2, bindings)
        l1 = linf = 0.0
        agree = rows = 0
        for id1, id2 in zip(g1.outputs, g2.outputs):
            a, b = out1[id1], out2[id2]
            diff = np.abs(a - b)
            sample_l1 = float(diff.sum())
            sample_linf = float(np.max(diff))
            if np.isnan(sample_l1) or np.isnan(sample_linf):
                sample_l1 = sample_linf = float("inf")
            l1 = max(l1, sample_l1)
            linf = max(linf, sample_linf)
            same = np.argmax(a, axis=1) == np.argmax(b, axis=1)
            agree += int(np.sum(same))
            rows += same.size
        if self.workers:
            self.log.debug("Sample %d: L1 %.3g", index, l1)
        return l1, linf, agree, rows

    async def check_async(self, g1: Graph, g2: Graph) -> EquivalenceReport:
        """Compare two graphs on sampled inputs.

        Samples are seeded individually, so the report does not depend on
        ``workers``.
        """
        _check_signature(g1, g2)
        if self.workers > 0:
            loop = asyncio.get_running_loop()
            with ThreadPoolExecutor(self.workers) as pool:
                results = await asyncio.gather(
                    *(
                        loop.run_in_executor(pool, self._compare, g1, g2, index)
                        for index in range(self.samples)
                    )
                )
        else:
            results = [self._compare(g1, g2, index) for index in range(self.samples)]
        max_l1 = max(r[0] for r in results)
        max_linf = max(r[1] for r in results)
        rows = sum(r[3] for r in results)
        agreement = sum(r[2] for r in results) / rows if rows else 1.0
        report = EquivalenceReport(
            samples=self.samples,
            max_l1=max_l1,
            max_linf=max_linf,
            passed=max_l1 <= self.tolerance,
            seed=self.seed,
            tolerance=self.tolerance,
            prediction_agreement=agreement,
        )
        self.log.debug(
            "Compared %s and %s over %d samples: max L1 %.3g, max Linf %.3g",
            g1.name,
            g2.name,
            self.samples,
            max_l1,
            max_linf,
        )
        return report

    check = run_sync(check_async)

    def require(self, g1: Graph, g2: Graph) -> EquivalenceReport:
        """Like :meth:`check`, but raise VerificationFailed when the graphs differ."""
        report = self.check(g1, g2)
        if not report.passed:
            self.log.warning(
                "Refusing transform of %s: max L1 %.3g > %.3g",
                g1.name,
                report.max_l1,
                report.tolerance,
            )
            raise VerificationFailed(report)
        return report


def check_equivalence(
    g1: Graph,
    g2: Graph,
    n_samples: int = 100,
    seed: Optional[int] = None,
    tolerance: float = 1e-9,
    batch: int = 8,
    workers: int = 0,
) -> EquivalenceReport:
    verifier = Verifier(samples=n_samples, tolerance=tolerance, batch=batch, workers=workers)
    if seed is not None:
        verifier.seed = seed
    return verifier.check(g1, g2)


@dataclass(frozen=True)
class AuditEntry:
    bn_id: str
    expected: bool
    foldable: bool
    reason: Reason
    equivalence: Optional[EquivalenceReport] = None

    @property
    def ok(self) -> bool:
        if self.expected != self.foldable:
            return False
        return self.equivalence is None or self.equivalence.passed


@dataclass
class AuditReport:
    graph: str
    entries: List[AuditEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(entry.ok for entry in self.entries)

    @property
    def mismatches(self) -> List[AuditEntry]:
        return [entry for entry in self.entries if not entry.ok]

    def to_dict(self):
        return {
            "graph": self.graph,
            "pass": self.passed,
            "entries": [
                {
                    "bn_id": e.bn_id,
                    "expected": e.expected,
                    "foldable": e.foldable,
                    "reason": e.reason.value,
                    "equivalence": e.equivalence.to_dict() if e.equivalence else None,
                }
                for e in self.entries
            ],
        }


def audit_decisions(
    graph: Graph,
    labels: Mapping[str, bool],
    verifier: Optional[Verifier] = None,
    strict_paper: bool = False,
) -> AuditReport:
    """Compare fold decisions to expected labels, folding every expected-foldable node."""
    verifier = verifier or Verifier()
    report = AuditReport(graph.name)
    for bn_id in sorted(labels, key=graph.position.get):
        decision = check_foldable(graph, bn_id, strict_paper=strict_paper)
        equivalence = None
        if labels[bn_id] and decision.foldable:
            folded = apply_fold(graph, plan_fold(graph, bn_id, decision))
            equivalence = verifier.check(graph, folded)
        report.entries.append(
            AuditEntry(bn_id, bool(labels[bn_id]), decision.foldable, decision.reason, equivalence)
        )
    return report


def param_stats(g_before: Graph, g_after: Graph) -> Tuple[int, float]:
    before = param_count(g_before)
    removed = before - param_count(g_after)
    return removed, (100.0 * removed / before if before else 0.0)


@dataclass(frozen=True)
class SpeedupMeasure:
    t_old: float
    t_new: float
    std_old: float = 0.0
    std_new: float = 0.0

    @property
    def ratio(self) -> float:
        if self.t_old == 0:
            return 0.0
        return (self.t_old - self.t_new) / self.t_old

    def to_dict(self):
        return {
            "t_old": self.t_old,
            "t_new": self.t_new,
            "std_old": self.std_old,
            "std_new": self.std_new,
            "ratio": self.ratio,
        }


class Benchmark(LoggingConfigurable):
    reps = Integer(20, config=True, help="Timed evaluations per graph (at least 5)")

    batch = Integer(8, config=True, help="Rows in the timed input batch")

    warmup = Integer(2, config=True, help="Untimed evaluations per graph before timing")

    seed = Integer(42, config=True, help="Seed of the timed input batch")

    @validate("reps")
    def _validate_reps(self, proposal):
        if proposal.value < 5:
            raise TraitError("reps must be at least 5, got %d" % proposal.value)
        return proposal.value

    @validate("batch")
    def _validate_batch(self, proposal):
        if proposal.value < 1:
            raise TraitError("batch must be at least 1")
        return proposal.value

    def measure(self, g_old: Graph, g_new: Graph) -> SpeedupMeasure:
        """Median wall time of both graphs on one input batch, timed alternately."""
        _check_signature(g_old, g_new)
        bindings = sample_bindings(g_old, self.seed, 0, self.batch)
        for _ in range(self.warmup):
            eval_graph(g_old, bindings)
            eval_graph(g_new, bindings)
        old, new = [], []
        for _ in range(self.reps):
            start = time.perf_counter()
            eval_graph(g_old, bindings)
            old.append(time.perf_counter() - start)
            start = time.perf_counter()
            eval_graph(g_new, bindings)
            new.append(time.perf_counter() - start)
        measure = SpeedupMeasure(
            float(np.median(old)), float(np.median(new)), float(np.std(old)), float(np.std(new))
        )
        self.log.debug(
            "Timed %s: %.3gs -> %.3gs (%d reps)", g_old.name, measure.t_old, measure.t_new, self.reps
        )
        return measure


def speedup_ratio(g_old: Graph, g_new: Graph, reps: int = 20, batch: int = 8) -> SpeedupMeasure:
    return Benchmark(reps=reps, batch=batch).measure(g_old, g_new)


__all__ = [
    "AuditEntry",
    "AuditReport",
    "Benchmark",
    "EquivalenceReport",
    "SignatureMismatch",
    "SpeedupMeasure",
    "VerificationFailed",
    "Verifier",
    "audit_decisions",
    "check_equivalence",
    "param_stats",
    "sample_bindings",
    "speedup_ratio",
]
