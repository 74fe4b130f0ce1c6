# coding: utf-8

# Copyright (c) bnfold developers.
# Distributed under the terms of the Modified BSD License.
"""Comparison tables of the naive and BaN-OFF passes"""

import csv
import io
from dataclasses import asdict, dataclass
from typing import Iterable, List, Optional, Sequence

from traitlets.log import get_logger

from .graph import Graph
from .models import Dims, generate
from .transform import banoff_pass, naive_pass
from .verify import Benchmark, Verifier

TIMING_NOTE = "desk-scale, interpreter-relative"

COLUMNS = (
    "model",
    "naive speedup %% (%s)" % TIMING_NOTE,
    "banoff speedup %% (%s)" % TIMING_NOTE,
    "% removed params",
    "BN folded (naive)",
    "BN folded (banoff)",
    "equivalence",
)

SUITES = {
    "toy": ("fig2a", "fig2b", "fig2c"),
    "resnet": ("resnet",),
}


@dataclass(frozen=True)
class BenchRow:
    model: str
    naive_speedup_percent: float
    banoff_speedup_percent: float
    removed_params_percent: float
    bn_folded_naive: int
    bn_folded_banoff: int
    equivalence_pass: bool

    def cells(self) -> List[str]:
        return [
            self.model,
            "%.2f" % self.naive_speedup_percent,
            "%.2f" % self.banoff_speedup_percent,
            "%.2f" % self.removed_params_percent,
            str(self.bn_folded_naive),
            str(self.bn_folded_banoff),
            "pass" if self.equivalence_pass else "fail",
        ]

    def to_dict(self):
        return asdict(self)


def _markdown_cell(text):
    return text.replace("|", "\\|")


def emit_table(rows: Sequence[BenchRow], format: str = "md") -> str:
    """Render rows as CSV or as a markdown table."""
    if not rows:
        raise ValueError("no rows to emit")
    if format == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in rows:
            writer.writerow(row.cells())
        return buffer.getvalue()
    if format == "md":
        lines = [
            "| " + " | ".join(COLUMNS) + " |",
            "|" + "|".join(" --- " for _ in COLUMNS) + "|",
        ]
        for row in rows:
            lines.append("| " + " | ".join(_markdown_cell(c) for c in row.cells()) + " |")
        return "\n".join(lines) + "\n"
    raise ValueError("unknown table format %r" % (format,))


def bench_graph(
    graph: Graph,
    benchmark: Optional[Benchmark] = None,
    verifier: Optional[Verifier] = None,
    strict_paper: bool = False,
) -> BenchRow:
    """Run both passes on ``graph``, verify both results and time them.

    Raises
    ------
    VerificationFailed
        Either folded graph is not equivalent to ``graph``.
    """
    benchmark = benchmark or Benchmark()
    verifier = verifier or Verifier()
    naive_graph, naive_report = naive_pass(graph)
    banoff_graph, banoff_report = banoff_pass(graph, strict_paper=strict_paper)
    naive_eq = verifier.require(graph, naive_graph)
    banoff_eq = verifier.require(graph, banoff_graph)
    naive_time = benchmark.measure(graph, naive_graph)
    banoff_time = benchmark.measure(graph, banoff_graph)
    row = BenchRow(
        model=graph.name,
        naive_speedup_percent=100.0 * naive_time.ratio,
        banoff_speedup_percent=100.0 * banoff_time.ratio,
        removed_params_percent=banoff_report.removed_percent,
        bn_folded_naive=len(naive_report.folded),
        bn_folded_banoff=len(banoff_report.folded),
        equivalence_pass=naive_eq.passed and banoff_eq.passed,
    )
    get_logger().info("Benchmarked %s: %s", graph.name, ", ".join(row.cells()[1:]))
    return row


def run_suite(
    name: str = "toy",
    dims: Optional[Dims] = None,
    weight_seed: int = 0,
    benchmark: Optional[Benchmark] = None,
    verifier: Optional[Verifier] = None,
    strict_paper: bool = False,
) -> List[BenchRow]:
    try:
        archetypes: Iterable[str] = SUITES[name]
    except KeyError:
        raise ValueError("unknown suite %r; choose from %s" % (name, ", ".join(SUITES))) from None
    return [
        bench_graph(generate(a, dims, weight_seed)[0], benchmark, verifier, strict_paper)
        for a in archetypes
    ]


__all__ = ["BenchRow", "COLUMNS", "SUITES", "bench_graph", "emit_table", "run_suite"]
