# coding: utf-8

# Copyright (c) bnfold developers.
# Distributed under the terms of the Modified BSD License.
"""bnfold command line

Exit codes: 0 success, 1 failed verification, 2 usage error, 3 I/O or parse
error.
"""

import json
import sys

from traitlets import Bool, Enum, TraitError, Unicode, Integer
from traitlets.config import Application
try:
    from traitlets.config.application import base_aliases, base_flags
except ImportError:  # renamed in newer traitlets
    from traitlets.config.application import (
        default_aliases as base_aliases,
        default_flags as base_flags,
    )

from ._version import __version__
from .analysis import check_foldable
from .bench import SUITES, bench_graph, emit_table, run_suite
from .models import ARCHETYPES, InvalidDims, generate, parse_dims
from .serialization import SerializationError, dumps, load_graph, save_graph
from .transform import BanOffFolder, NaiveFolder
from .verify import Benchmark, SignatureMismatch, VerificationFailed, Verifier


class UsageError(Exception):
    pass


def _write_json(path, doc):
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise SerializationError("cannot write %s: %s" % (path, e.strerror or e)) from e


class _Command(Application):
    version = __version__

    json_output = Bool(False, config=True, help="Print a machine-readable JSON report")

    def exit(self, exit_status=0):
        # bad options are usage errors, not verification failures
        super().exit(2 if exit_status == 1 else exit_status)

    def positionals(self, names, variadic=False):
        args = list(self.extra_args)
        if len(args) < len(names) or (len(args) > len(names) and not variadic):
            raise UsageError(
                "%s expects %s, got %d argument(s)"
                % (self.name, " ".join("<%s>" % n for n in names) or "no arguments", len(args))
            )
        return args


_json_flag = {"json": ({"_Command": {"json_output": True}}, "Print a machine-readable JSON report")}

_strict_flag = {
    "strict-paper": (
        {"BanOffFolder": {"strict_paper": True}},
        "Treat BatchNorm leaves as non-expressive",
    )
}


class GenerateApp(_Command):
    name = "bnfold-generate"
    description = "Generate an archetype graph. Archetypes: %s" % ", ".join(ARCHETYPES)

    output = Unicode("", config=True, help="Output file (default: stdout)")
    dims = Unicode("", config=True, help="Dimensions as key=value,... (channels, features, ...)")
    seed = Integer(0, config=True, help="Weight seed")

    aliases = {
        **base_aliases,
        ("o", "output"): "GenerateApp.output",
        "dims": "GenerateApp.dims",
        "seed": "GenerateApp.seed",
    }

    def start(self):
        (archetype,) = self.positionals(["archetype"])
        if archetype not in ARCHETYPES:
            raise UsageError(
                "unknown archetype %r; choose from %s" % (archetype, ", ".join(ARCHETYPES))
            )
        graph, _ = generate(archetype, parse_dims(self.dims), self.seed)
        if self.output:
            save_graph(graph, self.output)
            self.log.info("Wrote %s to %s", archetype, self.output)
        else:
            sys.stdout.write(dumps(graph))


class InspectApp(_Command):
    name = "bnfold-inspect"
    description = "Print the fold decision of every BatchNorm node"

    classes = [BanOffFolder]
    flags = {**base_flags, **_json_flag, **_strict_flag}

    def start(self):
        (path,) = self.positionals(["file"])
        graph = load_graph(path)
        strict = BanOffFolder(parent=self).strict_paper
        decisions = [check_foldable(graph, bn_id, strict) for bn_id in graph.batch_norms()]
        if self.json_output:
            doc = {"graph": graph.name, "decisions": [d.to_dict() for d in decisions]}
            print(json.dumps(doc, indent=2, sort_keys=True))
            return
        for decision in decisions:
            component = decision.component
            verdict = decision.direction.value if decision.foldable else "not foldable"
            print("%s: %s (%s)" % (decision.bn_id, verdict, decision.reason.value))
            if decision.detail:
                print("  detail: %s" % decision.detail)
            print("  C: %s" % ", ".join(sorted(component.members)))
            print("  C_in: %s" % ", ".join(sorted(component.part_in)))
            print("  C_out: %s" % ", ".join(sorted(component.part_out)))


class FoldApp(_Command):
    name = "bnfold-fold"
    description = "Fold BatchNorm nodes, verifying the result before writing it"

    algo = Enum(["naive", "banoff"], "banoff", config=True, help="Folding algorithm")
    output = Unicode("", config=True, help="Where to write the folded graph")
    report = Unicode("", config=True, help="Where to write the JSON fold report")

    classes = [NaiveFolder, BanOffFolder, Verifier]
    aliases = {
        **base_aliases,
        ("o", "output"): "FoldApp.output",
        "report": "FoldApp.report",
        "algo": "FoldApp.algo",
        "samples": "Verifier.samples",
        "seed": "Verifier.seed",
        "tol": "Verifier.tolerance",
    }
    flags = {**base_flags, **_json_flag, **_strict_flag}

    def start(self):
        (path,) = self.positionals(["file"])
        graph = load_graph(path)
        folder_class = BanOffFolder if self.algo == "banoff" else NaiveFolder
        folded, report = folder_class(parent=self).run(graph)
        equivalence = Verifier(parent=self).require(graph, folded)
        doc = {"fold": report.to_dict(), "equivalence": equivalence.to_dict()}
        if self.output:
            save_graph(folded, self.output)
        if self.report:
            _write_json(self.report, doc)
        if self.json_output:
            print(json.dumps(doc, indent=2, sort_keys=True))
        else:
            print(
                "%s: folded %d of %d BatchNorm nodes, removed %.2f%% of parameters, max L1 %.3g"
                % (
                    report.algorithm,
                    len(report.folded),
                    len(report.folded) + len(report.skipped),
                    report.removed_percent,
                    equivalence.max_l1,
                )
            )


class VerifyApp(_Command):
    name = "bnfold-verify"
    description = "Check that two graphs compute the same function"

    classes = [Verifier]
    aliases = {
        **base_aliases,
        "samples": "Verifier.samples",
        "seed": "Verifier.seed",
        "tol": "Verifier.tolerance",
    }
    flags = {**base_flags, **_json_flag}

    def start(self):
        first, second = self.positionals(["a", "b"])
        g1, g2 = load_graph(first), load_graph(second)
        report = Verifier(parent=self).check(g1, g2)
        if self.json_output:
            print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
        else:
            print(
                "%s: max L1 %.3g, max Linf %.3g over %d samples (tolerance %.3g)"
                % (
                    "pass" if report.passed else "FAIL",
                    report.max_l1,
                    report.max_linf,
                    report.samples,
                    report.tolerance,
                )
            )
        if not report.passed:
            raise VerificationFailed(report)


class BenchApp(_Command):
    name = "bnfold-bench"
    description = "Compare the naive and BaN-OFF passes (timings are desk-scale)"

    table_format = Enum(["csv", "md"], "md", config=True, help="Table format")
    suite = Unicode("toy", config=True, help="Built-in suite when no file is given: %s" % ", ".join(SUITES))
    dims = Unicode("", config=True, help="Dimensions of the built-in suite graphs")

    classes = [Benchmark, Verifier, BanOffFolder]
    aliases = {
        **base_aliases,
        "reps": "Benchmark.reps",
        "batch": "Benchmark.batch",
        "format": "BenchApp.table_format",
        "suite": "BenchApp.suite",
        "dims": "BenchApp.dims",
    }
    flags = {**base_flags, **_strict_flag}

    def start(self):
        files = self.positionals([], variadic=True)
        benchmark = Benchmark(parent=self)
        verifier = Verifier(parent=self)
        strict = BanOffFolder(parent=self).strict_paper
        if files:
            rows = [bench_graph(load_graph(f), benchmark, verifier, strict) for f in files]
        else:
            if self.suite not in SUITES:
                raise UsageError("unknown suite %r; choose from %s" % (self.suite, ", ".join(SUITES)))
            rows = run_suite(self.suite, parse_dims(self.dims), 0, benchmark, verifier, strict)
        sys.stdout.write(emit_table(rows, self.table_format))


class BnFoldApp(_Command):
    name = "bnfold"
    description = "Fold BatchNorm layers out of feed-forward computation graphs"

    subcommands = {
        "generate": (GenerateApp, GenerateApp.description),
        "inspect": (InspectApp, InspectApp.description),
        "fold": (FoldApp, FoldApp.description),
        "verify": (VerifyApp, VerifyApp.description),
        "bench": (BenchApp, BenchApp.description),
    }

    def start(self):
        if self.subapp is None:
            self.print_subcommands()
            raise UsageError("missing subcommand; choose from %s" % ", ".join(self.subcommands))
        return self.subapp.start()


def _status(code):
    if code is None:
        return 0
    return code if isinstance(code, int) else 2


def main(argv=None) -> int:
    app = BnFoldApp()
    try:
        app.initialize(argv)
        app.start()
    except SystemExit as e:
        return _status(e.code)
    except (VerificationFailed, SignatureMismatch) as e:
        app.log.error("Verification failed: %s", e)
        return 1
    except (UsageError, InvalidDims, TraitError) as e:
        app.log.error("%s", e)
        return 2
    except SerializationError as e:
        app.log.error("%s", e)
        return 3
    finally:
        if app.subapp is not None:
            type(app.subapp).clear_instance()
        BnFoldApp.clear_instance()
    return 0


__all__ = ["BnFoldApp", "main"]
