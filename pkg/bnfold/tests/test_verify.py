import asyncio
from unittest import TestCase

import numpy as np
import pytest
from traitlets import TraitError
from traitlets.config.loader import Config

from ..graph import Dense, GraphInput, Node, build_graph
from ..models import generate
from ..transform import banoff_pass
from ..verify import (
    Benchmark,
    EquivalenceReport,
    SignatureMismatch,
    SpeedupMeasure,
    VerificationFailed,
    Verifier,
    audit_decisions,
    check_equivalence,
    param_stats,
    sample_bindings,
    speedup_ratio,
)
from .utils import bn_kind, dense_bn_relu, dense_kind, relu_bn_dense


def _perturbed(graph, node_id, delta):
    nodes = []
    for node in graph.nodes:
        kind = node.kind
        if node.id == node_id:
            kind = Dense(kind.weight, kind.bias + delta)
        nodes.append(Node(node.id, kind, node.inputs))
    return graph.rebuild(nodes)


class TestCheckEquivalence(TestCase):
    def test_identical_graphs(self):
        graph = dense_bn_relu()
        report = check_equivalence(graph, graph, n_samples=10, seed=3)
        self.assertTrue(report.passed)
        self.assertEqual(report.max_l1, 0.0)
        self.assertEqual(report.samples, 10)
        self.assertEqual(report.seed, 3)
        self.assertEqual(report.prediction_agreement, 1.0)

    def test_folded_graph(self):
        graph, _ = generate("fig2c")
        folded, _ = banoff_pass(graph)
        report = check_equivalence(graph, folded, n_samples=10)
        self.assertTrue(report.passed)
        self.assertLess(report.max_l1, 1e-9)

    def test_detects_a_perturbation(self):
        graph = relu_bn_dense()
        changed = _perturbed(graph, "dense", 1e-3)
        report = check_equivalence(graph, changed, n_samples=4)
        self.assertFalse(report.passed)
        # each of the 8 rows shifts by 1e-3 on each of the four outputs
        self.assertAlmostEqual(report.max_l1, 3.2e-2, places=12)
        self.assertAlmostEqual(report.max_linf, 1e-3, places=12)

    def test_l1_sums_over_the_batch(self):
        graph = relu_bn_dense()
        changed = _perturbed(graph, "dense", 1e-3)
        for batch in (1, 4):
            report = check_equivalence(graph, changed, n_samples=2, batch=batch)
            self.assertAlmostEqual(report.max_l1, 4e-3 * batch, places=12)

    def test_symmetric(self):
        graph, _ = generate("fig2c")
        folded, _ = banoff_pass(graph)
        changed = _perturbed(relu_bn_dense(), "dense", 1e-3)
        for g1, g2 in ((graph, folded), (relu_bn_dense(), changed)):
            forward = check_equivalence(g1, g2, n_samples=5)
            backward = check_equivalence(g2, g1, n_samples=5)
            self.assertEqual(forward.passed, backward.passed)
            self.assertEqual(forward, backward)

    def test_l1_scales_with_input_magnitude(self):
        rng = np.random.default_rng(0)
        weight = rng.normal(size=(4, 3))
        bn = bn_kind(rng, 4)
        head = dense_kind(rng, 2, 4)

        def chain(gain, delta):
            nodes = [
                Node("gain", Dense(gain * np.eye(3), np.zeros(3)), ("x",)),
                Node("dense", Dense(weight + delta, np.zeros(4)), ("gain",)),
                Node("bn", bn, ("dense",)),
                Node("head", head, ("bn",)),
            ]
            return build_graph("affine_chain", [GraphInput("x", (0, 3))], nodes, ["head"])

        delta = np.zeros((4, 3))
        delta[1, 2] = 1e-3
        small = check_equivalence(chain(1.0, 0.0), chain(1.0, delta), n_samples=5)
        large = check_equivalence(chain(10.0, 0.0), chain(10.0, delta), n_samples=5)
        self.assertGreater(small.max_l1, 0.0)
        np.testing.assert_allclose(large.max_l1, 10.0 * small.max_l1, rtol=1e-9)

    def test_nan_never_passes(self):
        graph = relu_bn_dense()
        changed = _perturbed(graph, "dense", np.nan)
        report = check_equivalence(graph, changed, n_samples=2)
        self.assertFalse(report.passed)
        self.assertEqual(report.max_l1, float("inf"))

    def test_signature_mismatch(self):
        with pytest.raises(SignatureMismatch):
            check_equivalence(dense_bn_relu(features=3), dense_bn_relu(features=2))
        with pytest.raises(SignatureMismatch):
            check_equivalence(dense_bn_relu(width=3), dense_bn_relu(width=4))

    def test_deterministic_samples(self):
        graph = dense_bn_relu()
        a = sample_bindings(graph, 1, 5, 4)
        b = sample_bindings(graph, 1, 5, 4)
        c = sample_bindings(graph, 1, 6, 4)
        np.testing.assert_array_equal(a["x"], b["x"])
        self.assertFalse(np.array_equal(a["x"], c["x"]))
        self.assertEqual(a["x"].shape, (4, 3))

    def test_workers_do_not_change_the_report(self):
        graph = relu_bn_dense()
        changed = _perturbed(graph, "dense", 1e-6)
        serial = check_equivalence(graph, changed, n_samples=8, seed=2)
        pooled = check_equivalence(graph, changed, n_samples=8, seed=2, workers=3)
        self.assertEqual(serial, pooled)

    def test_to_dict(self):
        report = EquivalenceReport(3, 0.5, 0.25, False, 1, 1e-9)
        doc = report.to_dict()
        self.assertIs(doc["pass"], False)
        self.assertEqual(doc["max_l1"], 0.5)


class TestVerifier(TestCase):
    def test_seed_from_environment(self):
        # conftest clears BNFOLD_SEED before every test
        self.assertEqual(Verifier().seed, 42)

    def test_config(self):
        c = Config()
        c.Verifier.samples = 7
        c.Verifier.tolerance = 1e-6
        verifier = Verifier(config=c)
        self.assertEqual(verifier.samples, 7)
        self.assertEqual(verifier.tolerance, 1e-6)

    def test_validation(self):
        with pytest.raises(TraitError):
            Verifier(samples=0)
        with pytest.raises(TraitError):
            Verifier(workers=-1)

    def test_require(self):
        graph = relu_bn_dense()
        verifier = Verifier(samples=3)
        self.assertTrue(verifier.require(graph, graph).passed)
        with pytest.raises(VerificationFailed) as info:
            verifier.require(graph, _perturbed(graph, "dense", 1.0))
        self.assertFalse(info.value.report.passed)

    def test_check_inside_running_loop(self):
        graph = relu_bn_dense()

        async def inner():
            return Verifier(samples=2).check(graph, graph)

        self.assertTrue(asyncio.run(inner()).passed)

    def test_check_async(self):
        graph = relu_bn_dense()
        report = asyncio.run(Verifier(samples=2).check_async(graph, graph))
        self.assertTrue(report.passed)


def test_seed_environment(monkeypatch):
    monkeypatch.setenv("BNFOLD_SEED", "1234")
    assert Verifier().seed == 1234
    monkeypatch.setenv("BNFOLD_SEED", "nope")
    with pytest.raises(TraitError):
        Verifier().seed


class TestAudit(TestCase):
    def test_archetype_labels_hold(self):
        for archetype in ("fig2a", "fig2b", "fig2c", "fig4", "fig5a", "fig5b", "resnet"):
            graph, labels = generate(archetype)
            report = audit_decisions(graph, labels.foldable, Verifier(samples=3))
            self.assertTrue(report.passed, (archetype, report.to_dict()))
            self.assertEqual(len(report.entries), len(labels.foldable))

    def test_wrong_label_is_reported(self):
        graph, _ = generate("fig2b")
        report = audit_decisions(graph, {"bn2": True}, Verifier(samples=2))
        self.assertFalse(report.passed)
        self.assertEqual([e.bn_id for e in report.mismatches], ["bn2"])
        self.assertEqual(report.to_dict()["entries"][0]["reason"], "SurroundedByNonAffine")


class TestMetrics(TestCase):
    def test_param_stats(self):
        graph, _ = generate("fig2c")
        folded, _ = banoff_pass(graph)
        removed, percent = param_stats(graph, folded)
        self.assertEqual(removed, 256)
        self.assertAlmostEqual(percent, 25600 / 2730)
        self.assertEqual(param_stats(graph, graph), (0, 0.0))

    def test_speedup_ratio(self):
        self.assertEqual(SpeedupMeasure(2.0, 1.0).ratio, 0.5)
        self.assertEqual(SpeedupMeasure(0.0, 1.0).ratio, 0.0)
        self.assertEqual(SpeedupMeasure(1.0, 1.0).to_dict()["ratio"], 0.0)

    def test_measure(self):
        graph, _ = generate("fig2a")
        folded, _ = banoff_pass(graph)
        measure = speedup_ratio(graph, folded, reps=5, batch=2)
        self.assertGreater(measure.t_old, 0.0)
        self.assertGreater(measure.t_new, 0.0)
        self.assertGreaterEqual(measure.std_old, 0.0)

    def test_folding_speeds_up_fig2a(self):
        graph, _ = generate("fig2a")
        folded, _ = banoff_pass(graph)
        self.assertEqual(folded.batch_norms(), [])
        measure = speedup_ratio(graph, folded, reps=20, batch=8)
        self.assertGreater(measure.ratio, 0.0)

    def test_reps_lower_bound(self):
        with pytest.raises(TraitError):
            Benchmark(reps=4)
