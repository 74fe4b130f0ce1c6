from unittest import TestCase

import pytest

from ..graph import BatchNorm, LayerClass
from ..models import ARCHETYPES, Dims, InvalidDims, generate, parse_dims


class TestDims(TestCase):
    def test_defaults(self):
        self.assertEqual(parse_dims(None), Dims())
        self.assertEqual(parse_dims(""), Dims())

    def test_parse(self):
        dims = parse_dims("channels=4, blocks=2")
        self.assertEqual(dims.channels, 4)
        self.assertEqual(dims.blocks, 2)
        self.assertEqual(dims.width, Dims().width)

    def test_rejects(self):
        for text in ("channels", "depth=3", "width=wide", "width=0", "size=-2"):
            with pytest.raises(InvalidDims):
                parse_dims(text)
        with pytest.raises(InvalidDims):
            Dims(width=True)


class TestGenerate(TestCase):
    def test_every_archetype_builds(self):
        for archetype in ARCHETYPES:
            graph, labels = generate(archetype)
            self.assertEqual(graph.name, archetype)
            self.assertTrue(graph.batch_norms(), archetype)
            for bn_id in labels.foldable:
                self.assertIsInstance(graph.node(bn_id).kind, BatchNorm)
            self.assertLessEqual(labels.naive, labels.banoff)

    def test_deterministic(self):
        for archetype in ARCHETYPES:
            a, _ = generate(archetype, weight_seed=3)
            b, _ = generate(archetype, weight_seed=3)
            c, _ = generate(archetype, weight_seed=4)
            self.assertEqual(a.fingerprint, b.fingerprint)
            self.assertNotEqual(a.fingerprint, c.fingerprint)

    def test_dims_scale_the_graph(self):
        graph, labels = generate("fig2a", Dims(blocks=5, width=8))
        self.assertEqual(len(graph.batch_norms()), 5)
        self.assertEqual(graph.shape_of("dense1").channels, 8)
        self.assertEqual(len(labels.banoff), 5)
        graph, labels = generate("resnet", Dims(blocks=1))
        self.assertEqual(len(graph.batch_norms()), 4)

    def test_image_archetypes_need_room(self):
        with pytest.raises(InvalidDims):
            generate("resnet", Dims(size=3))

    def test_unknown(self):
        with pytest.raises(ValueError):
            generate("lenet")

    def test_labels(self):
        _, labels = generate("fig2c")
        self.assertEqual(labels.naive, frozenset())
        self.assertEqual(labels.banoff, {"bn1", "bn2"})
        _, labels = generate("fig2b")
        self.assertFalse(labels.foldable["bn2"])

    def test_random_graphs_have_an_affine_output(self):
        for seed in range(30):
            graph, _ = generate("random", Dims(nodes=10), weight_seed=seed)
            self.assertTrue(graph.batch_norms())
            self.assertTrue(
                any(graph.node(o).layer_class is not LayerClass.NON_AFFINE for o in graph.outputs),
                seed,
            )
