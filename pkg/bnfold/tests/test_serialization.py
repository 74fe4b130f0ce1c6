from pathlib import Path
from unittest import TestCase

import numpy as np
import pytest

from ..graph import BatchNorm, Dense, GraphInput, Node, ReLU, build_graph
from ..models import ARCHETYPES, generate
from ..serialization import (
    ParseError,
    SerializationError,
    VersionMismatch,
    dumps,
    load_graph,
    loads,
    save_graph,
)

GOLDEN = Path(__file__).parent / "data" / "minimal_dense.json"


def _minimal():
    nodes = [
        Node("dense", Dense([[1.0, -0.5], [0.25, 2.0]], [0.0, 1.0]), ("x",)),
        Node(
            "bn",
            BatchNorm([1.0, 2.0], [0.0, 0.5], [0.0, 1.0], [1.0, 1.0], epsilon=0.001),
            ("dense",),
        ),
        Node("relu", ReLU(), ("bn",)),
    ]
    return build_graph("minimal_dense", [GraphInput("x", (0, 2))], nodes, ["relu"])


class TestGolden(TestCase):
    def setUp(self):
        self.text = GOLDEN.read_text(encoding="utf-8")

    def test_load(self):
        self.assertEqual(load_graph(GOLDEN), _minimal())

    def test_dump_is_stable(self):
        self.assertEqual(dumps(_minimal()), self.text)

    def _fails(self, text, cls=ParseError):
        with pytest.raises(cls) as info:
            loads(text, "broken.json")
        self.assertIn("broken.json:%d:" % info.value.line, str(info.value))
        return info.value

    def test_malformed_json(self):
        error = self._fails(self.text.replace('"outputs": ["relu"]', '"outputs": ["relu"'))
        self.assertEqual(error.line, 11)

    def test_version(self):
        error = self._fails(self.text.replace('"format_version": 1', '"format_version": 2'),
                            VersionMismatch)
        self.assertEqual(error.line, 2)
        self._fails(self.text.replace('  "format_version": 1,\n', ""), VersionMismatch)

    def test_unknown_op(self):
        error = self._fails(self.text.replace('"op": "ReLU"', '"op": "Swish"'))
        self.assertEqual(error.line, 8)
        self.assertIn("Swish", error.reason)

    def test_reference_before_definition(self):
        error = self._fails(self.text.replace('"inputs": ["bn"]', '"inputs": ["later"]'))
        self.assertEqual(error.line, 8)

    def test_bad_weights(self):
        error = self._fails(self.text.replace('"bias": [0.0, 1.0]', '"bias": [0.0]'))
        self.assertEqual(error.line, 6)

    def test_invalid_graph(self):
        error = self._fails(self.text.replace('"outputs": ["relu"]', '"outputs": ["x"]'))
        self.assertIn("not a node", error.reason)

    def test_missing_field(self):
        self._fails(self.text.replace('"name": "minimal_dense",', ""))


class TestFiles(TestCase):
    def test_preserves_every_bit(self):
        for archetype in ARCHETYPES:
            graph, _ = generate(archetype, weight_seed=11)
            loaded = loads(dumps(graph))
            self.assertEqual(loaded, graph, archetype)
            self.assertEqual(loaded.fingerprint, graph.fingerprint)

    def test_missing_file(self):
        with pytest.raises(SerializationError) as info:
            load_graph("/nonexistent/graph.json")
        self.assertNotIsInstance(info.value, ParseError)

    def test_unwritable(self):
        with pytest.raises(SerializationError):
            save_graph(_minimal(), "/nonexistent/dir/graph.json")


def test_weights_survive_file_round_trip(tmp_path):
    graph, _ = generate("resnet", weight_seed=5)
    path = tmp_path / "resnet.json"
    save_graph(graph, path)
    loaded = load_graph(path)
    for a, b in zip(graph.nodes, loaded.nodes):
        for name, array in a.kind.weights().items():
            np.testing.assert_array_equal(array, b.kind.weights()[name])
