import os

import pytest
from hypothesis import settings

from ..models import Dims, generate
from ..serialization import save_graph

settings.register_profile("ci", max_examples=200, deadline=None)
settings.register_profile("dev", max_examples=25, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "dev"))


@pytest.fixture(autouse=True)
def _default_seed(monkeypatch):
    # Verifier seeds must not depend on the caller's environment
    monkeypatch.delenv("BNFOLD_SEED", raising=False)


@pytest.fixture
def archetype_file(tmp_path):
    def write(archetype, **dims):
        graph, _ = generate(archetype, Dims(**dims) if dims else None)
        path = tmp_path / ("%s.json" % archetype)
        save_graph(graph, path)
        return path

    return write
