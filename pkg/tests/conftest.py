"""Shared fixtures for the expected-exposure test suite."""

import pytest

from src.exposure import BrowsingModel, RelevanceJudgments
from src.policies import ScoredRun
from src.synthetic import SynthSpec, synth_collection


@pytest.fixture
def rbp():
    return BrowsingModel.rbp(0.5, None)


@pytest.fixture
def err():
    return BrowsingModel.err(0.5, None)


@pytest.fixture
def graded_judgments():
    return RelevanceJudgments.from_grades("q1", {"a": 2, "b": 1, "c": 1, "d": 0})


@pytest.fixture
def graded_run():
    return ScoredRun.from_scores("q1", {"a": 3.0, "b": 2.5, "c": 1.0, "d": 0.5})


@pytest.fixture
def noisy_collection():
    """Ten queries of 30 documents, 5 relevant each, with noisy scores."""
    spec = SynthSpec(n_queries=10, pool_size=30, noise=0.5, n_relevant=5, seed=7)
    return synth_collection(spec)


@pytest.fixture
def write_text(tmp_path):
    """Write lines to a file under tmp_path and return its path."""
    def _write(name, lines):
        path = tmp_path / name
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return str(path)
    return _write
