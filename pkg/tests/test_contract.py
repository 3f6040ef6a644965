"""Shared contract fixture, exercised against the engine's client stubs.

The same fixture drives the sidecar's own test suite, so both sides of the
wire protocol stay pinned to identical behavior.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from astra.clients import HashEmbedder, PassthroughNormalizer

CONTRACT_PATH = Path(__file__).parent.parent / "contracts" / "sidecar_contract.json"


@pytest.fixture(scope="module")
def contract():
    return json.loads(CONTRACT_PATH.read_text(encoding="utf-8"))


class TestEmbedContract:
    def test_dimension_and_norm(self, contract, hash_embedder):
        spec = contract["embed"]
        for text in spec["texts"]:
            vec = hash_embedder.embed(text)
            assert vec.shape == (spec["dim"],)
            assert abs(np.linalg.norm(vec) - 1.0) <= spec["norm_tol"]

    def test_self_cosine_is_one(self, contract, hash_embedder):
        for text in contract["embed"]["texts"]:
            a, b = hash_embedder.embed(text), hash_embedder.embed(text)
            assert float(a @ b) == pytest.approx(1.0, abs=1e-12)

    def test_paraphrase_beats_unrelated(self, contract, hash_embedder):
        spec = contract["embed"]
        vecs = [hash_embedder.embed(t) for t in spec["texts"]]
        for comparison in spec["comparisons"]:
            hi_a, hi_b = comparison["higher"]
            lo_a, lo_b = comparison["lower"]
            assert float(vecs[hi_a] @ vecs[hi_b]) > float(vecs[lo_a] @ vecs[lo_b])

    def test_pinned_vector_components(self, contract, hash_embedder):
        pinned = contract["embed"]["pinned"]
        vec = hash_embedder.embed(contract["embed"]["texts"][pinned["text_index"]])
        expected = np.zeros(contract["embed"]["dim"])
        for idx, value in pinned["nonzero"].items():
            expected[int(idx)] = value
        assert vec == pytest.approx(expected, abs=pinned["tol"])


class TestNormalizeContract:
    def test_stub_normalizer_meets_shared_requirements(self, contract):
        normalizer = PassthroughNormalizer()
        for case in contract["normalize"]["cases"]:
            canonical = normalizer.normalize(case["text"])
            assert canonical.strip()
            lowered = canonical.lower()
            for term in case["must_contain"]:
                assert term in lowered
