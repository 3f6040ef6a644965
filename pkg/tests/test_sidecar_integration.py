"""Live wire-protocol check against the sidecar, when it is built.

The primary suite never requires the sidecar; this module skips itself
unless node and the compiled sidecar are present.
"""

import json
import shutil
import socket
import subprocess
import time
from pathlib import Path

import numpy as np
import pytest

from astra.clients import HashEmbedder, HttpEmbeddingClient, HttpNormalizationClient
from astra.retrieval import RetrievalClients, UserPrompt, retrieve

from conftest import fixture_prompts

ROOT = Path(__file__).parent.parent
SIDECAR_MAIN = ROOT / "sidecar" / "dist" / "index.js"
CONTRACT = ROOT / "contracts" / "sidecar_contract.json"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not SIDECAR_MAIN.is_file(),
    reason="sidecar is not built; primary suite runs without it",
)


@pytest.fixture(scope="module")
def sidecar_url():
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    proc = subprocess.Popen(
        ["node", str(SIDECAR_MAIN)],
        env={"SIDECAR_PORT": str(port), "PATH": "/usr/bin:/bin"},
        cwd=str(ROOT / "sidecar"),
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
    )
    url = f"http://127.0.0.1:{port}"
    try:
        deadline = time.time() + 10
        while time.time() < deadline:
            try:
                with socket.create_connection(("127.0.0.1", port), timeout=0.2):
                    break
            except OSError:
                time.sleep(0.1)
        else:
            raise RuntimeError("sidecar did not start")
        yield url
    finally:
        proc.terminate()
        proc.wait(timeout=5)


def test_live_embed_matches_engine_stub_bitwise(sidecar_url):
    contract = json.loads(CONTRACT.read_text())
    client = HttpEmbeddingClient(sidecar_url)
    stub = HashEmbedder()
    for text in contract["embed"]["texts"]:
        remote = client.embed(text)
        assert np.abs(remote - stub.embed(text)).max() == 0.0
        assert abs(np.linalg.norm(remote) - 1.0) <= contract["embed"]["norm_tol"]


def test_live_normalize_meets_contract(sidecar_url):
    contract = json.loads(CONTRACT.read_text())
    client = HttpNormalizationClient(sidecar_url)
    for case in contract["normalize"]["cases"]:
        canonical = client.normalize(case["text"])
        assert canonical == case["canonical_exact"]


def test_retrieval_through_live_clients(sidecar_url, fixture_index):
    clients = RetrievalClients(
        HttpEmbeddingClient(sidecar_url), HttpNormalizationClient(sidecar_url)
    )
    outcome = retrieve(UserPrompt(fixture_prompts()[42]), fixture_index, clients)
    assert outcome.is_hit
    assert outcome.pose_ref == "pose_0042"
    assert outcome.canonical_query.source == "normalized"
