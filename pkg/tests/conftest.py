import json
from pathlib import Path

import numpy as np
import pytest

from astra.clients import HashEmbedder
from astra.index import IndexEntry, build_index, l2_normalize
from astra.pose import Keypoint, PoseMap, PoseSkeleton

DATA_DIR = Path(__file__).parent / "data"

# Distinct-vocabulary prompt templates for the fixture database; prompt #42
# is the designated self-retrieval target.
_SUBJECTS = (
    "man", "woman", "child", "dancer", "athlete", "climber", "skater", "gymnast",
    "runner", "boxer",
)
_ACTIONS = (
    "handstand", "cartwheel", "lunge", "sprint", "crouch", "leap", "stretch",
    "kick", "spin", "balance",
)


def fixture_prompts(count: int = 100) -> list[str]:
    prompts = []
    for n in range(count):
        subject = _SUBJECTS[n % len(_SUBJECTS)]
        action = _ACTIONS[(n // len(_SUBJECTS)) % len(_ACTIONS)]
        prompts.append(f"{subject} performing a {action} pose variant{n}")
    return prompts


@pytest.fixture(scope="session")
def hash_embedder() -> HashEmbedder:
    return HashEmbedder()


@pytest.fixture(scope="session")
def fixture_index(hash_embedder):
    """100-entry index embedded with the built-in hash featurizer."""
    entries = [
        IndexEntry(n, prompt, l2_normalize(hash_embedder.embed(prompt)), f"pose_{n:04d}")
        for n, prompt in enumerate(fixture_prompts())
    ]
    return build_index(entries)


def make_person(
    cx: float = 300.0,
    cy: float = 240.0,
    area: float = 3000.0,
    visibility: int = 2,
    jitter: np.ndarray | None = None,
) -> PoseSkeleton:
    """A synthetic standing figure centered at (cx, cy)."""
    offsets = [
        (0, -40), (-4, -44), (4, -44), (-8, -42), (8, -42),
        (-12, -28), (12, -28), (-18, -10), (18, -10), (-20, 6), (20, 6),
        (-8, 0), (8, 0), (-9, 22), (9, 22), (-10, 44), (10, 44),
    ]
    if jitter is None:
        jitter = np.zeros((17, 2))
    kps = tuple(
        Keypoint(cx + dx + float(jitter[k][0]), cy + dy + float(jitter[k][1]), visibility)
        for k, (dx, dy) in enumerate(offsets)
    )
    return PoseSkeleton(kps, area, (cx - 26, cy - 50, 52, 100))


def make_pose_map(n_people: int = 1, width: int = 640, height: int = 480) -> PoseMap:
    people = tuple(make_person(cx=120.0 + 140.0 * p) for p in range(n_people))
    return PoseMap(width, height, people)


@pytest.fixture()
def coco_small_text() -> str:
    return (DATA_DIR / "coco_small.json").read_text(encoding="utf-8")


@pytest.fixture()
def coco_bench_text() -> str:
    return (DATA_DIR / "coco_bench.json").read_text(encoding="utf-8")


@pytest.fixture()
def captions_text() -> str:
    return (DATA_DIR / "captions_bench.json").read_text(encoding="utf-8")


@pytest.fixture()
def bench_images_root(tmp_path, coco_bench_text):
    """Create the PNG files referenced by the bench fixture's images table."""
    from PIL import Image

    doc = json.loads(coco_bench_text)
    root = tmp_path / "images"
    root.mkdir()
    rng = np.random.default_rng(7)
    for img in doc["images"]:
        pixels = rng.integers(0, 255, size=(img["height"], img["width"], 3), dtype=np.uint8)
        Image.fromarray(pixels).save(root / img["file_name"])
    return root
