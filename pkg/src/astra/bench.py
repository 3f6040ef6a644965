"""Complex-pose benchmark: construction from COCO annotations and evaluation.

Benchmark items are images with 1..max_subjects labeled persons; each item
carries identity crops (from person bounding boxes, when an image root is
supplied), the multi-person ground-truth pose map, and a prompt (caption
when available, placeholder otherwise). Keypoint similarity is the native
metric; external metrics attach through the plugin protocol.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import httpx
import numpy as np
from PIL import Image

from .errors import ParseError, ValidationError
from .pose import PoseMap, PoseSkeleton, match_and_score, parse_coco_keypoints

logger = logging.getLogger(__name__)

MAX_SUBJECTS = 3


@dataclass(frozen=True)
class BenchmarkItem:
    image_id: int
    prompt: str
    gt_pose_map: PoseMap
    subject_count: int
    identity_crops: tuple[np.ndarray, ...] = ()
    crop_paths: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "identity_crops", tuple(self.identity_crops))
        object.__setattr__(self, "crop_paths", tuple(self.crop_paths))
        if self.subject_count != len(self.gt_pose_map.people):
            raise ValidationError("subject_count must equal the number of skeletons")
        if self.identity_crops and len(self.identity_crops) != self.subject_count:
            raise ValidationError("one identity crop per subject is required")
        if not 1 <= self.subject_count <= MAX_SUBJECTS:
            raise ValidationError(
                f"subject_count must be in 1..{MAX_SUBJECTS}, got {self.subject_count}"
            )


def _image_table(doc: dict) -> dict[int, dict]:
    table = {}
    for img in doc.get("images", []):
        try:
            table[int(img["id"])] = img
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed images entry: {exc!r}") from None
    return table


def _caption_table(captions_doc: str | None) -> dict[int, str]:
    if captions_doc is None:
        return {}
    try:
        doc = json.loads(captions_doc)
    except json.JSONDecodeError as exc:
        raise ParseError(f"captions document is not valid JSON: {exc}") from None
    table: dict[int, str] = {}
    for ann in doc.get("annotations", []):
        image_id = int(ann["image_id"])
        table.setdefault(image_id, str(ann["caption"]))
    return table


def _crop(image: np.ndarray, bbox: tuple[float, float, float, float]) -> np.ndarray:
    x, y, w, h = bbox
    height, width = image.shape[:2]
    x0 = max(0, int(round(x)))
    y0 = max(0, int(round(y)))
    x1 = min(width, int(round(x + w)))
    y1 = min(height, int(round(y + h)))
    if x1 <= x0 or y1 <= y0:
        raise ValidationError(f"bbox {bbox} has no overlap with the image")
    return image[y0:y1, x0:x1].copy()


def build_benchmark(
    annotations: str,
    images_root: str | Path | None = None,
    limit: int | None = None,
    max_subjects: int = MAX_SUBJECTS,
    captions: str | None = None,
) -> list[BenchmarkItem]:
    """Select qualifying images (ascending id) and assemble benchmark items.

    An image qualifies when it has 1..max_subjects persons with at least one
    labeled keypoint each. When ``images_root`` is given, identity crops are
    cut from person bounding boxes; images whose file is missing are skipped
    with a warning. ``limit`` caps the number of items.
    """
    if not 1 <= max_subjects <= MAX_SUBJECTS:
        raise ValidationError(f"max_subjects must be in 1..{MAX_SUBJECTS}")
    skeletons = parse_coco_keypoints(annotations)
    doc = json.loads(annotations)
    images = _image_table(doc)
    caption_by_id = _caption_table(captions)

    items: list[BenchmarkItem] = []
    for image_id in sorted(skeletons):
        people = [p for p in skeletons[image_id] if p.labeled_count > 0]
        if not people or len(people) > max_subjects:
            continue
        meta = images.get(image_id)
        if meta is None:
            raise ParseError(f"image {image_id} has annotations but no images entry")
        width, height = int(meta["width"]), int(meta["height"])

        crops: list[np.ndarray] = []
        if images_root is not None:
            file_name = meta.get("file_name")
            path = Path(images_root) / str(file_name)
            if file_name is None or not path.is_file():
                logger.warning("skipping image %s: file %s is missing", image_id, path)
                continue
            pixels = np.asarray(Image.open(path).convert("RGB"))
            if any(p.bbox is None for p in people):
                logger.warning("skipping image %s: person without bbox", image_id)
                continue
            crops = [_crop(pixels, p.bbox) for p in people]

        prompt = caption_by_id.get(image_id)
        if prompt is None:
            n = len(people)
            prompt = f"{n} {'person' if n == 1 else 'people'}: <action unknown>"
        items.append(
            BenchmarkItem(
                image_id=image_id,
                prompt=prompt,
                gt_pose_map=PoseMap(width, height, tuple(people)),
                subject_count=len(people),
                identity_crops=tuple(crops),
            )
        )
        if limit is not None and len(items) >= limit:
            break
    if not items:
        raise ValidationError("no qualifying images in the annotations")
    return items


class MetricPlugin(Protocol):
    name: str

    def score(
        self,
        item: BenchmarkItem,
        candidate: PoseMap | None,
        candidate_path: str | None,
    ) -> float: ...


class HttpMetricPlugin:
    """Plugin calling an external scorer: POST /score {prompt, refs, candidate}."""

    def __init__(self, name: str, base_url: str, timeout: float = 10.0, transport=None) -> None:
        self.name = name
        self._client = httpx.Client(base_url=base_url, timeout=timeout, transport=transport)

    def score(self, item, candidate, candidate_path) -> float:
        resp = self._client.post(
            "/score",
            json={
                "prompt": item.prompt,
                "refs": list(item.crop_paths),
                "candidate": candidate_path or "",
            },
        )
        resp.raise_for_status()
        payload = resp.json()
        if payload.get("name") != self.name:
            logger.warning(
                "plugin %s returned metric name %r", self.name, payload.get("name")
            )
        return float(payload["value"])


@dataclass(frozen=True)
class ItemResult:
    item_id: int
    oks: float
    metrics: dict[str, float | None] = field(default_factory=dict)
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class EvaluationReport:
    method: str
    metric_names: tuple[str, ...]
    items: tuple[ItemResult, ...]
    aggregates: dict[str, float | None]


def _aggregate(values: Sequence[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    if not present:
        return None
    return sum(present) / len(present)


def evaluate(
    benchmark: Sequence[BenchmarkItem],
    candidates: Mapping[int, PoseMap],
    plugins: Sequence[MetricPlugin] = (),
    candidate_paths: Mapping[int, str] | None = None,
    method: str = "candidate",
) -> EvaluationReport:
    """Score every benchmark item against its candidate pose map.

    A missing candidate scores 0 and is flagged; a plugin failure leaves that
    metric absent for the item and the run continues.
    """
    results: list[ItemResult] = []
    for item in benchmark:
        flags: list[str] = []
        candidate = candidates.get(item.image_id)
        if candidate is None:
            score = 0.0
            flags.append("missing_candidate")
        else:
            score = match_and_score(list(candidate.people), list(item.gt_pose_map.people))
        metrics: dict[str, float | None] = {}
        path = candidate_paths.get(item.image_id) if candidate_paths else None
        for plugin in plugins:
            try:
                metrics[plugin.name] = float(plugin.score(item, candidate, path))
            except Exception as exc:  # plugin failures must not abort the run
                logger.warning("plugin %s failed on item %s: %s", plugin.name, item.image_id, exc)
                metrics[plugin.name] = None
                flags.append(f"plugin_failed:{plugin.name}")
        results.append(ItemResult(item.image_id, score, metrics, tuple(flags)))

    metric_names = tuple(p.name for p in plugins)
    aggregates: dict[str, float | None] = {"oks": _aggregate([r.oks for r in results])}
    for name in metric_names:
        aggregates[name] = _aggregate([r.metrics.get(name) for r in results])
    return EvaluationReport(method, metric_names, tuple(results), aggregates)


def emit_report(report: EvaluationReport, path, fmt: str) -> None:
    """Write the report as CSV or JSON with a stable column order.

    Columns: item_id, oks, one column per plugin metric, flags. Absent
    metric values become empty cells (not zeros).
    """
    if fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["item_id", "oks", *report.metric_names, "flags"])
            for row in report.items:
                writer.writerow(
                    [
                        row.item_id,
                        repr(row.oks),
                        *[
                            "" if row.metrics.get(name) is None else repr(row.metrics[name])
                            for name in report.metric_names
                        ],
                        ";".join(row.flags),
                    ]
                )
    elif fmt == "json":
        doc = {
            "method": report.method,
            "metric_names": list(report.metric_names),
            "items": [
                {
                    "item_id": row.item_id,
                    "oks": row.oks,
                    "metrics": {name: row.metrics.get(name) for name in report.metric_names},
                    "flags": list(row.flags),
                }
                for row in report.items
            ],
            "aggregates": report.aggregates,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
    else:
        raise ValidationError(f"unknown report format {fmt!r}")


def load_candidates(path) -> dict[int, PoseMap]:
    """Load candidate pose maps keyed by image id from a JSON document."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ParseError("candidates document must map image ids to pose maps")
    return {int(image_id): PoseMap.from_dict(entry) for image_id, entry in doc.items()}
