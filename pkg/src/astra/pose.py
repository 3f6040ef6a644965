"""COCO-17 pose skeletons: parsing, rasterization, and keypoint similarity.

Keypoints follow the standard COCO order (nose, eyes, ears, shoulders,
elbows, wrists, hips, knees, ankles) with the usual visibility flags:
0 = not labeled, 1 = labeled but occluded, 2 = labeled and visible.
"""

from __future__ import annotations

import colorsys
import json
import math
from dataclasses import dataclass
from io import BytesIO
from typing import Any, Iterable, Sequence

import numpy as np
from PIL import Image, ImageDraw

from .errors import ParseError, UndefinedMetricError, ValidationError

NUM_KEYPOINTS = 17

KEYPOINT_NAMES = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

# The 19 limb segments of the COCO person skeleton, as keypoint index pairs.
SKELETON_EDGES = (
    (15, 13),
    (13, 11),
    (16, 14),
    (14, 12),
    (11, 12),
    (5, 11),
    (6, 12),
    (5, 6),
    (5, 7),
    (6, 8),
    (7, 9),
    (8, 10),
    (1, 2),
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (3, 5),
    (4, 6),
)

# Published per-keypoint falloff constants (nose ... ankles); k_i = 2 * sigma_i.
KEYPOINT_SIGMAS = (
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
    0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089,
)

# First skeleton edge touching each keypoint, for joint coloring.
_JOINT_EDGE = {}
for _e, (_a, _b) in enumerate(SKELETON_EDGES):
    _JOINT_EDGE.setdefault(_a, _e)
    _JOINT_EDGE.setdefault(_b, _e)


def _default_palette() -> tuple[tuple[int, int, int], ...]:
    colors = []
    for e in range(len(SKELETON_EDGES)):
        r, g, b = colorsys.hsv_to_rgb(e / len(SKELETON_EDGES), 1.0, 1.0)
        colors.append((int(round(r * 255)), int(round(g * 255)), int(round(b * 255))))
    return tuple(colors)


DEFAULT_PALETTE = _default_palette()


@dataclass(frozen=True)
class Keypoint:
    """A single labeled joint. (x, y) are canvas pixels, origin top-left."""

    x: float
    y: float
    v: int

    def __post_init__(self) -> None:
        if self.v not in (0, 1, 2):
            raise ValidationError(f"visibility flag must be 0, 1 or 2, got {self.v!r}")

    @property
    def labeled(self) -> bool:
        return self.v > 0


@dataclass(frozen=True)
class PoseSkeleton:
    """One person: 17 keypoints plus the instance scale (area, pixels^2)."""

    keypoints: tuple[Keypoint, ...]
    area: float
    bbox: tuple[float, float, float, float] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "keypoints", tuple(self.keypoints))
        if len(self.keypoints) != NUM_KEYPOINTS:
            raise ValidationError(
                f"expected {NUM_KEYPOINTS} keypoints, got {len(self.keypoints)}"
            )
        if self.bbox is not None:
            object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))
        if any(kp.labeled for kp in self.keypoints) and self.area <= 0:
            raise ValidationError("area must be positive when any keypoint is labeled")

    @property
    def labeled_count(self) -> int:
        return sum(1 for kp in self.keypoints if kp.labeled)

    @classmethod
    def from_flat(
        cls,
        values: Sequence[float],
        area: float,
        bbox: Sequence[float] | None = None,
    ) -> "PoseSkeleton":
        """Build from a flat COCO-style [x1, y1, v1, ..., x17, y17, v17] array."""
        if len(values) != 3 * NUM_KEYPOINTS:
            raise ValidationError(
                f"keypoint array must have {3 * NUM_KEYPOINTS} values, got {len(values)}"
            )
        kps = tuple(
            Keypoint(float(values[3 * i]), float(values[3 * i + 1]), int(values[3 * i + 2]))
            for i in range(NUM_KEYPOINTS)
        )
        return cls(kps, float(area), tuple(bbox) if bbox is not None else None)

    def to_flat(self) -> list[float]:
        flat: list[float] = []
        for kp in self.keypoints:
            flat.extend((kp.x, kp.y, float(kp.v)))
        return flat


@dataclass(frozen=True)
class PoseMap:
    """Multi-person skeleton set bound to a canvas of width x height pixels."""

    width: int
    height: int
    people: tuple[PoseSkeleton, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "people", tuple(self.people))
        for p, person in enumerate(self.people):
            for k, kp in enumerate(person.keypoints):
                if kp.v == 2 and not (0 <= kp.x < self.width and 0 <= kp.y < self.height):
                    raise ValidationError(
                        f"person {p} keypoint {KEYPOINT_NAMES[k]} at "
                        f"({kp.x}, {kp.y}) lies outside the {self.width}x{self.height} canvas"
                    )

    def to_dict(self) -> dict[str, Any]:
        return {
            "width": self.width,
            "height": self.height,
            "people": [
                {
                    "keypoints": [[kp.x, kp.y, kp.v] for kp in person.keypoints],
                    "area": person.area,
                    "bbox": list(person.bbox) if person.bbox is not None else None,
                }
                for person in self.people
            ],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PoseMap":
        try:
            people = tuple(
                PoseSkeleton(
                    tuple(Keypoint(float(x), float(y), int(v)) for x, y, v in person["keypoints"]),
                    float(person["area"]),
                    tuple(person["bbox"]) if person.get("bbox") else None,
                )
                for person in data["people"]
            )
            return cls(int(data["width"]), int(data["height"]), people)
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed pose map document: {exc}") from exc


def load_pose_map(path) -> PoseMap:
    with open(path, "r", encoding="utf-8") as fh:
        return PoseMap.from_dict(json.load(fh))


def save_pose_map(pose_map: PoseMap, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(pose_map.to_dict(), fh)


@dataclass(frozen=True)
class RasterStyle:
    """Drawing style for skeleton maps; one palette color per skeleton edge."""

    limb_palette: tuple[tuple[int, int, int], ...] = DEFAULT_PALETTE
    joint_radius: int = 4
    limb_thickness: int = 4
    background: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self) -> None:
        if len(self.limb_palette) != len(SKELETON_EDGES):
            raise ValidationError(
                f"palette must have {len(SKELETON_EDGES)} colors, got {len(self.limb_palette)}"
            )


def parse_coco_keypoints(document: str) -> dict[int, list[PoseSkeleton]]:
    """Parse COCO person-keypoint annotations into skeletons grouped by image id.

    Annotations with num_keypoints == 0 are dropped. Within an image,
    skeletons keep annotation order.
    """
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(f"document is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("annotations"), list):
        raise ParseError("document has no 'annotations' list")

    result: dict[int, list[PoseSkeleton]] = {}
    for n, ann in enumerate(doc["annotations"]):
        label = f"annotation #{n}" + (f" (id={ann['id']})" if isinstance(ann, dict) and "id" in ann else "")
        if not isinstance(ann, dict):
            raise ParseError(f"{label} is not an object")
        try:
            image_id = int(ann["image_id"])
            kps = ann["keypoints"]
            area = float(ann["area"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{label} is malformed: {exc!r}") from None
        if len(kps) != 3 * NUM_KEYPOINTS:
            raise ValidationError(
                f"{label}: keypoint array length {len(kps)} != {3 * NUM_KEYPOINTS}"
            )
        num_kp = ann.get("num_keypoints")
        if num_kp is None:
            num_kp = sum(1 for i in range(NUM_KEYPOINTS) if int(kps[3 * i + 2]) > 0)
        if num_kp <= 0:
            continue
        try:
            skeleton = PoseSkeleton.from_flat(kps, area, ann.get("bbox"))
        except ValidationError as exc:
            raise ValidationError(f"{label}: {exc}") from None
        result.setdefault(image_id, []).append(skeleton)
    return result


def rasterize(pose_map: PoseMap, style: RasterStyle | None = None) -> np.ndarray:
    """Render a pose map to an RGB uint8 buffer of shape (height, width, 3).

    For every person (in list order, later people painted over earlier):
    a line segment for each skeleton edge whose both endpoints are visible
    (v == 2), colored by edge index, then a filled disc at each visible
    keypoint. Coordinates are rounded to the nearest pixel for drawing only.
    """
    if style is None:
        style = RasterStyle()
    if pose_map.width <= 0 or pose_map.height <= 0:
        raise ValidationError("canvas must have positive width and height")

    img = Image.new("RGB", (pose_map.width, pose_map.height), style.background)
    draw = ImageDraw.Draw(img)
    for person in pose_map.people:
        for e, (a, b) in enumerate(SKELETON_EDGES):
            ka, kb = person.keypoints[a], person.keypoints[b]
            if ka.v == 2 and kb.v == 2:
                draw.line(
                    [(round(ka.x), round(ka.y)), (round(kb.x), round(kb.y))],
                    fill=style.limb_palette[e],
                    width=style.limb_thickness,
                )
        for k, kp in enumerate(person.keypoints):
            if kp.v == 2:
                x, y, r = round(kp.x), round(kp.y), style.joint_radius
                draw.ellipse(
                    [x - r, y - r, x + r, y + r],
                    fill=style.limb_palette[_JOINT_EDGE[k]],
                )
    return np.array(img)


def encode_png(buffer: np.ndarray) -> bytes:
    """Encode an RGB uint8 buffer as PNG bytes."""
    out = BytesIO()
    Image.fromarray(buffer, mode="RGB").save(out, format="PNG")
    return out.getvalue()


def _require_scorable(gt: PoseSkeleton) -> list[int]:
    if gt.area <= 0:
        raise ValidationError("ground-truth area must be positive")
    labeled = [i for i, kp in enumerate(gt.keypoints) if kp.labeled]
    if not labeled:
        raise UndefinedMetricError("ground truth has no labeled keypoints")
    return labeled


def oks(pred: PoseSkeleton, gt: PoseSkeleton) -> float:
    """Object keypoint similarity between a prediction and one ground truth.

    Mean of exp(-d_i^2 / (2 * s^2 * k_i^2)) over gt-labeled keypoints, with
    s^2 = gt.area and k_i = 2 * sigma_i. A gt-labeled keypoint whose
    prediction is unlabeled contributes 0 (its coordinates carry no meaning).
    """
    labeled = _require_scorable(gt)
    total = 0.0
    for i in labeled:
        p, g = pred.keypoints[i], gt.keypoints[i]
        if not p.labeled:
            continue
        d2 = (p.x - g.x) ** 2 + (p.y - g.y) ** 2
        k = 2.0 * KEYPOINT_SIGMAS[i]
        total += math.exp(-d2 / (2.0 * gt.area * k * k))
    return total / len(labeled)


def match_and_score(
    preds: Sequence[PoseSkeleton], gts: Sequence[PoseSkeleton]
) -> float:
    """Greedy one-to-one matching; mean similarity over all ground truths.

    Repeatedly pairs the highest-similarity unmatched (pred, gt) until one
    side is exhausted; unmatched ground truths contribute 0.
    """
    if not gts:
        raise ValidationError("at least one ground-truth skeleton is required")
    for gt in gts:
        _require_scorable(gt)
    scores = [[oks(p, g) for g in gts] for p in preds]
    unmatched_p = set(range(len(preds)))
    unmatched_g = set(range(len(gts)))
    total = 0.0
    while unmatched_p and unmatched_g:
        best_s, best_p, best_g = -1.0, -1, -1
        for p in sorted(unmatched_p):
            for g in sorted(unmatched_g):
                if scores[p][g] > best_s:
                    best_s, best_p, best_g = scores[p][g], p, g
        total += best_s
        unmatched_p.remove(best_p)
        unmatched_g.remove(best_g)
    return total / len(gts)
