"""Pose store: a directory of pose-map JSON documents addressed by reference id."""

from __future__ import annotations

import re
from pathlib import Path

from .errors import ValidationError
from .pose import PoseMap, load_pose_map, save_pose_map

_REF_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


class PoseStore:
    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        if not self.root.is_dir():
            raise ValidationError(f"pose store directory {self.root} does not exist")

    def _path(self, pose_ref: str) -> Path:
        if not _REF_RE.match(pose_ref):
            raise ValidationError(f"invalid pose reference {pose_ref!r}")
        return self.root / f"{pose_ref}.json"

    def contains(self, pose_ref: str) -> bool:
        return self._path(pose_ref).is_file()

    def resolve(self, pose_ref: str) -> PoseMap:
        path = self._path(pose_ref)
        if not path.is_file():
            raise KeyError(f"pose reference {pose_ref!r} not found in {self.root}")
        return load_pose_map(path)

    def put(self, pose_ref: str, pose_map: PoseMap) -> None:
        save_pose_map(pose_map, self._path(pose_ref))

    def refs(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*.json"))
