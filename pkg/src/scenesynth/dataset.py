"""Dataset serialization: binary PLY clouds plus JSON instance indexes.

Layout on disk::

    dataset_root/
      manifest.json
      scenes/<scene_id>/points.ply
      scenes/<scene_id>/instances.json
      scenes/<scene_id>/meta.json

Points are stored as binary little-endian PLY with float32 positions,
uint8 RGB and a uint32 instance id per point. Instance id 0 is the room
structure and is excluded from instance masks. All JSON is written with
sorted keys so identical data always produces identical bytes.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scanner import LabeledPointCloud

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
STRUCTURE_ID = 0

PLY_DTYPE = np.dtype([
    ("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
    ("red", "u1"), ("green", "u1"), ("blue", "u1"),
    ("instance_id", "<u4"),
])

_PLY_HEADER = """ply
format binary_little_endian 1.0
comment scenesynth_ply {version}
element vertex {count}
property float x
property float y
property float z
property uchar red
property uchar green
property uchar blue
property uint instance_id
end_header
"""


class DatasetFormatError(ValueError):
    """Raised on malformed or incompatible dataset files."""


@dataclass
class InstanceEntry:
    """Index record for one instance of a stored scene."""

    instance_id: int
    asset_id: str
    class_name: str
    surface_id: str
    yaw_deg: float
    translation: tuple[float, float, float]
    box_min: tuple[float, float, float]
    box_max: tuple[float, float, float]
    point_count: int

    def to_json(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "asset_id": self.asset_id,
            "class_name": self.class_name,
            "surface_id": self.surface_id,
            "yaw_deg": self.yaw_deg,
            "translation": list(self.translation),
            "box_min": list(self.box_min),
            "box_max": list(self.box_max),
            "point_count": self.point_count,
        }

    @classmethod
    def from_json(cls, d: dict) -> "InstanceEntry":
        return cls(
            instance_id=int(d["instance_id"]), asset_id=d["asset_id"],
            class_name=d["class_name"], surface_id=d["surface_id"],
            yaw_deg=float(d["yaw_deg"]), translation=tuple(d["translation"]),
            box_min=tuple(d["box_min"]), box_max=tuple(d["box_max"]),
            point_count=int(d["point_count"]))


@dataclass
class SceneSample:
    """One stored scene: cloud file plus its instance index and metadata."""

    scene_id: str
    instances: list[InstanceEntry]
    meta: dict = field(default_factory=dict)

    def instance_by_id(self, instance_id: int) -> InstanceEntry:
        for e in self.instances:
            if e.instance_id == instance_id:
                return e
        raise KeyError(instance_id)


@dataclass
class SceneRef:
    scene_id: str
    path: str
    point_count: int
    instance_count: int


@dataclass
class DatasetManifest:
    """Dataset-level index: config echo, master seed and scene list."""

    master_seed: int
    scenes: list[SceneRef]
    config: dict = field(default_factory=dict)
    training_balance_alpha: float = 0.5

    def validate(self) -> None:
        if not 0.0 <= self.training_balance_alpha <= 1.0:
            raise DatasetFormatError(
                f"training_balance_alpha must be in [0, 1], got {self.training_balance_alpha}")
        seen = set()
        for ref in self.scenes:
            if ref.scene_id in seen:
                raise DatasetFormatError(f"duplicate scene id {ref.scene_id!r}")
            seen.add(ref.scene_id)


def ply_bytes(cloud: LabeledPointCloud) -> bytes:
    """Serialize a cloud as binary little-endian PLY (positions cast to float32)."""
    cloud.validate()
    n = len(cloud)
    rec = np.empty(n, dtype=PLY_DTYPE)
    pts = cloud.points.astype(np.float32)
    rec["x"], rec["y"], rec["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    colors = cloud.colors if cloud.colors is not None else np.zeros((n, 3), dtype=np.uint8)
    rec["red"], rec["green"], rec["blue"] = colors[:, 0], colors[:, 1], colors[:, 2]
    if (cloud.instance_ids < 0).any():
        raise DatasetFormatError("instance ids must be non-negative for export")
    rec["instance_id"] = cloud.instance_ids.astype(np.uint32)
    header = _PLY_HEADER.format(version=FORMAT_VERSION, count=n).encode("ascii")
    return header + rec.tobytes()


def write_ply(path: str | Path, cloud: LabeledPointCloud) -> None:
    Path(path).write_bytes(ply_bytes(cloud))


def read_ply(path: str | Path) -> LabeledPointCloud:
    """Read a cloud written by :func:`write_ply`.

    Raises :class:`DatasetFormatError` with the byte offset of the
    problem on malformed files.
    """
    path = Path(path)
    data = path.read_bytes()
    end_tag = b"end_header\n"
    header_end = data.find(end_tag)
    if not data.startswith(b"ply\n") or header_end < 0:
        raise DatasetFormatError(f"{path}: not a PLY file (no header found, offset 0)")
    header = data[:header_end].decode("ascii", errors="replace")
    body_start = header_end + len(end_tag)
    count = None
    version_ok = False
    offset = 0
    for line in header.splitlines():
        if line.startswith("element vertex "):
            try:
                count = int(line.split()[-1])
            except ValueError:
                raise DatasetFormatError(f"{path}: bad vertex count at offset {offset}")
        if line == f"comment scenesynth_ply {FORMAT_VERSION}":
            version_ok = True
        elif line.startswith("comment scenesynth_ply "):
            raise DatasetFormatError(
                f"{path}: unsupported format version in {line!r} (offset {offset})")
        if line.startswith("format ") and line != "format binary_little_endian 1.0":
            raise DatasetFormatError(f"{path}: unsupported PLY format {line!r} (offset {offset})")
        offset += len(line) + 1
    if count is None:
        raise DatasetFormatError(f"{path}: missing element vertex line (offset {header_end})")
    if not version_ok:
        raise DatasetFormatError(f"{path}: missing scenesynth_ply version comment (offset 0)")
    expected = count * PLY_DTYPE.itemsize
    body = data[body_start:]
    if len(body) != expected:
        raise DatasetFormatError(
            f"{path}: body has {len(body)} bytes, expected {expected} (offset {body_start})")
    rec = np.frombuffer(body, dtype=PLY_DTYPE)
    points = np.column_stack([rec["x"], rec["y"], rec["z"]]).astype(np.float64)
    colors = np.column_stack([rec["red"], rec["green"], rec["blue"]])
    return LabeledPointCloud(points=points, instance_ids=rec["instance_id"].astype(np.int64),
                             colors=colors)


def _dump_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise DatasetFormatError(f"missing file {path}")
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: invalid JSON at char {exc.pos}: {exc.msg}")


def instance_masks(cloud: LabeledPointCloud) -> dict[int, np.ndarray]:
    """Point-index masks per instance id; structure (id 0) points are dropped."""
    masks: dict[int, np.ndarray] = {}
    for inst_id in np.unique(cloud.instance_ids):
        if inst_id == STRUCTURE_ID:
            continue
        masks[int(inst_id)] = np.nonzero(cloud.instance_ids == inst_id)[0]
    return masks


def export_scene(scene_dir: str | Path, scene_id: str, cloud: LabeledPointCloud,
                 instances: list[InstanceEntry], meta: dict | None = None) -> None:
    """Write one scene directory (points.ply, instances.json, meta.json).

    Instance point counts are recomputed from the cloud so the stored
    index always partitions the labeled points.
    """
    scene_dir = Path(scene_dir)
    scene_dir.mkdir(parents=True, exist_ok=True)
    counts = {int(i): int(c) for i, c in
              zip(*np.unique(cloud.instance_ids, return_counts=True))}
    known = {e.instance_id for e in instances}
    stray = set(counts) - known - {STRUCTURE_ID}
    if stray:
        raise DatasetFormatError(f"cloud contains ids missing from the index: {sorted(stray)}")
    filled = [InstanceEntry(**{**e.__dict__, "point_count": counts.get(e.instance_id, 0)})
              for e in instances]
    write_ply(scene_dir / "points.ply", cloud)
    _dump_json(scene_dir / "instances.json", {
        "format_version": FORMAT_VERSION,
        "scene_id": scene_id,
        "instances": [e.to_json() for e in filled],
    })
    _dump_json(scene_dir / "meta.json", {
        "format_version": FORMAT_VERSION,
        "scene_id": scene_id,
        **(meta or {}),
    })


def load_scene(scene_dir: str | Path) -> tuple[SceneSample, LabeledPointCloud]:
    """Load one scene directory back into memory."""
    scene_dir = Path(scene_dir)
    cloud = read_ply(scene_dir / "points.ply")
    idx = _read_json(scene_dir / "instances.json")
    if idx.get("format_version") != FORMAT_VERSION:
        raise DatasetFormatError(
            f"{scene_dir}/instances.json: format_version {idx.get('format_version')!r} "
            f"is not {FORMAT_VERSION}")
    meta = _read_json(scene_dir / "meta.json")
    entries = [InstanceEntry.from_json(d) for d in idx["instances"]]
    sample = SceneSample(scene_id=idx["scene_id"], instances=entries, meta=meta)
    return sample, cloud


def export_manifest(root: str | Path, manifest: DatasetManifest) -> None:
    manifest.validate()
    _dump_json(Path(root) / "manifest.json", {
        "format_version": FORMAT_VERSION,
        "master_seed": manifest.master_seed,
        "training_balance_alpha": manifest.training_balance_alpha,
        "config": manifest.config,
        "scenes": [{"scene_id": s.scene_id, "path": s.path,
                    "point_count": s.point_count, "instance_count": s.instance_count}
                   for s in manifest.scenes],
    })


def load_manifest(root: str | Path) -> DatasetManifest:
    root = Path(root)
    raw = _read_json(root / "manifest.json")
    if raw.get("format_version") != FORMAT_VERSION:
        raise DatasetFormatError(
            f"{root}/manifest.json: format_version {raw.get('format_version')!r} "
            f"is not {FORMAT_VERSION}")
    manifest = DatasetManifest(
        master_seed=int(raw["master_seed"]),
        training_balance_alpha=float(raw.get("training_balance_alpha", 0.5)),
        config=raw.get("config", {}),
        scenes=[SceneRef(scene_id=s["scene_id"], path=s["path"],
                         point_count=int(s["point_count"]),
                         instance_count=int(s["instance_count"]))
                for s in raw["scenes"]])
    manifest.validate()
    missing = [s.scene_id for s in manifest.scenes if not (root / s.path / "points.ply").is_file()]
    if missing:
        raise DatasetFormatError(f"manifest references missing scenes: {missing}")
    return manifest
