"""Asset catalog: manifest loading, OBJ mesh IO, canonical alignment.

Assets are triangle meshes referenced by a JSON manifest. Each record
carries the placement group the asset belongs to (``floor``, ``wall`` or
``obj`` for small supported objects), the bounding-box size it should be
scaled to, and which horizontal axis its front faces in the source file.
Loading a mesh brings it into the canonical frame: z up, front along +y,
axis-aligned bounding box equal to ``target_dims``, base resting at
height 0 and the box centered on the z axis.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geom import rot_z

logger = logging.getLogger(__name__)

GROUPS = ("floor", "wall", "obj")

# Rotation about +z that maps the declared front axis onto +y.
FRONT_AXIS_YAW = {"+y": 0, "+x": 90, "-y": 180, "-x": 270}

_DEGENERATE_AREA = 1e-12


class CatalogError(ValueError):
    """Raised when an asset manifest or mesh fails validation."""


@dataclass
class TriangleMesh:
    """Indexed triangle mesh with optional per-vertex colors.

    Attributes:
        vertices: (V, 3) float64 positions in meters.
        triangles: (T, 3) int64 vertex indices.
        vertex_colors: optional (V, 3) float64 RGB in [0, 1].
    """

    vertices: np.ndarray
    triangles: np.ndarray
    vertex_colors: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.vertex_colors is not None:
            self.vertex_colors = np.asarray(self.vertex_colors, dtype=np.float64).reshape(-1, 3)

    def validate(self) -> None:
        if len(self.vertices) == 0 or len(self.triangles) == 0:
            raise CatalogError("mesh has no geometry")
        if not np.isfinite(self.vertices).all():
            raise CatalogError("mesh has non-finite vertices")
        if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
            raise CatalogError("triangle index out of range")
        if self.vertex_colors is not None and len(self.vertex_colors) != len(self.vertices):
            raise CatalogError("vertex color count does not match vertex count")

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def triangle_corners(self) -> np.ndarray:
        """(T, 3, 3) array of triangle corner positions."""
        return self.vertices[self.triangles]

    def triangle_areas(self) -> np.ndarray:
        corners = self.triangle_corners()
        cross = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "TriangleMesh":
        verts = self.vertices @ np.asarray(rotation, dtype=np.float64).T + np.asarray(translation, dtype=np.float64)
        colors = None if self.vertex_colors is None else self.vertex_colors.copy()
        return TriangleMesh(verts, self.triangles.copy(), colors)


@dataclass(frozen=True)
class AssetRecord:
    """One catalog entry.

    Attributes:
        asset_id: unique identifier within the catalog.
        class_name: semantic class label.
        group: placement group, one of ``floor``/``wall``/``obj``.
        mesh_path: mesh file path as written in the manifest.
        target_dims: canonical AABB size (x width, y depth, z height), meters.
        front_axis: horizontal axis the source mesh front faces.
        resolved_path: absolute mesh path, filled in by :func:`load_catalog`.
    """

    asset_id: str
    class_name: str
    group: str
    mesh_path: str
    target_dims: tuple[float, float, float]
    front_axis: str = "+y"
    resolved_path: Path | None = None

    def to_manifest(self) -> dict:
        return {
            "asset_id": self.asset_id,
            "class_name": self.class_name,
            "group": self.group,
            "mesh_path": self.mesh_path,
            "target_dims": list(self.target_dims),
            "front_axis": self.front_axis,
        }


@dataclass
class AssetCatalog:
    """Validated asset inventory with group and class indices."""

    records: list[AssetRecord]
    base_dir: Path
    by_group: dict[str, list[str]] = field(default_factory=dict)
    by_class: dict[str, list[str]] = field(default_factory=dict)
    _by_id: dict[str, AssetRecord] = field(default_factory=dict)

    def __post_init__(self):
        self._by_id = {r.asset_id: r for r in self.records}
        self.by_group = {g: [] for g in GROUPS}
        self.by_class = {}
        for r in self.records:
            self.by_group[r.group].append(r.asset_id)
            self.by_class.setdefault(r.class_name, []).append(r.asset_id)

    def __len__(self) -> int:
        return len(self.records)

    def get(self, asset_id: str) -> AssetRecord:
        try:
            return self._by_id[asset_id]
        except KeyError:
            raise CatalogError(f"unknown asset id {asset_id!r}") from None

    def group_records(self, group: str) -> list[AssetRecord]:
        if group not in GROUPS:
            raise CatalogError(f"unknown group {group!r}")
        return [self._by_id[a] for a in self.by_group[group]]

    def to_manifest(self) -> list[dict]:
        return [r.to_manifest() for r in self.records]


def parse_obj(text: str, name: str = "<obj>") -> TriangleMesh:
    """Parse the v/f subset of Wavefront OBJ text.

    Vertex lines may carry an optional RGB extension (``v x y z r g b``).
    Faces with more than three indices are fan-triangulated. Zero-area
    triangles are dropped.
    """
    verts: list[list[float]] = []
    colors: list[list[float]] = []
    faces: list[list[int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            try:
                vals = [float(p) for p in parts[1:]]
            except ValueError:
                raise CatalogError(f"{name}:{lineno}: malformed vertex line {raw!r}")
            if len(vals) not in (3, 6):
                raise CatalogError(f"{name}:{lineno}: vertex line needs 3 or 6 floats")
            verts.append(vals[:3])
            if len(vals) == 6:
                colors.append(vals[3:])
        elif tag == "f":
            if len(parts) < 4:
                raise CatalogError(f"{name}:{lineno}: face needs at least 3 indices")
            try:
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            except ValueError:
                raise CatalogError(f"{name}:{lineno}: malformed face line {raw!r}")
            if any(i < 0 for i in idx):
                raise CatalogError(f"{name}:{lineno}: face index out of range")
            for a, b in zip(idx[1:-1], idx[2:]):
                faces.append([idx[0], a, b])
        # other OBJ tags (vn, vt, o, g, s, mtllib, usemtl) are ignored
    if not verts or not faces:
        raise CatalogError(f"{name}: empty mesh (no vertices or no faces)")
    if colors and len(colors) != len(verts):
        raise CatalogError(f"{name}: vertex colors present on only some vertices")
    mesh = TriangleMesh(np.array(verts), np.array(faces), np.array(colors) if colors else None)
    mesh.validate()
    areas = mesh.triangle_areas()
    keep = areas > _DEGENERATE_AREA
    if not keep.all():
        mesh = TriangleMesh(mesh.vertices, mesh.triangles[keep], mesh.vertex_colors)
    if len(mesh.triangles) == 0:
        raise CatalogError(f"{name}: all triangles are degenerate")
    return mesh


def load_obj(path: str | Path) -> TriangleMesh:
    path = Path(path)
    return parse_obj(path.read_text(), name=str(path))


def save_obj(path: str | Path, mesh: TriangleMesh) -> None:
    """Write a mesh as OBJ (v/f lines, colors via the RGB vertex extension)."""
    lines = []
    for i, v in enumerate(mesh.vertices):
        if mesh.vertex_colors is not None:
            c = mesh.vertex_colors[i]
            lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g} {c[0]:.6g} {c[1]:.6g} {c[2]:.6g}")
        else:
            lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for t in mesh.triangles:
        lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    Path(path).write_text("\n".join(lines) + "\n")


def canonicalize(mesh: TriangleMesh, target_dims, front_axis: str = "+y") -> TriangleMesh:
    """Bring a mesh into the canonical frame.

    The mesh is rotated about the vertical axis so its front faces +y,
    scaled per axis so the AABB equals ``target_dims``, and translated so
    the AABB is centered on x and y with its base at z = 0.
    """
    if front_axis not in FRONT_AXIS_YAW:
        raise CatalogError(f"unknown front_axis {front_axis!r}")
    dims = np.asarray(target_dims, dtype=np.float64)
    if dims.shape != (3,) or not (dims > 0).all():
        raise CatalogError("target_dims must be three positive numbers")
    verts = mesh.vertices @ rot_z(FRONT_AXIS_YAW[front_axis]).T
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    extent = hi - lo
    if (extent < 1e-9).any():
        raise CatalogError("mesh is degenerate (zero extent along an axis)")
    verts = verts * (dims / extent)
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    shift = np.array([-(lo[0] + hi[0]) / 2.0, -(lo[1] + hi[1]) / 2.0, -lo[2]])
    return TriangleMesh(verts + shift, mesh.triangles.copy(),
                        None if mesh.vertex_colors is None else mesh.vertex_colors.copy())


def load_mesh(record: AssetRecord, base_dir: str | Path | None = None) -> TriangleMesh:
    """Load an asset mesh and bring it into the canonical frame."""
    path = record.resolved_path
    if path is None:
        base = Path(base_dir) if base_dir is not None else Path(".")
        path = base / record.mesh_path
    mesh = load_obj(path)
    return canonicalize(mesh, record.target_dims, record.front_axis)


def load_catalog(manifest_path: str | Path) -> AssetCatalog:
    """Load and validate an asset manifest.

    Raises :class:`CatalogError` on duplicate ids, unknown groups or front
    axes, non-positive dimensions, or missing mesh files (all missing files
    are reported in one error).
    """
    manifest_path = Path(manifest_path)
    try:
        raw = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise CatalogError(f"manifest not found: {manifest_path}")
    except json.JSONDecodeError as exc:
        raise CatalogError(f"manifest is not valid JSON: {exc}") from exc
    if isinstance(raw, dict):
        raw = raw.get("assets", None)
    if not isinstance(raw, list):
        raise CatalogError("manifest must be a JSON array of asset records (or {'assets': [...]})")

    base_dir = manifest_path.parent
    records: list[AssetRecord] = []
    seen: set[str] = set()
    missing: list[str] = []
    for i, entry in enumerate(raw):
        try:
            asset_id = entry["asset_id"]
            class_name = entry["class_name"]
            group = entry["group"]
            mesh_path = entry["mesh_path"]
            dims = entry["target_dims"]
        except (KeyError, TypeError) as exc:
            raise CatalogError(f"manifest record {i}: missing field {exc}")
        front_axis = entry.get("front_axis", "+y")
        if asset_id in seen:
            raise CatalogError(f"duplicate asset id {asset_id!r}")
        seen.add(asset_id)
        if group not in GROUPS:
            raise CatalogError(f"asset {asset_id!r}: unknown group {group!r}")
        if front_axis not in FRONT_AXIS_YAW:
            raise CatalogError(f"asset {asset_id!r}: unknown front_axis {front_axis!r}")
        dims = [float(d) for d in dims]
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise CatalogError(f"asset {asset_id!r}: target_dims must be three positive numbers")
        resolved = (base_dir / mesh_path).resolve()
        if not resolved.is_file():
            missing.append(asset_id)
        records.append(AssetRecord(asset_id, class_name, group, mesh_path,
                                   (dims[0], dims[1], dims[2]), front_axis, resolved))
    if missing:
        raise CatalogError(f"missing mesh files for assets: {', '.join(missing)}")
    if not records:
        raise CatalogError("manifest contains no assets")
    logger.debug("loaded catalog with %d assets from %s", len(records), manifest_path)
    return AssetCatalog(records, base_dir)
