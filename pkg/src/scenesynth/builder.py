"""Scene assembly: room structure plus posed asset meshes.

The builder merges the room shell (floor and four walls, optionally a
ceiling) with every placed asset mesh transformed into world space.
Instance id 0 is reserved for the room structure; placed objects get
dense ids 1..N in placement order (floor, then wall, then supported
groups in supporter order).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .catalog import AssetCatalog, TriangleMesh, load_mesh, save_obj
from .seeding import splitmix64
from .solver import LayoutSolution, Placement, PlaceableObject, RoomSpec

logger = logging.getLogger(__name__)

STRUCTURE_ID = 0
STRUCTURE_COLOR = (168, 168, 168)

_BOUNDS_TOL = 1e-6


class AssemblyError(ValueError):
    """Raised when a scene cannot be assembled consistently."""


@dataclass
class SceneInstance:
    """One placed object in a finished scene."""

    instance_id: int
    object_id: str
    asset_id: str
    class_name: str
    surface_id: str
    yaw_deg: float
    translation: tuple[float, float, float]
    box_min: tuple[float, float, float]
    box_max: tuple[float, float, float]


@dataclass
class SceneMesh:
    """Merged scene geometry with per-triangle instance ids and colors."""

    mesh: TriangleMesh
    triangle_instance_ids: np.ndarray  # (T,) int64
    triangle_colors: np.ndarray        # (T, 3) uint8


def instance_color(instance_id: int) -> tuple[int, int, int]:
    """Deterministic display color for an instance id."""
    h = splitmix64(0x5CE9E ^ instance_id)
    return (64 + (h >> 16) % 192, 64 + (h >> 8) % 192, 64 + h % 192)


def _room_shell(room: RoomSpec) -> TriangleMesh:
    w, d, h = room.width, room.depth, room.height
    v = [
        (0, 0, 0), (w, 0, 0), (w, d, 0), (0, d, 0),
        (0, 0, h), (w, 0, h), (w, d, h), (0, d, h),
    ]
    quads = [
        (0, 1, 2, 3),  # floor
        (0, 1, 5, 4),  # south wall (y = 0)
        (1, 2, 6, 5),  # east wall (x = w)
        (2, 3, 7, 6),  # north wall (y = d)
        (3, 0, 4, 7),  # west wall (x = 0)
    ]
    if room.include_ceiling:
        quads.append((4, 5, 6, 7))
    tris = []
    for a, b, c, e in quads:
        tris.append((a, b, c))
        tris.append((a, c, e))
    return TriangleMesh(np.array(v, dtype=np.float64), np.array(tris, dtype=np.int64))


def build_scene(room: RoomSpec, floor_sol: LayoutSolution, wall_sol: LayoutSolution,
                supported_sols: list[LayoutSolution], objects: dict[str, PlaceableObject],
                catalog: AssetCatalog, mesh_cache: dict | None = None
                ) -> tuple[SceneMesh, list[SceneInstance]]:
    """Merge the room shell and all placements into one labeled mesh.

    Args:
        objects: map from object id to the :class:`PlaceableObject` that
            produced each placement (supplies asset and class).
        mesh_cache: optional shared cache of canonical meshes by asset id.

    Raises :class:`AssemblyError` when any transformed vertex leaves the
    room box by more than 1e-6 m.
    """
    room.validate()
    cache = mesh_cache if mesh_cache is not None else {}

    ordered: list[Placement] = list(floor_sol.placements) + list(wall_sol.placements)
    for sol in supported_sols:
        ordered.extend(sol.placements)

    shell = _room_shell(room)
    verts = [shell.vertices]
    tris = [shell.triangles]
    tri_ids = [np.full(len(tris[0]), STRUCTURE_ID, dtype=np.int64)]
    tri_colors = [np.tile(np.array(STRUCTURE_COLOR, dtype=np.uint8), (len(tris[0]), 1))]
    instances: list[SceneInstance] = []

    room_lo = np.array([0.0, 0.0, 0.0]) - _BOUNDS_TOL
    room_hi = np.array([room.width, room.depth, room.height]) + _BOUNDS_TOL
    offset = len(verts[0])
    for n, pl in enumerate(ordered, start=1):
        obj = objects[pl.object_id]
        if obj.asset_id not in cache:
            cache[obj.asset_id] = load_mesh(catalog.get(obj.asset_id))
        base = cache[obj.asset_id]
        posed = base.transformed(pl.rotation(), np.asarray(pl.translation))
        if (posed.vertices < room_lo).any() or (posed.vertices > room_hi).any():
            raise AssemblyError(
                f"object {pl.object_id} ({obj.asset_id}) leaves the room bounds")
        verts.append(posed.vertices)
        tris.append(posed.triangles + offset)
        tri_ids.append(np.full(len(posed.triangles), n, dtype=np.int64))
        if posed.vertex_colors is not None:
            per_tri = (posed.vertex_colors[posed.triangles].mean(axis=1) * 255.0)
            tri_colors.append(np.clip(per_tri, 0, 255).astype(np.uint8))
        else:
            tri_colors.append(np.tile(np.array(instance_color(n), dtype=np.uint8),
                                      (len(posed.triangles), 1)))
        offset += len(posed.vertices)
        instances.append(SceneInstance(
            instance_id=n, object_id=pl.object_id, asset_id=obj.asset_id,
            class_name=obj.class_name, surface_id=pl.surface_id,
            yaw_deg=float(pl.orientation), translation=pl.translation,
            box_min=pl.box_min, box_max=pl.box_max))

    merged = TriangleMesh(np.concatenate(verts), np.concatenate(tris))
    merged.validate()
    return SceneMesh(merged, np.concatenate(tri_ids), np.concatenate(tri_colors)), instances


def export_debug_obj(scene: SceneMesh, path: str | Path) -> None:
    """Write the merged mesh as OBJ plus a JSON triangle-to-instance sidecar."""
    path = Path(path)
    save_obj(path, scene.mesh)
    sidecar = {
        "format_version": 1,
        "triangle_instance_ids": [int(x) for x in scene.triangle_instance_ids],
    }
    path.with_suffix(".instances.json").write_text(json.dumps(sidecar, sort_keys=True))
