"""Shared fixtures: a synthetic asset workspace and small pipeline configs.

All assets are generated programmatically (boxes, wedges, octahedra and
octagonal prisms) so the suite has no binary fixtures and every expected
value can be derived from first principles.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from scenesynth.catalog import TriangleMesh, load_catalog, save_obj
from scenesynth.pipeline import PipelineConfig


def box_mesh(w=1.0, d=1.0, h=1.0):
    v = np.array([[x, y, z] for z in (0.0, h) for y in (0.0, d) for x in (0.0, w)])
    f = np.array([
        [0, 2, 1], [1, 2, 3],          # bottom
        [4, 5, 6], [5, 7, 6],          # top
        [0, 1, 4], [1, 5, 4],          # front (y=0)
        [2, 6, 3], [3, 6, 7],          # back
        [0, 4, 2], [2, 4, 6],          # left
        [1, 3, 5], [3, 7, 5],          # right
    ])
    return TriangleMesh(v.astype(float), f)


def wedge_mesh():
    v = np.array([
        [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 1.0],
        [0.0, 1.0, 0.0], [1.0, 1.0, 0.0], [1.0, 1.0, 1.0],
    ])
    f = np.array([
        [0, 1, 2], [3, 5, 4],
        [0, 3, 1], [1, 3, 4],
        [1, 4, 2], [2, 4, 5],
        [0, 2, 3], [2, 5, 3],
    ])
    return TriangleMesh(v, f)


def octahedron_mesh():
    v = np.array([
        [1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0], [0, 0, 1.0], [0, 0, -1.0],
    ])
    f = np.array([
        [0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
        [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5],
    ])
    return TriangleMesh(v, f)


def prism_mesh(sides=8):
    ang = 2 * np.pi * np.arange(sides) / sides
    ring = np.column_stack([np.cos(ang), np.sin(ang)])
    v = np.vstack([np.column_stack([ring, np.zeros(sides)]),
                   np.column_stack([ring, np.ones(sides)])])
    f = []
    for i in range(sides):
        j = (i + 1) % sides
        f += [[i, j, sides + i], [j, sides + j, sides + i]]
    for i in range(1, sides - 1):
        f.append([0, i + 1, i])                     # bottom cap
        f.append([sides, sides + i, sides + i + 1])  # top cap
    return TriangleMesh(v, np.array(f))


# (asset_id, class_name, group, builder, target_dims, front_axis)
ASSET_TABLE = [
    ("table_a", "table", "floor", box_mesh, (1.2, 0.7, 0.75), "+y"),
    ("table_b", "table", "floor", prism_mesh, (1.1, 0.8, 0.72), "+y"),
    ("chair_a", "chair", "floor", box_mesh, (0.45, 0.45, 0.9), "+y"),
    ("chair_b", "chair", "floor", wedge_mesh, (0.5, 0.5, 0.85), "+x"),
    ("sofa_a", "sofa", "floor", box_mesh, (1.8, 0.85, 0.8), "+y"),
    ("cabinet_a", "cabinet", "floor", box_mesh, (0.8, 0.4, 1.6), "+y"),
    ("stand_a", "plantstand", "floor", octahedron_mesh, (0.3, 0.3, 1.0), "+y"),
    ("picture_a", "picture", "wall", box_mesh, (0.6, 0.04, 0.45), "+y"),
    ("clock_a", "clock", "wall", octahedron_mesh, (0.3, 0.07, 0.3), "+y"),
    ("shelf_a", "shelf", "wall", box_mesh, (0.8, 0.15, 0.18), "+y"),
    ("mug_a", "mug", "obj", prism_mesh, (0.09, 0.09, 0.1), "+y"),
    ("book_a", "book", "obj", box_mesh, (0.15, 0.21, 0.05), "+y"),
    ("lamp_a", "lamp", "obj", wedge_mesh, (0.15, 0.15, 0.4), "+y"),
    ("plant_a", "plant", "obj", octahedron_mesh, (0.18, 0.18, 0.3), "+y"),
]


def write_asset_workspace(root: Path, table=None) -> Path:
    """Write OBJ meshes plus a manifest; returns the manifest path."""
    root.mkdir(parents=True, exist_ok=True)
    (root / "meshes").mkdir(exist_ok=True)
    entries = []
    for asset_id, class_name, group, builder, dims, front in (table or ASSET_TABLE):
        mesh_path = f"meshes/{asset_id}.obj"
        save_obj(root / mesh_path, builder())
        entries.append({
            "asset_id": asset_id, "class_name": class_name, "group": group,
            "mesh_path": mesh_path, "target_dims": list(dims), "front_axis": front,
        })
    manifest = root / "assets.json"
    manifest.write_text(json.dumps({"assets": entries}, indent=2))
    return manifest


@pytest.fixture(scope="session")
def asset_manifest(tmp_path_factory) -> Path:
    return write_asset_workspace(tmp_path_factory.mktemp("assets"))


@pytest.fixture(scope="session")
def catalog(asset_manifest):
    return load_catalog(asset_manifest)


def desk_config(asset_manifest: Path, out_dir: Path, **overrides) -> PipelineConfig:
    """A config small enough to run scenes in well under a second each."""
    params = dict(
        asset_manifest=str(asset_manifest), scene_count=2, m1=4, m2=2,
        per_support_count=2, real_classes=("chair", "shelf", "mug"),
        room_width=5.0, room_depth=5.0, room_height=2.6,
        image_width=64, image_height=48, voxel_size=0.05, max_nodes=2000,
        master_seed=7, output_dir=str(out_dir))
    params.update(overrides)
    return PipelineConfig(**params)
