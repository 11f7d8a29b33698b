"""Simulated multi-view RGB-D scanning of assembled scenes.

Scan vantage points come from a mid-height grid of candidate cells
(cells over any instance footprint are excluded), thinned to a few
well-spread positions by farthest-point sampling. Each vantage point
renders a full yaw sweep of pinhole depth images; all views are
back-projected into one labeled cloud, which is then voxel-downsampled
keeping one deterministic point per voxel.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .builder import SceneInstance, SceneMesh
from .bvh import build_bvh, render_tri_hits
from .geom import rot_z
from .seeding import hash_chain_array
from .solver import RoomSpec

logger = logging.getLogger(__name__)

DEFAULT_SCAN_CELL = 0.1
DEFAULT_VANTAGE_COUNT = 5
DEFAULT_YAW_STEP = 30.0
DEFAULT_MAX_RANGE = 20.0
DEFAULT_VOXEL_SIZE = 0.02

_EPS = 1e-9


class ScanError(RuntimeError):
    """Raised when a scene cannot be scanned."""


@dataclass
class CameraIntrinsics:
    """Pinhole intrinsics; the defaults give a 60 degree horizontal FOV."""

    width: int = 320
    height: int = 240
    fx: float = 277.1
    fy: float = 277.1
    cx: float = 159.5
    cy: float = 119.5

    def validate(self) -> None:
        if self.width < 1 or self.height < 1 or self.fx <= 0 or self.fy <= 0:
            raise ValueError("invalid camera intrinsics")

    @classmethod
    def for_resolution(cls, width: int, height: int, hfov_deg: float = 60.0) -> "CameraIntrinsics":
        f = (width / 2.0) / np.tan(np.deg2rad(hfov_deg) / 2.0)
        return cls(width=width, height=height, fx=float(f), fy=float(f),
                   cx=(width - 1) / 2.0, cy=(height - 1) / 2.0)


@dataclass
class CameraPose:
    """Camera position with yaw about +z and pitch above the horizon.

    Yaw 0 looks along +y; the camera frame is x right, y down, z forward.
    """

    position: tuple[float, float, float]
    yaw_deg: float
    pitch_deg: float = 0.0

    def rotation_world_from_cam(self) -> np.ndarray:
        fh = rot_z(self.yaw_deg) @ np.array([0.0, 1.0, 0.0])
        p = np.deg2rad(self.pitch_deg)
        forward = np.cos(p) * fh + np.sin(p) * np.array([0.0, 0.0, 1.0])
        right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
        norm = np.linalg.norm(right)
        if norm < 1e-12:
            raise ValueError("camera pitch too close to vertical")
        right /= norm
        down = np.cross(forward, right)
        return np.column_stack([right, down, forward])


@dataclass
class DepthImage:
    """Rendered view: z-depth, instance id and color per pixel.

    Depth 0 marks a miss; ``instance`` is -1 there.
    """

    depth: np.ndarray               # (H, W) float64
    instance: np.ndarray            # (H, W) int32
    color: np.ndarray | None = None  # (H, W, 3) uint8


@dataclass
class LabeledPointCloud:
    """Point positions with per-point instance ids and colors."""

    points: np.ndarray               # (N, 3) float64
    instance_ids: np.ndarray         # (N,) int64
    colors: np.ndarray | None = None  # (N, 3) uint8

    def __len__(self) -> int:
        return len(self.points)

    def validate(self) -> None:
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError("points must be (N, 3)")
        if len(self.instance_ids) != len(self.points):
            raise ValueError("instance id count does not match point count")
        if self.colors is not None and self.colors.shape != (len(self.points), 3):
            raise ValueError("color count does not match point count")


def candidate_scan_cells(instances: list[SceneInstance], room: RoomSpec,
                         cell_size: float = DEFAULT_SCAN_CELL) -> np.ndarray:
    """Free cell centers on the mid-height plane, in row-major cell order.

    A cell is excluded iff any instance footprint box, projected to the
    plane, overlaps it with positive area (boundary contact is fine).
    """
    nx = int(np.floor(room.width / cell_size + _EPS))
    ny = int(np.floor(room.depth / cell_size + _EPS))
    if nx < 1 or ny < 1:
        raise ScanError("room is smaller than one scan cell")
    free = np.ones((nx, ny), dtype=bool)
    edges_x = np.arange(nx + 1) * cell_size
    edges_y = np.arange(ny + 1) * cell_size
    for inst in instances:
        i0 = max(np.searchsorted(edges_x, inst.box_min[0], side="left") - 1, 0)
        i1 = np.searchsorted(edges_x, inst.box_max[0], side="right") - 1
        j0 = max(np.searchsorted(edges_y, inst.box_min[1], side="left") - 1, 0)
        j1 = np.searchsorted(edges_y, inst.box_max[1], side="right") - 1
        for i in range(i0, min(i1 + 1, nx)):
            for j in range(j0, min(j1 + 1, ny)):
                ox = min(inst.box_max[0], edges_x[i + 1]) - max(inst.box_min[0], edges_x[i])
                oy = min(inst.box_max[1], edges_y[j + 1]) - max(inst.box_min[1], edges_y[j])
                if ox > _EPS and oy > _EPS:
                    free[i, j] = False
    ii, jj = np.nonzero(free)
    if len(ii) == 0:
        raise ScanError("no free scan cells: every mid-height cell is covered")
    z = room.height / 2.0
    return np.column_stack([(ii + 0.5) * cell_size, (jj + 0.5) * cell_size,
                            np.full(len(ii), z)])


def farthest_point_sampling(candidates: np.ndarray, k: int = DEFAULT_VANTAGE_COUNT,
                            seed: int = 0) -> np.ndarray:
    """Greedy farthest-point subset of k positions.

    The first pick is seeded-uniform; each next pick maximizes the
    minimum distance to the picks so far, ties broken by lowest
    candidate index. Fewer than k candidates returns them all.
    """
    pts = np.asarray(candidates, dtype=np.float64)
    n = len(pts)
    if n == 0:
        raise ValueError("farthest_point_sampling needs at least one candidate")
    k_eff = min(k, n)
    if k_eff < 1:
        raise ValueError("k must be at least 1")
    rng = np.random.default_rng(seed)
    first = int(rng.integers(n))
    chosen = [first]
    min_d = np.linalg.norm(pts - pts[first], axis=1)
    for _ in range(1, k_eff):
        nxt = int(np.argmax(min_d))
        chosen.append(nxt)
        min_d = np.minimum(min_d, np.linalg.norm(pts - pts[nxt], axis=1))
    return pts[chosen]


class SceneRaycaster:
    """Reusable BVH-backed renderer for one scene."""

    def __init__(self, scene: SceneMesh):
        self.scene = scene
        self.tri_verts = np.ascontiguousarray(scene.mesh.triangle_corners())
        self.bvh = build_bvh(self.tri_verts)
        self.tri_instance = scene.triangle_instance_ids.astype(np.int64)
        self.tri_colors = scene.triangle_colors

    def render(self, pose: CameraPose, intrinsics: CameraIntrinsics,
               max_range: float = DEFAULT_MAX_RANGE) -> DepthImage:
        """Render one view. Callers are responsible for keeping the pose
        inside the room; a pose outside simply sees the scene from there."""
        intrinsics.validate()
        pos = np.asarray(pose.position, dtype=np.float64)
        depth, hit = render_tri_hits(
            self.bvh, self.tri_verts, pose.rotation_world_from_cam(), pos,
            intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy,
            intrinsics.width, intrinsics.height, max_range)
        valid = hit >= 0
        instance = np.full(hit.shape, -1, dtype=np.int32)
        instance[valid] = self.tri_instance[hit[valid]]
        color = np.zeros((*hit.shape, 3), dtype=np.uint8)
        color[valid] = self.tri_colors[hit[valid]]
        return DepthImage(depth=depth, instance=instance, color=color)


def render_depth(scene: SceneMesh, pose: CameraPose, intrinsics: CameraIntrinsics,
                 max_range: float = DEFAULT_MAX_RANGE) -> DepthImage:
    """One-off depth render (builds the BVH; use SceneRaycaster for sweeps)."""
    return SceneRaycaster(scene).render(pose, intrinsics, max_range)


def scan_scene(scene: SceneMesh, instances: list[SceneInstance], room: RoomSpec,
               intrinsics: CameraIntrinsics | None = None, seed: int = 0,
               scan_cell: float = DEFAULT_SCAN_CELL, vantage_count: int = DEFAULT_VANTAGE_COUNT,
               yaw_step_deg: float = DEFAULT_YAW_STEP, max_range: float = DEFAULT_MAX_RANGE,
               parallelism: int = 1) -> list[tuple[CameraPose, DepthImage]]:
    """Render the full vantage-by-yaw sweep for a scene.

    Views are ordered vantage-major then by ascending yaw, so with the
    defaults (5 vantage points, 30 degree steps) a scene yields exactly
    60 views. The output order is independent of ``parallelism``.
    """
    intrinsics = intrinsics if intrinsics is not None else CameraIntrinsics()
    candidates = candidate_scan_cells(instances, room, scan_cell)
    vantage = farthest_point_sampling(candidates, vantage_count, seed)
    yaw_count = int(round(360.0 / yaw_step_deg))
    poses = [CameraPose(position=tuple(pos), yaw_deg=yi * yaw_step_deg)
             for pos in vantage for yi in range(yaw_count)]
    caster = SceneRaycaster(scene)
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            images = list(pool.map(lambda p: caster.render(p, intrinsics, max_range), poses))
    else:
        images = [caster.render(p, intrinsics, max_range) for p in poses]
    return list(zip(poses, images))


def backproject(image: DepthImage, pose: CameraPose, intrinsics: CameraIntrinsics
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World points, ids and colors for the valid pixels of one view.

    Pixels are emitted in row-major order. A pixel (u, v) with depth d
    back-projects to ((u - cx) d / fx, (v - cy) d / fy, d) in the camera
    frame.
    """
    h, w = image.depth.shape
    us = np.arange(w, dtype=np.float64)[None, :]
    vs = np.arange(h, dtype=np.float64)[:, None]
    valid = image.depth > 0
    d = image.depth[valid]
    x = ((np.broadcast_to(us, (h, w))[valid] - intrinsics.cx) * d) / intrinsics.fx
    y = ((np.broadcast_to(vs, (h, w))[valid] - intrinsics.cy) * d) / intrinsics.fy
    cam = np.column_stack([x, y, d])
    world = cam @ pose.rotation_world_from_cam().T + np.asarray(pose.position)
    ids = image.instance[valid].astype(np.int64)
    colors = image.color[valid] if image.color is not None \
        else np.zeros((len(ids), 3), dtype=np.uint8)
    return world, ids, colors


def backproject_and_fuse(views: list[tuple[CameraPose, DepthImage]],
                         intrinsics: CameraIntrinsics) -> LabeledPointCloud:
    """Fuse all views into one cloud in canonical (view, row, col) order."""
    parts = [backproject(img, pose, intrinsics) for pose, img in views]
    if not parts:
        return LabeledPointCloud(np.empty((0, 3)), np.empty(0, dtype=np.int64),
                                 np.empty((0, 3), dtype=np.uint8))
    points = np.concatenate([p[0] for p in parts])
    ids = np.concatenate([p[1] for p in parts])
    colors = np.concatenate([p[2] for p in parts])
    return LabeledPointCloud(points=points, instance_ids=ids, colors=colors)


def voxel_downsample(cloud: LabeledPointCloud, voxel_size: float = DEFAULT_VOXEL_SIZE,
                     seed: int = 0) -> LabeledPointCloud:
    """Keep one point per occupied voxel, chosen by a seeded hash.

    The winner of a voxel minimizes (hash(seed, voxel, point index),
    point index), which depends only on values, not on evaluation order,
    so any parallel decomposition of the input yields the same result.
    Output points keep their ids and colors and are emitted in ascending
    original-index order.
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    n = len(cloud)
    if n == 0:
        return LabeledPointCloud(cloud.points.copy(), cloud.instance_ids.copy(),
                                 None if cloud.colors is None else cloud.colors.copy())
    vox = np.floor(cloud.points / voxel_size).astype(np.int64)
    idx = np.arange(n, dtype=np.int64)
    h = hash_chain_array(seed, vox[:, 0], vox[:, 1], vox[:, 2], idx)
    order = np.lexsort((idx, h, vox[:, 2], vox[:, 1], vox[:, 0]))
    sv = vox[order]
    first = np.ones(n, dtype=bool)
    first[1:] = (sv[1:] != sv[:-1]).any(axis=1)
    keep = np.sort(order[first])
    return LabeledPointCloud(
        points=cloud.points[keep].copy(),
        instance_ids=cloud.instance_ids[keep].copy(),
        colors=None if cloud.colors is None else cloud.colors[keep].copy())


def _point_triangle_dist_sq(points: np.ndarray, a, b, c) -> np.ndarray:
    """Squared distance from each point to one triangle (Ericson's regions)."""
    ab = b - a
    ac = c - a
    ap = points - a
    d1 = ap @ ab
    d2 = ap @ ac
    bp = points - b
    d3 = bp @ ab
    d4 = bp @ ac
    cp = points - c
    d5 = cp @ ab
    d6 = cp @ ac

    closest = np.empty_like(points)
    done = np.zeros(len(points), dtype=bool)

    m = (d1 <= 0) & (d2 <= 0)
    closest[m] = a
    done |= m
    m = (~done) & (d3 >= 0) & (d4 <= d3)
    closest[m] = b
    done |= m
    m = (~done) & (d6 >= 0) & (d5 <= d6)
    closest[m] = c
    done |= m

    vc = d1 * d4 - d3 * d2
    m = (~done) & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    t = np.where(d1 - d3 != 0, d1 / np.where(d1 - d3 != 0, d1 - d3, 1.0), 0.0)
    closest[m] = a + np.outer(t[m], ab)
    done |= m

    vb = d5 * d2 - d1 * d6
    m = (~done) & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    t = np.where(d2 - d6 != 0, d2 / np.where(d2 - d6 != 0, d2 - d6, 1.0), 0.0)
    closest[m] = a + np.outer(t[m], ac)
    done |= m

    va = d3 * d6 - d5 * d4
    m = (~done) & (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    denom = (d4 - d3) + (d5 - d6)
    t = np.where(denom != 0, (d4 - d3) / np.where(denom != 0, denom, 1.0), 0.0)
    closest[m] = b + np.outer(t[m], c - b)
    done |= m

    m = ~done
    if m.any():
        denom = va + vb + vc
        denom = np.where(denom != 0, denom, 1.0)
        v = vb / denom
        w = vc / denom
        closest[m] = a + np.outer(v[m], ab) + np.outer(w[m], ac)

    diff = points - closest
    return (diff * diff).sum(axis=1)


def assign_labels(cloud: LabeledPointCloud, scene: SceneMesh,
                  mode: str = "hit_id") -> LabeledPointCloud:
    """Point labels for a cloud.

    ``hit_id`` keeps the render-time ids. ``nearest_surface`` relabels
    every point with the instance owning the nearest triangle; the room
    structure competes as id 0. Points equidistant (within 1e-12) to
    several instances go to the lowest id.
    """
    if mode == "hit_id":
        return LabeledPointCloud(cloud.points.copy(), cloud.instance_ids.copy(),
                                 None if cloud.colors is None else cloud.colors.copy())
    if mode != "nearest_surface":
        raise ValueError(f"unknown label mode {mode!r}")
    corners = scene.mesh.triangle_corners()
    tri_ids = scene.triangle_instance_ids
    best = np.full(len(cloud), np.inf)
    owner = np.zeros(len(cloud), dtype=np.int64)
    for inst_id in np.unique(tri_ids):
        sub = corners[tri_ids == inst_id]
        d = np.full(len(cloud), np.inf)
        for tri in sub:
            d = np.minimum(d, _point_triangle_dist_sq(cloud.points, tri[0], tri[1], tri[2]))
        d = np.sqrt(d)
        better = d < best - 1e-12
        best[better] = d[better]
        owner[better] = inst_id
    return LabeledPointCloud(cloud.points.copy(), owner,
                             None if cloud.colors is None else cloud.colors.copy())


def dump_debug_views(views: list[tuple[CameraPose, DepthImage]], out_dir) -> None:
    """Write per-view debug artifacts: 16-bit depth PNG in millimeters,
    an instance-id PNG and a pose JSON per view."""
    import json
    from pathlib import Path

    from PIL import Image

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, (pose, img) in enumerate(views):
        mm = np.clip(np.round(img.depth * 1000.0), 0, 65535).astype(np.uint16)
        Image.fromarray(mm).save(out / f"view_{i:03d}_depth.png")
        inst = np.clip(img.instance, 0, 65535).astype(np.uint16)
        inst[img.instance < 0] = 65535
        Image.fromarray(inst).save(out / f"view_{i:03d}_instance.png")
        (out / f"view_{i:03d}_pose.json").write_text(json.dumps({
            "position": list(pose.position), "yaw_deg": pose.yaw_deg,
            "pitch_deg": pose.pitch_deg}, sort_keys=True))
