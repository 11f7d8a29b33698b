"""End-to-end dataset generation, validation and metric computation.

``synth`` runs the full per-scene chain (draw objects, infer relations,
solve the layout, assemble the mesh, scan, fuse, downsample, label,
export) for every scene index. Scene seeds are derived by hashing the
master seed with the scene index, so any parallelism degree produces
byte-identical output trees.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import dataset, quality
from .builder import build_scene
from .catalog import AssetCatalog, load_catalog, load_mesh
from .dataset import DatasetManifest, InstanceEntry, SceneRef, load_manifest, load_scene
from .features import compute_descriptor, kmeans
from .quality import MetricsReport, SceneClassSet
from .relations import (HttpRelationBackend, ObjectInfo, RuleBasedRelationBackend,
                        infer_relations)
from .scanner import (CameraIntrinsics, LabeledPointCloud, assign_labels,
                      backproject_and_fuse, scan_scene, voxel_downsample)
from .seeding import derive_seed
from .selection import SelectionConfig, resolved_config, select_objects
from .solver import (LayoutSolution, PlaceableObject, RoomSpec, SolverBudget,
                     solve_floor, solve_supported, solve_wall)

logger = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.5
_OVERLAP_TOL = 1e-9


class PipelineError(RuntimeError):
    """Raised when a run cannot proceed or mostly failed."""


@dataclass
class PipelineConfig:
    """Every knob of a generation run; serialized into the manifest.

    ``output_dir`` and ``parallelism`` are runtime-only and never echoed
    into the manifest, keeping output bytes independent of where and how
    wide the run executed.
    """

    asset_manifest: str = ""
    scene_count: int = 2000
    m1: int = 100
    m2: int = 50
    per_support_count: int = 5
    mode: str = "alternate"
    complementary_prob: float = 0.7
    real_classes: tuple = ()
    pair_map: dict = field(default_factory=dict)
    pair_prob: float = 0.0
    cluster_count: int = 0
    allowed_clusters: tuple = ()
    room_width: float = 8.0
    room_depth: float = 8.0
    room_height: float = 3.0
    include_ceiling: bool = False
    floor_cell: float = 0.1
    wall_cell: float = 0.1
    support_cell: float = 0.1
    wall_min_height: float = 0.3
    image_width: int = 320
    image_height: int = 240
    scan_cell: float = 0.1
    vantage_count: int = 5
    yaw_step_deg: float = 30.0
    max_range: float = 20.0
    voxel_size: float = 0.02
    label_mode: str = "hit_id"
    max_nodes: int = 50_000
    max_saved_solutions: int = 100
    master_seed: int = 0
    training_balance_alpha: float = 0.5
    relation_endpoint: str | None = None
    layout_endpoint: str | None = None
    output_dir: str = "dataset"
    parallelism: int = 1

    _RUNTIME_KEYS = ("output_dir", "parallelism")

    def validate(self) -> None:
        if not self.asset_manifest:
            raise PipelineError("config needs an asset_manifest path")
        if self.scene_count < 1:
            raise PipelineError("scene_count must be at least 1")
        if min(self.m1, self.m2, self.per_support_count) < 0:
            raise PipelineError("object counts must be non-negative")
        if self.parallelism < 1:
            raise PipelineError("parallelism must be at least 1")
        if self.label_mode not in ("hit_id", "nearest_surface"):
            raise PipelineError(f"unknown label_mode {self.label_mode!r}")
        if self.mode in ("alternate", "complementary") and not self.real_classes:
            raise PipelineError(
                f"mode {self.mode!r} draws complementary scenes and needs real_classes")
        if not 0.0 <= self.training_balance_alpha <= 1.0:
            raise PipelineError("training_balance_alpha must be in [0, 1]")
        if self.cluster_count > 0 and not self.allowed_clusters:
            raise PipelineError("cluster_count set but allowed_clusters is empty")

    @classmethod
    def from_json(cls, path: str | Path, **overrides) -> "PipelineConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise PipelineError(f"{path}: invalid JSON at char {exc.pos}: {exc.msg}")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise PipelineError(f"{path}: unknown config keys {sorted(unknown)}")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(**raw)
        if cfg.real_classes:
            cfg.real_classes = tuple(cfg.real_classes)
        if cfg.allowed_clusters:
            cfg.allowed_clusters = tuple(int(c) for c in cfg.allowed_clusters)
        cfg.validate()
        return cfg

    def echo_dict(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name in self._RUNTIME_KEYS:
                continue
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def room_spec(self) -> RoomSpec:
        return RoomSpec(self.room_width, self.room_depth, self.room_height,
                        self.include_ceiling)

    def intrinsics(self) -> CameraIntrinsics:
        if (self.image_width, self.image_height) == (320, 240):
            return CameraIntrinsics()
        return CameraIntrinsics.for_resolution(self.image_width, self.image_height)

    def budget(self) -> SolverBudget:
        return SolverBudget(self.max_nodes, self.max_saved_solutions)

    def selection_config(self, cluster_assignments: dict | None = None) -> SelectionConfig:
        restriction = frozenset(self.allowed_clusters) if self.cluster_count > 0 else None
        return SelectionConfig(
            M1=self.m1, M2=self.m2, per_support_count=self.per_support_count,
            mode=self.mode, complementary_prob=self.complementary_prob,
            real_class_list=frozenset(self.real_classes),
            pair_map=dict(self.pair_map) if self.pair_map else None,
            pair_prob=self.pair_prob, cluster_restriction=restriction,
            cluster_assignments=cluster_assignments)


@dataclass
class SceneReport:
    """Per-scene run statistics (logged, never exported)."""

    scene_id: str
    placed_floor: int
    skipped_floor: int
    placed_wall: int
    skipped_wall: int
    placed_obj: int
    skipped_obj: int
    point_count: int
    duration_s: float

    @property
    def placed_total(self) -> int:
        return self.placed_floor + self.placed_wall + self.placed_obj


def asset_descriptor(record, mesh_cache: dict) -> np.ndarray:
    """Shape descriptor of one asset, under a fixed per-asset seed."""
    if record.asset_id not in mesh_cache:
        mesh_cache[record.asset_id] = load_mesh(record)
    return compute_descriptor(mesh_cache[record.asset_id],
                              seed=derive_seed(0, "d2", record.asset_id))


def cluster_assets(catalog: AssetCatalog, k: int, seed: int,
                   mesh_cache: dict | None = None) -> dict[str, int]:
    """k-means shape-cluster id per asset, over all groups jointly."""
    cache = mesh_cache if mesh_cache is not None else {}
    ids = sorted(r.asset_id for r in catalog.records)
    descs = np.array([asset_descriptor(catalog.get(a), cache) for a in ids])
    model = kmeans(descs, k, seed)
    labels = model.assign(descs)
    return {a: int(c) for a, c in zip(ids, labels)}


def _relation_backend(config: PipelineConfig, scene_seed: int):
    if config.relation_endpoint:
        return HttpRelationBackend(config.relation_endpoint)
    return RuleBasedRelationBackend(seed=derive_seed(scene_seed, "relations"))


def _placeables(asset_ids: list[str], prefix: str, catalog: AssetCatalog
                ) -> list[PlaceableObject]:
    out = []
    for j, aid in enumerate(asset_ids):
        rec = catalog.get(aid)
        out.append(PlaceableObject(object_id=f"{prefix}_{j:03d}", asset_id=aid,
                                   class_name=rec.class_name, dims=rec.target_dims))
    return out


def _infos(objects: list[PlaceableObject]) -> list[ObjectInfo]:
    return [ObjectInfo(o.object_id, o.class_name, o.dims) for o in objects]


def generate_scene(index: int, config: PipelineConfig, catalog: AssetCatalog,
                   mesh_cache: dict, cluster_assignments: dict | None,
                   root: Path) -> tuple[SceneRef, SceneReport]:
    """Generate and export one scene; returns its manifest ref and report."""
    t0 = time.monotonic()
    scene_id = f"scene_{index:05d}"
    scene_seed = derive_seed(config.master_seed, index)
    room = config.room_spec()
    budget = config.budget()

    sel_cfg = resolved_config(config.selection_config(cluster_assignments), index)
    sel = select_objects(catalog, sel_cfg, seed=derive_seed(scene_seed, "select"))
    backend = _relation_backend(config, scene_seed)

    floor_objs = _placeables(sel.o_floor, "floor", catalog)
    floor_rel = infer_relations(_infos(floor_objs), "floor", backend)
    floor_sol = solve_floor(floor_objs, floor_rel, room, config.floor_cell, budget,
                            seed=derive_seed(scene_seed, "floor"))

    wall_objs = _placeables(sel.o_wall, "wall", catalog)
    wall_rel = infer_relations(_infos(wall_objs), "wall", backend)
    wall_sol = solve_wall(wall_objs, wall_rel, room, floor_sol, config.wall_cell,
                          config.wall_min_height, budget,
                          seed=derive_seed(scene_seed, "wall"))

    placed = {p.object_id: p for p in floor_sol.placements + wall_sol.placements}
    slot_ids = [o.object_id for o in floor_objs] + [o.object_id for o in wall_objs]
    all_objects = {o.object_id: o for o in floor_objs + wall_objs}
    wall_boxes = [(p.box_min, p.box_max) for p in wall_sol.placements]
    supported_sols: list[LayoutSolution] = []
    placed_obj = skipped_obj = 0
    for slot in range(sel_cfg.M1 + sel_cfg.M2):
        sobjs = _placeables(sel.o_obj[slot], f"obj_{slot:03d}", catalog)
        all_objects.update({o.object_id: o for o in sobjs})
        supporter = placed.get(slot_ids[slot]) if slot < len(slot_ids) else None
        if supporter is None:
            sol = LayoutSolution([], 0, [o.object_id for o in sobjs])
        else:
            rel = infer_relations(_infos(sobjs), "obj", backend)
            sol = solve_supported(supporter, sobjs, rel, room, config.support_cell,
                                  budget, seed=derive_seed(scene_seed, "obj", slot),
                                  obstacles=wall_boxes)
        placed_obj += sol.placed_count
        skipped_obj += len(sol.skipped)
        supported_sols.append(sol)

    scene, instances = build_scene(room, floor_sol, wall_sol, supported_sols,
                                   all_objects, catalog, mesh_cache)
    intrinsics = config.intrinsics()
    views = scan_scene(scene, instances, room, intrinsics,
                       seed=derive_seed(scene_seed, "scan"), scan_cell=config.scan_cell,
                       vantage_count=config.vantage_count, yaw_step_deg=config.yaw_step_deg,
                       max_range=config.max_range)
    fused = backproject_and_fuse(views, intrinsics)
    cloud = voxel_downsample(fused, config.voxel_size,
                             seed=derive_seed(scene_seed, "voxel"))
    cloud = assign_labels(cloud, scene, config.label_mode)

    entries = [InstanceEntry(
        instance_id=inst.instance_id, asset_id=inst.asset_id, class_name=inst.class_name,
        surface_id=inst.surface_id, yaw_deg=inst.yaw_deg, translation=inst.translation,
        box_min=inst.box_min, box_max=inst.box_max, point_count=0) for inst in instances]
    meta = {
        "scene_index": index,
        "scene_seed": scene_seed,
        "mode": sel.mode,
        "room": {"width": room.width, "depth": room.depth, "height": room.height},
        "placed": {"floor": floor_sol.placed_count, "wall": wall_sol.placed_count,
                   "obj": placed_obj},
        "skipped": {"floor": len(floor_sol.skipped), "wall": len(wall_sol.skipped),
                    "obj": skipped_obj},
        "label_mode": config.label_mode,
    }
    dataset.export_scene(root / "scenes" / scene_id, scene_id, cloud, entries, meta)
    ref = SceneRef(scene_id=scene_id, path=f"scenes/{scene_id}",
                   point_count=len(cloud), instance_count=len(entries))
    report = SceneReport(
        scene_id=scene_id, placed_floor=floor_sol.placed_count,
        skipped_floor=len(floor_sol.skipped), placed_wall=wall_sol.placed_count,
        skipped_wall=len(wall_sol.skipped), placed_obj=placed_obj,
        skipped_obj=skipped_obj, point_count=len(cloud),
        duration_s=time.monotonic() - t0)
    return ref, report


def synth(config: PipelineConfig) -> tuple[DatasetManifest, list[SceneReport]]:
    """Generate the full dataset described by the config.

    Failed scenes are logged and skipped; the run aborts only when more
    than half of all scenes fail.
    """
    config.validate()
    catalog = load_catalog(config.asset_manifest)
    root = Path(config.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    mesh_cache: dict = {}
    cluster_assignments = None
    if config.cluster_count > 0:
        cluster_assignments = cluster_assets(
            catalog, config.cluster_count,
            seed=derive_seed(config.master_seed, "cluster-model"), mesh_cache=mesh_cache)
    for rec in catalog.records:
        if rec.asset_id not in mesh_cache:
            mesh_cache[rec.asset_id] = load_mesh(rec)

    def one(index: int):
        try:
            return generate_scene(index, config, catalog, mesh_cache,
                                  cluster_assignments, root)
        except Exception as exc:
            logger.warning("scene %d failed: %r", index, exc)
            return None

    indices = list(range(config.scene_count))
    if config.parallelism > 1:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            results = list(pool.map(one, indices))
    else:
        results = [one(i) for i in indices]

    ok = [r for r in results if r is not None]
    failures = len(results) - len(ok)
    if failures > MAX_FAILURE_FRACTION * config.scene_count:
        raise PipelineError(
            f"{failures}/{config.scene_count} scenes failed; aborting "
            f"(first consult the warnings above)")
    refs = sorted((r[0] for r in ok), key=lambda r: r.scene_id)
    reports = sorted((r[1] for r in ok), key=lambda r: r.scene_id)
    manifest = DatasetManifest(
        master_seed=config.master_seed, scenes=refs, config=config.echo_dict(),
        training_balance_alpha=config.training_balance_alpha)
    dataset.export_manifest(root, manifest)
    if failures:
        logger.warning("%d of %d scenes failed and were skipped", failures,
                       config.scene_count)
    if reports:
        mean_placed = float(np.mean([r.placed_total for r in reports]))
        logger.info("synthesized %d scenes, mean %.1f placed objects each",
                    len(reports), mean_placed)
    return manifest, reports


def _overlap_1d(lo_a, hi_a, lo_b, hi_b) -> float:
    return min(hi_a, hi_b) - max(lo_a, lo_b)


def _check_scene_layout(sample: dataset.SceneSample) -> list[str]:
    """Overlap re-checks from the stored boxes of one scene.

    Same-surface placements must have disjoint footprints; floor and
    wall groups (and wall vs supported objects) must not intersect in
    3D. Wall objects on different faces may legitimately meet at room
    corners, so cross-face wall pairs are not compared.
    """
    problems = []
    entries = sample.instances
    for i, a in enumerate(entries):
        for b in entries[i + 1:]:
            ox = _overlap_1d(a.box_min[0], a.box_max[0], b.box_min[0], b.box_max[0])
            oy = _overlap_1d(a.box_min[1], a.box_max[1], b.box_min[1], b.box_max[1])
            oz = _overlap_1d(a.box_min[2], a.box_max[2], b.box_min[2], b.box_max[2])
            box_overlap = ox > _OVERLAP_TOL and oy > _OVERLAP_TOL and oz > _OVERLAP_TOL
            kind_a = a.surface_id.split(":")[0]
            kind_b = b.surface_id.split(":")[0]
            if a.surface_id == b.surface_id:
                bad = box_overlap if kind_a == "wall" \
                    else (ox > _OVERLAP_TOL and oy > _OVERLAP_TOL)
                if bad:
                    problems.append(
                        f"{sample.scene_id}: instances {a.instance_id} and "
                        f"{b.instance_id} overlap on {a.surface_id}")
            elif {kind_a, kind_b} in ({"floor", "wall"}, {"wall", "support"}) and box_overlap:
                problems.append(
                    f"{sample.scene_id}: boxes of {a.instance_id} and "
                    f"{b.instance_id} intersect in 3D")
    return problems


def validate_dataset(root: str | Path) -> list[str]:
    """Re-check every exported invariant; returns violations (empty = ok)."""
    root = Path(root)
    problems: list[str] = []
    try:
        manifest = load_manifest(root)
    except dataset.DatasetFormatError as exc:
        return [str(exc)]
    for ref in manifest.scenes:
        scene_dir = root / ref.path
        try:
            sample, cloud = load_scene(scene_dir)
        except dataset.DatasetFormatError as exc:
            problems.append(str(exc))
            continue
        stored = (scene_dir / "points.ply").read_bytes()
        if dataset.ply_bytes(cloud) != stored:
            problems.append(f"{ref.scene_id}: points.ply does not round-trip byte-exactly")
        if ref.point_count != len(cloud):
            problems.append(f"{ref.scene_id}: manifest point_count {ref.point_count} "
                            f"!= {len(cloud)}")
        if ref.instance_count != len(sample.instances):
            problems.append(f"{ref.scene_id}: manifest instance_count mismatch")
        ids, counts = np.unique(cloud.instance_ids, return_counts=True)
        by_id = dict(zip(ids.tolist(), counts.tolist()))
        known = {e.instance_id for e in sample.instances}
        stray = set(by_id) - known - {dataset.STRUCTURE_ID}
        if stray:
            problems.append(f"{ref.scene_id}: cloud ids {sorted(stray)} missing "
                            f"from instances.json")
        for e in sample.instances:
            if e.point_count != by_id.get(e.instance_id, 0):
                problems.append(f"{ref.scene_id}: instance {e.instance_id} point_count "
                                f"{e.point_count} != {by_id.get(e.instance_id, 0)}")
        masks = dataset.instance_masks(cloud)
        mask_total = sum(len(m) for m in masks.values())
        structure = by_id.get(dataset.STRUCTURE_ID, 0)
        if mask_total + structure != len(cloud):
            problems.append(f"{ref.scene_id}: masks plus structure do not partition "
                            f"the cloud")
        problems.extend(_check_scene_layout(sample))
    return problems


def metrics_for_dataset(root: str | Path, clusters: int = quality.DEFAULT_DIVERSITY_CLUSTERS,
                        seed: int = 0, layout_endpoint: str | None = None,
                        image_size: int = 256,
                        score_workers: int = quality.DEFAULT_SCORE_WORKERS) -> MetricsReport:
    """Compute the quality metrics of a stored dataset.

    Shape descriptors come from the asset meshes referenced by the
    manifest's config echo, one descriptor per placed object.
    """
    root = Path(root)
    manifest = load_manifest(root)
    manifest_path = manifest.config.get("asset_manifest", "")
    if not manifest_path:
        raise quality.MetricsError("dataset config does not record an asset_manifest")
    catalog = load_catalog(manifest_path)
    mesh_cache: dict = {}
    desc_cache: dict[str, np.ndarray] = {}
    class_sets: list[SceneClassSet] = []
    descriptors: list[np.ndarray] = []
    renders: dict[str, list[bytes]] = {}
    total_instances = 0
    for ref in manifest.scenes:
        sample, cloud = load_scene(root / ref.path)
        classes = {e.class_name for e in sample.instances}
        if classes:
            class_sets.append(SceneClassSet(ref.scene_id, frozenset(classes)))
        else:
            logger.warning("scene %s has no instances; skipped for context complexity",
                           ref.scene_id)
        total_instances += len(sample.instances)
        for e in sample.instances:
            if e.asset_id not in desc_cache:
                desc_cache[e.asset_id] = asset_descriptor(catalog.get(e.asset_id),
                                                          mesh_cache)
            descriptors.append(desc_cache[e.asset_id])
        if layout_endpoint:
            renders[ref.scene_id] = quality.render_scene_previews(cloud, image_size)
    if not descriptors:
        raise quality.MetricsError("dataset has no placed objects to score")
    k = clusters
    if len(descriptors) < k:
        k = len(descriptors)
        logger.warning("only %d descriptors; reducing diversity clusters to %d",
                       len(descriptors), k)
    report = MetricsReport(
        geometry_diversity_entropy=quality.geometry_diversity(np.array(descriptors), k, seed),
        context_complexity=quality.context_complexity(class_sets),
        extras={"scene_count": len(manifest.scenes),
                "placed_object_count": total_instances,
                "mean_objects_per_scene": total_instances / max(len(manifest.scenes), 1),
                "diversity_clusters": k})
    if layout_endpoint:
        backend = quality.LayoutScoreBackend(layout_endpoint)
        report.layout_scores = quality.score_dataset_layouts(
            renders, backend, max_workers=score_workers)
    return report


def preview_scene(scene_dir: str | Path, out_path: str | Path, view: str = "top",
                  image_size: int = 512) -> None:
    """Render a stored scene's cloud to a PNG for quick inspection."""
    from PIL import Image

    _, cloud = load_scene(scene_dir)
    img = quality.render_cloud_image(cloud, view=view, image_size=image_size)
    Image.fromarray(img).save(Path(out_path))
