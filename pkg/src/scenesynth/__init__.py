"""Procedural indoor-scene synthesis for annotated point-cloud datasets.

Scenes are built from a CAD asset catalog in three stages: heterogeneous
object selection, constraint-guided layout solving, and simulated
multi-view RGB-D scanning. The package also ships dataset-quality
metrics and a CLI (``scenesynth``).
"""

from .builder import RoomSpec, SceneInstance, SceneMesh, build_scene
from .catalog import AssetCatalog, AssetRecord, TriangleMesh, load_catalog, load_mesh
from .dataset import (DatasetManifest, InstanceEntry, SceneSample, export_manifest,
                      export_scene, load_manifest, load_scene, read_ply, write_ply)
from .features import ClusterModel, compute_descriptor, entropy_of_assignments, kmeans
from .pipeline import (PipelineConfig, SceneReport, metrics_for_dataset, preview_scene,
                       synth, validate_dataset)
from .quality import (MetricsReport, SceneClassSet, context_complexity,
                      geometry_diversity, layout_score)
from .relations import (HttpRelationBackend, ObjectInfo, RelationAssignment,
                        RuleBasedRelationBackend, SpatialRelation, infer_relations,
                        validate_assignment)
from .scanner import (CameraIntrinsics, CameraPose, DepthImage, LabeledPointCloud,
                      assign_labels, backproject_and_fuse, candidate_scan_cells,
                      farthest_point_sampling, render_depth, scan_scene,
                      voxel_downsample)
from .selection import SelectionConfig, SelectionResult, alternate_strategy, select_objects
from .solver import (LayoutSolution, Placement, PlaceableObject, PlacementGrid,
                     SolverBudget, feasible_cells, solve_floor, solve_group,
                     solve_supported, solve_wall)

__version__ = "0.1.0"

__all__ = [
    "AssetCatalog", "AssetRecord", "TriangleMesh", "load_catalog", "load_mesh",
    "ClusterModel", "compute_descriptor", "kmeans", "entropy_of_assignments",
    "SelectionConfig", "SelectionResult", "alternate_strategy", "select_objects",
    "SpatialRelation", "ObjectInfo", "RelationAssignment", "RuleBasedRelationBackend",
    "HttpRelationBackend", "infer_relations", "validate_assignment",
    "PlaceableObject", "PlacementGrid", "Placement", "SolverBudget", "LayoutSolution",
    "feasible_cells", "solve_group", "solve_floor", "solve_wall", "solve_supported",
    "RoomSpec", "SceneInstance", "SceneMesh", "build_scene",
    "CameraIntrinsics", "CameraPose", "DepthImage", "LabeledPointCloud",
    "candidate_scan_cells", "farthest_point_sampling", "render_depth", "scan_scene",
    "backproject_and_fuse", "voxel_downsample", "assign_labels",
    "SceneSample", "InstanceEntry", "DatasetManifest", "export_scene", "load_scene",
    "export_manifest", "load_manifest", "read_ply", "write_ply",
    "SceneClassSet", "MetricsReport", "context_complexity", "geometry_diversity",
    "layout_score",
    "PipelineConfig", "SceneReport", "synth", "validate_dataset", "metrics_for_dataset",
    "preview_scene",
]
