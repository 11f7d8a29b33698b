import numpy as np
import pytest

from scenesynth.builder import (
    STRUCTURE_COLOR,
    STRUCTURE_ID,
    AssemblyError,
    build_scene,
    export_debug_obj,
    instance_color,
)
from scenesynth.catalog import load_mesh
from scenesynth.geom import rot_z
from scenesynth.relations import RelationAssignment
from scenesynth.solver import (
    LayoutSolution,
    PlaceableObject,
    RoomSpec,
    make_floor_grid,
    make_placement,
    make_support_grid,
    make_wall_grids,
    solve_floor,
)

EMPTY = LayoutSolution([], 0, [])


def placeable(catalog, asset_id, object_id):
    rec = catalog.get(asset_id)
    return PlaceableObject(object_id, asset_id, rec.class_name, rec.target_dims)


def test_empty_scene_is_just_the_shell(catalog):
    room = RoomSpec(4, 3, 2.5)
    scene, instances = build_scene(room, EMPTY, EMPTY, [], {}, catalog)
    assert instances == []
    # [TRIVIAL] floor + 4 walls = 5 quads = 10 triangles.
    assert len(scene.mesh.triangles) == 10
    assert (scene.triangle_instance_ids == STRUCTURE_ID).all()
    assert (scene.triangle_colors == STRUCTURE_COLOR).all()
    lo, hi = scene.mesh.aabb()
    np.testing.assert_allclose(lo, [0, 0, 0])
    np.testing.assert_allclose(hi, [4, 3, 2.5])


def test_ceiling_adds_one_quad(catalog):
    room = RoomSpec(4, 3, 2.5, include_ceiling=True)
    scene, _ = build_scene(room, EMPTY, EMPTY, [], {}, catalog)
    assert len(scene.mesh.triangles) == 12


def test_instances_get_dense_ids_in_group_order(catalog):
    room = RoomSpec(5, 5, 2.6)
    floor_grid = make_floor_grid(room, 0.1)
    wall_grids = make_wall_grids(room, 0.1)
    objs = {
        "f0": placeable(catalog, "table_a", "f0"),
        "f1": placeable(catalog, "chair_a", "f1"),
        "w0": placeable(catalog, "clock_a", "w0"),
        "s0": placeable(catalog, "mug_a", "s0"),
    }
    f0 = make_placement(objs["f0"], floor_grid, 0, 4, 4)
    f1 = make_placement(objs["f1"], floor_grid, 90, 30, 30)
    w0 = make_placement(objs["w0"], wall_grids[0], 0, 20, 10)
    support = make_support_grid(f0, room, 0.05)
    s0 = make_placement(objs["s0"], support, 0, 1, 1)
    scene, instances = build_scene(
        room,
        LayoutSolution([f0, f1], 2, []),
        LayoutSolution([w0], 1, []),
        [LayoutSolution([s0], 1, [])],
        objs, catalog)
    assert [i.instance_id for i in instances] == [1, 2, 3, 4]
    assert [i.object_id for i in instances] == ["f0", "f1", "w0", "s0"]
    assert instances[2].surface_id == "wall:0"
    assert instances[3].surface_id.startswith("support:")
    assert set(np.unique(scene.triangle_instance_ids)) == {0, 1, 2, 3, 4}


def test_posed_vertices_match_direct_transform(catalog):
    room = RoomSpec(5, 5, 2.6)
    grid = make_floor_grid(room, 0.1)
    obj = placeable(catalog, "chair_b", "c0")
    pl = make_placement(obj, grid, 270, 10, 12)
    cache = {}
    scene, instances = build_scene(room, LayoutSolution([pl], 1, []), EMPTY, [],
                                   {"c0": obj}, catalog, mesh_cache=cache)
    canonical = load_mesh(catalog.get("chair_b"))
    expected = canonical.vertices @ rot_z(270).T + np.asarray(pl.translation)
    got = scene.mesh.vertices[8:]  # after the 8 shell vertices
    np.testing.assert_allclose(got, expected, atol=1e-9)
    # The instance AABB equals the placement box.
    np.testing.assert_allclose(expected.min(axis=0), pl.box_min, atol=1e-9)
    np.testing.assert_allclose(expected.max(axis=0), pl.box_max, atol=1e-9)
    assert "chair_b" in cache
    assert instances[0].yaw_deg == 270.0


def test_wall_mount_stays_inside_and_matches_box(catalog):
    room = RoomSpec(5, 5, 2.6)
    wall = make_wall_grids(room, 0.1)[3]  # x = 0 face, yaw 270
    obj = placeable(catalog, "shelf_a", "w0")
    pl = make_placement(obj, wall, 270, 5, 8)
    scene, _ = build_scene(room, EMPTY, LayoutSolution([pl], 1, []), [],
                           {"w0": obj}, catalog)
    verts = scene.mesh.vertices[8:]
    np.testing.assert_allclose(verts.min(axis=0), pl.box_min, atol=1e-9)
    np.testing.assert_allclose(verts.max(axis=0), pl.box_max, atol=1e-9)
    assert verts[:, 0].min() >= -1e-9  # flush against the x = 0 wall


def test_out_of_bounds_placement_raises(catalog):
    big_room_grid = make_floor_grid(RoomSpec(8, 8, 2.6), 0.1)
    obj = placeable(catalog, "table_a", "f0")
    pl = make_placement(obj, big_room_grid, 0, 60, 60)  # near (6, 6)
    with pytest.raises(AssemblyError, match="leaves the room"):
        build_scene(RoomSpec(3, 3, 2.6), LayoutSolution([pl], 1, []), EMPTY, [],
                    {"f0": obj}, catalog)


def test_instance_colors_are_deterministic_and_bright():
    assert instance_color(7) == instance_color(7)
    assert instance_color(7) != instance_color(8)
    for n in range(1, 50):
        assert all(64 <= c < 256 for c in instance_color(n))


def test_solved_scene_assembles(catalog):
    room = RoomSpec(5, 5, 2.6)
    objects = [placeable(catalog, "table_a", "t0"),
               placeable(catalog, "chair_a", "c0")]
    rel = RelationAssignment(order=["t0", "c0"])
    sol = solve_floor(objects, rel, room, 0.1, seed=2)
    assert sol.placed_count == 2
    scene, instances = build_scene(room, sol, EMPTY, [],
                                   {o.object_id: o for o in objects}, catalog)
    assert len(instances) == 2
    assert len(scene.mesh.triangles) == 10 + 12 + 12
    assert (scene.triangle_instance_ids == 1).sum() == 12


def test_export_debug_obj_round_trip(catalog, tmp_path):
    room = RoomSpec(4, 4, 2.5)
    scene, _ = build_scene(room, EMPTY, EMPTY, [], {}, catalog)
    out = tmp_path / "scene.obj"
    export_debug_obj(scene, out)
    assert out.is_file()
    sidecar = out.with_suffix(".instances.json")
    assert sidecar.is_file()
    assert '"triangle_instance_ids"' in sidecar.read_text()
