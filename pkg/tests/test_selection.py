import math
from pathlib import Path

import numpy as np
import pytest

from scenesynth.catalog import AssetCatalog, AssetRecord
from scenesynth.selection import (
    SelectionConfig,
    SelectionError,
    alternate_strategy,
    resolved_config,
    select_objects,
)


def make_catalog(floor=6, wall=4, obj=4, classes_per_group=None):
    """In-memory catalog; class c{i} cycles over the configured class count."""
    records = []
    for group, count in (("floor", floor), ("wall", wall), ("obj", obj)):
        n_classes = classes_per_group.get(group, count) if classes_per_group else count
        for i in range(count):
            records.append(AssetRecord(
                asset_id=f"{group}_{i}", class_name=f"{group}_c{i % n_classes}",
                group=group, mesh_path="unused.obj", target_dims=(1.0, 1.0, 1.0)))
    return AssetCatalog(records, Path("."))


def test_counts_and_slot_keys():
    cat = make_catalog()
    cfg = SelectionConfig(M1=7, M2=3, per_support_count=2)
    res = select_objects(cat, cfg, seed=0)
    assert len(res.o_floor) == 7
    assert len(res.o_wall) == 3
    assert sorted(res.o_obj) == list(range(10))
    assert all(len(v) == 2 for v in res.o_obj.values())
    assert res.total_objects() == 7 + 3 + 20
    assert res.mode == "uniform"


def test_draws_deterministic_per_seed():
    cat = make_catalog()
    cfg = SelectionConfig(M1=5, M2=5, per_support_count=3)
    a = select_objects(cat, cfg, seed=42)
    b = select_objects(cat, cfg, seed=42)
    c = select_objects(cat, cfg, seed=43)
    assert a == b
    assert a != c


def test_uniform_draw_frequencies():
    cat = make_catalog(floor=5, wall=1, obj=1)
    cfg = SelectionConfig(M1=5000, M2=0, per_support_count=0)
    res = select_objects(cat, cfg, seed=1)
    counts = {f"floor_{i}": 0 for i in range(5)}
    for a in res.o_floor:
        counts[a] += 1
    # [DERIVED] binomial n=5000 p=0.2: mean 1000, sigma = sqrt(800) ~ 28.3.
    sigma = math.sqrt(5000 * 0.2 * 0.8)
    for c in counts.values():
        assert abs(c - 1000) < 4 * sigma


def test_complementary_prob_one_only_draws_real_classes():
    cat = make_catalog(floor=8, wall=2, obj=2)
    real = frozenset({"floor_c0", "floor_c1", "wall_c0", "obj_c0"})
    cfg = SelectionConfig(M1=50, M2=10, per_support_count=1, mode="complementary",
                          complementary_prob=1.0, real_class_list=real)
    res = select_objects(cat, cfg, seed=3)
    by_id = {r.asset_id: r for r in cat.records}
    drawn = res.o_floor + res.o_wall + [a for v in res.o_obj.values() for a in v]
    assert all(by_id[a].class_name in real for a in drawn)


def test_complementary_rate_matches_probability():
    # 40 floor classes, 2 of them "real": the uniform branch contributes
    # only 2/40 of its draws to the real pool, so the measured real-class
    # fraction over N draws is p + (1-p) * 2/40.
    cat = make_catalog(floor=40, wall=1, obj=1)
    real = frozenset({"floor_c0", "floor_c1"})
    cfg = SelectionConfig(M1=10_000, M2=0, per_support_count=0, mode="complementary",
                          complementary_prob=0.7, real_class_list=real)
    res = select_objects(cat, cfg, seed=11)
    by_id = {r.asset_id: r for r in cat.records}
    frac = sum(by_id[a].class_name in real for a in res.o_floor) / len(res.o_floor)
    expected = 0.7 + 0.3 * (2 / 40)
    assert abs(frac - expected) < 0.02


def test_complementary_without_real_assets_falls_back(caplog):
    cat = make_catalog(floor=4, wall=2, obj=2)
    cfg = SelectionConfig(M1=10, M2=2, per_support_count=0, mode="complementary",
                          complementary_prob=1.0, real_class_list=frozenset({"bed"}))
    with caplog.at_level("WARNING"):
        res = select_objects(cat, cfg, seed=0)
    assert len(res.o_floor) == 10
    assert "falling back" in caplog.text


def test_paired_forces_partner_class():
    cat = make_catalog(floor=6, wall=1, obj=1, classes_per_group={"floor": 2})
    pair_map = {"floor_c0": "floor_c1", "floor_c1": "floor_c0",
                "wall_c0": "wall_c0", "obj_c0": "obj_c0"}
    cfg = SelectionConfig(M1=20, M2=0, per_support_count=0, mode="paired",
                          pair_map=pair_map, pair_prob=1.0)
    res = select_objects(cat, cfg, seed=5)
    by_id = {r.asset_id: r for r in cat.records}
    classes = [by_id[a].class_name for a in res.o_floor]
    # Every odd slot is the forced partner of the preceding base draw.
    for i in range(0, 20, 2):
        assert classes[i + 1] == pair_map[classes[i]]


def test_paired_missing_pair_class_falls_back(caplog):
    cat = make_catalog(floor=3, wall=1, obj=1, classes_per_group={"floor": 1})
    cfg = SelectionConfig(M1=6, M2=0, per_support_count=0, mode="paired",
                          pair_map={"floor_c0": "couch", "wall_c0": "x", "obj_c0": "x"},
                          pair_prob=1.0)
    with caplog.at_level("WARNING"):
        res = select_objects(cat, cfg, seed=2)
    assert len(res.o_floor) == 6
    assert "has no assets" in caplog.text


def test_paired_class_absent_from_map_errors():
    cat = make_catalog(floor=3, wall=1, obj=1, classes_per_group={"floor": 1})
    cfg = SelectionConfig(M1=6, M2=0, per_support_count=0, mode="paired",
                          pair_map={}, pair_prob=1.0)
    with pytest.raises(SelectionError, match="missing from pair_map"):
        select_objects(cat, cfg, seed=2)


def test_cluster_restriction_limits_pool(caplog):
    cat = make_catalog(floor=6, wall=2, obj=2)
    assignments = {r.asset_id: (0 if r.asset_id.endswith(("0", "1")) else 1)
                   for r in cat.records}
    cfg = SelectionConfig(M1=30, M2=4, per_support_count=1,
                          cluster_restriction=frozenset({0}),
                          cluster_assignments=assignments)
    with caplog.at_level("WARNING"):
        res = select_objects(cat, cfg, seed=7)
    drawn = set(res.o_floor + res.o_wall + [a for v in res.o_obj.values() for a in v])
    assert all(assignments[a] == 0 for a in drawn)
    assert "drops all assets" in caplog.text  # floor_c2..c5 vanish entirely


def test_cluster_restriction_emptying_group_errors():
    cat = make_catalog(floor=2, wall=1, obj=1)
    cfg = SelectionConfig(M1=1, M2=1, per_support_count=1,
                          cluster_restriction=frozenset({9}),
                          cluster_assignments={r.asset_id: 0 for r in cat.records})
    with pytest.raises(SelectionError, match="removes every asset"):
        select_objects(cat, cfg, seed=0)


def test_alternate_parity_and_resolution():
    assert alternate_strategy(0) == "uniform"
    assert alternate_strategy(1) == "complementary"
    assert alternate_strategy(2) == "uniform"
    fixed = SelectionConfig(mode="paired", pair_map={})
    assert alternate_strategy(5, fixed) == "paired"
    alt = SelectionConfig(mode="alternate", real_class_list=frozenset({"x"}))
    assert resolved_config(alt, 3).mode == "complementary"
    assert resolved_config(alt, 4).mode == "uniform"
    same = SelectionConfig(mode="uniform")
    assert resolved_config(same, 1) is same


def test_alternate_must_be_resolved_before_drawing():
    cat = make_catalog()
    cfg = SelectionConfig(mode="alternate", real_class_list=frozenset({"x"}))
    with pytest.raises(SelectionError, match="alternate"):
        select_objects(cat, cfg, seed=0)


@pytest.mark.parametrize("kwargs,fragment", [
    (dict(M1=-1), "non-negative"),
    (dict(mode="fancy"), "unknown mode"),
    (dict(complementary_prob=1.5), "complementary_prob"),
    (dict(mode="paired", pair_map=None), "pair_map"),
    (dict(mode="complementary"), "real_class_list"),
    (dict(cluster_restriction=frozenset({0})), "cluster_assignments"),
])
def test_config_validation(kwargs, fragment):
    with pytest.raises(SelectionError, match=fragment):
        SelectionConfig(**kwargs).validate()
