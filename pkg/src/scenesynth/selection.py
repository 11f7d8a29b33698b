"""Heterogeneous object selection.

A scene draws M1 floor-standing assets, M2 wall-mounted assets, and a
fixed number of small objects for each of those supporters, all with
replacement. Three draw strategies are supported:

* ``uniform``: every asset in the group is equally likely.
* ``complementary``: with a configured probability the draw is restricted
  to assets whose class appears in a reference class list, biasing scenes
  toward content that complements an existing dataset.
* ``paired``: after a base draw, the next selection slot is, with some
  probability, forced to the class paired with the drawn class, raising
  class co-occurrence.

Scene parity alternates uniform and complementary draws across a dataset
unless a fixed mode is configured.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .catalog import AssetCatalog, AssetRecord

logger = logging.getLogger(__name__)

MODES = ("uniform", "complementary", "paired")


class SelectionError(ValueError):
    """Raised when a selection config cannot be satisfied."""


@dataclass
class SelectionConfig:
    """Parameters of the per-scene object draw.

    ``mode`` may also be ``alternate``, which :func:`alternate_strategy`
    resolves to uniform or complementary by scene parity before drawing.
    """

    M1: int = 100
    M2: int = 50
    per_support_count: int = 5
    mode: str = "uniform"
    complementary_prob: float = 0.7
    real_class_list: frozenset = field(default_factory=frozenset)
    pair_map: dict | None = None
    pair_prob: float = 0.0
    cluster_restriction: frozenset | None = None
    cluster_assignments: dict | None = None

    def validate(self) -> None:
        if self.M1 < 0 or self.M2 < 0 or self.per_support_count < 0:
            raise SelectionError("counts must be non-negative")
        if self.mode not in MODES + ("alternate",):
            raise SelectionError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.complementary_prob <= 1.0:
            raise SelectionError("complementary_prob must be in [0, 1]")
        if not 0.0 <= self.pair_prob <= 1.0:
            raise SelectionError("pair_prob must be in [0, 1]")
        if self.mode == "complementary" and not self.real_class_list:
            raise SelectionError("complementary mode needs a non-empty real_class_list")
        if self.mode == "paired" and self.pair_map is None:
            raise SelectionError("paired mode needs a pair_map")
        if self.cluster_restriction is not None and self.cluster_assignments is None:
            raise SelectionError("cluster_restriction needs cluster_assignments")


@dataclass
class SelectionResult:
    """Asset ids drawn for one scene.

    ``o_obj`` maps the supporter slot index (0..M1+M2-1, floor slots
    first) to that supporter's small-object draws. Slot keys are used
    because draws happen with replacement, so asset ids may repeat.
    """

    o_floor: list[str]
    o_wall: list[str]
    o_obj: dict[int, list[str]]
    mode: str

    def total_objects(self) -> int:
        return len(self.o_floor) + len(self.o_wall) + sum(len(v) for v in self.o_obj.values())


def alternate_strategy(scene_index: int, config: SelectionConfig | None = None) -> str:
    """Effective draw mode for a scene index.

    With an ``alternate`` (or absent) config, even scene indices draw
    uniform and odd indices draw complementary; a fixed mode passes
    through unchanged.
    """
    if config is not None and config.mode in MODES:
        return config.mode
    return "uniform" if scene_index % 2 == 0 else "complementary"


def _restricted(records: list[AssetRecord], config: SelectionConfig, group: str) -> list[AssetRecord]:
    if config.cluster_restriction is None:
        return records
    assign = config.cluster_assignments or {}
    kept = [r for r in records if assign.get(r.asset_id) in config.cluster_restriction]
    if not kept:
        raise SelectionError(
            f"cluster restriction removes every asset from group {group!r}")
    dropped_classes = {r.class_name for r in records} - {r.class_name for r in kept}
    if dropped_classes:
        logger.warning("cluster restriction drops all assets of classes %s in group %s",
                       sorted(dropped_classes), group)
    return kept


class _GroupSampler:
    """Draws asset ids from one group under the configured strategy."""

    def __init__(self, records: list[AssetRecord], config: SelectionConfig, group: str):
        if not records:
            raise SelectionError(f"group {group!r} has no assets")
        self.group = group
        self.records = _restricted(records, config, group)
        self.config = config
        self.by_class: dict[str, list[AssetRecord]] = {}
        for r in self.records:
            self.by_class.setdefault(r.class_name, []).append(r)
        self.real_pool = [r for r in self.records if r.class_name in config.real_class_list]
        self._warned_no_real = False

    def _uniform(self, rng: np.random.Generator, pool: list[AssetRecord]) -> AssetRecord:
        return pool[int(rng.integers(len(pool)))]

    def _base_draw(self, rng: np.random.Generator) -> AssetRecord:
        cfg = self.config
        if cfg.mode == "complementary":
            if rng.random() < cfg.complementary_prob:
                if self.real_pool:
                    return self._uniform(rng, self.real_pool)
                if not self._warned_no_real:
                    logger.warning("group %s has no assets in the reference class list; "
                                   "falling back to the full group", self.group)
                    self._warned_no_real = True
            return self._uniform(rng, self.records)
        return self._uniform(rng, self.records)

    def draw(self, rng: np.random.Generator, count: int) -> list[str]:
        cfg = self.config
        out: list[str] = []
        forced_class: str | None = None
        while len(out) < count:
            if forced_class is not None:
                pool = self.by_class.get(forced_class)
                cls = forced_class
                forced_class = None
                if pool:
                    out.append(self._uniform(rng, pool).asset_id)
                    continue
                logger.warning("paired class %r has no assets in group %s; skipping forced draw",
                               cls, self.group)
            rec = self._base_draw(rng)
            out.append(rec.asset_id)
            if cfg.mode == "paired" and len(out) < count and rng.random() < cfg.pair_prob:
                if rec.class_name not in cfg.pair_map:
                    raise SelectionError(f"class {rec.class_name!r} missing from pair_map")
                forced_class = cfg.pair_map[rec.class_name]
        return out


def select_objects(catalog: AssetCatalog, config: SelectionConfig, seed: int = 0) -> SelectionResult:
    """Draw the full object roster for one scene.

    Returns M1 floor assets, M2 wall assets, and ``per_support_count``
    small objects per supporter slot. Deterministic for a given seed.
    """
    config.validate()
    if config.mode == "alternate":
        raise SelectionError("resolve 'alternate' via alternate_strategy before drawing")
    rng = np.random.default_rng(seed)
    floor = _GroupSampler(catalog.group_records("floor"), config, "floor")
    wall = _GroupSampler(catalog.group_records("wall"), config, "wall")
    small = _GroupSampler(catalog.group_records("obj"), config, "obj")
    o_floor = floor.draw(rng, config.M1)
    o_wall = wall.draw(rng, config.M2)
    o_obj = {slot: small.draw(rng, config.per_support_count)
             for slot in range(config.M1 + config.M2)}
    return SelectionResult(o_floor=o_floor, o_wall=o_wall, o_obj=o_obj, mode=config.mode)


def resolved_config(config: SelectionConfig, scene_index: int) -> SelectionConfig:
    """Config with ``alternate`` resolved to the scene's effective mode."""
    mode = alternate_strategy(scene_index, config)
    if mode == config.mode:
        return config
    return replace(config, mode=mode)
