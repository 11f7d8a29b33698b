"""Spatial relation vocabulary and relation backends.

Objects in a placement group are processed in order; each object may
carry a small set of relations constraining where the layout solver can
put it. Relations only ever reference objects earlier in the order, so
the solver can check them against already-placed objects.

Two backends produce relations: a seeded rule-based backend (default)
and an HTTP backend that asks an external model for relations one object
at a time. Backend output is filtered through the validator; invalid
relations are dropped with a warning so a scene stays generable.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
import requests

from .geom import DIRECTION_YAW

logger = logging.getLogger(__name__)

RELATION_KINDS = frozenset({
    "facing", "face_toward", "near", "far", "beside",
    "left_of", "right_of", "in_front_of", "behind",
    "against_wall", "clearance",
})
REF_KINDS = frozenset({
    "face_toward", "near", "far", "beside",
    "left_of", "right_of", "in_front_of", "behind",
})
DIST_KINDS = frozenset({"near", "far", "clearance"})

# Area above which the rule backend considers an object bulky enough to
# push against a wall, and default distances for generated relations.
_BULKY_FOOTPRINT_M2 = 1.0
_NEAR_DIST = 2.0
_FAR_DIST = 1.0
_REF_PROB = 0.6
_AGAINST_WALL_PROB = 0.5

API_KEY_ENV = "SCENESYNTH_API_KEY"


class RelationError(ValueError):
    """Raised on malformed relation structures."""


class TransportError(RuntimeError):
    """Raised when an external backend stays unreachable after retries."""


@dataclass(frozen=True)
class SpatialRelation:
    """One constraint on an object's placement.

    ``kind`` is one of the closed vocabulary. ``ref`` names an earlier
    object for reference-bearing kinds, ``dist`` carries the threshold
    for near/far/clearance, and ``direction`` the compass direction for
    ``facing``.
    """

    kind: str
    ref: str | None = None
    dist: float | None = None
    direction: str | None = None

    def to_json(self) -> dict:
        out: dict = {"type": self.kind}
        if self.ref is not None:
            out["ref"] = self.ref
        if self.dist is not None:
            out["dist"] = self.dist
        if self.direction is not None:
            out["direction"] = self.direction
        return out

    @classmethod
    def from_json(cls, data: dict) -> "SpatialRelation":
        if not isinstance(data, dict) or "type" not in data:
            raise RelationError(f"relation must be an object with a 'type': {data!r}")
        kind = data["type"]
        dist = data.get("dist")
        return cls(kind=kind, ref=data.get("ref"),
                   dist=None if dist is None else float(dist),
                   direction=data.get("direction"))


@dataclass(frozen=True)
class ObjectInfo:
    """What a relation backend sees of an object: id, class, box size."""

    object_id: str
    class_name: str
    dims: tuple[float, float, float]

    def to_json(self) -> dict:
        return {"id": self.object_id, "class": self.class_name, "dims": list(self.dims)}


@dataclass
class RelationAssignment:
    """Ordered objects of one group with their per-object relations."""

    order: list[str]
    relations: dict[str, list[SpatialRelation]] = field(default_factory=dict)

    def for_object(self, object_id: str) -> list[SpatialRelation]:
        return self.relations.get(object_id, [])


def _check_relation(rel: SpatialRelation, earlier: set[str]) -> str | None:
    """Returns a violation message, or None when the relation is valid."""
    if rel.kind not in RELATION_KINDS:
        return f"unknown relation kind {rel.kind!r}"
    if rel.kind in REF_KINDS:
        if rel.ref is None:
            return f"{rel.kind} needs a ref"
        if rel.ref not in earlier:
            return f"{rel.kind} references {rel.ref!r} which is not an earlier object"
    elif rel.ref is not None:
        return f"{rel.kind} must not carry a ref"
    if rel.kind in DIST_KINDS:
        if rel.dist is None:
            return f"{rel.kind} needs a dist"
        if not (rel.dist > 0):
            return f"{rel.kind} dist must be positive, got {rel.dist}"
    if rel.kind == "facing" and rel.direction not in DIRECTION_YAW:
        return f"facing needs a direction in {sorted(DIRECTION_YAW)}"
    return None


def validate_assignment(assignment: RelationAssignment) -> list[str]:
    """All violations in an assignment; an empty list means it is valid."""
    violations: list[str] = []
    if len(set(assignment.order)) != len(assignment.order):
        violations.append("object order contains duplicate ids")
    known = set(assignment.order)
    for oid in assignment.relations:
        if oid not in known:
            violations.append(f"relations listed for unknown object {oid!r}")
    earlier: set[str] = set()
    for oid in assignment.order:
        for rel in assignment.relations.get(oid, []):
            msg = _check_relation(rel, earlier)
            if msg is not None:
                violations.append(f"{oid}: {msg}")
        earlier.add(oid)
    return violations


class RuleBasedRelationBackend:
    """Seeded heuristic relations needing no external service.

    Every object gets a random facing direction. Objects with a footprint
    over 1 m^2 are pushed against a wall half the time, and each object
    after the first gets, with probability 0.6, one reference-bearing
    relation to a uniformly random earlier object.
    """

    def __init__(self, seed: int = 0):
        self._rng = np.random.default_rng(seed)

    def relations_for(self, objects: list[ObjectInfo], group: str) -> RelationAssignment:
        rng = self._rng
        ref_kinds = ("near", "far", "beside", "left_of", "right_of",
                     "in_front_of", "behind", "face_toward")
        directions = sorted(DIRECTION_YAW)
        assignment = RelationAssignment(order=[o.object_id for o in objects])
        for i, obj in enumerate(objects):
            rels = [SpatialRelation("facing", direction=directions[int(rng.integers(4))])]
            footprint = obj.dims[0] * obj.dims[1]
            if footprint > _BULKY_FOOTPRINT_M2 and rng.random() < _AGAINST_WALL_PROB:
                rels.append(SpatialRelation("against_wall"))
            if i > 0 and rng.random() < _REF_PROB:
                ref = objects[int(rng.integers(i))].object_id
                kind = ref_kinds[int(rng.integers(len(ref_kinds)))]
                dist = {"near": _NEAR_DIST, "far": _FAR_DIST}.get(kind)
                rels.append(SpatialRelation(kind, ref=ref, dist=dist))
            assignment.relations[obj.object_id] = rels
        return assignment


def default_relation_prompt() -> str:
    """The editable prompt template shipped for LLM relation backends."""
    from importlib import resources

    return resources.files("scenesynth").joinpath(
        "templates/relation_prompt.txt").read_text()


class HttpRelationBackend:
    """Asks an external endpoint for relations, one object at a time.

    Each request posts the group name, the objects proposed so far, and
    the next object; the reply must be ``{"relations": [...]}``. Replies
    that fail to parse drop that object's relations with a warning.
    Transport failures raise :class:`TransportError` after bounded
    retries.
    """

    def __init__(self, endpoint: str, api_key: str | None = None,
                 timeout: float = 10.0, retries: int = 3):
        self.endpoint = endpoint
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout = timeout
        self.retries = retries

    def _post(self, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_exc: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = requests.post(self.endpoint, json=payload, headers=headers,
                                     timeout=self.timeout)
                resp.raise_for_status()
                return resp.json()
            except (requests.ConnectionError, requests.Timeout, requests.HTTPError) as exc:
                last_exc = exc
                if attempt + 1 < self.retries:
                    time.sleep(min(0.2 * 2 ** attempt, 2.0))
            except (ValueError, json.JSONDecodeError) as exc:
                # Got a reply, but not JSON: treat as a schema problem, not transport.
                raise RelationError(f"backend reply is not JSON: {exc}") from exc
        raise TransportError(f"relation backend unreachable after {self.retries} attempts: {last_exc}")

    def relations_for(self, objects: list[ObjectInfo], group: str) -> RelationAssignment:
        assignment = RelationAssignment(order=[o.object_id for o in objects])
        placed: list[dict] = []
        for obj in objects:
            payload = {"group": group, "placed": placed, "next_object": obj.to_json()}
            rels: list[SpatialRelation] = []
            try:
                reply = self._post(payload)
                raw = reply["relations"]
                if not isinstance(raw, list):
                    raise RelationError("'relations' must be a list")
                rels = [SpatialRelation.from_json(r) for r in raw]
            except (RelationError, KeyError, TypeError, ValueError) as exc:
                logger.warning("dropping relations for %s: backend reply invalid (%s)",
                               obj.object_id, exc)
                rels = []
            assignment.relations[obj.object_id] = rels
            placed.append(obj.to_json())
        return assignment


def infer_relations(objects: list[ObjectInfo], group: str, backend) -> RelationAssignment:
    """Run a backend and filter its output down to valid relations.

    Individually invalid relations are dropped with a warning; the
    returned assignment always passes :func:`validate_assignment`.
    """
    assignment = backend.relations_for(objects, group)
    earlier: set[str] = set()
    filtered: dict[str, list[SpatialRelation]] = {}
    for oid in assignment.order:
        kept = []
        for rel in assignment.relations.get(oid, []):
            msg = _check_relation(rel, earlier)
            if msg is None:
                kept.append(rel)
            else:
                logger.warning("dropping relation on %s: %s", oid, msg)
        filtered[oid] = kept
        earlier.add(oid)
    return RelationAssignment(order=list(assignment.order), relations=filtered)
