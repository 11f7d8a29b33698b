"""Small shared geometry helpers (rotations, axis-aligned boxes)."""

from __future__ import annotations

import numpy as np

# Compass directions in the room frame: +y is north, +x is east. An object
# with yaw 0 faces north; positive yaw rotates counter-clockwise seen from
# above, so yaw 90 faces west.
DIRECTION_YAW = {"N": 0, "W": 90, "S": 180, "E": 270}
YAW_DIRECTION = {v: k for k, v in DIRECTION_YAW.items()}

_EXACT_COS = {0: 1.0, 90: 0.0, 180: -1.0, 270: 0.0}
_EXACT_SIN = {0: 0.0, 90: 1.0, 180: 0.0, 270: -1.0}


def rot_z(yaw_deg: float) -> np.ndarray:
    """3x3 rotation about +z. Multiples of 90 degrees are exact."""
    key = int(yaw_deg) % 360
    if float(yaw_deg) == float(int(yaw_deg)) and key in _EXACT_COS:
        c, s = _EXACT_COS[key], _EXACT_SIN[key]
    else:
        rad = np.deg2rad(yaw_deg)
        c, s = float(np.cos(rad)), float(np.sin(rad))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def yaw_forward(yaw_deg: float) -> np.ndarray:
    """Unit forward direction (x, y) for a yaw angle; yaw 0 points +y."""
    return rot_z(yaw_deg)[:2, 1].copy()


def aabb_of_points(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return points.min(axis=0), points.max(axis=0)


def boxes_intersect(min_a, max_a, min_b, max_b) -> bool:
    """True when two boxes share positive volume (touching faces do not count)."""
    return bool(np.all(np.asarray(min_a) < np.asarray(max_b)) and np.all(np.asarray(min_b) < np.asarray(max_a)))


def box_gap(min_a, max_a, min_b, max_b) -> float:
    """Euclidean separation between two boxes; 0 when they touch or overlap."""
    lo = np.maximum(np.asarray(min_a) - np.asarray(max_b), np.asarray(min_b) - np.asarray(max_a))
    gaps = np.maximum(lo, 0.0)
    return float(np.sqrt(np.sum(gaps * gaps)))
