"""Bounding volume hierarchy and the depth-render kernel.

The BVH is a median-split binary tree stored as flat arrays so the numba
kernel can traverse it. Hit selection is the lexicographic minimum of
(depth, triangle index), which makes the result independent of traversal
order and lets an unaccelerated oracle reproduce it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

_LEAF_SIZE = 4

# Tolerances of the intersection test; an independent oracle must use the
# same values to reproduce hits bit for bit.
DET_EPS = 1e-12
BARY_EPS = 1e-12
T_MIN = 1e-9


@dataclass
class BVH:
    """Flat BVH arrays plus the permuted triangle order."""

    node_min: np.ndarray   # (N, 3)
    node_max: np.ndarray   # (N, 3)
    left: np.ndarray       # (N,) child index, -1 for leaves
    right: np.ndarray
    start: np.ndarray      # (N,) leaf range start into tri_order
    count: np.ndarray      # (N,) leaf triangle count, 0 for internal nodes
    tri_order: np.ndarray  # (T,)


def build_bvh(tri_verts: np.ndarray, leaf_size: int = _LEAF_SIZE) -> BVH:
    """Build a median-split BVH over (T, 3, 3) triangle corners."""
    T = len(tri_verts)
    if T == 0:
        raise ValueError("cannot build a BVH over zero triangles")
    tmin = tri_verts.min(axis=1)
    tmax = tri_verts.max(axis=1)
    cent = (tmin + tmax) * 0.5
    order = np.arange(T, dtype=np.int64)

    node_min: list[np.ndarray] = []
    node_max: list[np.ndarray] = []
    left: list[int] = []
    right: list[int] = []
    start: list[int] = []
    count: list[int] = []

    def build(lo: int, hi: int) -> int:
        idx = len(node_min)
        seg = order[lo:hi]
        node_min.append(tmin[seg].min(axis=0))
        node_max.append(tmax[seg].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(lo)
        count.append(0)
        cmin = cent[seg].min(axis=0)
        cmax = cent[seg].max(axis=0)
        axis = int(np.argmax(cmax - cmin))
        if hi - lo <= leaf_size or cmax[axis] - cmin[axis] < 1e-12:
            count[idx] = hi - lo
            return idx
        mid = (hi - lo) // 2
        part = np.argpartition(cent[seg, axis], mid)
        order[lo:hi] = seg[part]
        left[idx] = build(lo, lo + mid)
        right[idx] = build(lo + mid, hi)
        return idx

    build(0, T)
    return BVH(
        node_min=np.array(node_min), node_max=np.array(node_max),
        left=np.array(left, dtype=np.int64), right=np.array(right, dtype=np.int64),
        start=np.array(start, dtype=np.int64), count=np.array(count, dtype=np.int64),
        tri_order=order,
    )


@njit(cache=True, nogil=True, error_model="numpy")
def _render_kernel(node_min, node_max, left, right, start, count, tri_order,
                   v0, v1, v2, rot, origin, fx, fy, cx, cy, width, height, max_range):
    depth = np.zeros((height, width), dtype=np.float64)
    hit_tri = np.full((height, width), -1, dtype=np.int64)
    stack = np.empty(128, dtype=np.int64)
    ox, oy, oz = origin[0], origin[1], origin[2]
    for py in range(height):
        for px in range(width):
            cdx = (px - cx) / fx
            cdy = (py - cy) / fy
            dx = rot[0, 0] * cdx + rot[0, 1] * cdy + rot[0, 2]
            dy = rot[1, 0] * cdx + rot[1, 1] * cdy + rot[1, 2]
            dz = rot[2, 0] * cdx + rot[2, 1] * cdy + rot[2, 2]
            best_t = max_range
            best_i = -1
            sp = 1
            stack[0] = 0
            while sp > 0:
                sp -= 1
                ni = stack[sp]
                # slab test against [T_MIN, best_t]
                t0 = T_MIN
                t1 = best_t
                miss = False
                for a in range(3):
                    if a == 0:
                        d, o = dx, ox
                    elif a == 1:
                        d, o = dy, oy
                    else:
                        d, o = dz, oz
                    if d == 0.0:
                        if o < node_min[ni, a] or o > node_max[ni, a]:
                            miss = True
                            break
                    else:
                        inv = 1.0 / d
                        ta = (node_min[ni, a] - o) * inv
                        tb = (node_max[ni, a] - o) * inv
                        if ta > tb:
                            ta, tb = tb, ta
                        if ta > t0:
                            t0 = ta
                        if tb < t1:
                            t1 = tb
                        if t0 > t1:
                            miss = True
                            break
                if miss:
                    continue
                if count[ni] > 0:
                    for k in range(start[ni], start[ni] + count[ni]):
                        ti = tri_order[k]
                        e1x = v1[ti, 0] - v0[ti, 0]
                        e1y = v1[ti, 1] - v0[ti, 1]
                        e1z = v1[ti, 2] - v0[ti, 2]
                        e2x = v2[ti, 0] - v0[ti, 0]
                        e2y = v2[ti, 1] - v0[ti, 1]
                        e2z = v2[ti, 2] - v0[ti, 2]
                        hx = dy * e2z - dz * e2y
                        hy = dz * e2x - dx * e2z
                        hz = dx * e2y - dy * e2x
                        det = e1x * hx + e1y * hy + e1z * hz
                        if det > -DET_EPS and det < DET_EPS:
                            continue
                        inv_det = 1.0 / det
                        sx = ox - v0[ti, 0]
                        sy = oy - v0[ti, 1]
                        sz = oz - v0[ti, 2]
                        u = (sx * hx + sy * hy + sz * hz) * inv_det
                        if u < -BARY_EPS or u > 1.0 + BARY_EPS:
                            continue
                        qx = sy * e1z - sz * e1y
                        qy = sz * e1x - sx * e1z
                        qz = sx * e1y - sy * e1x
                        v = (dx * qx + dy * qy + dz * qz) * inv_det
                        if v < -BARY_EPS or u + v > 1.0 + BARY_EPS:
                            continue
                        t = (e2x * qx + e2y * qy + e2z * qz) * inv_det
                        if t <= T_MIN:
                            continue
                        if t < best_t or (t == best_t and ti < best_i):
                            best_t = t
                            best_i = ti
                else:
                    stack[sp] = left[ni]
                    sp += 1
                    stack[sp] = right[ni]
                    sp += 1
            if best_i >= 0:
                depth[py, px] = best_t
                hit_tri[py, px] = best_i
    return depth, hit_tri


def render_tri_hits(bvh: BVH, tri_verts: np.ndarray, rot_wc: np.ndarray, origin: np.ndarray,
                    fx: float, fy: float, cx: float, cy: float,
                    width: int, height: int, max_range: float) -> tuple[np.ndarray, np.ndarray]:
    """Depth (z along the camera forward axis) and hit triangle per pixel.

    Pixel (u, v) casts the ray through camera direction
    ((u - cx)/fx, (v - cy)/fy, 1); misses have depth 0 and triangle -1.
    Hits beyond or exactly at ``max_range`` are discarded.
    """
    v0 = np.ascontiguousarray(tri_verts[:, 0])
    v1 = np.ascontiguousarray(tri_verts[:, 1])
    v2 = np.ascontiguousarray(tri_verts[:, 2])
    return _render_kernel(
        bvh.node_min, bvh.node_max, bvh.left, bvh.right, bvh.start, bvh.count,
        bvh.tri_order, v0, v1, v2, np.ascontiguousarray(rot_wc),
        np.ascontiguousarray(origin, dtype=np.float64),
        float(fx), float(fy), float(cx), float(cy), int(width), int(height), float(max_range))
