"""Constraint-guided placement search on discrete surface grids.

Floor, wall faces and supporter top faces are discretized into uniform
grids. Objects are placed in order by a depth-first search: each object
tries the feasible (orientation, cell) candidates in seeded random
order; when an object has no feasible candidate the current prefix is
saved as a potential solution and the search backtracks to reposition
an earlier object. The best saved solution is the one placing the most
objects, with ties broken by earliest discovery. Node and saved-solution
budgets bound the search.

Feasibility means the object's footprint fits on free in-bounds cells
and every relation it carries holds against the already-placed objects.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .geom import DIRECTION_YAW, rot_z, yaw_forward
from .relations import RelationAssignment, SpatialRelation

logger = logging.getLogger(__name__)

ORIENTATIONS = (0, 90, 180, 270)
DEFAULT_CELL_SIZE = 0.1
WALL_MIN_HEIGHT = 0.3
BESIDE_MAX_GAP = 0.3

_EPS = 1e-9


class SolverError(ValueError):
    """Raised on inconsistent solver inputs."""


@dataclass(frozen=True)
class PlaceableObject:
    """An object the solver can place: identity plus canonical box size."""

    object_id: str
    asset_id: str
    class_name: str
    dims: tuple[float, float, float]


@dataclass
class SurfaceFrame:
    """Maps a 2-D placement grid into world space.

    ``kind`` is ``floor``, ``wall`` or ``support``. For walls, ``u_axis``
    runs horizontally along the wall, v is vertical, ``normal`` points
    into the room and ``fixed_yaw`` is the single orientation that makes
    a mounted object face inward.
    """

    kind: str
    surface_id: str
    origin: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    normal: np.ndarray | None = None
    fixed_yaw: int | None = None
    max_height: float | None = None


@dataclass
class PlacementGrid:
    """Uniform occupancy grid over one surface."""

    frame: SurfaceFrame
    cell_size: float
    nx: int
    ny: int
    occupancy: np.ndarray = None

    def __post_init__(self):
        if self.occupancy is None:
            self.occupancy = np.zeros((self.nx, self.ny), dtype=bool)
        if self.occupancy.shape != (self.nx, self.ny):
            raise SolverError("occupancy shape does not match grid size")

    def copy(self) -> "PlacementGrid":
        return PlacementGrid(self.frame, self.cell_size, self.nx, self.ny, self.occupancy.copy())


@dataclass(frozen=True)
class Placement:
    """A solved pose: grid anchor plus the derived world transform."""

    object_id: str
    surface_id: str
    anchor_cell: tuple[int, int]
    orientation: int
    footprint: tuple[int, int]
    translation: tuple[float, float, float]
    box_min: tuple[float, float, float]
    box_max: tuple[float, float, float]

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.box_min) + np.asarray(self.box_max)) / 2.0

    def rotation(self) -> np.ndarray:
        return rot_z(self.orientation)


@dataclass
class SolverBudget:
    """Search limits: placement attempts and saved prefix snapshots."""

    max_nodes: int = 50_000
    max_saved_solutions: int = 100

    def validate(self) -> None:
        if self.max_nodes < 1 or self.max_saved_solutions < 1:
            raise SolverError("budgets must be at least 1")


@dataclass
class LayoutSolution:
    """Best saved prefix of the requested object order."""

    placements: list[Placement]
    placed_count: int
    skipped: list[str]
    nodes_expanded: int = 0
    saved_count: int = 0


def _cells(extent: float, cell_size: float) -> int:
    return max(1, int(np.ceil(extent / cell_size - _EPS)))


def footprint_cells(dims, orientation: int, grid: PlacementGrid) -> tuple[int, int, float, float]:
    """Footprint in cells plus the actual in-plane extents for a pose."""
    dx, dy, dz = dims
    if grid.frame.kind == "wall":
        return _cells(dx, grid.cell_size), _cells(dz, grid.cell_size), dx, dz
    sx, sy = (dx, dy) if orientation % 180 == 0 else (dy, dx)
    return _cells(sx, grid.cell_size), _cells(sy, grid.cell_size), sx, sy


def make_placement(obj: PlaceableObject, grid: PlacementGrid, orientation: int,
                   i: int, j: int) -> Placement:
    """World pose for an anchor cell; the object is centered in its window."""
    frame = grid.frame
    fu, fv, su, sv = footprint_cells(obj.dims, orientation, grid)
    cu = (i + fu / 2.0) * grid.cell_size
    cv = (j + fv / 2.0) * grid.cell_size
    dx, dy, dz = obj.dims
    if frame.kind == "wall":
        center = frame.origin + frame.u_axis * cu + frame.v_axis * cv + frame.normal * (dy / 2.0)
        half = np.abs(frame.u_axis) * (dx / 2.0) + np.abs(frame.normal) * (dy / 2.0)
        half = half + np.array([0.0, 0.0, dz / 2.0])
        box_min, box_max = center - half, center + half
        translation = (float(center[0]), float(center[1]), float(center[2] - dz / 2.0))
    else:
        center_xy = frame.origin[:2] + np.array([cu, cv])
        z0 = float(frame.origin[2])
        box_min = np.array([center_xy[0] - su / 2.0, center_xy[1] - sv / 2.0, z0])
        box_max = np.array([center_xy[0] + su / 2.0, center_xy[1] + sv / 2.0, z0 + dz])
        translation = (float(center_xy[0]), float(center_xy[1]), z0)
    return Placement(
        object_id=obj.object_id,
        surface_id=frame.surface_id,
        anchor_cell=(int(i), int(j)),
        orientation=int(orientation) % 360,
        footprint=(fu, fv),
        translation=translation,
        box_min=tuple(float(x) for x in box_min),
        box_max=tuple(float(x) for x in box_max),
    )


def _integral(occ: np.ndarray) -> np.ndarray:
    S = np.zeros((occ.shape[0] + 1, occ.shape[1] + 1), dtype=np.int64)
    S[1:, 1:] = occ.cumsum(axis=0).cumsum(axis=1)
    return S


def _window_free(S: np.ndarray, fu: int, fv: int, nu: int, nv: int) -> np.ndarray:
    win = S[fu:fu + nu, fv:fv + nv] - S[0:nu, fv:fv + nv] - S[fu:fu + nu, 0:nv] + S[0:nu, 0:nv]
    return win == 0


def _anchor_boxes(obj, grid, orientation, fu, fv, su, sv, nu, nv):
    """Box min/max arrays (nu, nv, 3) for every anchor of a pose."""
    frame = grid.frame
    I = np.arange(nu, dtype=np.float64)[:, None]
    J = np.arange(nv, dtype=np.float64)[None, :]
    cu = (I + fu / 2.0) * grid.cell_size
    cv = (J + fv / 2.0) * grid.cell_size
    dx, dy, dz = obj.dims
    if frame.kind == "wall":
        center = (frame.origin[None, None, :]
                  + frame.u_axis[None, None, :] * cu[:, :, None]
                  + frame.v_axis[None, None, :] * cv[:, :, None]
                  + frame.normal[None, None, :] * (dy / 2.0))
        half = np.abs(frame.u_axis) * (dx / 2.0) + np.abs(frame.normal) * (dy / 2.0) \
            + np.array([0.0, 0.0, dz / 2.0])
        return center - half, center + half
    cx = frame.origin[0] + cu
    cy = frame.origin[1] + cv
    z0 = frame.origin[2]
    box_min = np.empty((nu, nv, 3))
    box_max = np.empty((nu, nv, 3))
    box_min[:, :, 0] = cx - su / 2.0
    box_max[:, :, 0] = cx + su / 2.0
    box_min[:, :, 1] = cy - sv / 2.0
    box_max[:, :, 1] = cy + sv / 2.0
    box_min[:, :, 2] = z0
    box_max[:, :, 2] = z0 + dz
    return box_min, box_max


def _grid_direction(frame: SurfaceFrame, orientation: int) -> tuple[int, int] | None:
    """Facing direction expressed in grid steps, or None when off-plane."""
    fwd = np.zeros(3)
    fwd[:2] = yaw_forward(orientation)
    du = int(round(float(np.dot(fwd, frame.u_axis))))
    dv = int(round(float(np.dot(fwd, frame.v_axis))))
    if du == 0 and dv == 0:
        return None
    return du, dv


def _clearance_mask(S, grid, fu, fv, nu, nv, step: tuple[int, int], need: int) -> np.ndarray:
    """Anchors whose facing-side strip of ``need`` cells is in bounds and free."""
    du, dv = step
    I = np.arange(nu)[:, None]
    J = np.arange(nv)[None, :]
    if du != 0:
        i0 = np.where(du > 0, I + fu, I - need)
        j0, w, h = J, need, fv
    else:
        j0 = np.where(dv > 0, J + fv, J - need)
        i0, w, h = I, fu, need
    i0b = np.broadcast_to(i0, (nu, nv))
    j0b = np.broadcast_to(j0, (nu, nv))
    inb = (i0b >= 0) & (j0b >= 0) & (i0b + w <= grid.nx) & (j0b + h <= grid.ny)
    ii = np.clip(i0b, 0, grid.nx - 1)
    jj = np.clip(j0b, 0, grid.ny - 1)
    win = S[ii + w, jj + h] - S[ii, jj + h] - S[ii + w, jj] + S[ii, jj]
    ok = inb & (win == 0)
    return ok


def _relation_mask(rel: SpatialRelation, obj, grid, orientation, fu, fv, nu, nv,
                   S, boxes, placed_by_id) -> np.ndarray | bool:
    """Boolean anchor mask (or scalar) for one relation at one pose."""
    frame = grid.frame
    if rel.kind == "facing":
        return int(orientation) % 360 == DIRECTION_YAW[rel.direction]
    if rel.kind == "against_wall":
        I = np.arange(nu)[:, None]
        J = np.arange(nv)[None, :]
        return np.broadcast_to((I == 0) | (I + fu == grid.nx), (nu, nv)) \
            | np.broadcast_to((J == 0) | (J + fv == grid.ny), (nu, nv))
    if rel.kind == "clearance":
        step = _grid_direction(frame, orientation)
        if step is None:
            return True
        need = _cells(rel.dist, grid.cell_size)
        return _clearance_mask(S, grid, fu, fv, nu, nv, step, need)

    ref = placed_by_id[rel.ref]
    box_min, box_max = boxes
    centers = (box_min + box_max) / 2.0
    ref_center = ref.center
    if rel.kind == "near":
        return np.linalg.norm(centers - ref_center, axis=2) <= rel.dist
    if rel.kind == "far":
        return np.linalg.norm(centers - ref_center, axis=2) >= rel.dist
    if rel.kind == "beside":
        lo = np.maximum(np.asarray(ref.box_min) - box_max, box_min - np.asarray(ref.box_max))
        gaps = np.maximum(lo, 0.0)
        return np.sqrt((gaps * gaps).sum(axis=2)) <= BESIDE_MAX_GAP
    if rel.kind == "face_toward":
        front = yaw_forward(orientation)
        delta = ref_center[:2] - centers[:, :, :2]
        a = front[0] * delta[:, :, 0] + front[1] * delta[:, :, 1]
        b = front[0] * delta[:, :, 1] - front[1] * delta[:, :, 0]
        return a >= np.abs(b)
    # directional kinds: candidate center in the ref's oriented local frame,
    # dominant-axis semantics with the ref's front being local +y.
    delta = centers[:, :, :2] - ref_center[:2]
    R = rot_z(-ref.orientation)[:2, :2]
    lx = R[0, 0] * delta[:, :, 0] + R[0, 1] * delta[:, :, 1]
    ly = R[1, 0] * delta[:, :, 0] + R[1, 1] * delta[:, :, 1]
    if rel.kind == "in_front_of":
        return (ly > 0) & (ly >= np.abs(lx))
    if rel.kind == "behind":
        return (ly < 0) & (-ly >= np.abs(lx))
    if rel.kind == "right_of":
        return (lx > 0) & (lx >= np.abs(ly))
    if rel.kind == "left_of":
        return (lx < 0) & (-lx >= np.abs(ly))
    raise SolverError(f"unhandled relation kind {rel.kind!r}")


def _feasible_mask(obj: PlaceableObject, grid: PlacementGrid,
                   relations: list[SpatialRelation], placed_by_id: dict,
                   orientation: int, obstacles=None, relaxed: bool = False) -> np.ndarray | None:
    """Anchor feasibility mask for one pose; None when the footprint cannot fit."""
    frame = grid.frame
    fu, fv, su, sv = footprint_cells(obj.dims, orientation, grid)
    if fu > grid.nx or fv > grid.ny:
        return None
    if frame.max_height is not None and obj.dims[2] > frame.max_height + _EPS:
        return None
    if frame.fixed_yaw is not None and int(orientation) % 360 != frame.fixed_yaw:
        return None
    nu, nv = grid.nx - fu + 1, grid.ny - fv + 1
    S = _integral(grid.occupancy)
    mask = _window_free(S, fu, fv, nu, nv)
    if not mask.any():
        return mask
    boxes = None
    rels = relations or []
    needs_boxes = any(r.kind in ("near", "far", "beside", "face_toward", "left_of",
                                 "right_of", "in_front_of", "behind") for r in rels) or obstacles
    if needs_boxes:
        boxes = _anchor_boxes(obj, grid, orientation, fu, fv, su, sv, nu, nv)
    for rel in rels:
        if rel.ref is not None and rel.ref not in placed_by_id:
            if relaxed:
                continue
            raise SolverError(f"relation on {obj.object_id} references unplaced {rel.ref!r}")
        sub = _relation_mask(rel, obj, grid, orientation, fu, fv, nu, nv, S, boxes, placed_by_id)
        mask = mask & sub
        if not mask.any():
            return mask
    if obstacles:
        box_min, box_max = boxes
        for obs_min, obs_max in obstacles:
            overlap = np.all(box_min < np.asarray(obs_max), axis=2) \
                & np.all(np.asarray(obs_min) < box_max, axis=2)
            mask = mask & ~overlap
            if not mask.any():
                return mask
    return mask


def feasible_cells(obj: PlaceableObject, grid: PlacementGrid,
                   relations: list[SpatialRelation], placed,
                   orientation: int, obstacles=None) -> list[tuple[int, int]]:
    """All anchor cells where the object can go at one orientation.

    ``placed`` is the already-placed objects, as a list of
    :class:`Placement` or a dict keyed by object id.
    """
    placed_by_id = placed if isinstance(placed, dict) else {p.object_id: p for p in placed}
    mask = _feasible_mask(obj, grid, relations, placed_by_id, orientation, obstacles)
    if mask is None:
        return []
    return [(int(i), int(j)) for i, j in zip(*np.nonzero(mask))]


def solve_group(objects: list[PlaceableObject], relations: RelationAssignment,
                grids, budget: SolverBudget | None = None, seed: int = 0,
                obstacles=None) -> LayoutSolution:
    """Depth-first placement of an ordered object group.

    ``grids`` may be one grid or a list (wall solving searches all four
    faces at once). ``obstacles`` are world boxes the placements must not
    intersect. Returns the saved solution placing the most objects.
    """
    if isinstance(grids, PlacementGrid):
        grids = [grids]
    budget = budget if budget is not None else SolverBudget()
    budget.validate()
    if relations.order != [o.object_id for o in objects]:
        raise SolverError("relation assignment order does not match the object list")

    n = len(objects)
    working = [g.copy() for g in grids]
    placed: list[Placement] = []
    placed_by_id: dict[str, Placement] = {}
    saved: list[list[Placement]] = []
    best_idx = -1
    state = {"nodes": 0, "stop": False}
    rng = np.random.default_rng(seed)

    def save_current():
        nonlocal best_idx
        saved.append(list(placed))
        if best_idx < 0 or len(placed) > len(saved[best_idx]):
            best_idx = len(saved) - 1
        if len(saved) >= budget.max_saved_solutions:
            state["stop"] = True

    def candidate_list(idx: int) -> list[tuple[int, int, int, int]]:
        obj = objects[idx]
        rels = relations.for_object(obj.object_id)
        cands: list[tuple[int, int, int, int]] = []
        for gi, g in enumerate(working):
            oris = (g.frame.fixed_yaw,) if g.frame.fixed_yaw is not None else ORIENTATIONS
            for ori in oris:
                mask = _feasible_mask(obj, g, rels, placed_by_id, ori, obstacles)
                if mask is None:
                    continue
                for i, j in zip(*np.nonzero(mask)):
                    cands.append((gi, int(ori), int(i), int(j)))
        return cands

    def any_relaxed_feasible(idx: int) -> bool:
        obj = objects[idx]
        rels = relations.for_object(obj.object_id)
        for g in working:
            oris = (g.frame.fixed_yaw,) if g.frame.fixed_yaw is not None else ORIENTATIONS
            for ori in oris:
                mask = _feasible_mask(obj, g, rels, placed_by_id, ori, obstacles, relaxed=True)
                if mask is not None and mask.any():
                    return True
        return False

    def occupy(gi: int, i: int, j: int, fu: int, fv: int, value: bool):
        working[gi].occupancy[i:i + fu, j:j + fv] = value

    def dfs(idx: int):
        if state["stop"]:
            return
        if idx == n:
            save_current()
            state["stop"] = True
            return
        best_count = len(saved[best_idx]) if best_idx >= 0 else -1
        # A subtree can only beat the best if every object up to that depth
        # stays placeable; relaxed feasibility only shrinks as more objects
        # are placed, so an empty relaxed set is a sound bound.
        for f in range(idx + 1, min(n, best_count + 1)):
            if not any_relaxed_feasible(f):
                return
        cands = candidate_list(idx)
        if not cands:
            save_current()
            return
        obj = objects[idx]
        order = rng.permutation(len(cands))
        for pos in order:
            if state["stop"]:
                return
            state["nodes"] += 1
            if state["nodes"] > budget.max_nodes:
                save_current()
                state["stop"] = True
                return
            gi, ori, i, j = cands[pos]
            pl = make_placement(obj, working[gi], ori, i, j)
            occupy(gi, i, j, pl.footprint[0], pl.footprint[1], True)
            placed.append(pl)
            placed_by_id[obj.object_id] = pl
            dfs(idx + 1)
            placed.pop()
            del placed_by_id[obj.object_id]
            occupy(gi, i, j, pl.footprint[0], pl.footprint[1], False)

    dfs(0)
    if best_idx < 0:
        # n == 0 is handled by the full-placement save; an empty saved list
        # cannot otherwise happen, but stay safe.
        saved.append([])
        best_idx = 0
    best = saved[best_idx]
    placed_ids = {p.object_id for p in best}
    skipped = [o.object_id for o in objects if o.object_id not in placed_ids]
    return LayoutSolution(placements=list(best), placed_count=len(best), skipped=skipped,
                          nodes_expanded=state["nodes"], saved_count=len(saved))


@dataclass
class RoomSpec:
    """Rectangular room; the floor spans [0, width] x [0, depth]."""

    width: float = 8.0
    depth: float = 8.0
    height: float = 3.0
    include_ceiling: bool = False

    def validate(self) -> None:
        if min(self.width, self.depth, self.height) <= 0:
            raise SolverError("room dimensions must be positive")


def make_floor_grid(room: RoomSpec, cell_size: float = DEFAULT_CELL_SIZE) -> PlacementGrid:
    frame = SurfaceFrame(kind="floor", surface_id="floor",
                         origin=np.zeros(3), u_axis=np.array([1.0, 0.0, 0.0]),
                         v_axis=np.array([0.0, 1.0, 0.0]), max_height=room.height)
    nx = int(np.floor(room.width / cell_size + _EPS))
    ny = int(np.floor(room.depth / cell_size + _EPS))
    return PlacementGrid(frame, cell_size, nx, ny)


def make_wall_grids(room: RoomSpec, cell_size: float = DEFAULT_CELL_SIZE,
                    min_height: float = WALL_MIN_HEIGHT) -> list[PlacementGrid]:
    """One grid per wall face: u runs along the wall, v runs up from the
    minimum mount height; ``fixed_yaw`` makes mounted objects face inward."""
    w, d = room.width, room.depth
    x, y, z = np.eye(3)
    specs = [
        ("wall:0", np.array([0.0, 0.0, min_height]), x, y, 0, w),
        ("wall:1", np.array([w, 0.0, min_height]), y, -x, 90, d),
        ("wall:2", np.array([0.0, d, min_height]), x, -y, 180, w),
        ("wall:3", np.array([0.0, 0.0, min_height]), y, x, 270, d),
    ]
    ny = int(np.floor((room.height - min_height) / cell_size + _EPS))
    grids = []
    for surface_id, origin, u_axis, normal, yaw, length in specs:
        frame = SurfaceFrame(kind="wall", surface_id=surface_id, origin=origin,
                             u_axis=u_axis.astype(float), v_axis=z.astype(float),
                             normal=normal.astype(float), fixed_yaw=yaw)
        nx = int(np.floor(length / cell_size + _EPS))
        grids.append(PlacementGrid(frame, cell_size, nx, max(ny, 0)))
    return grids


def make_support_grid(supporter: Placement, room: RoomSpec,
                      cell_size: float = DEFAULT_CELL_SIZE) -> PlacementGrid:
    top = supporter.box_max[2]
    frame = SurfaceFrame(kind="support", surface_id=f"support:{supporter.object_id}",
                         origin=np.array([supporter.box_min[0], supporter.box_min[1], top]),
                         u_axis=np.array([1.0, 0.0, 0.0]), v_axis=np.array([0.0, 1.0, 0.0]),
                         max_height=room.height - top)
    nx = int(np.floor((supporter.box_max[0] - supporter.box_min[0]) / cell_size + _EPS))
    ny = int(np.floor((supporter.box_max[1] - supporter.box_min[1]) / cell_size + _EPS))
    return PlacementGrid(frame, cell_size, max(nx, 0), max(ny, 0))


def solve_floor(objects, relations, room: RoomSpec, cell_size: float = DEFAULT_CELL_SIZE,
                budget: SolverBudget | None = None, seed: int = 0) -> LayoutSolution:
    """Place floor-standing objects on the room floor grid."""
    room.validate()
    return solve_group(objects, relations, make_floor_grid(room, cell_size), budget, seed)


def solve_wall(objects, relations, room: RoomSpec, floor_solution: LayoutSolution,
               cell_size: float = DEFAULT_CELL_SIZE, min_height: float = WALL_MIN_HEIGHT,
               budget: SolverBudget | None = None, seed: int = 0) -> LayoutSolution:
    """Mount wall objects on the four wall faces.

    Wall placements must additionally avoid 3-D box intersection with
    the already-solved floor placements.
    """
    room.validate()
    grids = make_wall_grids(room, cell_size, min_height)
    obstacles = [(p.box_min, p.box_max) for p in floor_solution.placements]
    return solve_group(objects, relations, grids, budget, seed, obstacles=obstacles)


def solve_supported(supporter: Placement | None, objects, relations, room: RoomSpec,
                    cell_size: float = DEFAULT_CELL_SIZE, budget: SolverBudget | None = None,
                    seed: int = 0, obstacles=None) -> LayoutSolution:
    """Place small objects on a supporter's top face.

    A missing supporter (it was skipped) skips all dependent objects.
    ``obstacles`` lets callers exclude boxes already hanging above the
    surface (wall-mounted objects).
    """
    if supporter is None:
        return LayoutSolution([], 0, [o.object_id for o in objects])
    grid = make_support_grid(supporter, room, cell_size)
    if grid.nx == 0 or grid.ny == 0:
        return LayoutSolution([], 0, [o.object_id for o in objects])
    return solve_group(objects, relations, grid, budget, seed, obstacles=obstacles)
