"""Procedural semantic grid worlds, ray casting and geodesic distances.

Cells are addressed as ``(cx, cy)`` = ``(column, row)``; arrays are indexed
``[row, column]``.  Class 0 is the wall class, class 1 is bare floor and
object classes start at 2.  Objects sit on free (walkable) cells but are
opaque to sensor rays.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

WALL = 0
FLOOR = 1
FIRST_OBJECT_CLASS = 2

TAU = 2.0 * math.pi
HEADING_STEP = math.pi / 6.0  # 30 degrees, the turn increment
VIEW_FOV = math.pi / 3.0  # 60 degrees per panorama sector

DEFAULT_RESOLUTION = 0.25
DEFAULT_RAYS = 32
DEFAULT_MAX_RANGE = 5.0

WORLD_FORMAT_VERSION = 1

Cell = tuple[int, int]


class WorldGenerationError(ValueError):
    """Raised when generation parameters cannot be satisfied."""


def normalize_angle(theta: float) -> float:
    """Wrap ``theta`` to [0, 2pi), snapping onto the 30 degree lattice.

    Snapping keeps headings produced by repeated turns bit-identical to the
    canonical ``k * pi / 6`` values.
    """
    theta = math.fmod(theta, TAU)
    if theta < 0.0:
        theta += TAU
    k = round(theta / HEADING_STEP)
    if abs(theta - k * HEADING_STEP) < 1e-9:
        return (k % 12) * HEADING_STEP
    if theta >= TAU:
        theta = 0.0
    return theta


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "theta": self.theta}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(float(d["x"]), float(d["y"]), float(d["theta"]))


@dataclass(frozen=True)
class ViewObservation:
    """One 60 degree sector scan: per-ray depth (m) and hit class."""

    depths: tuple[float, ...]
    classes: tuple[int, ...]
    heading: float
    timestep: int = 0
    max_range: float = DEFAULT_MAX_RANGE
    resolution: float = DEFAULT_RESOLUTION

    def __post_init__(self):
        if len(self.depths) != len(self.classes):
            raise ValueError("depths and classes must have equal length")

    @property
    def rays(self) -> list[tuple[float, int]]:
        return list(zip(self.depths, self.classes))

    def __len__(self) -> int:
        return len(self.depths)

    def to_dict(self) -> dict:
        return {
            "depths": list(self.depths),
            "classes": list(self.classes),
            "heading": self.heading,
            "timestep": self.timestep,
            "max_range": self.max_range,
            "resolution": self.resolution,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ViewObservation":
        return cls(
            depths=tuple(float(v) for v in d["depths"]),
            classes=tuple(int(v) for v in d["classes"]),
            heading=float(d["heading"]),
            timestep=int(d.get("timestep", 0)),
            max_range=float(d.get("max_range", DEFAULT_MAX_RANGE)),
            resolution=float(d.get("resolution", DEFAULT_RESOLUTION)),
        )


@dataclass(frozen=True)
class GoalSpec:
    kind: str  # "category" | "instance"
    category_id: int
    goal_cells: tuple[Cell, ...]
    instance_view: ViewObservation | None = None

    def __post_init__(self):
        if self.kind not in ("category", "instance"):
            raise ValueError(f"unknown goal kind {self.kind!r}")
        if not self.goal_cells:
            raise ValueError("goal spec needs at least one goal cell")
        if self.kind == "instance" and self.instance_view is None:
            raise ValueError("instance goals need a reference view")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "category_id": self.category_id,
            "goal_cells": [list(c) for c in self.goal_cells],
            "instance_view": None if self.instance_view is None else self.instance_view.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GoalSpec":
        iv = d.get("instance_view")
        return cls(
            kind=d["kind"],
            category_id=int(d["category_id"]),
            goal_cells=tuple((int(c[0]), int(c[1])) for c in d["goal_cells"]),
            instance_view=None if iv is None else ViewObservation.from_dict(iv),
        )


class GridWorld:
    """Immutable occupancy + semantic grid with a goal placement.

    Distance fields are memoised per source set, so a world can be shared by
    any number of episode runners.
    """

    def __init__(
        self,
        occupancy: np.ndarray,
        semantics: np.ndarray,
        goal_spec: GoalSpec | None,
        resolution: float = DEFAULT_RESOLUTION,
        rng_seed: int = 0,
        n_classes: int | None = None,
    ):
        occupancy = np.array(occupancy, dtype=bool)
        semantics = np.array(semantics, dtype=np.int64)
        if occupancy.ndim != 2 or occupancy.shape != semantics.shape:
            raise ValueError("occupancy and semantics must be 2D arrays of equal shape")
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        if np.any(semantics[occupancy] != WALL) or np.any(semantics[~occupancy] == WALL):
            raise ValueError("blocked cells must be class 0 and free cells non-zero")
        occupancy.setflags(write=False)
        semantics.setflags(write=False)
        self.occupancy = occupancy
        self.semantics = semantics
        self.height, self.width = occupancy.shape
        self.resolution = float(resolution)
        self.rng_seed = int(rng_seed)
        self.n_classes = int(n_classes) if n_classes is not None else int(semantics.max()) + 1
        self.goal_spec = goal_spec
        if goal_spec is not None:
            for c in goal_spec.goal_cells:
                if not self.is_free(c):
                    raise ValueError(f"goal cell {c} is not free")
        # plain nested lists are much faster than numpy for per-cell DDA probes
        self._opaque = (occupancy | (semantics >= FIRST_OBJECT_CLASS)).tolist()
        self._sem = semantics.tolist()
        self._fields: dict[tuple[Cell, ...], np.ndarray] = {}
        self._doors: frozenset[Cell] | None = None

    # -- cell helpers -------------------------------------------------
    def in_bounds(self, cell: Cell) -> bool:
        cx, cy = cell
        return 0 <= cx < self.width and 0 <= cy < self.height

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and not self.occupancy[cell[1], cell[0]]

    def cell_of(self, x: float, y: float) -> Cell:
        return (int(math.floor(x / self.resolution)), int(math.floor(y / self.resolution)))

    def cell_center(self, cell: Cell) -> tuple[float, float]:
        return ((cell[0] + 0.5) * self.resolution, (cell[1] + 0.5) * self.resolution)

    def free_cells(self) -> list[Cell]:
        ys, xs = np.nonzero(~self.occupancy)
        return [(int(x), int(y)) for y, x in zip(ys, xs)]

    def pose_valid(self, pose: Pose) -> bool:
        return self.is_free(self.cell_of(pose.x, pose.y))

    def door_cells(self) -> frozenset[Cell]:
        """Free cells squeezed between two opposite blocked cells."""
        if self._doors is not None:
            return self._doors
        doors = set()
        occ = self.occupancy
        for cx, cy in self.free_cells():
            if 0 < cx < self.width - 1 and occ[cy, cx - 1] and occ[cy, cx + 1]:
                doors.add((cx, cy))
            elif 0 < cy < self.height - 1 and occ[cy - 1, cx] and occ[cy + 1, cx]:
                doors.add((cx, cy))
        self._doors = frozenset(doors)
        return self._doors

    def distance_field(self, sources: Iterable[Cell]) -> np.ndarray:
        """4-connected BFS step counts from ``sources``; -1 where unreachable."""
        key = tuple(sorted(set(sources)))
        cached = self._fields.get(key)
        if cached is not None:
            return cached
        dist = np.full((self.height, self.width), -1, dtype=np.int64)
        occ = self.occupancy
        q: deque[Cell] = deque()
        for c in key:
            if self.is_free(c):
                dist[c[1], c[0]] = 0
                q.append(c)
        while q:
            cx, cy = q.popleft()
            d = dist[cy, cx] + 1
            for nx, ny in ((cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1)):
                if 0 <= nx < self.width and 0 <= ny < self.height and not occ[ny, nx] and dist[ny, nx] < 0:
                    dist[ny, nx] = d
                    q.append((nx, ny))
        dist.setflags(write=False)
        self._fields[key] = dist
        return dist

    def goal_distance(self, cell: Cell) -> float:
        """Geodesic metres from ``cell`` to the nearest goal cell (inf if none)."""
        if self.goal_spec is None or not self.in_bounds(cell):
            return math.inf
        steps = self.distance_field(self.goal_spec.goal_cells)[cell[1], cell[0]]
        return math.inf if steps < 0 else steps * self.resolution

    # -- serialisation --------------------------------------------------
    def to_json(self) -> str:
        occ = "".join("1" if v else "0" for v in self.occupancy.ravel())
        doc = {
            "version": WORLD_FORMAT_VERSION,
            "seed": self.rng_seed,
            "resolution": self.resolution,
            "width": self.width,
            "height": self.height,
            "n_classes": self.n_classes,
            "occupancy": occ,
            "semantics": [int(v) for v in self.semantics.ravel()],
            "goal_spec": None if self.goal_spec is None else self.goal_spec.to_dict(),
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "GridWorld":
        doc = json.loads(text)
        if doc.get("version") != WORLD_FORMAT_VERSION:
            raise ValueError(f"unsupported world format version {doc.get('version')!r}")
        w, h = int(doc["width"]), int(doc["height"])
        bits = doc["occupancy"]
        if len(bits) != w * h or len(doc["semantics"]) != w * h:
            raise ValueError("grid payload does not match width*height")
        occ = np.array([b == "1" for b in bits], dtype=bool).reshape(h, w)
        sem = np.array(doc["semantics"], dtype=np.int64).reshape(h, w)
        gs = doc.get("goal_spec")
        return cls(
            occ,
            sem,
            None if gs is None else GoalSpec.from_dict(gs),
            resolution=float(doc["resolution"]),
            rng_seed=int(doc["seed"]),
            n_classes=int(doc.get("n_classes", sem.max() + 1)),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, GridWorld):
            return NotImplemented
        return self.to_json() == other.to_json()

    def __hash__(self) -> int:
        return hash((self.rng_seed, self.width, self.height))

    def __repr__(self) -> str:
        return f"GridWorld({self.width}x{self.height}, seed={self.rng_seed})"


# ---------------------------------------------------------------------------
# generation


@dataclass(frozen=True)
class WorldParams:
    width: int = 32
    height: int = 32
    rooms: int = 4
    n_classes: int = 12
    objects_per_room: int = 4
    extra_door_prob: float = 0.0  # chance of a door on each non-tree room adjacency
    resolution: float = DEFAULT_RESOLUTION
    goal_kind: str = "category"
    object_size: int = 3  # objects are square blocks of this many cells per side
    min_room: int = 4  # minimum interior extent in cells
    jitter: int = 2


@dataclass
class _Room:
    x0: int  # interior bounds, inclusive
    x1: int
    y0: int
    y1: int
    cells: list[Cell] = field(default_factory=list)


def _split(lo: int, hi: int, parts: int, min_size: int, jitter: int, rng) -> list[int]:
    """Wall coordinates splitting the open interval (lo, hi) into ``parts``."""
    span = hi - lo
    walls = []
    for k in range(1, parts):
        nominal = lo + round(k * span / parts)
        walls.append(nominal + int(rng.integers(-jitter, jitter + 1)) if jitter else nominal)
    bounds = [lo] + walls + [hi]
    for a, b in zip(bounds, bounds[1:]):
        if b - a - 1 < min_size:
            raise WorldGenerationError(f"rooms too small for {parts} splits of {span} cells")
    return walls


def generate_world(seed: int, params: WorldParams | None = None) -> GridWorld:
    """Rectangular rooms on a coarse lattice joined by one-cell doors."""
    p = params or WorldParams()
    if p.width < 16 or p.height < 16:
        raise WorldGenerationError("world must be at least 16x16 cells")
    if p.rooms < 2:
        raise WorldGenerationError("need at least 2 rooms")
    if p.n_classes < 6:
        raise WorldGenerationError("need at least 6 classes")
    n_object_classes = p.n_classes - FIRST_OBJECT_CLASS
    if p.objects_per_room > n_object_classes:
        raise WorldGenerationError("more objects per room than distinct object classes")
    if p.goal_kind not in ("category", "instance"):
        raise WorldGenerationError(f"unknown goal kind {p.goal_kind!r}")
    if not 0.0 <= p.extra_door_prob <= 1.0:
        raise WorldGenerationError("extra_door_prob must lie in [0, 1]")

    rng = np.random.default_rng(seed)
    W, H = p.width, p.height
    occ = np.ones((H, W), dtype=bool)
    cols = math.ceil(math.sqrt(p.rooms))
    rows = math.ceil(p.rooms / cols)
    row_walls = _split(0, H - 1, rows, p.min_room, p.jitter, rng)
    ys = [0] + row_walls + [H - 1]
    rooms: list[_Room] = []
    grid_rows: list[list[int]] = []
    for r in range(rows):
        n_here = cols if r < rows - 1 else p.rooms - cols * (rows - 1)
        col_walls = _split(0, W - 1, n_here, p.min_room, p.jitter, rng)
        xs = [0] + col_walls + [W - 1]
        ids = []
        for c in range(n_here):
            room = _Room(xs[c] + 1, xs[c + 1] - 1, ys[r] + 1, ys[r + 1] - 1)
            occ[room.y0 : room.y1 + 1, room.x0 : room.x1 + 1] = False
            room.cells = [(x, y) for y in range(room.y0, room.y1 + 1) for x in range(room.x0, room.x1 + 1)]
            ids.append(len(rooms))
            rooms.append(room)
        grid_rows.append(ids)

    # candidate door positions for every adjacent room pair
    adjacency: list[tuple[int, int, list[Cell]]] = []
    for ids in grid_rows:
        for a, b in zip(ids, ids[1:]):
            ra, rb = rooms[a], rooms[b]
            wx = ra.x1 + 1
            lo, hi = max(ra.y0, rb.y0), min(ra.y1, rb.y1)
            adjacency.append((a, b, [(wx, y) for y in range(lo + 1, hi)]))
    for upper, lower in zip(grid_rows, grid_rows[1:]):
        for a in upper:
            for b in lower:
                ra, rb = rooms[a], rooms[b]
                lo, hi = max(ra.x0, rb.x0), min(ra.x1, rb.x1)
                if hi - lo >= 2:
                    wy = ra.y1 + 1
                    adjacency.append((a, b, [(x, wy) for x in range(lo + 1, hi)]))

    # random spanning tree (Kruskal over a shuffled edge list) plus extra doors
    parent = list(range(len(rooms)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    order = rng.permutation(len(adjacency))
    doors: list[Cell] = []
    for idx in order:
        a, b, cand = adjacency[idx]
        if not cand:
            continue
        ra, rb = find(a), find(b)
        if ra != rb or rng.random() < p.extra_door_prob:
            parent[ra] = rb
            doors.append(cand[int(rng.integers(len(cand)))])
    if len({find(i) for i in range(len(rooms))}) != 1:
        raise WorldGenerationError("rooms could not be connected")
    for cx, cy in doors:
        occ[cy, cx] = False

    sem = np.where(occ, WALL, FLOOR).astype(np.int64)
    near_door = set()
    for cx, cy in doors:
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                near_door.add((cx + dx, cy + dy))

    size = p.object_size
    if size < 1:
        raise WorldGenerationError("object_size must be >= 1")
    objects: list[tuple[tuple[Cell, ...], int]] = []
    for room in rooms:
        taken = set(near_door)
        classes = rng.choice(np.arange(FIRST_OBJECT_CLASS, p.n_classes), size=p.objects_per_room, replace=False)
        for cls_id in classes:
            # anchors whose block, plus a one-cell margin, is untouched
            cand = [
                (x, y)
                for y in range(room.y0, room.y1 - size + 2)
                for x in range(room.x0, room.x1 - size + 2)
                if not any((x + i, y + j) in taken for i in range(-1, size + 1) for j in range(-1, size + 1))
            ]
            if not cand:
                raise WorldGenerationError("more objects than free cells in a room")
            ax, ay = cand[int(rng.integers(len(cand)))]
            block = tuple((ax + i, ay + j) for j in range(size) for i in range(size))
            for cx, cy in block:
                sem[cy, cx] = int(cls_id)
                taken.add((cx, cy))
            objects.append((block, int(cls_id)))
    if not objects:
        raise WorldGenerationError("no objects placed; a goal needs at least one")

    if p.goal_kind == "category":
        present = sorted({c for _, c in objects})
        cat = present[int(rng.integers(len(present)))]
        cells = tuple(sorted((cell for block, c in objects if c == cat for cell in block),
                             key=lambda c: (c[1], c[0])))
        goal = GoalSpec("category", cat, cells)
        world = GridWorld(occ, sem, goal, p.resolution, seed, p.n_classes)
    else:
        block, cat = objects[int(rng.integers(len(objects)))]
        base = GridWorld(occ, sem, None, p.resolution, seed, p.n_classes)
        view = _reference_view(base, block)
        world = GridWorld(occ, sem, GoalSpec("instance", cat, block, view), p.resolution, seed, p.n_classes)
    return world


def _reference_view(world: GridWorld, block: Sequence[Cell]) -> ViewObservation:
    """Forward view from a floor cell two cells off the object's side, facing it."""
    xs = [c[0] for c in block]
    ys = [c[1] for c in block]
    mx, my = (min(xs) + max(xs)) // 2, (min(ys) + max(ys)) // 2
    for gap in (2, 1):
        for c, heading in (((min(xs) - gap, my), 0.0), ((mx, min(ys) - gap), math.pi / 2),
                           ((max(xs) + gap, my), math.pi), ((mx, max(ys) + gap), 1.5 * math.pi)):
            if world.is_free(c) and world.semantics[c[1], c[0]] == FLOOR:
                x, y = world.cell_center(c)
                return raycast_view(world, Pose(x, y, normalize_angle(heading)), 0.0)
    raise WorldGenerationError(f"object at {block[0]} has no free floor neighbour")


# ---------------------------------------------------------------------------
# geometry queries


def geodesic_distance(world: GridWorld, a: Cell, b: Cell) -> float:
    """Shortest 4-connected free path length in metres; ``math.inf`` if unreachable."""
    if not (world.in_bounds(a) and world.in_bounds(b)):
        raise ValueError(f"cells {a}, {b} must be in bounds")
    if not (world.is_free(a) and world.is_free(b)):
        return math.inf
    steps = world.distance_field([a])[b[1], b[0]]
    return math.inf if steps < 0 else steps * world.resolution


def nearest_free_cell(world: GridWorld, point: tuple[float, float]) -> Cell:
    """Free cell whose centre is closest to ``point``; ties go row-major first."""
    res = world.resolution
    x = min(max(point[0], 0.0), world.width * res)
    y = min(max(point[1], 0.0), world.height * res)
    free = ~world.occupancy
    if not free.any():
        raise ValueError("world has no free cells")
    cx = (np.arange(world.width) + 0.5) * res - x
    cy = (np.arange(world.height) + 0.5) * res - y
    d2 = cy[:, None] ** 2 + cx[None, :] ** 2
    d2 = np.where(free, d2, np.inf)
    flat = int(np.argmin(d2))  # argmin returns the first minimum in row-major order
    return (flat % world.width, flat // world.width)


def _cast_ray(world: GridWorld, x: float, y: float, angle: float, max_range: float) -> tuple[float, int, Cell | None]:
    """Grid DDA to the first opaque cell; returns (depth, class, hit cell)."""
    res = world.resolution
    dx, dy = math.cos(angle), math.sin(angle)
    cx, cy = int(math.floor(x / res)), int(math.floor(y / res))
    if dx > 0:
        step_x, t_max_x, t_dx = 1, ((cx + 1) * res - x) / dx, res / dx
    elif dx < 0:
        step_x, t_max_x, t_dx = -1, (cx * res - x) / dx, -res / dx
    else:
        step_x, t_max_x, t_dx = 0, math.inf, math.inf
    if dy > 0:
        step_y, t_max_y, t_dy = 1, ((cy + 1) * res - y) / dy, res / dy
    elif dy < 0:
        step_y, t_max_y, t_dy = -1, (cy * res - y) / dy, -res / dy
    else:
        step_y, t_max_y, t_dy = 0, math.inf, math.inf
    opaque, sem = world._opaque, world._sem
    w, h = world.width, world.height
    while True:
        if t_max_x < t_max_y:
            cx += step_x
            t = t_max_x
            t_max_x += t_dx
        else:
            cy += step_y
            t = t_max_y
            t_max_y += t_dy
        if t >= max_range:
            return max_range, WALL, None
        if not (0 <= cx < w and 0 <= cy < h):
            return max(t, 1e-9), WALL, None
        if opaque[cy][cx]:
            return max(t, 1e-9), sem[cy][cx], (cx, cy)


def ray_angles(heading: float, n_rays: int) -> list[float]:
    spacing = VIEW_FOV / n_rays
    start = heading - VIEW_FOV / 2.0
    return [start + (k + 0.5) * spacing for k in range(n_rays)]


def raycast_view(
    world: GridWorld,
    pose: Pose,
    heading_offset: float = 0.0,
    n_rays: int = DEFAULT_RAYS,
    max_range: float = DEFAULT_MAX_RANGE,
    timestep: int = 0,
) -> ViewObservation:
    """Scan a 60 degree sector centred on ``pose.theta + heading_offset``."""
    heading = normalize_angle(pose.theta + heading_offset)
    depths = []
    classes = []
    for a in ray_angles(heading, n_rays):
        d, c, _ = _cast_ray(world, pose.x, pose.y, a, max_range)
        depths.append(d)
        classes.append(c)
    return ViewObservation(tuple(depths), tuple(classes), heading, timestep, max_range, world.resolution)


def ray_hit_cells(world: GridWorld, pose: Pose, heading_offset: float = 0.0,
                  n_rays: int = DEFAULT_RAYS, max_range: float = DEFAULT_MAX_RANGE) -> list[Cell | None]:
    heading = normalize_angle(pose.theta + heading_offset)
    return [_cast_ray(world, pose.x, pose.y, a, max_range)[2] for a in ray_angles(heading, n_rays)]


def world_from_ascii(rows: Sequence[str], resolution: float = DEFAULT_RESOLUTION,
                     goal_class: int | None = None, n_classes: int = 8) -> GridWorld:
    """Build a fixture world: ``#`` wall, ``.`` floor, digits 2-9 object classes.

    The first text row is the top of the map (largest y).
    """
    h, w = len(rows), len(rows[0])
    occ = np.zeros((h, w), dtype=bool)
    sem = np.full((h, w), FLOOR, dtype=np.int64)
    for r, line in enumerate(rows):
        if len(line) != w:
            raise ValueError("ragged fixture rows")
        y = h - 1 - r
        for x, ch in enumerate(line):
            if ch == "#":
                occ[y, x] = True
                sem[y, x] = WALL
            elif ch.isdigit():
                sem[y, x] = int(ch)
    goal = None
    if goal_class is not None:
        ys, xs = np.nonzero(sem == goal_class)
        cells = tuple(sorted(((int(x), int(y)) for y, x in zip(ys, xs)), key=lambda c: (c[1], c[0])))
        goal = GoalSpec("category", goal_class, cells)
    return GridWorld(occ, sem, goal, resolution, 0, n_classes)
