"""Procedural desk-scale indoor environments.

An environment is a BSP partition of a rectangular footprint into rooms,
connected by door openings cut from shared walls, furnished with colored
axis-aligned boxes, and sampled into a dense labeled point cloud. Walls,
floor and ceiling form the structural occluder set; object faces occlude
as well but are kept separate so structure points keep semantic id 0.

Serialization: a JSON scene file plus a binary cloud sidecar
(little-endian header {magic "EQAC", u32 version, u64 count} followed by
count records of {3x f32 position, 3x u8 color, u32 semantic}).
"""

from __future__ import annotations

import json
import struct
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Box3, Rect3

# ---------------- published vocabularies ----------------

ROOM_TYPES = (
    "family room", "closet", "spa", "dinning room", "lounge", "gym",
    "living room", "office", "laundry room", "bedroom", "foyer", "bathroom",
    "kitchen", "garage", "rec room", "meeting room", "hallway", "tv room",
)

OBJECT_CATEGORIES = (
    "shelving", "picture", "sink", "clothes", "appliances", "door", "plant",
    "furniture", "fireplace", "chest of drawers", "seating", "sofa", "table",
    "curtain", "shower", "towel", "cushion", "blinds", "counter", "stool",
    "bed", "chair", "bathtub", "toilet", "cabinet",
)

# Kelly's 22 colors of maximum contrast (standard ISCC-NBS renderings)
# plus off-white and slate-grey. Names are the answer vocabulary for
# color questions; RGB drives the rendered point colors.
COLOR_TABLE: dict[str, tuple[int, int, int]] = {
    "white": (242, 243, 244),
    "black": (34, 34, 34),
    "yellow": (243, 195, 0),
    "purple": (135, 86, 146),
    "orange": (243, 132, 0),
    "light blue": (161, 202, 241),
    "red": (190, 0, 50),
    "buff": (194, 178, 128),
    "grey": (132, 132, 130),
    "green": (0, 136, 86),
    "purplish pink": (230, 143, 172),
    "blue": (0, 103, 165),
    "yellowish pink": (249, 147, 121),
    "violet": (96, 78, 151),
    "orange yellow": (246, 166, 0),
    "purplish red": (179, 68, 108),
    "greenish yellow": (220, 211, 0),
    "reddish brown": (136, 45, 23),
    "yellow green": (141, 182, 0),
    "yellowish brown": (101, 69, 34),
    "reddish orange": (226, 88, 34),
    "olive green": (43, 61, 38),
    "off-white": (250, 249, 246),
    "slate grey": (112, 128, 144),
}
COLOR_NAMES = tuple(COLOR_TABLE)

WALL_RGB = (210, 210, 205)
FLOOR_RGB = (150, 130, 110)
CEILING_RGB = (240, 240, 235)

# footprint-side and height ranges per size group
_LARGE = ((0.55, 1.0), (0.45, 1.0))
_SMALL = ((0.30, 0.60), (0.35, 1.2))
_LARGE_CATEGORIES = frozenset({
    "shelving", "appliances", "furniture", "fireplace", "chest of drawers",
    "seating", "sofa", "table", "counter", "bed", "bathtub", "cabinet",
})


def _size_ranges(category: str):
    return _LARGE if category in _LARGE_CATEGORIES else _SMALL


# ---------------- domain types ----------------

@dataclass(frozen=True)
class DoorSegment:
    """Opening in a wall: wall normal axis, wall offset, span [lo, hi]."""

    axis: int
    offset: float
    lo: float
    hi: float


@dataclass(frozen=True)
class RoomSpec:
    room_id: int
    room_type: str
    footprint: tuple[float, float, float, float]  # x0, y0, x1, y1
    door_segments: tuple[DoorSegment, ...]


@dataclass(frozen=True)
class ObjectInstance:
    object_id: int
    category: str
    color_name: str
    color_rgb: tuple[int, int, int]
    box: Box3
    room_id: int


@dataclass
class PointCloud:
    """Parallel arrays: positions (N,3) f32, colors (N,3) u8, semantic (N,) u32."""

    positions: np.ndarray
    colors: np.ndarray
    semantic: np.ndarray

    @property
    def count(self) -> int:
        return int(self.positions.shape[0])

    def take(self, idx) -> "PointCloud":
        return PointCloud(self.positions[idx], self.colors[idx], self.semantic[idx])

    @staticmethod
    def empty() -> "PointCloud":
        return PointCloud(
            np.empty((0, 3), np.float32), np.empty((0, 3), np.uint8), np.empty(0, np.uint32)
        )


@dataclass
class Environment:
    """Immutable after construction; share freely across workers."""

    id: str
    rooms: list[RoomSpec]
    objects: list[ObjectInstance]
    surfaces: list[Rect3]  # structural occluders: walls, floor, ceiling
    global_cloud: PointCloud
    bounds: Box3
    seed: int
    density: float
    _occluder_cache: tuple | None = field(default=None, repr=False, compare=False)

    def object_by_id(self, object_id: int) -> ObjectInstance:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise KeyError(f"no object {object_id} in {self.id}")

    def room_by_id(self, room_id: int) -> RoomSpec:
        for r in self.rooms:
            if r.room_id == room_id:
                return r
        raise KeyError(f"no room {room_id} in {self.id}")

    def occluder_rects(self) -> list[Rect3]:
        """Full occluder mesh: structure plus every object face."""
        rects = list(self.surfaces)
        for obj in self.objects:
            rects.extend(obj.box.faces())
        return rects

    def occluder_arrays(self):
        """Packed (axes, params, corners) arrays for the kernels, cached."""
        if self._occluder_cache is None:
            from .geometry import pack_rects

            rects = self.occluder_rects()
            axes, params = pack_rects(rects)
            corners = np.stack([r.corners() for r in rects])
            object.__setattr__(self, "_occluder_cache", (axes, params, corners))
        return self._occluder_cache


@dataclass
class OccupancyGrid:
    """2D blocked/free raster; cells[row, col] with row = y, col = x."""

    origin: tuple[float, float]
    resolution: float
    cells: np.ndarray  # (H, W) bool, True = blocked
    agent_radius: float

    @property
    def width(self) -> int:
        return int(self.cells.shape[1])

    @property
    def height(self) -> int:
        return int(self.cells.shape[0])

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        ix = int(np.floor((x - self.origin[0]) / self.resolution))
        iy = int(np.floor((y - self.origin[1]) / self.resolution))
        return ix, iy

    def center_of(self, ix: int, iy: int) -> tuple[float, float]:
        return (
            self.origin[0] + (ix + 0.5) * self.resolution,
            self.origin[1] + (iy + 0.5) * self.resolution,
        )

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def is_free(self, x: float, y: float) -> bool:
        ix, iy = self.cell_of(x, y)
        return self.in_bounds(ix, iy) and not bool(self.cells[iy, ix])

    def blocked_u8(self) -> np.ndarray:
        return np.ascontiguousarray(self.cells, dtype=np.uint8)


@dataclass(frozen=True)
class EnvGenSpec:
    """Generation parameters. Bounds must be at least 4x4 m, >=2 rooms."""

    n_rooms: int = 3
    min_objects_per_room: int = 2
    max_objects_per_room: int = 3
    width: float = 7.0
    depth: float = 7.0
    height: float = 2.6
    door_width: float = 0.8
    density: float = 550.0
    min_room_extent: float = 1.8
    object_margin: float = 0.3  # gap to walls, > agent diameter
    object_gap: float = 0.3  # gap between objects
    door_clearance: float = 0.55
    max_retries: int = 48


class GenerationError(RuntimeError):
    """Raised when no valid environment emerges within max_retries."""


# ---------------- generation ----------------

def _split_footprint(rng, spec: EnvGenSpec) -> list[tuple[float, float, float, float]]:
    rects = [(0.0, 0.0, spec.width, spec.depth)]
    m = spec.min_room_extent
    while len(rects) < spec.n_rooms:
        # split the largest rect that still has room for two children
        order = sorted(
            range(len(rects)),
            key=lambda i: (-(rects[i][2] - rects[i][0]) * (rects[i][3] - rects[i][1]), i),
        )
        done = False
        for i in order:
            x0, y0, x1, y1 = rects[i]
            w, d = x1 - x0, y1 - y0
            if max(w, d) < 2.0 * m:
                continue
            if w >= d:
                cut = rng.uniform(x0 + m, x1 - m)
                a, b = (x0, y0, cut, y1), (cut, y0, x1, y1)
            else:
                cut = rng.uniform(y0 + m, y1 - m)
                a, b = (x0, y0, x1, cut), (x0, cut, x1, y1)
            rects[i] = a
            rects.append(b)
            done = True
            break
        if not done:
            raise GenerationError("bounds too small to fit the requested rooms")
    return rects


def _shared_edges(rects):
    """Pairs (i, j, axis, offset, lo, hi): interior edges between rooms."""
    out = []
    for i in range(len(rects)):
        for j in range(i + 1, len(rects)):
            a, b = rects[i], rects[j]
            # vertical shared edge (wall normal x)
            for xa, xb in ((a[2], b[0]), (a[0], b[2])):
                if xa == xb:
                    lo, hi = max(a[1], b[1]), min(a[3], b[3])
                    if hi > lo:
                        out.append((i, j, 0, xa, lo, hi))
            # horizontal shared edge (wall normal y)
            for ya, yb in ((a[3], b[1]), (a[1], b[3])):
                if ya == yb:
                    lo, hi = max(a[0], b[0]), min(a[2], b[2])
                    if hi > lo:
                        out.append((i, j, 1, ya, lo, hi))
    return out


def _spanning_doors(rng, n_rooms, edges, spec: EnvGenSpec):
    """Pick one door per spanning-tree edge; error if rooms can't connect."""
    margin = 0.15
    usable = [e for e in edges if e[5] - e[4] >= spec.door_width + 2 * margin]
    adj: dict[int, list[tuple]] = {i: [] for i in range(n_rooms)}
    for e in usable:
        adj[e[0]].append(e)
        adj[e[1]].append(e)
    doors = []
    seen = {0}
    frontier = deque([0])
    while frontier:
        cur = frontier.popleft()
        for e in adj[cur]:
            other = e[1] if e[0] == cur else e[0]
            if other in seen:
                continue
            seen.add(other)
            frontier.append(other)
            lo, hi = e[4] + margin, e[5] - margin
            c = rng.uniform(lo + spec.door_width / 2, hi - spec.door_width / 2)
            doors.append((e[0], e[1], DoorSegment(e[2], e[3], c - spec.door_width / 2, c + spec.door_width / 2)))
    if len(seen) != n_rooms:
        raise GenerationError("room adjacency graph is not connectable with doors")
    return doors


def _wall_rects(spec, footprints, edges, doors) -> list[Rect3]:
    h = spec.height
    walls = [
        Rect3(0, 0.0, 0.0, spec.depth, 0.0, h),
        Rect3(0, spec.width, 0.0, spec.depth, 0.0, h),
        Rect3(1, 0.0, 0.0, spec.width, 0.0, h),
        Rect3(1, spec.depth, 0.0, spec.width, 0.0, h),
    ]
    door_map: dict[tuple, list[DoorSegment]] = {}
    for _, _, seg in doors:
        door_map.setdefault((seg.axis, seg.offset), []).append(seg)
    for _, _, axis, offset, lo, hi in edges:
        spans = [(lo, hi)]
        for seg in door_map.get((axis, offset), []):
            nxt = []
            for a, b in spans:
                if seg.hi <= a or seg.lo >= b:
                    nxt.append((a, b))
                else:
                    if seg.lo > a:
                        nxt.append((a, seg.lo))
                    if seg.hi < b:
                        nxt.append((seg.hi, b))
            spans = nxt
        for a, b in spans:
            if b > a:
                walls.append(Rect3(axis, offset, a, b, 0.0, h))
    return walls


def _place_objects(rng, spec, footprints, room_doors):
    objects = []
    next_id = 1
    for room_id, fp in enumerate(footprints):
        placed: list[Box3] = []
        want = int(rng.integers(spec.min_objects_per_room, spec.max_objects_per_room + 1))
        for _ in range(want):
            ok = False
            for _try in range(60):
                category = OBJECT_CATEGORIES[rng.integers(len(OBJECT_CATEGORIES))]
                color_name = COLOR_NAMES[rng.integers(len(COLOR_NAMES))]
                (s_lo, s_hi), (h_lo, h_hi) = _size_ranges(category)
                w = rng.uniform(s_lo, s_hi)
                d = rng.uniform(s_lo, s_hi)
                hh = rng.uniform(h_lo, h_hi)
                x_lo, x_hi = fp[0] + spec.object_margin, fp[2] - spec.object_margin - w
                y_lo, y_hi = fp[1] + spec.object_margin, fp[3] - spec.object_margin - d
                if x_hi <= x_lo or y_hi <= y_lo:
                    continue
                x = rng.uniform(x_lo, x_hi)
                y = rng.uniform(y_lo, y_hi)
                box = Box3((x, y, 0.0), (x + w, y + d, hh))
                if _box_conflicts(box, placed, spec, room_doors.get(room_id, [])):
                    continue
                objects.append(
                    ObjectInstance(next_id, category, color_name, COLOR_TABLE[color_name], box, room_id)
                )
                placed.append(box)
                next_id += 1
                ok = True
                break
            if not ok and len(placed) < spec.min_objects_per_room:
                raise GenerationError(f"could not place required objects in room {room_id}")
    return objects


def _box_conflicts(box: Box3, placed, spec, doors) -> bool:
    g = spec.object_gap
    x0, y0, x1, y1 = box.footprint()
    for other in placed:
        ox0, oy0, ox1, oy1 = other.footprint()
        if x0 < ox1 + g and x1 > ox0 - g and y0 < oy1 + g and y1 > oy0 - g:
            return True
    c = spec.door_clearance
    for seg in doors:
        if seg.axis == 0:
            zx0, zx1 = seg.offset - c, seg.offset + c
            zy0, zy1 = seg.lo - c, seg.hi + c
        else:
            zx0, zx1 = seg.lo - c, seg.hi + c
            zy0, zy1 = seg.offset - c, seg.offset + c
        if x0 < zx1 and x1 > zx0 and y0 < zy1 and y1 > zy0:
            return True
    return False


def _structure_rects(spec, walls) -> list[Rect3]:
    floor = Rect3(2, 0.0, 0.0, spec.width, 0.0, spec.depth)
    ceiling = Rect3(2, spec.height, 0.0, spec.width, 0.0, spec.depth)
    return walls + [floor, ceiling]


def _sample_rect(rng, rect: Rect3, density: float) -> np.ndarray:
    """Stratified jittered samples on a rectangle; count = nu * nv."""
    su = rect.u_hi - rect.u_lo
    sv = rect.v_hi - rect.v_lo
    root = np.sqrt(density)
    nu = max(1, int(round(su * root)))
    nv = max(1, int(round(sv * root)))
    iu, iv = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    jit = rng.random((nu * nv, 2))
    u = rect.u_lo + (iu.ravel() + jit[:, 0]) * (su / nu)
    v = rect.v_lo + (iv.ravel() + jit[:, 1]) * (sv / nv)
    from .geometry import AXIS_UV

    ua, va = AXIS_UV[rect.axis]
    pts = np.empty((nu * nv, 3), dtype=np.float64)
    pts[:, rect.axis] = rect.offset
    pts[:, ua] = u
    pts[:, va] = v
    return pts


def sample_surface_points(env: Environment, density: float) -> PointCloud:
    """Sample a labeled global cloud from the environment's geometry.

    Stratified jittered sampling per rectangle: expected count per face is
    area * density (deterministic given env.seed). Structure points carry
    semantic 0; object-face points carry the owning object_id.
    """
    if density <= 0:
        raise ValueError("density must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([env.seed & 0xFFFFFFFF, 0x5A11]))
    pos_parts, col_parts, sem_parts = [], [], []
    zs = (env.bounds.lo[2], env.bounds.hi[2])
    for rect in env.surfaces:
        pts = _sample_rect(rng, rect, density)
        if rect.axis == 2:
            rgb = FLOOR_RGB if rect.offset == zs[0] else CEILING_RGB
        else:
            rgb = WALL_RGB
        pos_parts.append(pts)
        col_parts.append(np.tile(np.array(rgb, np.uint8), (len(pts), 1)))
        sem_parts.append(np.zeros(len(pts), np.uint32))
    for obj in env.objects:
        for rect in obj.box.faces():
            pts = _sample_rect(rng, rect, density)
            pos_parts.append(pts)
            col_parts.append(np.tile(np.array(obj.color_rgb, np.uint8), (len(pts), 1)))
            sem_parts.append(np.full(len(pts), obj.object_id, np.uint32))
    return PointCloud(
        np.concatenate(pos_parts).astype(np.float32),
        np.concatenate(col_parts),
        np.concatenate(sem_parts),
    )


def generate_environment(spec: EnvGenSpec, seed: int) -> Environment:
    """Deterministically generate an environment from (spec, seed).

    Retries with derived sub-seeds until all invariants hold: connected
    free space, at least one (category, room type) pair unique, every
    room furnished. Raises GenerationError after spec.max_retries.
    """
    if spec.n_rooms < 2:
        raise ValueError("need at least 2 rooms")
    if spec.min_objects_per_room < 1:
        raise ValueError("need at least 1 object per room")
    if spec.width < 4.0 or spec.depth < 4.0:
        raise ValueError("bounds must be at least 4x4 m")
    last_err = "unknown"
    for attempt in range(spec.max_retries):
        rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, attempt]))
        try:
            env = _generate_once(spec, seed, rng)
        except GenerationError as e:
            last_err = str(e)
            continue
        return env
    raise GenerationError(f"no valid environment for seed {seed}: {last_err}")


def _generate_once(spec: EnvGenSpec, seed: int, rng) -> Environment:
    footprints = _split_footprint(rng, spec)
    edges = _shared_edges(footprints)
    doors = _spanning_doors(rng, len(footprints), edges, spec)
    room_doors: dict[int, list[DoorSegment]] = {}
    for i, j, seg in doors:
        room_doors.setdefault(i, []).append(seg)
        room_doors.setdefault(j, []).append(seg)
    walls = _wall_rects(spec, footprints, edges, doors)
    objects = _place_objects(rng, spec, footprints, room_doors)

    room_types = [ROOM_TYPES[rng.integers(len(ROOM_TYPES))] for _ in footprints]
    rooms = [
        RoomSpec(i, room_types[i], footprints[i], tuple(room_doors.get(i, [])))
        for i in range(len(footprints))
    ]

    pair_counts: dict[tuple[str, str], int] = {}
    for obj in objects:
        key = (obj.category, room_types[obj.room_id])
        pair_counts[key] = pair_counts.get(key, 0) + 1
    if not any(v == 1 for v in pair_counts.values()):
        raise GenerationError("no unique (object, room) pair")

    env = Environment(
        id=f"env-{seed:08x}",
        rooms=rooms,
        objects=objects,
        surfaces=_structure_rects(spec, walls),
        global_cloud=PointCloud.empty(),
        bounds=Box3((0.0, 0.0, 0.0), (spec.width, spec.depth, spec.height)),
        seed=seed,
        density=spec.density,
    )
    grid = occupancy_grid(env, 0.05, 0.1)
    if not free_space_connected(grid, rooms):
        raise GenerationError("free space disconnected after furnishing")
    env.global_cloud = sample_surface_points(env, spec.density)
    return env


# ---------------- occupancy ----------------

def occupancy_grid(env: Environment, resolution: float, agent_radius: float) -> OccupancyGrid:
    """Blocked = cell center within agent_radius of any wall or object footprint."""
    if not (0.0 < resolution <= 0.5):
        raise ValueError("resolution must be in (0, 0.5]")
    if agent_radius < 0.0:
        raise ValueError("agent_radius must be >= 0")
    w_m = env.bounds.hi[0] - env.bounds.lo[0]
    d_m = env.bounds.hi[1] - env.bounds.lo[1]
    if w_m <= 0 or d_m <= 0:
        raise ValueError("degenerate bounds")
    w = int(round(w_m / resolution))
    h = int(round(d_m / resolution))
    xs = env.bounds.lo[0] + (np.arange(w) + 0.5) * resolution
    ys = env.bounds.lo[1] + (np.arange(h) + 0.5) * resolution
    gx, gy = np.meshgrid(xs, ys)
    min_d2 = np.full(gx.shape, np.inf)
    for rect in env.surfaces:
        if rect.axis == 2:
            continue  # floor/ceiling don't block
        if rect.axis == 0:
            dx = gx - rect.offset
            dy = gy - np.clip(gy, rect.u_lo, rect.u_hi)
        else:
            dx = gx - np.clip(gx, rect.u_lo, rect.u_hi)
            dy = gy - rect.offset
        np.minimum(min_d2, dx * dx + dy * dy, out=min_d2)
    for obj in env.objects:
        x0, y0, x1, y1 = obj.box.footprint()
        dx = gx - np.clip(gx, x0, x1)
        dy = gy - np.clip(gy, y0, y1)
        np.minimum(min_d2, dx * dx + dy * dy, out=min_d2)
    blocked = min_d2 <= agent_radius * agent_radius
    return OccupancyGrid(
        (env.bounds.lo[0], env.bounds.lo[1]), resolution, blocked, agent_radius
    )


def free_space_connected(grid: OccupancyGrid, rooms) -> bool:
    """Flood fill from one room center; every room's center cell must be reached."""
    seeds = []
    for room in rooms:
        x0, y0, x1, y1 = room.footprint
        ix, iy = grid.cell_of((x0 + x1) / 2, (y0 + y1) / 2)
        if not grid.in_bounds(ix, iy) or grid.cells[iy, ix]:
            return False
        seeds.append((ix, iy))
    reach = np.zeros_like(grid.cells, dtype=bool)
    q = deque([seeds[0]])
    reach[seeds[0][1], seeds[0][0]] = True
    while q:
        cx, cy = q.popleft()
        for nx, ny in ((cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1)):
            if grid.in_bounds(nx, ny) and not reach[ny, nx] and not grid.cells[ny, nx]:
                reach[ny, nx] = True
                q.append((nx, ny))
    return all(reach[iy, ix] for ix, iy in seeds)


# ---------------- serialization ----------------

_CLOUD_MAGIC = b"EQAC"
_CLOUD_VERSION = 1
_CLOUD_DTYPE = np.dtype([("pos", "<f4", 3), ("color", "u1", 3), ("sem", "<u4")])


def write_cloud(path, cloud: PointCloud) -> None:
    rec = np.empty(cloud.count, dtype=_CLOUD_DTYPE)
    rec["pos"] = cloud.positions
    rec["color"] = cloud.colors
    rec["sem"] = cloud.semantic
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIQ", _CLOUD_MAGIC, _CLOUD_VERSION, cloud.count))
        f.write(rec.tobytes())


def read_cloud(path) -> PointCloud:
    with open(path, "rb") as f:
        magic, version, count = struct.unpack("<4sIQ", f.read(16))
        if magic != _CLOUD_MAGIC:
            raise ValueError(f"{path}: not an EQAC cloud file")
        if version != _CLOUD_VERSION:
            raise ValueError(f"{path}: unsupported EQAC version {version}")
        rec = np.frombuffer(f.read(count * _CLOUD_DTYPE.itemsize), dtype=_CLOUD_DTYPE)
    return PointCloud(
        rec["pos"].astype(np.float32),
        np.ascontiguousarray(rec["color"]),
        rec["sem"].astype(np.uint32),
    )


def save_environment(env: Environment, json_path, config_hash: str | None = None) -> None:
    """Write the scene JSON plus the .eqac cloud sidecar next to it."""
    json_path = Path(json_path)
    cloud_name = json_path.stem + ".eqac"
    doc = {
        "format": "eqa-forge-env",
        "version": 1,
        "id": env.id,
        "seed": env.seed,
        "config_hash": config_hash,
        "bounds": [env.bounds.hi[0], env.bounds.hi[1], env.bounds.hi[2]],
        "density": env.density,
        "cloud_file": cloud_name,
        "rooms": [
            {
                "room_id": r.room_id,
                "room_type": r.room_type,
                "footprint": list(r.footprint),
                "doors": [[d.axis, d.offset, d.lo, d.hi] for d in r.door_segments],
            }
            for r in env.rooms
        ],
        "objects": [
            {
                "object_id": o.object_id,
                "category": o.category,
                "color_name": o.color_name,
                "color_rgb": list(o.color_rgb),
                "box": list(o.box.lo) + list(o.box.hi),
                "room_id": o.room_id,
            }
            for o in env.objects
        ],
        "surfaces": [
            [s.axis, s.offset, s.u_lo, s.u_hi, s.v_lo, s.v_hi] for s in env.surfaces
        ],
    }
    with open(json_path, "w") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))
    write_cloud(json_path.with_name(cloud_name), env.global_cloud)


def load_environment(json_path) -> Environment:
    json_path = Path(json_path)
    with open(json_path) as f:
        doc = json.load(f)
    if doc.get("format") != "eqa-forge-env":
        raise ValueError(f"{json_path}: not an environment file")
    rooms = [
        RoomSpec(
            r["room_id"],
            r["room_type"],
            tuple(r["footprint"]),
            tuple(DoorSegment(*d) for d in r["doors"]),
        )
        for r in doc["rooms"]
    ]
    objects = [
        ObjectInstance(
            o["object_id"],
            o["category"],
            o["color_name"],
            tuple(o["color_rgb"]),
            Box3(tuple(o["box"][:3]), tuple(o["box"][3:])),
            o["room_id"],
        )
        for o in doc["objects"]
    ]
    surfaces = [Rect3(int(s[0]), *s[1:]) for s in doc["surfaces"]]
    cloud = read_cloud(json_path.with_name(doc["cloud_file"]))
    w, d, h = doc["bounds"]
    return Environment(
        id=doc["id"],
        rooms=rooms,
        objects=objects,
        surfaces=surfaces,
        global_cloud=cloud,
        bounds=Box3((0.0, 0.0, 0.0), (w, d, h)),
        seed=doc["seed"],
        density=doc["density"],
    )
