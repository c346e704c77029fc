"""Scene grids, navigability queries, and the geodesic distance engine.

A scene is an occupancy grid of 0.25 m cells. Continuous points snap to the
cell that contains them; geodesic distances are shortest 4-connected paths
between cell centers with a uniform edge length of one cell.
"""

import heapq
import json
from collections import OrderedDict
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from sdmnav.errors import SceneError

logger = logging.getLogger(__name__)

CELL_SIZE = 0.25
UNREACHABLE = math.inf

# 4-connectivity in (di, dj) cell offsets; order fixes path tie-breaking.
NEIGHBOURS = ((1, 0), (0, 1), (-1, 0), (0, -1))

Cell = tuple[int, int]

# Distance fields kept per grid; the least recently used one is dropped first.
FIELD_CACHE_SIZE = 256


# ---------------------------------------------------------------------------
# Geometry primitives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Point:
    """A position on the continuous scene plane, in meters."""
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise SceneError(f"point coordinates must be finite, got ({self.x}, {self.y})")

    def distance_to(self, other: "Point") -> float:
        """Euclidean distance to *other*."""
        return math.hypot(other.x - self.x, other.y - self.y)

    def as_list(self) -> list[float]:
        return [self.x, self.y]


def heading_vector(heading_deg: float) -> tuple[float, float]:
    """Unit vector ``(cos, sin)`` of a heading; exact on the four cardinal headings."""
    h = heading_deg % 360
    if h == 0:
        return 1.0, 0.0
    if h == 90:
        return 0.0, 1.0
    if h == 180:
        return -1.0, 0.0
    if h == 270:
        return 0.0, -1.0
    rad = math.radians(h)
    return math.cos(rad), math.sin(rad)


@dataclass(frozen=True)
class Pose:
    """Agent position and heading (degrees, counterclockwise from +x, multiple of 10)."""
    position: Point
    heading: int

    def __post_init__(self):
        if self.heading % 10 != 0 or not 0 <= self.heading < 360:
            raise SceneError(f"heading must be a multiple of 10 in [0, 360), got {self.heading}")

    def to_local(self, p: Point) -> tuple[float, float]:
        """Express *p* in the agent frame: (ahead, left) offsets in meters."""
        c, s = heading_vector(self.heading)
        dx = p.x - self.position.x
        dy = p.y - self.position.y
        return dx * c + dy * s, dy * c - dx * s


# ---------------------------------------------------------------------------
# Scene grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SceneGrid:
    """Immutable occupancy grid.

    ``navigable`` is indexed ``[j, i]`` (row, column); cell ``(i, j)`` has its
    center at ``((i + 0.5) * cell_size, (j + 0.5) * cell_size)``. The most
    recent :data:`FIELD_CACHE_SIZE` distance fields are memoised per source
    cell; the grid itself never changes.
    """
    scene_id: str
    navigable: np.ndarray
    cell_size: float = CELL_SIZE
    small_scene: bool = False
    wide_scene: bool = False
    _fields: OrderedDict = field(default_factory=OrderedDict, repr=False, compare=False)

    def __post_init__(self):
        nav = np.asarray(self.navigable, dtype=bool)
        if nav.ndim != 2 or nav.size == 0:
            raise SceneError(f"scene '{self.scene_id}': occupancy must be a non-empty 2D grid")
        if not nav.any():
            raise SceneError(f"scene '{self.scene_id}': zero navigable cells")
        nav = nav.copy()
        nav.setflags(write=False)
        object.__setattr__(self, "navigable", nav)

    @property
    def width(self) -> int:
        return self.navigable.shape[1]

    @property
    def height(self) -> int:
        return self.navigable.shape[0]

    def is_cell_navigable(self, cell: Cell) -> bool:
        i, j = cell
        if not (0 <= i < self.width and 0 <= j < self.height):
            return False
        return bool(self.navigable[j, i])

    def cell_center(self, cell: Cell) -> Point:
        i, j = cell
        return Point((i + 0.5) * self.cell_size, (j + 0.5) * self.cell_size)

    def navigable_cells(self) -> list[Cell]:
        """All navigable cells in row-major order."""
        js, is_ = np.nonzero(self.navigable)
        return [(int(i), int(j)) for j, i in zip(js, is_)]

    def distance_field(self, source: Cell) -> np.ndarray:
        """Edge counts from *source* to every cell (``inf`` when unreachable)."""
        cached = self._fields.get(source)
        if cached is not None:
            self._fields.move_to_end(source)
            return cached
        cached = _dijkstra_field(self.navigable, source)
        cached.setflags(write=False)
        self._fields[source] = cached
        if len(self._fields) > FIELD_CACHE_SIZE:
            self._fields.popitem(last=False)
        return cached

    def __getstate__(self):
        # Caches stay local to each worker process.
        state = dict(self.__dict__)
        state["_fields"] = OrderedDict()
        return state

    def __setstate__(self, state):
        for key, value in state.items():
            object.__setattr__(self, key, value)


def _dijkstra_field(navigable: np.ndarray, source: Cell) -> np.ndarray:
    """Single-source shortest edge counts on the 4-connected navigable graph."""
    height, width = navigable.shape
    dist = np.full((height, width), np.inf)
    si, sj = source
    dist[sj, si] = 0.0
    queue = [(0, si, sj)]
    while queue:
        d, i, j = heapq.heappop(queue)
        if d > dist[j, i]:
            continue
        for di, dj in NEIGHBOURS:
            ni, nj = i + di, j + dj
            if 0 <= ni < width and 0 <= nj < height and navigable[nj, ni]:
                nd = d + 1
                if nd < dist[nj, ni]:
                    dist[nj, ni] = nd
                    heapq.heappush(queue, (nd, ni, nj))
    return dist


# ---------------------------------------------------------------------------
# Scene file format
# ---------------------------------------------------------------------------

def parse_scene(text: Union[str, bytes]) -> SceneGrid:
    """Parse a scene file: a JSON header line followed by a ``#``/``.`` character map.

    Args:
        text: Scene file content (UTF-8 bytes or str).

    Returns:
        The parsed :class:`SceneGrid`.

    Raises:
        SceneError: Malformed header, ragged or unknown map characters, or no
            navigable cell.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SceneError(f"scene file is not UTF-8: {exc}") from exc

    lines = [line.rstrip("\r") for line in text.split("\n")]
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise SceneError("empty scene file")

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SceneError(f"malformed scene header: {exc}") from exc
    if not isinstance(header, dict) or not isinstance(header.get("scene_id"), str):
        raise SceneError("scene header must be a JSON object with a string 'scene_id'")

    cell_size = header.get("cell_size", CELL_SIZE)
    if cell_size != CELL_SIZE:
        raise SceneError(f"scene '{header['scene_id']}': cell_size must be {CELL_SIZE}, got {cell_size}")
    for flag in ("small_scene", "wide_scene"):
        if not isinstance(header.get(flag, False), bool):
            raise SceneError(f"scene '{header['scene_id']}': '{flag}' must be a boolean")

    rows = lines[1:]
    if not rows:
        raise SceneError(f"scene '{header['scene_id']}': missing character map")
    width = len(rows[0])
    for n, row in enumerate(rows):
        if len(row) != width:
            raise SceneError(f"scene '{header['scene_id']}': ragged row {n} ({len(row)} != {width})")
        bad = set(row) - {"#", "."}
        if bad:
            raise SceneError(f"scene '{header['scene_id']}': unknown map characters {sorted(bad)} in row {n}")

    navigable = np.array([[ch == "." for ch in row] for row in rows], dtype=bool)
    return SceneGrid(
        scene_id=header["scene_id"],
        navigable=navigable,
        cell_size=CELL_SIZE,
        small_scene=header.get("small_scene", False),
        wide_scene=header.get("wide_scene", False),
    )


def format_scene(grid: SceneGrid) -> str:
    """Serialise *grid* back into the scene file format."""
    header = {
        "scene_id": grid.scene_id,
        "cell_size": grid.cell_size,
        "small_scene": grid.small_scene,
        "wide_scene": grid.wide_scene,
    }
    rows = ["".join("." if v else "#" for v in row) for row in grid.navigable]
    return json.dumps(header) + "\n" + "\n".join(rows) + "\n"


def load_scene(path: Path) -> SceneGrid:
    """Read and parse a scene file from disk."""
    return parse_scene(Path(path).read_bytes())


def load_scenes(paths: list) -> dict[str, SceneGrid]:
    """Load several scene files into a ``scene_id`` → grid mapping."""
    scenes: dict[str, SceneGrid] = {}
    for path in paths:
        grid = load_scene(path)
        if grid.scene_id in scenes:
            raise SceneError(f"duplicate scene_id '{grid.scene_id}' in {path}")
        scenes[grid.scene_id] = grid
    return scenes


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------

def point_cell(grid: SceneGrid, p: Point) -> Cell:
    """The cell whose square contains *p* (may be out of bounds)."""
    return math.floor(p.x / grid.cell_size), math.floor(p.y / grid.cell_size)


def is_navigable_point(grid: SceneGrid, p: Point) -> bool:
    """True iff *p* lies inside a navigable cell's square."""
    return grid.is_cell_navigable(point_cell(grid, p))


def snap_to_cell(grid: SceneGrid, p: Point) -> Cell:
    """Return the navigable cell containing *p*.

    Raises:
        SceneError: *p* is out of bounds or inside a blocked cell.
    """
    cell = point_cell(grid, p)
    if not grid.is_cell_navigable(cell):
        raise SceneError(f"point ({p.x}, {p.y}) is not navigable in scene '{grid.scene_id}'")
    return cell


def cell_distance(grid: SceneGrid, a: Cell, b: Cell) -> float:
    """Geodesic distance in meters between two navigable cells."""
    steps = grid.distance_field(b)[a[1], a[0]]
    return UNREACHABLE if math.isinf(steps) else float(steps) * grid.cell_size


def geodesic_distance(grid: SceneGrid, p: Point, q: Point) -> float:
    """Shortest 4-connected path length between the cells containing *p* and *q*.

    Returns:
        The distance in meters, or :data:`UNREACHABLE` when the cells lie in
        different connected components.

    Raises:
        SceneError: *p* or *q* is not navigable.
    """
    return cell_distance(grid, snap_to_cell(grid, p), snap_to_cell(grid, q))


def shortest_cell_path(grid: SceneGrid, p: Point, q: Point) -> list[Point]:
    """Cell-center waypoints of a shortest path from *p*'s cell to *q*'s cell.

    Consecutive waypoints are 4-adjacent; the path has ``distance / cell_size``
    edges. When both points share a cell the path is just ``[p]``.

    Raises:
        SceneError: A point is not navigable or the cells are not connected.
    """
    start = snap_to_cell(grid, p)
    goal = snap_to_cell(grid, q)
    if start == goal:
        return [p]
    field_to_goal = grid.distance_field(goal)
    if math.isinf(field_to_goal[start[1], start[0]]):
        raise SceneError(f"no path between ({p.x}, {p.y}) and ({q.x}, {q.y}) in scene '{grid.scene_id}'")

    path = [grid.cell_center(start)]
    i, j = start
    while (i, j) != goal:
        here = field_to_goal[j, i]
        for di, dj in NEIGHBOURS:
            ni, nj = i + di, j + dj
            if grid.is_cell_navigable((ni, nj)) and field_to_goal[nj, ni] == here - 1:
                i, j = ni, nj
                break
        path.append(grid.cell_center((i, j)))
    return path
