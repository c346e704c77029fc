"""Episodes, order-free multi-goal tours, and the constrained episode generator."""

import itertools
import json
import logging
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from sdmnav.errors import DatasetFormatError, EpisodeError, SamplingBudgetExhausted, SceneError
from sdmnav.scene import UNREACHABLE, Cell, Point, SceneGrid, cell_distance, is_navigable_point, snap_to_cell

logger = logging.getLogger(__name__)

HEADINGS = tuple(range(0, 360, 10))
MAX_TOUR_GOALS = 8
DEFAULT_SAMPLING_BUDGET = 10_000

MIN_SEPARATION = 1.0
MIN_RATIO = 1.1
SMALL_SCENE_MIN_SEPARATION = 0.6
SMALL_SCENE_MIN_RATIO = 1.001

# (lower bound exclusive, rejection probability), most specific band first.
REJECTION_BANDS = ((10.0, 1.0), (6.0, 0.7), (5.0, 0.6), (4.0, 0.5), (3.0, 0.4))

PAIRING_MODES = ("random", "same", "different")


@dataclass(frozen=True)
class Goal:
    """A sound-emitting goal: position and sound category id."""
    position: Point
    category: int


@dataclass(frozen=True)
class Episode:
    """One multi-goal episode: scene, start pose, goals and their playback offsets."""
    scene_id: str
    start_pos: Point
    start_heading: int
    goals: tuple[Goal, ...]
    playback_offsets: tuple[float, ...]
    seed: int

    def __post_init__(self):
        if not self.goals:
            raise EpisodeError("an episode needs at least one goal")
        if len(self.playback_offsets) != len(self.goals):
            raise EpisodeError("one playback offset per goal is required")
        if self.start_heading not in HEADINGS:
            raise EpisodeError(f"start heading must be a multiple of 10 in [0, 360), got {self.start_heading}")
        for offset in self.playback_offsets:
            if not 0.0 <= offset < 1.0:
                raise EpisodeError(f"playback offset must lie in [0, 1), got {offset}")

    @property
    def n_goals(self) -> int:
        return len(self.goals)

    @property
    def goal_positions(self) -> list[Point]:
        return [g.position for g in self.goals]


# ---------------------------------------------------------------------------
# Tours
# ---------------------------------------------------------------------------

def _distance_matrix(grid: SceneGrid, points: Sequence[Point]) -> np.ndarray:
    cells = [snap_to_cell(grid, p) for p in points]
    n = len(cells)
    matrix = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            matrix[a, b] = matrix[b, a] = cell_distance(grid, cells[a], cells[b])
    return matrix


def best_tour(grid: SceneGrid, start: Point, goals: Sequence[Point]) -> tuple[float, tuple[int, ...]]:
    """Shortest start-anchored visiting order over *goals* by exhaustive permutation.

    Returns:
        ``(length, order)`` where *order* indexes *goals*; the first minimal
        permutation in lexicographic order wins ties. Length is
        :data:`UNREACHABLE` when some goal cannot be reached.
    """
    if len(goals) > MAX_TOUR_GOALS:
        raise EpisodeError(f"tour search supports at most {MAX_TOUR_GOALS} goals, got {len(goals)}")
    if not goals:
        return 0.0, ()
    dist = _distance_matrix(grid, [start, *goals])
    if np.isinf(dist[0]).any():
        return UNREACHABLE, ()

    best_length = UNREACHABLE
    best_order: tuple[int, ...] = ()
    for order in itertools.permutations(range(1, len(goals) + 1)):
        length = dist[0, order[0]]
        for a, b in zip(order, order[1:]):
            length += dist[a, b]
        if length < best_length:
            best_length = length
            best_order = tuple(k - 1 for k in order)
    return float(best_length), best_order


def min_tour_length(grid: SceneGrid, start: Point, goals: Sequence[Point]) -> float:
    """Minimum over goal orderings of the start-anchored geodesic tour length.

    ``0.0`` for an empty goal set, :data:`UNREACHABLE` when a goal is unreachable.
    """
    return best_tour(grid, start, goals)[0]


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------

def rejection_probability(distance: float) -> float:
    """Wide-scene rejection probability for a pair at *distance* meters.

    Bands are half-open: (3,4] → 0.4, (4,5] → 0.5, (5,6] → 0.6, (6,10] → 0.7,
    (10,∞) → 1.0; distances up to 3 m are never rejected.
    """
    for lower, prob in REJECTION_BANDS:
        if distance > lower:
            return prob
    return 0.0


def bucket_accepts(distance: float, rng: np.random.Generator) -> bool:
    """One Bernoulli draw of the wide-scene distance-bucket rejection."""
    prob = rejection_probability(distance)
    if prob == 0.0:
        return True
    return bool(rng.random() >= prob)


def pair_thresholds(grid: SceneGrid) -> tuple[float, float]:
    """``(min geodesic separation, min geodesic/Euclidean ratio)`` for *grid*."""
    if grid.small_scene:
        return SMALL_SCENE_MIN_SEPARATION, SMALL_SCENE_MIN_RATIO
    return MIN_SEPARATION, MIN_RATIO


def pair_is_valid(grid: SceneGrid, a: Cell, b: Cell) -> bool:
    """Deterministic part of the pair constraint: separation and detour ratio."""
    if a == b:
        return False
    min_sep, min_ratio = pair_thresholds(grid)
    geo = cell_distance(grid, a, b)
    if math.isinf(geo) or geo < min_sep:
        return False
    euclid = grid.cell_center(a).distance_to(grid.cell_center(b))
    return geo / euclid > min_ratio


def _assign_categories(
    n: int,
    rng: np.random.Generator,
    pools: Sequence[Sequence[int]],
    pairing: str,
) -> Optional[list[int]]:
    if pairing == "same":
        common = set(pools[0])
        for k in range(1, n):
            common &= set(pools[k % len(pools)])
        if not common:
            return None
        choice = int(rng.choice(sorted(common)))
        return [choice] * n

    categories: list[int] = []
    for k in range(n):
        pool = list(pools[k % len(pools)])
        if pairing == "different":
            pool = [c for c in pool if c not in categories]
        if not pool:
            return None
        categories.append(int(rng.choice(pool)))
    return categories


def generate_episode(
    grid: SceneGrid,
    n: int,
    rng: np.random.Generator,
    categories: Sequence[int] = (0,),
    seed: int = 0,
    category_pools: Optional[Sequence[Sequence[int]]] = None,
    pairing: str = "random",
    random_offsets: bool = True,
    budget: int = DEFAULT_SAMPLING_BUDGET,
) -> Episode:
    """Sample a start pose and *n* goals satisfying the pairwise placement constraints.

    Every pair among start and goals lies on distinct navigable cell centers,
    is at least 1 m apart geodesically (0.6 m in small scenes), and has a
    geodesic/Euclidean ratio above 1.1 (1.001 in small scenes). In wide scenes
    each such pair must also survive the distance-bucket rejection.

    Args:
        grid: Scene to place the episode in.
        n: Number of goals (>= 1).
        rng: Seeded generator; the episode is a pure function of its state.
        categories: Sound category ids goals are drawn from.
        seed: Value recorded as the episode's seed.
        category_pools: Optional per-goal category pools (cycled when shorter
            than *n*); overrides *categories*.
        pairing: ``random`` (independent draws), ``same`` or ``different``.
        random_offsets: Draw playback offsets in [0, 1); zero offsets otherwise.
        budget: Placement attempts before giving up.

    Raises:
        EpisodeError: Invalid arguments or no category assignment possible.
        SamplingBudgetExhausted: No valid placement within *budget* attempts.
    """
    if n < 1:
        raise EpisodeError(f"goal count must be >= 1, got {n}")
    if pairing not in PAIRING_MODES:
        raise EpisodeError(f"unknown pairing mode '{pairing}' (expected one of {PAIRING_MODES})")
    pools = [list(p) for p in (category_pools or [categories])]
    if not pools or any(not p for p in pools):
        raise EpisodeError("category pools must be non-empty")
    cells = grid.navigable_cells()
    if len(cells) < n + 1:
        raise EpisodeError(f"scene '{grid.scene_id}' has {len(cells)} navigable cells, need {n + 1}")

    for attempt in range(1, budget + 1):
        placed: list[Cell] = []
        ok = True
        for _ in range(n + 1):
            cell = cells[int(rng.integers(len(cells)))]
            for other in placed:
                if not pair_is_valid(grid, cell, other):
                    ok = False
                    break
                if grid.wide_scene and not bucket_accepts(cell_distance(grid, cell, other), rng):
                    ok = False
                    break
            if not ok:
                break
            placed.append(cell)
        if not ok:
            continue

        assigned = _assign_categories(n, rng, pools, pairing)
        if assigned is None:
            raise EpisodeError(f"category pools cannot satisfy pairing '{pairing}' for {n} goals")
        heading = int(HEADINGS[int(rng.integers(len(HEADINGS)))])
        offsets = tuple(float(o) for o in rng.random(n)) if random_offsets else (0.0,) * n
        logger.debug("scene %s: episode placed after %d attempts", grid.scene_id, attempt)
        return Episode(
            scene_id=grid.scene_id,
            start_pos=grid.cell_center(placed[0]),
            start_heading=heading,
            goals=tuple(Goal(grid.cell_center(c), cat) for c, cat in zip(placed[1:], assigned)),
            playback_offsets=offsets,
            seed=seed,
        )

    raise SamplingBudgetExhausted(grid.scene_id, budget)


def check_episode(grid: SceneGrid, episode: Episode) -> list[str]:
    """Re-check the deterministic placement constraints of a generated episode.

    Returns:
        Human-readable violations; empty when the episode is valid.
    """
    violations = []
    points = [episode.start_pos, *episode.goal_positions]
    cells = []
    for p in points:
        try:
            cell = snap_to_cell(grid, p)
        except SceneError as exc:
            violations.append(str(exc))
            continue
        if grid.cell_center(cell) != p:
            violations.append(f"({p.x}, {p.y}) is not a cell center")
        cells.append(cell)
    if len(cells) != len(points):
        return violations
    for a, b in itertools.combinations(range(len(cells)), 2):
        if not pair_is_valid(grid, cells[a], cells[b]):
            violations.append(f"points {a} and {b} violate the separation or detour-ratio constraint")
    return violations


# ---------------------------------------------------------------------------
# Dataset (JSON Lines)
# ---------------------------------------------------------------------------

def episode_to_record(episode: Episode) -> dict:
    return {
        "scene_id": episode.scene_id,
        "start": episode.start_pos.as_list(),
        "heading_deg": episode.start_heading,
        "goals": [
            {"pos": g.position.as_list(), "category": g.category, "offset_s": off}
            for g, off in zip(episode.goals, episode.playback_offsets)
        ],
        "seed": episode.seed,
    }


def _is_cell_center(value: float, cell_size: float) -> bool:
    k = value / cell_size - 0.5
    return k == math.floor(k)


def _point_from(raw, what: str, line_no: int, cell_size: float) -> Point:
    if not (isinstance(raw, list) and len(raw) == 2 and all(isinstance(v, (int, float)) for v in raw)):
        raise DatasetFormatError(f"line {line_no}: {what} must be [x, y]")
    p = Point(float(raw[0]), float(raw[1]))
    if not (_is_cell_center(p.x, cell_size) and _is_cell_center(p.y, cell_size)):
        raise DatasetFormatError(f"line {line_no}: {what} ({p.x}, {p.y}) is not on a cell center")
    return p


def episode_from_record(
    record: dict,
    line_no: int = 1,
    scenes: Optional[Mapping[str, SceneGrid]] = None,
) -> Episode:
    """Validate and build an :class:`Episode` from one decoded dataset record."""
    try:
        scene_id = record["scene_id"]
        if scenes is not None and scene_id not in scenes:
            raise DatasetFormatError(f"line {line_no}: unknown scene_id '{scene_id}'")
        grid = scenes[scene_id] if scenes is not None else None
        cell_size = grid.cell_size if grid is not None else 0.25
        start = _point_from(record["start"], "start", line_no, cell_size)
        goals = []
        offsets = []
        for g in record["goals"]:
            goals.append(Goal(_point_from(g["pos"], "goal", line_no, cell_size), int(g["category"])))
            offsets.append(float(g["offset_s"]))
        episode = Episode(
            scene_id=scene_id,
            start_pos=start,
            start_heading=record["heading_deg"],
            goals=tuple(goals),
            playback_offsets=tuple(offsets),
            seed=int(record["seed"]),
        )
    except DatasetFormatError:
        raise
    except (EpisodeError, SceneError) as exc:
        raise DatasetFormatError(f"line {line_no}: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"line {line_no}: missing or mistyped field: {exc}") from exc

    if grid is not None:
        for p in [episode.start_pos, *episode.goal_positions]:
            if not is_navigable_point(grid, p):
                raise DatasetFormatError(f"line {line_no}: ({p.x}, {p.y}) is not navigable in '{scene_id}'")
    return episode


def write_dataset(episodes: Sequence[Episode]) -> bytes:
    """Serialise episodes as JSON Lines, one episode per line."""
    return "".join(json.dumps(episode_to_record(e)) + "\n" for e in episodes).encode("utf-8")


def parse_dataset(data: bytes, scenes: Optional[Mapping[str, SceneGrid]] = None) -> list[Episode]:
    """Parse a JSON Lines episode dataset.

    Lines starting with ``#`` (run headers) and blank lines are skipped.

    Args:
        data: File content.
        scenes: Optional scene mapping; when given, scene ids and navigability
            are validated.

    Raises:
        DatasetFormatError: Malformed JSON, unknown scene, or invariant violation.
    """
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DatasetFormatError(f"episode dataset is not UTF-8 text: {exc}") from exc
    episodes = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"line {line_no}: malformed JSON: {exc}") from exc
        if not isinstance(record, dict):
            raise DatasetFormatError(f"line {line_no}: expected a JSON object")
        episodes.append(episode_from_record(record, line_no, scenes))
    return episodes
