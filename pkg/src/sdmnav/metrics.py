"""SUCCESS, SPL, PROGRESS and PPL over episode results.

``l_i`` is the order-free optimal tour through all goals; ``l^MG`` is the
optimal start-anchored tour through the goals the agent actually reached,
both minimised over every visiting order.
"""

import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

from sdmnav.audio import SoundCategory, sound_set
from sdmnav.episode import Episode, episode_from_record, episode_to_record, min_tour_length
from sdmnav.errors import DatasetFormatError, MetricsError
from sdmnav.scene import UNREACHABLE, Point, SceneGrid

METRIC_COLUMNS = ("method", "n_goals", "SUCCESS", "SPL", "PROGRESS", "PPL", "N")


@dataclass(frozen=True)
class EpisodeResult:
    """Outcome of one evaluated episode."""
    episode: Episode
    success: int
    n_reached: int
    reached_order: tuple[int, ...]
    path_length: float
    outcome: str
    steps: int = 0

    def __post_init__(self):
        if self.n_reached != len(self.reached_order):
            raise MetricsError(f"n_reached={self.n_reached} but {len(self.reached_order)} goals in reached_order")
        if len(set(self.reached_order)) != len(self.reached_order):
            raise MetricsError("reached_order lists a goal twice")
        if any(not 0 <= k < self.episode.n_goals for k in self.reached_order):
            raise MetricsError("reached_order refers to a goal outside the episode")
        if self.success != int(self.n_reached == self.episode.n_goals):
            raise MetricsError("success must be 1 exactly when every goal was reached")
        if self.path_length < 0:
            raise MetricsError("path_length must be non-negative")

    def to_record(self) -> dict:
        return {
            "episode": episode_to_record(self.episode),
            "success": self.success,
            "n_reached": self.n_reached,
            "reached_order": list(self.reached_order),
            "path_length": self.path_length,
            "outcome": self.outcome,
            "steps": self.steps,
        }

    @classmethod
    def from_record(cls, record: dict) -> "EpisodeResult":
        try:
            return cls(
                episode=episode_from_record(record["episode"]),
                success=int(record["success"]),
                n_reached=int(record["n_reached"]),
                reached_order=tuple(int(k) for k in record["reached_order"]),
                path_length=float(record["path_length"]),
                outcome=str(record["outcome"]),
                steps=int(record.get("steps", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"malformed result record: {exc}") from exc


class EpisodeMetrics(NamedTuple):
    success: float
    spl: float
    progress: float
    ppl: float


@dataclass(frozen=True)
class MetricsReport:
    n: int
    success: float
    spl: float
    progress: float
    ppl: float

    def row(self, method: str, n_goals: str) -> list:
        return [method, n_goals, self.success, self.spl, self.progress, self.ppl, self.n]


def l_mg(grid: SceneGrid, start: Point, reached: Sequence[Point]) -> float:
    """Shortest start-anchored tour through the reached goal positions (0 when empty).

    Raises:
        MetricsError: A reached goal cannot be reached from *start*.
    """
    length = min_tour_length(grid, start, reached)
    if length == UNREACHABLE:
        raise MetricsError("a reached goal is unreachable from the start")
    return length


def episode_metrics(grid: SceneGrid, result: EpisodeResult) -> EpisodeMetrics:
    """Per-episode ``(S_i, spl_i, progress_i, ppl_i)``; ppl_i is 0 when nothing was reached."""
    episode = result.episode
    if episode.scene_id != grid.scene_id:
        raise MetricsError(f"result for scene '{episode.scene_id}' evaluated on '{grid.scene_id}'")
    l_opt = min_tour_length(grid, episode.start_pos, episode.goal_positions)
    if math.isinf(l_opt):
        raise MetricsError(f"episode goals are not all reachable in scene '{grid.scene_id}'")
    l_agent = result.path_length
    success = float(result.success)

    spl = success * _ratio(l_opt, l_agent)
    progress = result.n_reached / episode.n_goals
    if result.n_reached == 0:
        ppl = 0.0
    else:
        reached = [episode.goals[k].position for k in result.reached_order]
        ppl = progress * _ratio(l_mg(grid, episode.start_pos, reached), l_agent)
    return EpisodeMetrics(success, spl, progress, ppl)


def _ratio(l_ref: float, l_agent: float) -> float:
    denom = max(l_agent, l_ref)
    return 1.0 if denom == 0 else l_ref / denom


def aggregate(scenes: Mapping[str, SceneGrid], results: Sequence[EpisodeResult]) -> MetricsReport:
    """Arithmetic means of the per-episode metrics.

    Args:
        scenes: Grids by scene id (a single-scene mapping is fine).
        results: Episode results, possibly from several scenes.
    """
    if not results:
        raise MetricsError("cannot aggregate an empty result set")
    per_episode = []
    for result in results:
        grid = scenes.get(result.episode.scene_id)
        if grid is None:
            raise MetricsError(f"no scene loaded for '{result.episode.scene_id}'")
        per_episode.append(episode_metrics(grid, result))
    n = len(per_episode)
    return MetricsReport(
        n=n,
        success=sum(m.success for m in per_episode) / n,
        spl=sum(m.spl for m in per_episode) / n,
        progress=sum(m.progress for m in per_episode) / n,
        ppl=sum(m.ppl for m in per_episode) / n,
    )


def n_goals_label(results: Sequence[EpisodeResult]) -> str:
    """``"2"`` for a uniform goal count, ``"1-3"`` for a mix."""
    counts = sorted({r.episode.n_goals for r in results})
    return str(counts[0]) if len(counts) == 1 else f"{counts[0]}-{counts[-1]}"


def reachability_by_set(
    results: Sequence[EpisodeResult],
    categories: Sequence[SoundCategory],
    set_names: Sequence[str],
) -> dict[str, float]:
    """Fraction of goals reached, grouped by the sound set of each goal's category.

    Sets that contain no goal of *results* are omitted.
    """
    fractions: dict[str, float] = {}
    for name in set_names:
        members = {c.id for c in sound_set(categories, name)}
        total = reached = 0
        for result in results:
            for k, goal in enumerate(result.episode.goals):
                if goal.category in members:
                    total += 1
                    reached += k in result.reached_order
        if total:
            fractions[name] = reached / total
    return fractions


def format_value(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def metrics_rows(labelled: Sequence[tuple[str, str, MetricsReport]]) -> list[list[str]]:
    """CSV rows (without header) for labelled reports ``(method, n_goals, report)``."""
    return [[format_value(v) for v in report.row(method, n_goals)] for method, n_goals, report in labelled]
