"""Baseline policies: Random, a privileged shortest-path oracle, and greedy SDM following."""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from sdmnav.env import FOUND_RADIUS, MOTION_ACTIONS, Action, EnvState, Observation
from sdmnav.episode import best_tour
from sdmnav.errors import EnvError
from sdmnav.scene import SceneGrid, shortest_cell_path, snap_to_cell

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Privileged:
    """Simulator internals exposed only to distance-aware policies."""
    grid: SceneGrid
    state: EnvState


@dataclass
class PolicyContext:
    observation: Observation
    rng: np.random.Generator
    sdm: Optional[np.ndarray] = None
    privileged: Optional[Privileged] = None


Policy = Callable[[PolicyContext], Action]


def _goal_within_radius(privileged: Privileged) -> bool:
    state = privileged.state
    here = state.pose.position
    return any(here.distance_to(state.episode.goals[k].position) < FOUND_RADIUS for k in state.unreached)


def random_policy(ctx: PolicyContext) -> Action:
    """Found when some unreached goal is within 1 m, otherwise a uniform motion action."""
    if ctx.privileged is None:
        raise EnvError("the random policy needs the privileged distance-to-goal signal")
    if _goal_within_radius(ctx.privileged):
        return Action.FOUND
    return MOTION_ACTIONS[int(ctx.rng.integers(len(MOTION_ACTIONS)))]


def turn_towards(heading: int, target_heading: int) -> Action:
    """Shorter turn direction to *target_heading*; a half-turn goes left."""
    left = (target_heading - heading) % 360
    return Action.TURN_LEFT if left <= 180 else Action.TURN_RIGHT


def _cardinal_heading(dx: float, dy: float) -> int:
    if dx > 0:
        return 0
    if dy > 0:
        return 90
    if dx < 0:
        return 180
    return 270


def privileged_policy(ctx: PolicyContext) -> Action:
    """Follow the optimal goal order along shortest cell paths.

    The agent walks onto the current target's cell center and declares Found
    there, so its path length equals the optimal tour length exactly.
    """
    if ctx.privileged is None:
        raise EnvError("the privileged policy needs simulator internals")
    grid, state = ctx.privileged.grid, ctx.privileged.state
    remaining = sorted(state.unreached)
    here = state.pose.position
    goals = [state.episode.goals[k].position for k in remaining]
    _, order = best_tour(grid, here, goals)
    if not order:
        raise EnvError("no reachable unreached goal for the privileged policy")
    target = goals[order[0]]

    # Found only on the target cell, not anywhere within 1 m.
    if snap_to_cell(grid, here) == snap_to_cell(grid, target):
        return Action.FOUND
    waypoint = shortest_cell_path(grid, here, target)[1]
    wanted = _cardinal_heading(waypoint.x - here.x, waypoint.y - here.y)
    if state.pose.heading != wanted:
        return turn_towards(state.pose.heading, wanted)
    return Action.MOVE_FORWARD


def greedy_sdm_policy(ctx: PolicyContext) -> Action:
    """React to the SDM: Found on a clipped node, else steer towards the strongest sector."""
    if ctx.sdm is None:
        raise EnvError("the greedy SDM policy needs an SDM")
    sdm = np.asarray(ctx.sdm)
    if sdm.max() >= 1.0:
        return Action.FOUND
    if not sdm.any():
        return Action.MOVE_FORWARD
    k = int(np.argmax(sdm))
    if k == 0:
        return Action.MOVE_FORWARD
    if k in (5, 6, 7):
        return Action.TURN_RIGHT
    return Action.TURN_LEFT


POLICIES: dict[str, Policy] = {
    "random": random_policy,
    "privileged": privileged_policy,
    "greedy-sdm-oracle": greedy_sdm_policy,
    "greedy-sdm-learned": greedy_sdm_policy,
}

AGENT_NAMES = tuple(POLICIES)
