"""Episode dynamics: actions, observations, reward, and termination."""

import enum
import logging
import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional

import numpy as np

from sdmnav.audio import SoundCategory, SourceState, compute_spectrogram, render_binaural
from sdmnav.episode import Episode, min_tour_length
from sdmnav.errors import EnvError
from sdmnav.scene import Point, Pose, SceneGrid, heading_vector, is_navigable_point

logger = logging.getLogger(__name__)

STEP_LENGTH = 0.25
TURN_ANGLE = 10
FOUND_RADIUS = 1.0
MAX_STEPS = 2_500
STEP_SECONDS = 0.25
FOUND_REWARD = 5.0
STEP_PENALTY = 0.01
PATCH_SIZE = 21


class Action(enum.IntEnum):
    MOVE_FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    FOUND = 3

    @property
    def label(self) -> str:
        return _ACTION_LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "Action":
        for action, name in _ACTION_LABELS.items():
            if name == label:
                return action
        raise EnvError(f"unknown action '{label}'")

    def one_hot(self) -> np.ndarray:
        vec = np.zeros(len(Action))
        vec[int(self)] = 1.0
        return vec


_ACTION_LABELS = {
    Action.MOVE_FORWARD: "MoveForward",
    Action.TURN_LEFT: "TurnLeft",
    Action.TURN_RIGHT: "TurnRight",
    Action.FOUND: "Found",
}

MOTION_ACTIONS = (Action.MOVE_FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT)


def action_one_hot(action: Optional[Action]) -> np.ndarray:
    """One-hot encoding of the previous action; all zeros before the first step."""
    return np.zeros(len(Action)) if action is None else action.one_hot()


class Outcome(str, enum.Enum):
    IN_PROGRESS = "InProgress"
    ALL_REACHED = "AllReached"
    WRONG_FOUND = "WrongFound"
    STEP_LIMIT = "StepLimit"


@dataclass(frozen=True)
class EnvState:
    """Immutable snapshot of an episode in progress. Goal indices are 0-based."""
    episode: Episode
    pose: Pose
    unreached: frozenset
    reached_order: tuple[int, ...] = ()
    step_count: int = 0
    episode_time: float = 0.0
    path_length: float = 0.0
    done: bool = False
    outcome: Outcome = Outcome.IN_PROGRESS
    prev_action: Optional[Action] = None

    def unreached_positions(self) -> list[Point]:
        return [self.episode.goals[k].position for k in sorted(self.unreached)]


@dataclass(frozen=True)
class Observation:
    """What the agent perceives after a transition.

    ``spectrogram`` is None when the environment runs without audio.
    """
    spectrogram: Optional[np.ndarray]
    local_patch: np.ndarray
    pose: Pose
    prev_action: np.ndarray


@dataclass(frozen=True)
class RewardTrace:
    r_found: float
    delta_geo: float
    constant: float
    total: float

    def as_dict(self) -> dict:
        return {"found": self.r_found, "delta_geo": self.delta_geo, "total": self.total}


class AudioNavEnv:
    """Multi-goal audio navigation environment over one scene.

    Args:
        grid: The scene.
        library: Sound categories by id, used to render goal sounds.
        listen: Render binaural audio into every observation. Agents that
            never read the spectrogram can switch it off.
    """

    def __init__(self, grid: SceneGrid, library: Mapping[int, SoundCategory], listen: bool = True):
        self.grid = grid
        self.library = dict(library)
        self.listen = listen

    # -- observation --------------------------------------------------------

    def sources(self, state: EnvState) -> list[SourceState]:
        """Renderer view of every goal; reached goals are inactive."""
        episode = state.episode
        sources = []
        for k, (goal, offset) in enumerate(zip(episode.goals, episode.playback_offsets)):
            if goal.category not in self.library:
                raise EnvError(f"goal {k} uses unknown sound category {goal.category}")
            sources.append(SourceState(goal.position, self.library[goal.category], offset, k in state.unreached))
        return sources

    def local_patch(self, pose: Pose) -> np.ndarray:
        """21×21 egocentric occupancy (1 navigable, 0 blocked), row 0 ahead, column 0 to the left."""
        c, s = heading_vector(pose.heading)
        half = PATCH_SIZE // 2
        cs = self.grid.cell_size
        offsets = (half - np.arange(PATCH_SIZE)) * cs
        ahead = offsets[:, None]
        right = -offsets[None, :]
        px = pose.position.x + ahead * c + right * s
        py = pose.position.y + ahead * s - right * c
        i = np.floor(px / cs).astype(int)
        j = np.floor(py / cs).astype(int)
        inside = (i >= 0) & (i < self.grid.width) & (j >= 0) & (j < self.grid.height)
        patch = np.zeros((PATCH_SIZE, PATCH_SIZE))
        patch[inside] = self.grid.navigable[j[inside], i[inside]]
        return patch

    def observe(self, state: EnvState) -> Observation:
        spectrogram = None
        if self.listen:
            chunk = render_binaural(self.grid, state.pose, self.sources(state), state.episode_time)
            spectrogram = compute_spectrogram(chunk)
        return Observation(
            spectrogram=spectrogram,
            local_patch=self.local_patch(state.pose),
            pose=state.pose,
            prev_action=action_one_hot(state.prev_action),
        )

    # -- dynamics -----------------------------------------------------------

    def reset(self, episode: Episode) -> tuple[EnvState, Observation]:
        """Place the agent at the episode start with every goal unreached."""
        if episode.scene_id != self.grid.scene_id:
            raise EnvError(f"episode scene '{episode.scene_id}' does not match environment '{self.grid.scene_id}'")
        state = EnvState(
            episode=episode,
            pose=Pose(episode.start_pos, episode.start_heading),
            unreached=frozenset(range(episode.n_goals)),
        )
        return state, self.observe(state)

    def step(self, state: EnvState, action: Action) -> tuple[EnvState, Observation, RewardTrace, bool]:
        """Apply *action* and return ``(next_state, observation, reward, done)``.

        Raises:
            EnvError: *state* is already finished.
        """
        if state.done:
            raise EnvError("cannot step a finished episode")
        action = Action(action)

        pose = state.pose
        path_length = state.path_length
        unreached = state.unreached
        reached_order = state.reached_order
        done = False
        outcome = Outcome.IN_PROGRESS

        if action == Action.MOVE_FORWARD:
            c, s = heading_vector(pose.heading)
            target = Point(pose.position.x + STEP_LENGTH * c, pose.position.y + STEP_LENGTH * s)
            if is_navigable_point(self.grid, target):
                pose = Pose(target, pose.heading)
                path_length += STEP_LENGTH
        elif action == Action.TURN_LEFT:
            pose = Pose(pose.position, (pose.heading + TURN_ANGLE) % 360)
        elif action == Action.TURN_RIGHT:
            pose = Pose(pose.position, (pose.heading - TURN_ANGLE) % 360)
        else:
            credited = self.credited_goal(state)
            if credited is None:
                done, outcome = True, Outcome.WRONG_FOUND
            else:
                unreached = unreached - {credited}
                reached_order = reached_order + (credited,)
                if not unreached:
                    done, outcome = True, Outcome.ALL_REACHED

        step_count = state.step_count + 1
        if not done and step_count >= MAX_STEPS:
            done, outcome = True, Outcome.STEP_LIMIT

        after = replace(
            state,
            pose=pose,
            unreached=unreached,
            reached_order=reached_order,
            step_count=step_count,
            episode_time=state.episode_time + STEP_SECONDS,
            path_length=path_length,
            done=done,
            outcome=outcome,
            prev_action=action,
        )
        reward = self.compute_reward(state, after)
        return after, self.observe(after), reward, done

    def credited_goal(self, state: EnvState) -> Optional[int]:
        """Nearest unreached goal strictly within the Found radius; ties go to the lowest index."""
        best, best_dist = None, math.inf
        for k in sorted(state.unreached):
            d = state.pose.position.distance_to(state.episode.goals[k].position)
            if d < FOUND_RADIUS and d < best_dist:
                best, best_dist = k, d
        return best

    # -- reward -------------------------------------------------------------

    def remaining_tour(self, state: EnvState) -> float:
        """Minimum geodesic tour from the agent through every unreached goal."""
        length = min_tour_length(self.grid, state.pose.position, state.unreached_positions())
        if math.isinf(length):
            raise EnvError(f"an unreached goal is unreachable in scene '{self.grid.scene_id}'")
        return length

    def compute_reward(self, before: EnvState, after: EnvState) -> RewardTrace:
        """``r = r_found − Δ_geo − 0.01`` with Δ_geo the change of the remaining tour length."""
        delta_geo = self.remaining_tour(after) - self.remaining_tour(before)
        r_found = FOUND_REWARD if len(after.unreached) < len(before.unreached) else 0.0
        return RewardTrace(
            r_found=r_found,
            delta_geo=delta_geo,
            constant=-STEP_PENALTY,
            total=r_found - delta_geo - STEP_PENALTY,
        )
