"""Run agents through episodes and collect trajectory logs and results."""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from sdmnav.agents import POLICIES, PolicyContext, Privileged
from sdmnav.audio import SoundCategory
from sdmnav.encoder import EncoderParams, encoder_forward
from sdmnav.env import Action, AudioNavEnv, EnvState, Observation
from sdmnav.episode import Episode
from sdmnav.errors import EnvError
from sdmnav.metrics import EpisodeResult
from sdmnav.scene import SceneGrid
from sdmnav.sdm import N_NODES, true_sdm
from sdmnav.seeding import make_rng

logger = logging.getLogger(__name__)

# Learned predictions never reach 1.0 through the sigmoid; nodes at or above
# this value are read as clipped by the greedy agent.
LEARNED_CLIP_THRESHOLD = 0.95

LISTENING_AGENTS = frozenset({"greedy-sdm-learned"})
PRIVILEGED_AGENTS = frozenset({"random", "privileged"})


class OracleSdm:
    """Ground-truth SDM over the goals still sounding; 1.0 only for goals closer than 1 m."""

    def __init__(self, grid: SceneGrid):
        self.grid = grid

    def __call__(self, state: EnvState, observation: Observation) -> np.ndarray:
        return true_sdm(self.grid, state.pose, state.unreached_positions(), strict_clip=True)


class LearnedSdm:
    """Encoder run closed-loop: each prediction is fed back as the next previous SDM."""

    def __init__(self, params: EncoderParams, clip_threshold: float = LEARNED_CLIP_THRESHOLD):
        self.params = params
        self.clip_threshold = clip_threshold
        self.prev = np.zeros(N_NODES)

    def __call__(self, state: EnvState, observation: Observation) -> np.ndarray:
        if observation.spectrogram is None:
            raise EnvError("the learned SDM needs an environment that renders audio")
        pred = encoder_forward(self.params, observation.spectrogram, observation.prev_action, self.prev)
        self.prev = pred
        return np.where(pred >= self.clip_threshold, 1.0, pred)


def make_sdm_source(agent: str, grid: SceneGrid, params: Optional[EncoderParams] = None):
    if agent == "greedy-sdm-oracle":
        return OracleSdm(grid)
    if agent == "greedy-sdm-learned":
        if params is None:
            raise EnvError("agent 'greedy-sdm-learned' needs encoder parameters (--params)")
        return LearnedSdm(params)
    return None


@dataclass(frozen=True)
class Frame:
    """What the encoder sees at one decision point, with the ground truth around it."""
    spectrogram: np.ndarray
    prev_action: np.ndarray
    prev_sdm: np.ndarray
    sdm: np.ndarray


@dataclass
class EpisodeRun:
    result: EpisodeResult
    records: list[dict] = field(default_factory=list)
    frames: list[Frame] = field(default_factory=list)


def step_record(index: int, state: EnvState, action: Action, reward) -> dict:
    pose = state.pose
    return {
        "episode": index,
        "t": state.step_count,
        "action": action.label,
        "pose": [pose.position.x, pose.position.y, pose.heading],
        "reward": reward.as_dict(),
        "unreached": sorted(state.unreached),
    }


def terminal_record(index: int, state: EnvState) -> dict:
    return {
        "episode": index,
        "outcome": state.outcome.value,
        "n_reached": len(state.reached_order),
        "reached_order": list(state.reached_order),
        "path_length": state.path_length,
        "steps": state.step_count,
    }


def run_episode(
    env: AudioNavEnv,
    episode: Episode,
    agent: str,
    rng: np.random.Generator,
    index: int = 0,
    params: Optional[EncoderParams] = None,
    max_steps: Optional[int] = None,
    record_frames: bool = False,
) -> EpisodeRun:
    """Roll *agent* through *episode* until it finishes (or *max_steps* decisions were taken).

    Args:
        env: Environment over the episode's scene.
        episode: Episode to play.
        agent: One of :data:`sdmnav.agents.AGENT_NAMES`.
        rng: The agent's own random stream.
        index: Episode index written into every log record.
        params: Encoder parameters for ``greedy-sdm-learned``.
        max_steps: Optional horizon shorter than the environment's step limit.
        record_frames: Keep teacher-forced encoder inputs and ground-truth SDMs
            for every decision (requires an environment that renders audio).

    Returns:
        The episode result, its trajectory log records (steps then a terminal
        record) and, on request, the frames.
    """
    policy = POLICIES.get(agent)
    if policy is None:
        raise EnvError(f"unknown agent '{agent}'")
    if record_frames and not env.listen:
        raise EnvError("recording frames needs an environment that renders audio")
    sdm_source = make_sdm_source(agent, env.grid, params)

    state, obs = env.reset(episode)
    records: list[dict] = []
    frames: list[Frame] = []
    prev_truth = np.zeros(N_NODES)
    while not state.done and (max_steps is None or state.step_count < max_steps):
        if record_frames:
            truth = true_sdm(env.grid, state.pose, state.unreached_positions())
            frames.append(Frame(obs.spectrogram, obs.prev_action, prev_truth, truth))
            prev_truth = truth
        ctx = PolicyContext(
            observation=obs,
            rng=rng,
            sdm=sdm_source(state, obs) if sdm_source is not None else None,
            privileged=Privileged(env.grid, state) if agent in PRIVILEGED_AGENTS else None,
        )
        action = policy(ctx)
        if action == Action.FOUND and agent.startswith("greedy") and env.credited_goal(state) is None:
            logger.warning("episode %d: greedy agent declared Found away from every goal", index)
        state, obs, reward, _ = env.step(state, action)
        records.append(step_record(index, state, action, reward))

    records.append(terminal_record(index, state))
    result = EpisodeResult(
        episode=episode,
        success=int(not state.unreached),
        n_reached=len(state.reached_order),
        reached_order=state.reached_order,
        path_length=state.path_length,
        outcome=state.outcome.value,
        steps=state.step_count,
    )
    logger.debug("episode %d: %s after %d steps", index, state.outcome.value, state.step_count)
    return EpisodeRun(result, records, frames)


@dataclass(frozen=True)
class RunJob:
    """Everything one worker needs to play one episode."""
    index: int
    episode: Episode
    grid: SceneGrid
    library: Mapping[int, SoundCategory]
    agent: str
    seed: int
    params: Optional[EncoderParams] = None


def play(job: RunJob) -> EpisodeRun:
    """Play one job; the agent stream depends only on ``(seed, index)``."""
    env = AudioNavEnv(job.grid, job.library, listen=job.agent in LISTENING_AGENTS)
    rng = make_rng(job.seed, "agent", job.index)
    return run_episode(env, job.episode, job.agent, rng, index=job.index, params=job.params)


def run_many(
    scenes: Mapping[str, SceneGrid],
    episodes: Sequence[Episode],
    library: Mapping[int, SoundCategory],
    agent: str,
    seed: int,
    params: Optional[EncoderParams] = None,
    workers: int = 1,
) -> list[EpisodeRun]:
    """Play every episode, in parallel when ``workers > 1``; results keep episode order."""
    if agent not in POLICIES:
        raise EnvError(f"unknown agent '{agent}'")
    jobs = []
    for index, episode in enumerate(episodes):
        grid = scenes.get(episode.scene_id)
        if grid is None:
            raise EnvError(f"episode {index} references unknown scene '{episode.scene_id}'")
        jobs.append(RunJob(index, episode, grid, library, agent, seed, params))

    if workers <= 1:
        return [play(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(play, jobs))
