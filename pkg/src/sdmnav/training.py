"""Teacher-forced SDM datasets, encoder training, and closed-loop evaluation."""

import json
import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from sdmnav.audio import SPECTROGRAM_SHAPE, SoundCategory
from sdmnav.encoder import N_ACTIONS, EncoderParams, batch_loss_and_gradient, encoder_forward, mse_loss
from sdmnav.env import AudioNavEnv
from sdmnav.episode import Episode
from sdmnav.errors import DatasetFormatError, SdmError, TrainingDivergedError
from sdmnav.rollout import run_episode
from sdmnav.scene import SceneGrid
from sdmnav.sdm import DROPOUT_PROBABILITY, N_NODES, apply_dropout, validate_sdm

logger = logging.getLogger(__name__)

DATASET_FORMAT = "sdmnav-sdm-dataset"
DEFAULT_LEARNING_RATE = 1e-3
DEFAULT_BATCH_SIZE = 32
DEFAULT_MOMENTUM = 0.9
DEFAULT_HORIZON = 200

RECORD_DTYPE = np.dtype([
    ("episode", "<i4"),
    ("prev_action", "<f8", (N_ACTIONS,)),
    ("prev_sdm", "<f8", (N_NODES,)),
    ("target", "<f8", (N_NODES,)),
    ("spectrogram", "<f4", SPECTROGRAM_SHAPE),
])


@dataclass
class SdmDataset:
    """Stacked teacher-forced samples; spectrograms are kept in float32."""
    spectrograms: np.ndarray
    prev_actions: np.ndarray
    prev_sdms: np.ndarray
    targets: np.ndarray
    episodes: np.ndarray

    def __post_init__(self):
        n = len(self.targets)
        self.spectrograms = np.asarray(self.spectrograms, dtype=np.float32).reshape((n, *SPECTROGRAM_SHAPE))
        self.prev_actions = np.asarray(self.prev_actions, dtype=np.float64).reshape(n, N_ACTIONS)
        self.prev_sdms = validate_sdm(np.asarray(self.prev_sdms).reshape(n, N_NODES))
        self.targets = validate_sdm(np.asarray(self.targets).reshape(n, N_NODES))
        self.episodes = np.asarray(self.episodes, dtype=np.int64).reshape(n)

    def __len__(self) -> int:
        return len(self.targets)

    def rollout(self, episode: int) -> "Rollout":
        """The samples of one episode in time order."""
        mask = self.episodes == episode
        if not mask.any():
            raise SdmError(f"dataset has no samples for episode {episode}")
        return Rollout(self.spectrograms[mask], self.prev_actions[mask], self.targets[mask])


@dataclass(frozen=True)
class Rollout:
    """One episode's encoder inputs and ground-truth SDMs, step by step."""
    spectrograms: np.ndarray
    prev_actions: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return len(self.targets)

    def teacher_forced_prev(self) -> np.ndarray:
        prev = np.zeros_like(self.targets)
        prev[1:] = self.targets[:-1]
        return prev


def make_dataset(
    scenes: Mapping[str, SceneGrid],
    episodes: Sequence[Episode],
    library: Mapping[int, SoundCategory],
    policy: str,
    rng: np.random.Generator,
    horizon: Optional[int] = DEFAULT_HORIZON,
    max_samples: Optional[int] = None,
) -> SdmDataset:
    """Roll the behavior *policy* through *episodes* and record teacher-forced samples.

    Each decision point ``t`` yields ``(A_t, a_{t-1}, d_{t-1}, d_t)`` with ``d``
    from the ground-truth SDM; at ``t = 0`` the previous action and SDM are
    zero. An episode played for ``T`` steps yields ``T`` samples.

    Args:
        scenes: Grids by scene id.
        episodes: Episodes to play, in order.
        library: Sound categories by id.
        policy: Behavior agent name.
        rng: Stream shared by the behavior policy across episodes.
        horizon: Decisions per episode at most (None plays to termination).
        max_samples: Stop once this many samples were collected.
    """
    chunks = []
    total = 0
    for index, episode in enumerate(episodes):
        if max_samples is not None and total >= max_samples:
            break
        grid = scenes.get(episode.scene_id)
        if grid is None:
            raise SdmError(f"episode {index} references unknown scene '{episode.scene_id}'")
        env = AudioNavEnv(grid, library)
        frames = run_episode(env, episode, policy, rng, index=index, max_steps=horizon, record_frames=True).frames
        if max_samples is not None:
            frames = frames[: max_samples - total]
        total += len(frames)
        chunks.append((index, frames))
        logger.debug("episode %d: %d samples", index, len(frames))

    frames = [(index, f) for index, fs in chunks for f in fs]
    if not frames:
        raise SdmError("no samples collected")
    return SdmDataset(
        spectrograms=np.stack([f.spectrogram for _, f in frames]),
        prev_actions=np.stack([f.prev_action for _, f in frames]),
        prev_sdms=np.stack([f.prev_sdm for _, f in frames]),
        targets=np.stack([f.sdm for _, f in frames]),
        episodes=np.array([index for index, _ in frames]),
    )


# ---------------------------------------------------------------------------
# Dataset file
# ---------------------------------------------------------------------------

def write_sdm_dataset(dataset: SdmDataset, run_header: Optional[dict] = None) -> bytes:
    """JSON header line (counts, shapes, record layout) followed by packed records."""
    records = np.zeros(len(dataset), dtype=RECORD_DTYPE)
    records["episode"] = dataset.episodes
    records["prev_action"] = dataset.prev_actions
    records["prev_sdm"] = dataset.prev_sdms
    records["target"] = dataset.targets
    records["spectrogram"] = dataset.spectrograms
    header = {
        "format": DATASET_FORMAT,
        "count": len(dataset),
        "spectrogram_shape": list(SPECTROGRAM_SHAPE),
        "record_bytes": RECORD_DTYPE.itemsize,
        "run": run_header or {},
    }
    return (json.dumps(header) + "\n").encode("utf-8") + records.tobytes()


def read_sdm_dataset(data: bytes) -> SdmDataset:
    """Inverse of :func:`write_sdm_dataset`."""
    newline = data.find(b"\n")
    if newline < 0:
        raise DatasetFormatError("SDM dataset has no header line")
    try:
        header = json.loads(data[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"malformed SDM dataset header: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != DATASET_FORMAT:
        raise DatasetFormatError("not an sdmnav SDM dataset")
    shape = header.get("spectrogram_shape")
    if not isinstance(shape, list) or tuple(shape) != SPECTROGRAM_SHAPE:
        raise DatasetFormatError(f"spectrogram shape {shape} != {list(SPECTROGRAM_SHAPE)}")
    body = data[newline + 1:]
    try:
        count = int(header.get("count", -1))
    except (TypeError, ValueError) as exc:
        raise DatasetFormatError(f"SDM dataset header has a bad record count: {exc}") from exc
    if len(body) != count * RECORD_DTYPE.itemsize:
        raise DatasetFormatError(f"expected {count} records, body holds {len(body) / RECORD_DTYPE.itemsize:g}")
    records = np.frombuffer(body, dtype=RECORD_DTYPE)
    try:
        return SdmDataset(
            spectrograms=records["spectrogram"],
            prev_actions=records["prev_action"],
            prev_sdms=records["prev_sdm"],
            targets=records["target"],
            episodes=records["episode"],
        )
    except SdmError as exc:
        raise DatasetFormatError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def dataset_loss(params: EncoderParams, dataset: SdmDataset, batch_size: int = DEFAULT_BATCH_SIZE) -> float:
    """Teacher-forced loss over the whole dataset, no dropout."""
    preds = teacher_forced_predict(params, dataset, batch_size)
    return mse_loss(preds, dataset.targets)


def teacher_forced_predict(params: EncoderParams, dataset: SdmDataset, batch_size: int = DEFAULT_BATCH_SIZE):
    preds = []
    for start in range(0, len(dataset), batch_size):
        sl = slice(start, start + batch_size)
        preds.append(encoder_forward(
            params,
            dataset.spectrograms[sl].astype(np.float64),
            dataset.prev_actions[sl],
            dataset.prev_sdms[sl],
        ))
    return np.concatenate(preds)


def train_encoder(
    params: EncoderParams,
    dataset: SdmDataset,
    epochs: int,
    rng: np.random.Generator,
    learning_rate: float = DEFAULT_LEARNING_RATE,
    batch_size: int = DEFAULT_BATCH_SIZE,
    momentum: float = DEFAULT_MOMENTUM,
    dropout: float = DROPOUT_PROBABILITY,
) -> tuple[EncoderParams, list[float]]:
    """Minibatch SGD with momentum on the teacher-forced MSE loss.

    Previous-SDM inputs get node dropout during training only. After every
    epoch the loss is re-evaluated over the full dataset without dropout;
    those values form the returned history. *params* is left untouched.

    Raises:
        SdmError: Empty dataset or bad hyper-parameters.
        TrainingDivergedError: A minibatch loss became non-finite.
    """
    if len(dataset) == 0:
        raise SdmError("cannot train on an empty dataset")
    if epochs < 1 or batch_size < 1:
        raise SdmError("epochs and batch_size must be positive")
    if learning_rate < 0 or not 0.0 <= momentum < 1.0:
        raise SdmError("learning rate must be >= 0 and momentum in [0, 1)")

    trained = params.copy()
    velocity = {name: np.zeros_like(t) for name, t in trained.tensors.items()}
    history = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), batch_size):
            idx = np.sort(order[start:start + batch_size])
            prev = apply_dropout(dataset.prev_sdms[idx], rng, dropout)
            try:
                loss, grads = batch_loss_and_gradient(
                    trained,
                    dataset.spectrograms[idx].astype(np.float64),
                    dataset.prev_actions[idx],
                    prev,
                    dataset.targets[idx],
                )
            except SdmError as exc:
                raise TrainingDivergedError(epoch, float("nan")) from exc
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            for name, tensor in trained.tensors.items():
                v = velocity[name]
                v *= momentum
                v -= learning_rate * grads[name]
                tensor += v
        epoch_loss = dataset_loss(trained, dataset, batch_size)
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch, epoch_loss)
        history.append(epoch_loss)
        logger.debug("epoch %d: loss %.6f", epoch, epoch_loss)
    return trained, history


def closed_loop_predict(params: EncoderParams, rollout: Rollout) -> np.ndarray:
    """Predictions over a rollout, feeding back each prediction as the next previous SDM."""
    prev = np.zeros(N_NODES)
    preds = []
    for t in range(len(rollout)):
        prev = encoder_forward(params, rollout.spectrograms[t].astype(np.float64), rollout.prev_actions[t], prev)
        preds.append(prev)
    return np.stack(preds) if preds else np.zeros((0, N_NODES))


def teacher_forced_rollout_predict(params: EncoderParams, rollout: Rollout) -> np.ndarray:
    """Predictions over a rollout with the ground-truth previous SDM as input."""
    prev = rollout.teacher_forced_prev()
    preds = []
    for start in range(0, len(rollout), DEFAULT_BATCH_SIZE):
        sl = slice(start, start + DEFAULT_BATCH_SIZE)
        preds.append(encoder_forward(
            params, rollout.spectrograms[sl].astype(np.float64), rollout.prev_actions[sl], prev[sl]
        ).reshape(-1, N_NODES))
    return np.concatenate(preds) if preds else np.zeros((0, N_NODES))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def sdm_mse(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Plain mean squared error over steps and nodes."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise SdmError(f"prediction shape {predictions.shape} != target shape {targets.shape}")
    if predictions.size == 0:
        raise SdmError("no predictions to score")
    return float(np.mean((predictions - targets) ** 2))


def mean_predictor_mse(dataset: SdmDataset) -> float:
    """MSE of always predicting the per-node mean target."""
    mean = dataset.targets.mean(axis=0)
    return sdm_mse(np.broadcast_to(mean, dataset.targets.shape), dataset.targets)


@dataclass(frozen=True)
class RolloutScore:
    episode: int
    steps: int
    teacher_forced_mse: float
    closed_loop_mse: float


def score_rollouts(params: EncoderParams, dataset: SdmDataset) -> list[RolloutScore]:
    """Teacher-forced against closed-loop MSE for every episode of *dataset*."""
    scores = []
    for episode in sorted(set(dataset.episodes.tolist())):
        rollout = dataset.rollout(episode)
        scores.append(RolloutScore(
            episode=episode,
            steps=len(rollout),
            teacher_forced_mse=sdm_mse(teacher_forced_rollout_predict(params, rollout), rollout.targets),
            closed_loop_mse=sdm_mse(closed_loop_predict(params, rollout), rollout.targets),
        ))
    return scores
