"""Parametric sound categories, binaural rendering, and the spectrogram pipeline.

Every category synthesises a one-second loop at 44.1 kHz that plays
repeatedly from its episode playback offset. The agent hears 0.25 s chunks:
each active source is attenuated by its geodesic distance and panned by its
bearing relative to the agent heading. Chunks become 2×257×69 log-magnitude
spectrograms (512-sample Hann window, hop 160, center padding).
"""

import functools
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.io import wavfile
from scipy.signal import chirp, get_window

from sdmnav.errors import AudioError
from sdmnav.scene import Point, Pose, SceneGrid, cell_distance, snap_to_cell

logger = logging.getLogger(__name__)

SAMPLE_RATE = 44_100
LOOP_SAMPLES = SAMPLE_RATE
CHUNK_SECONDS = 0.25
CHUNK_SAMPLES = int(SAMPLE_RATE * CHUNK_SECONDS)
N_FFT = 512
HOP_LENGTH = 160
N_BINS = N_FFT // 2 + 1
N_FRAMES = (CHUNK_SAMPLES + 2 * (N_FFT // 2) - N_FFT) // HOP_LENGTH + 1
SPECTROGRAM_SHAPE = (2, N_BINS, N_FRAMES)

KINDS = ("sine", "noise", "chirp")
SOUND_SETS = ("all", "loud", "quiet", "long", "short")
LOUD_THRESHOLD = 0.5
LONG_THRESHOLD = 0.5

_HANN = get_window("hann", N_FFT)


# ---------------------------------------------------------------------------
# Sound categories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SoundCategory:
    """A parametric synthetic sound source.

    ``frequency`` is the tone (sine) or start (chirp) frequency in Hz and is
    ignored by noise; ``frequency_end`` is used by chirps only.
    """
    id: int
    kind: str
    frequency: float = 440.0
    frequency_end: Optional[float] = None
    active_duration: float = 1.0
    amplitude: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AudioError(f"category {self.id}: unknown kind '{self.kind}' (expected one of {KINDS})")
        if not 0.0 < self.active_duration <= 1.0:
            raise AudioError(f"category {self.id}: active_duration must lie in (0, 1], got {self.active_duration}")
        if not 0.0 < self.amplitude <= 1.0:
            raise AudioError(f"category {self.id}: amplitude must lie in (0, 1], got {self.amplitude}")
        nyquist = SAMPLE_RATE / 2
        if self.kind != "noise" and not 0.0 < self.frequency < nyquist:
            raise AudioError(f"category {self.id}: frequency must lie in (0, {nyquist}), got {self.frequency}")
        if self.kind == "chirp":
            if self.frequency_end is None or not 0.0 < self.frequency_end < nyquist:
                raise AudioError(f"category {self.id}: chirp needs frequency_end in (0, {nyquist})")

    @property
    def is_loud(self) -> bool:
        return self.amplitude >= LOUD_THRESHOLD

    @property
    def is_long(self) -> bool:
        return self.active_duration >= LONG_THRESHOLD


@functools.lru_cache(maxsize=256)
def _synth_cached(category: SoundCategory) -> np.ndarray:
    n_active = int(round(category.active_duration * SAMPLE_RATE))
    t = np.arange(n_active) / SAMPLE_RATE
    if category.kind == "sine":
        active = np.sin(2 * np.pi * category.frequency * t)
    elif category.kind == "chirp":
        active = chirp(t, f0=category.frequency, t1=category.active_duration, f1=category.frequency_end)
    else:
        rng = np.random.default_rng(np.random.SeedSequence([category.seed, category.id]))
        active = rng.standard_normal(n_active)

    loop = np.zeros(LOOP_SAMPLES)
    peak = np.max(np.abs(active)) if n_active else 0.0
    if peak > 0:
        loop[:n_active] = active / peak * category.amplitude
    loop.setflags(write=False)
    return loop


def synth_waveform(category: SoundCategory) -> np.ndarray:
    """Synthesise the 44,100-sample loop of *category* (read-only array).

    Peak absolute sample equals ``amplitude``; samples at and after
    ``active_duration`` seconds are exactly zero.
    """
    return _synth_cached(category)


def default_library() -> list[SoundCategory]:
    """Built-in category library spanning every kind and the loud/quiet and long/short sets."""
    specs = [
        ("sine", 861.328125, None, 1.0, 1.0),
        ("sine", 430.6640625, None, 0.3, 0.9),
        ("sine", 1722.65625, None, 0.8, 0.3),
        ("sine", 2583.984375, None, 0.25, 0.2),
        ("noise", 0.0, None, 1.0, 0.7),
        ("noise", 0.0, None, 0.4, 0.8),
        ("noise", 0.0, None, 0.9, 0.25),
        ("noise", 0.0, None, 0.2, 0.35),
        ("chirp", 300.0, 3000.0, 1.0, 0.8),
        ("chirp", 4000.0, 800.0, 0.35, 1.0),
        ("chirp", 1000.0, 6000.0, 0.7, 0.4),
        ("chirp", 5000.0, 2000.0, 0.3, 0.3),
    ]
    return [
        SoundCategory(
            id=k, kind=kind, frequency=f0, frequency_end=f1, active_duration=dur, amplitude=amp, seed=1000 + k
        )
        for k, (kind, f0, f1, dur, amp) in enumerate(specs)
    ]


def sound_set(categories: Sequence[SoundCategory], name: str) -> list[SoundCategory]:
    """Select the named subset: ``all``, ``loud``, ``quiet``, ``long`` or ``short``."""
    if name == "all":
        return list(categories)
    if name == "loud":
        return [c for c in categories if c.is_loud]
    if name == "quiet":
        return [c for c in categories if not c.is_loud]
    if name == "long":
        return [c for c in categories if c.is_long]
    if name == "short":
        return [c for c in categories if not c.is_long]
    raise AudioError(f"unknown sound set '{name}' (expected one of {SOUND_SETS})")


def split_categories(
    categories: Sequence[SoundCategory],
    test_fraction: float,
    rng: np.random.Generator,
) -> tuple[list[SoundCategory], list[SoundCategory]]:
    """Partition a library into disjoint train and test categories."""
    if not 0.0 < test_fraction < 1.0:
        raise AudioError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(categories)
    if n < 2:
        raise AudioError("need at least two categories to split")
    n_test = min(max(1, int(round(n * test_fraction))), n - 1)
    order = rng.permutation(n)
    test_idx = set(int(k) for k in order[:n_test])
    train = [c for k, c in enumerate(categories) if k not in test_idx]
    test = [c for k, c in enumerate(categories) if k in test_idx]
    return train, test


def write_library(categories: Sequence[SoundCategory]) -> bytes:
    """Serialise categories as a JSON array of records."""
    return (json.dumps([asdict(c) for c in categories], indent=2) + "\n").encode("utf-8")


def load_library(data: bytes) -> list[SoundCategory]:
    """Parse a JSON array of category records.

    Raises:
        AudioError: Malformed JSON, invalid records, or duplicate ids.
    """
    try:
        records = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise AudioError(f"malformed sound library: {exc}") from exc
    if not isinstance(records, list):
        raise AudioError("sound library must be a JSON array")
    categories = []
    for record in records:
        try:
            categories.append(SoundCategory(**record))
        except TypeError as exc:
            raise AudioError(f"invalid category record {record!r}: {exc}") from exc
    ids = [c.id for c in categories]
    if len(set(ids)) != len(ids):
        raise AudioError("duplicate category ids in sound library")
    return categories


# ---------------------------------------------------------------------------
# Binaural rendering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BinauralChunk:
    """0.25 s of two-channel audio. ``unreachable`` lists sources muted for lack of a path."""
    left: np.ndarray
    right: np.ndarray
    unreachable: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.left.shape != (CHUNK_SAMPLES,) or self.right.shape != (CHUNK_SAMPLES,):
            raise AudioError(
                f"binaural chunk channels must have {CHUNK_SAMPLES} samples, "
                f"got {self.left.shape} and {self.right.shape}"
            )
        if not (np.isfinite(self.left).all() and np.isfinite(self.right).all()):
            raise AudioError("binaural chunk contains non-finite samples")

    @classmethod
    def silent(cls) -> "BinauralChunk":
        return cls(np.zeros(CHUNK_SAMPLES), np.zeros(CHUNK_SAMPLES))


@dataclass(frozen=True)
class SourceState:
    """A goal's sound as seen by the renderer at one step."""
    position: Point
    category: SoundCategory
    offset_s: float
    active: bool = True


def loop_segment(waveform: np.ndarray, start_s: float) -> np.ndarray:
    """The chunk of a looping waveform starting at *start_s* seconds."""
    start = int(round(start_s * SAMPLE_RATE)) % LOOP_SAMPLES
    return np.take(waveform, (start + np.arange(CHUNK_SAMPLES)) % LOOP_SAMPLES)


def pan_gains(pose: Pose, source: Point) -> tuple[float, float]:
    """Left/right gains ``0.5 (1 ± sin β)`` for the bearing β of *source* (CCW positive)."""
    ahead, left = pose.to_local(source)
    norm = math.hypot(ahead, left)
    sin_beta = left / norm if norm > 0 else 0.0
    return 0.5 * (1.0 + sin_beta), 0.5 * (1.0 - sin_beta)


def render_binaural(
    grid: SceneGrid,
    pose: Pose,
    sources: Sequence[SourceState],
    t0: float,
) -> BinauralChunk:
    """Mix the active sources heard at *pose* over ``[t0, t0 + 0.25)``.

    Each active source contributes its looped waveform segment starting at
    ``t0 + offset_s``, scaled by ``1 / max(d_geo, 1)`` and panned by bearing.
    Inactive (reached) sources are silent; unreachable ones are muted and
    reported in ``unreachable``.
    """
    agent_cell = snap_to_cell(grid, pose.position)
    left = np.zeros(CHUNK_SAMPLES)
    right = np.zeros(CHUNK_SAMPLES)
    unreachable = []
    for k, src in enumerate(sources):
        if not src.active:
            continue
        d_geo = cell_distance(grid, agent_cell, snap_to_cell(grid, src.position))
        if math.isinf(d_geo):
            logger.warning("source %d at (%s, %s) is unreachable; muted", k, src.position.x, src.position.y)
            unreachable.append(k)
            continue
        segment = loop_segment(synth_waveform(src.category), t0 + src.offset_s)
        attenuation = 1.0 / max(d_geo, 1.0)
        g_left, g_right = pan_gains(pose, src.position)
        left += attenuation * g_left * segment
        right += attenuation * g_right * segment
    return BinauralChunk(left, right, tuple(unreachable))


# ---------------------------------------------------------------------------
# Spectrogram
# ---------------------------------------------------------------------------

def _stft_magnitude(signal: np.ndarray) -> np.ndarray:
    padded = np.pad(signal, N_FFT // 2, mode="constant")
    frames = np.lib.stride_tricks.sliding_window_view(padded, N_FFT)[::HOP_LENGTH]
    return np.abs(np.fft.rfft(frames * _HANN, n=N_FFT, axis=-1)).T


def compute_spectrogram(chunk: BinauralChunk) -> np.ndarray:
    """Log-magnitude STFT of both channels, shape ``(2, 257, 69)``, entries ``ln(1 + |X|)``."""
    if chunk.left.shape != (CHUNK_SAMPLES,) or chunk.right.shape != (CHUNK_SAMPLES,):
        raise AudioError(f"chunk channels must have {CHUNK_SAMPLES} samples")
    spec = np.stack([_stft_magnitude(chunk.left), _stft_magnitude(chunk.right)])
    return np.log1p(spec)


# ---------------------------------------------------------------------------
# WAV export
# ---------------------------------------------------------------------------

def export_wav(chunk: BinauralChunk) -> bytes:
    """Encode *chunk* as 16-bit PCM stereo WAV at 44.1 kHz (samples clipped to [-1, 1])."""
    stereo = np.stack([chunk.left, chunk.right], axis=1)
    pcm = np.round(np.clip(stereo, -1.0, 1.0) * 32767).astype("<i2")
    buffer = io.BytesIO()
    wavfile.write(buffer, SAMPLE_RATE, pcm)
    return buffer.getvalue()

