"""Exception hierarchy shared by all sdmnav modules."""


class SdmNavError(Exception):
    """Base class for every error raised by sdmnav."""


class SceneError(SdmNavError, ValueError):
    """Malformed scene file or a query on a non-navigable point."""


class EpisodeError(SdmNavError, ValueError):
    """Invalid episode, tour query, or episode dataset content."""


class SamplingBudgetExhausted(EpisodeError):
    """The episode generator found no valid placement within its attempt budget."""

    def __init__(self, scene_id: str, attempts: int):
        super().__init__(f"no valid episode in scene '{scene_id}' after {attempts} attempts")
        self.scene_id = scene_id
        self.attempts = attempts


class AudioError(SdmNavError, ValueError):
    """Invalid sound category, sound library, or binaural chunk."""


class SdmError(SdmNavError, ValueError):
    """Invalid SDM query, encoder input, or encoder parameter file."""


class TrainingDivergedError(SdmError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class EnvError(SdmNavError, ValueError):
    """Invalid environment transition (e.g. stepping a finished episode)."""


class MetricsError(SdmNavError, ValueError):
    """Inconsistent episode result or empty result set."""


class DatasetFormatError(SdmNavError, ValueError):
    """Malformed JSON Lines, CSV, or binary record file."""
