"""Exception types shared across the toolkit.

Two broad families matter for the command line front end: ``DataError``
(bad or insufficient input, exit code 2) and ``NumericalError`` (a
computation failed or diverged, exit code 3).  Everything else surfaces
as a usage error (exit code 1).
"""


class SeqpressError(Exception):
    """Base class for all toolkit errors."""


class DataError(SeqpressError):
    """Input data is malformed, missing, or insufficient."""


class NumericalError(SeqpressError):
    """A numerical computation failed, degenerated, or diverged."""


# --- signal / feature extraction ---------------------------------------


class NoBeatsDetected(DataError):
    """No R peaks could be located in the ECG channel."""


class FiducialNotFound(DataError):
    """A required pulse landmark is missing within one beat window."""

    def __init__(self, beat_index: int, reason: str):
        super().__init__(f"beat {beat_index}: {reason}")
        self.beat_index = beat_index
        self.reason = reason


class InsufficientBeats(DataError):
    """Too few complete beats to build a feature sequence."""


class DegenerateFeature(DataError):
    """A feature column has zero variance and cannot be standardized."""

    def __init__(self, index: int, name: str = ""):
        label = f"column {index}" + (f" ({name})" if name else "")
        super().__init__(f"zero-variance feature: {label}")
        self.index = index
        self.name = name


# --- network / gradients ------------------------------------------------


class DimensionMismatch(DataError):
    """Array dimensions do not match the declared parameter sizes."""


class ShapeMismatch(DataError):
    """Two arrays that must agree in shape do not."""


class NonFiniteActivation(NumericalError):
    """A NaN or Inf appeared during a forward pass."""

    def __init__(self, layer: str, timestep: int):
        super().__init__(f"non-finite activation in {layer} at timestep {timestep}")
        self.layer = layer
        self.timestep = timestep


class CacheMismatch(DataError):
    """A forward cache does not match the parameters it is replayed with."""


# --- training -----------------------------------------------------------


class NonPositiveTarget(DataError):
    """Target values must be strictly positive before max-scaling."""


class SourceTooShort(DataError):
    """A source sequence is shorter than one training window."""


class EmptySplit(DataError):
    """A dataset split received zero samples."""


class DivergedLoss(NumericalError):
    """The training loss became NaN or Inf."""


# --- baselines ----------------------------------------------------------


class InsufficientCalibration(DataError):
    """The calibration window is too short or carries no usable variation."""


class SingularCovariance(NumericalError):
    """An innovation covariance stayed singular even after regularization."""


# --- evaluation ---------------------------------------------------------


class LengthMismatch(DataError):
    """Prediction and truth sequences differ in length."""


class EmptyInput(DataError):
    """An operation received an empty sequence."""


class MissingSession(DataError):
    """An evaluation was asked for a session that is not present."""
