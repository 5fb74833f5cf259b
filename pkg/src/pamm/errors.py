"""Exception and warning types raised across the pipeline."""


class PammError(Exception):
    """Base class for every error raised by this package."""


class InputParseError(PammError, ValueError):
    """A file or record could not be parsed."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class CalibrationInvalid(PammError, ValueError):
    pass


class ConfigInvalid(PammError, ValueError):
    pass


# camera geometry
class DepthNonPositive(PammError, ValueError):
    pass


class RayParallelToGround(PammError, ValueError):
    pass


# pose estimation
class TrackTooShort(PammError, ValueError):
    pass


class ZeroVelocity(PammError, ValueError):
    pass


class ObjectAtCamera(PammError, ValueError):
    pass


# sample confidence
class AllSamplesRejected(PammError):
    def __init__(self, message, object_id=None, camera_id=None):
        super().__init__(message)
        self.object_id = object_id
        self.camera_id = camera_id


# multi-pose model
class EmptyPatch(PammError, ValueError):
    pass


class EmptyTrack(PammError, ValueError):
    pass


class MissingFeature(PammError, KeyError):
    pass


# metric learning
class RankDeficientWarning(UserWarning):
    """PCA found fewer non-zero eigenvalues than the requested dimension."""


class InsufficientPairs(PammError, ValueError):
    pass


class SingularCovariance(PammError, ValueError):
    pass


class DimensionMismatch(PammError, ValueError):
    pass


# matching
class NoExistingPairs(PammError, ValueError):
    pass


class ZeroWeightMass(PammError, ValueError):
    pass


# weight training
class MissingPosePair(PammError, ValueError):
    def __init__(self, pair, label=None):
        what = f"pose pair {pair!r}" if label is None else f"{label} class of pose pair {pair!r}"
        super().__init__(f"no training distances for {what}")
        self.pair = pair
        self.label = label


class EmptyDistribution(PammError, ValueError):
    pass


class DegenerateTrainingSet(PammError, ValueError):
    pass


# evaluation
class TooFewIdentities(PammError, ValueError):
    pass


class TruthMissing(PammError, ValueError):
    pass
