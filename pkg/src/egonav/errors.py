"""Exception and warning types shared across the package."""


class EgoNavError(Exception):
    """Base class for all package-specific errors."""


class InputFormatError(EgoNavError):
    """A file or buffer does not conform to its documented format."""


class EmptyDepthError(EgoNavError):
    """A depth image contains no valid pixels."""


class PlaneNotFoundError(EgoNavError):
    """No plane candidate satisfied the gravity/height priors."""


class DegenerateGazeError(EgoNavError):
    """The gaze direction is (near) parallel to the ground normal."""


class HorizonError(EgoNavError):
    """Not enough future poses to cover the requested horizon."""


class EmptyPitchBinError(EgoNavError):
    """The queried pitch bin holds no training entries."""


class WorldGenerationError(EgoNavError):
    """Obstacle placement failed after the retry budget."""


class UnreachableGoalError(EgoNavError):
    """No collision-free path exists between start and goal."""


class ShortBinWarning(UserWarning):
    """A KNN query asked for more neighbors than the bin holds."""


class RankDeficientWarning(UserWarning):
    """PCA training data had rank below the requested basis size."""
