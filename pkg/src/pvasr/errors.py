"""Exception types shared across the package."""


class PVASRError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatch(PVASRError, ValueError):
    pass


class InvalidStride(PVASRError, ValueError):
    pass


class NotScalar(PVASRError, ValueError):
    pass


class DetachedGraph(PVASRError, RuntimeError):
    pass


class DegeneratePositions(PVASRError, ValueError):
    pass


class EmptyClip(PVASRError, ValueError):
    pass


class EmptyInput(PVASRError, ValueError):
    pass


class EmptyPrefix(PVASRError, ValueError):
    pass


class InfeasibleTarget(PVASRError, ValueError):
    pass


class InvalidDistribution(PVASRError, ValueError):
    pass


class TooLarge(PVASRError, ValueError):
    pass


class LengthMismatch(PVASRError, ValueError):
    pass


class AlphaOutOfRange(PVASRError, ValueError):
    pass


class EmptyLexicon(PVASRError, ValueError):
    pass


class ContainsDigits(PVASRError, ValueError):
    pass


class RateOutOfRange(PVASRError, ValueError):
    pass


class OOVWord(PVASRError, KeyError):
    pass


class EmptyCorpus(PVASRError, ValueError):
    pass


class ParseError(PVASRError, ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class MissingFile(PVASRError, FileNotFoundError):
    pass


class EmptyReference(PVASRError, ValueError):
    pass


class InvalidSchedule(PVASRError, ValueError):
    pass


class UtteranceTooLong(PVASRError, ValueError):
    pass


class VersionMismatch(PVASRError, ValueError):
    pass


class CorruptFile(PVASRError, ValueError):
    pass


class ConfigError(PVASRError, ValueError):
    pass
