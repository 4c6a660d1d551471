"""Exception types shared across the package."""


class SkelgcnError(Exception):
    pass


class ShapeMismatchError(SkelgcnError):
    pass


class InvalidAxisError(SkelgcnError):
    pass


class InvalidLabelError(SkelgcnError):
    pass


class NotScalarError(SkelgcnError):
    pass


class InvalidEdgeError(SkelgcnError):
    pass


class DisconnectedGraphError(SkelgcnError):
    pass


class ParseError(SkelgcnError):
    def __init__(self, message, line=None):
        if line is not None:
            message = "line %d: %s" % (line, message)
        super().__init__(message)
        self.line = line


class TruncatedFileError(ParseError):
    pass


class VersionMismatchError(SkelgcnError):
    pass


class EmptySequenceError(SkelgcnError):
    pass


class InvalidBlockError(SkelgcnError):
    pass


class ConfigError(SkelgcnError):
    pass


class DivergedLossError(SkelgcnError):
    pass
