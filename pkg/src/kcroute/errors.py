"""Exception hierarchy shared across the package."""


class KCRouteError(Exception):
    """Base class for every error raised by kcroute."""


class InvalidLabel(KCRouteError, ValueError):
    pass


class InvalidConfig(KCRouteError, ValueError):
    pass


class ElementUnsupported(KCRouteError, ValueError):
    pass


class EmptyPool(KCRouteError, ValueError):
    pass


class UnknownModel(KCRouteError, KeyError):
    pass


class AlphaMismatch(KCRouteError, ValueError):
    """Query-time alpha differs from the alpha the index was built with."""


class EmbeddingUnavailable(KCRouteError, RuntimeError):
    pass


class ParseError(KCRouteError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class RangeError(ParseError):
    pass


class Conflict(KCRouteError, ValueError):
    pass


class VersionError(KCRouteError, ValueError):
    pass


class FormatError(KCRouteError, ValueError):
    pass


class InvalidQuery(KCRouteError, ValueError):
    pass


class TaggerParseError(KCRouteError, ValueError):
    pass


class TaggerUnavailable(KCRouteError, RuntimeError):
    pass


class MissingTags(KCRouteError, KeyError):
    pass


class TraceError(KCRouteError, ValueError):
    pass


class EmptyInput(KCRouteError, ValueError):
    pass
