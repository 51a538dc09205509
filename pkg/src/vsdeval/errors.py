"""Exception types raised across the toolkit."""


class VsdEvalError(Exception):
    """Base class for all toolkit errors."""


class InvalidPose(VsdEvalError, ValueError):
    pass


class InvalidIntrinsics(VsdEvalError, ValueError):
    pass


class InvalidMesh(VsdEvalError, ValueError):
    pass


class NonPositiveDepth(VsdEvalError, ValueError):
    pass


class TooFewVertices(VsdEvalError, ValueError):
    pass


class EmptyRange(VsdEvalError, ValueError):
    pass


class MeshEntirelyBehindCamera(VsdEvalError):
    pass


class DimensionMismatch(VsdEvalError, ValueError):
    pass


class EmptySilhouette(VsdEvalError):
    pass


class EmptyUnion(VsdEvalError):
    """Both visibility masks are empty, so the VSD average is undefined."""


class KindMismatch(VsdEvalError, TypeError):
    pass


class ParseError(VsdEvalError):
    """Malformed input file.

    ``location`` is a byte offset for binary formats and a 1-based line
    number for text formats.
    """

    def __init__(self, message, path=None, line=None, offset=None):
        self.path = None if path is None else str(path)
        self.line = line
        self.offset = offset
        where = []
        if self.path:
            where.append(self.path)
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class NonFiniteValue(ParseError):
    pass


class MissingFile(VsdEvalError, FileNotFoundError):
    pass


class InconsistentIds(VsdEvalError):
    pass


class MissingModel(VsdEvalError):
    pass


class RenderFailure(VsdEvalError):
    pass


class EmptyBins(VsdEvalError, ValueError):
    pass


class UnsupportedElement(UserWarning):
    """A PLY element or property that is parsed and then ignored."""
