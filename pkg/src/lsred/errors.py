"""Exception hierarchy shared by all lsred modules."""


class LsredError(Exception):
    """Base class for every error raised by the package."""


class InvalidParameter(LsredError, ValueError):
    pass


class NonpositiveCoefficient(InvalidParameter):
    pass


class BracketNotFound(LsredError):
    pass


class NonConvergence(LsredError):
    pass


class NoContraction(NonConvergence):
    pass


class Divergence(NonConvergence):
    pass


class CollapseToZero(LsredError):
    """Newton iterates fell onto the trivial solution u = 0."""


class LeavesAtlas(LsredError):
    pass


class SingularGram(LsredError):
    pass


class MeshMismatch(LsredError, ValueError):
    pass


class SourceNotASolution(LsredError):
    pass


class ConfigError(LsredError):
    """Configuration problem; carries an optional line number for diagnostics."""

    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
