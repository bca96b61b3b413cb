"""Exception hierarchy.

Every error raised by the package derives from :class:`MRGError`; the
``category`` attribute is what the command line maps to an exit code.
"""


class MRGError(Exception):
    category = "engine"


class ConfigError(MRGError):
    category = "config"


class OutputError(MRGError):
    """Reading an input file or writing an output failed."""

    category = "io"


class GridError(MRGError, ValueError):
    """Invalid grid definition or cell operation."""


class NotIncreasing(GridError):
    pass


class NotIntegerMultiple(GridError):
    def __init__(self, pair):
        self.pair = tuple(pair)
        super().__init__(f"resolution {pair[1]} is not an integer multiple of {pair[0]}")


class OnBorder(GridError):
    pass


class OutsideGrid(GridError):
    pass


class LevelOrder(GridError):
    pass


class IngestError(MRGError):
    category = "ingest"


class MissingColumn(IngestError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"missing column {name!r}")


class Malformed(IngestError, ValueError):
    def __init__(self, code, position, token=""):
        self.code = code
        self.position = position
        self.token = token
        super().__init__(f"malformed location code {code!r} at position {position}: {token!r}")


class BadRes(IngestError, ValueError):
    pass


class TooManyBadRows(IngestError):
    def __init__(self, failures, rows):
        self.failures = list(failures)
        super().__init__(f"{len(self.failures)} of {rows} rows could not be read; "
                         f"first: line {self.failures[0].line}: {self.failures[0].reason}")


class UnknownVariable(MRGError, KeyError):
    pass


class UnknownStratum(MRGError, KeyError):
    pass


class UserRuleError(MRGError):
    def __init__(self, cell, cause):
        self.cell = cell
        self.cause = cause
        super().__init__(f"user rule failed on cell {cell}: {cause!r}")


class SpecMismatch(MRGError):
    pass


class VariableMissing(MRGError, KeyError):
    pass


class BadParams(MRGError, ValueError):
    category = "config"


class GroupTooSmall(MRGError, ValueError):
    def __init__(self, group):
        self.group = group
        super().__init__(f"group {group!r} has fewer than 2 records")
