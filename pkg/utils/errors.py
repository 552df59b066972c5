"""
Structured errors shared by every Precis module.
Each error carries enough context (layer, tensor, byte offset) to be reported
without a traceback.
"""


class PrecisError(Exception):
    """Base class for all Precis errors"""


class DomainError(PrecisError, ValueError):
    """Argument outside the domain of an operation"""


class DegenerateFitError(DomainError):
    """Least-squares fit over inputs with no spread"""


class FormatError(PrecisError):
    """Malformed file or literal"""

    def __init__(self, message, offset=None, source=None):
        self.offset = offset
        self.source = source
        details = []
        if source is not None:
            details.append(str(source))
        if offset is not None:
            details.append(f"byte offset {offset}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)


class ManifestError(FormatError):
    """Network manifest that does not describe a valid network"""


class CostTableError(FormatError):
    """Cost table with unsorted, duplicate or nonpositive entries"""


class ShapeMismatchError(PrecisError):
    def __init__(self, layer, expected, actual, what="shape"):
        self.layer = layer
        self.expected = tuple(expected) if expected is not None else None
        self.actual = tuple(actual) if actual is not None else None
        super().__init__(
            f"layer '{layer}': {what} mismatch, expected {self.expected}, got {self.actual}"
        )


class MissingTensorError(PrecisError):
    def __init__(self, name, layer=None):
        self.name = name
        self.layer = layer
        where = f" (referenced by layer '{layer}')" if layer else ""
        super().__init__(f"missing tensor '{name}'{where}")
