"""Exception hierarchy shared by the parser, solver and post-processing."""

from __future__ import annotations


class LdosimError(Exception):
    """Base class for every error raised by ldosim."""


# --- netlist -----------------------------------------------------------------

class NetlistError(LdosimError):
    """A netlist could not be turned into a valid circuit."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MalformedNumber(NetlistError, ValueError):
    pass


class NetlistSyntaxError(NetlistError):
    pass


class UnknownModel(NetlistError):
    def __init__(self, element: str, model: str, line: int | None = None):
        self.element = element
        self.model = model
        super().__init__(f"UnknownModel: element {element} references undefined model {model!r}", line)


class DuplicateName(NetlistError):
    def __init__(self, name: str, line: int | None = None):
        self.name = name
        super().__init__(f"DuplicateName: element name {name!r} is already defined", line)


class NoGroundNode(NetlistError):
    def __init__(self) -> None:
        super().__init__("NoGroundNode: no element is connected to node 0")


# --- devices / engine --------------------------------------------------------

class UnsupportedElement(LdosimError, TypeError):
    pass


class SingularMatrix(LdosimError):
    """LU pivot fell below the singularity threshold.

    ``index`` is the unknown (row/column of the system) at which
    elimination broke down; ``label`` names it when a circuit is known.
    """

    def __init__(self, index: int, label: str | None = None):
        self.index = index
        self.label = label
        where = label if label is not None else f"unknown {index}"
        super().__init__(f"SingularMatrix: zero pivot at {where} (floating node or inconsistent sources)")


class NonConvergence(LdosimError):
    def __init__(self, message: str, *, node: str | None = None, residual: float | None = None,
                 last_iterate=None, step: int | None = None, time: float | None = None):
        self.node = node
        self.residual = residual
        self.last_iterate = last_iterate
        self.step = step
        self.time = time
        super().__init__(f"NonConvergence: {message}")


# --- metrics -----------------------------------------------------------------

class MetricError(LdosimError):
    pass


class NoUnityCrossing(MetricError):
    pass


class NeverRegulated(MetricError):
    pass


class AlwaysRegulated(MetricError):
    pass


class RegulatedAtUpperBound(MetricError):
    pass
