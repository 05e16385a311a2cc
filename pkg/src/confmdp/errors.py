"""Exception types shared across the package."""

from __future__ import annotations


class MdpError(Exception):
    """Base class for every error raised by confmdp."""


class RowSumError(MdpError, ValueError):
    def __init__(self, action: int, row: int, total: float, where: str = ""):
        self.action = action
        self.row = row
        self.total = total
        prefix = f"{where}: " if where else ""
        super().__init__(f"{prefix}action {action} row {row} sums to {total!r}, expected 1")


class NegativeEntryError(MdpError, ValueError):
    def __init__(self, action: int, row: int, col: int, value: float, where: str = ""):
        self.action = action
        self.row = row
        self.col = col
        prefix = f"{where}: " if where else ""
        super().__init__(
            f"{prefix}action {action} entry ({row}, {col}) = {value!r} outside [0, 1]"
        )


class DimensionMismatch(MdpError, ValueError):
    pass


class SingularSystemError(MdpError, ArithmeticError):
    pass


class NonConvergence(MdpError, RuntimeError):
    """An iterative solver hit its iteration cap.

    The best iterate found is attached as ``partial`` so callers can still
    inspect or use it.
    """

    def __init__(self, message: str, partial=None, kernel_index: int | None = None):
        super().__init__(message)
        self.partial = partial
        self.kernel_index = kernel_index


class UnvisitedPairError(MdpError, ValueError):
    def __init__(self, pairs):
        self.pairs = list(pairs)
        shown = ", ".join(f"({s},{a})" for s, a in self.pairs[:20])
        more = "" if len(self.pairs) <= 20 else f" ... (+{len(self.pairs) - 20} more)"
        super().__init__(f"no samples for {len(self.pairs)} pair(s): {shown}{more}")


class CatalogMismatch(MdpError, ValueError):
    pass


class SolverStall(MdpError, RuntimeError):
    pass


class ScenarioError(MdpError):
    """Base for scenario file problems."""


class ParseError(ScenarioError, ValueError):
    pass


class ValidationError(ScenarioError, ValueError):
    """Carries every violation found, not only the first."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
