"""Exception hierarchy and diagnostics shared across the pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class Diagnostic:
    message: str
    line: int = 0
    col: int = 0
    kind: str = "error"
    expected: tuple[str, ...] = field(default=tuple)

    def __post_init__(self):
        if callable(self.expected):
            self.expected = ()

    def __str__(self):
        pos = f"{self.line}:{self.col}: " if self.line else ""
        extra = f" (expected {', '.join(self.expected)})" if self.expected else ""
        return f"{pos}{self.kind}: {self.message}{extra}"


class CompilerError(Exception):
    """Base for all typed pipeline errors."""


class UndefinedTensor(CompilerError):
    pass


class DuplicateDefinition(CompilerError):
    pass


class UnboundSymbol(CompilerError):
    def __init__(self, symbol: str):
        self.symbol = symbol
        super().__init__(f"unbound dimension symbol {symbol!r}")


class ShapeMismatch(CompilerError):
    pass


class OutOfBounds(CompilerError):
    pass


class NoSuchNode(CompilerError):
    pass


class TransformError(CompilerError):
    """Base for scheduling-primitive legality failures."""


class NotPerfectNest(TransformError):
    pass


class IllegalReorder(TransformError):
    pass


class NotElementWiseProducer(TransformError):
    pass


class IterationMismatch(TransformError):
    pass


class WouldViolateDependence(TransformError):
    pass


class NoRepairRule(TransformError):
    pass


class NonElementWisePath(TransformError):
    pass


class FootprintNotAffine(TransformError):
    pass


class NotRematerializable(TransformError):
    pass


class NotScanShaped(TransformError):
    pass


class NotParallel(TransformError):
    pass


class AxisTaken(TransformError):
    pass


class StepFailed(CompilerError):
    def __init__(self, index: int, underlying: Exception):
        self.index = index
        self.underlying = underlying
        super().__init__(f"schedule step {index} failed: {underlying}")


class ResidualScan(CompilerError):
    pass


class ResidualGuard(CompilerError):
    pass


class UnsupportedPattern(CompilerError):
    pass


class BudgetTooSmall(CompilerError):
    pass
