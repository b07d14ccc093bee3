"""Exception hierarchy shared by every warpgraph module."""

from typing import Optional


class WarpgraphError(Exception):
    """Base class for all errors raised by warpgraph."""


class ConfigError(WarpgraphError, ValueError):
    pass


class FormatError(WarpgraphError, ValueError):
    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message)
        self.path = path


class IoError(WarpgraphError, OSError):
    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message)
        self.path = path


class DimensionMismatch(WarpgraphError, ValueError):
    pass


class ResolutionMismatch(DimensionMismatch):
    pass


class NonPositiveDepth(WarpgraphError, ValueError):
    pass


class BehindCamera(WarpgraphError, ValueError):
    pass


class GridTooLarge(WarpgraphError, ValueError):
    pass


class OutOfBounds(WarpgraphError, ValueError):
    pass


class InvalidCorner(WarpgraphError, ValueError):
    pass


class SingularBlock(WarpgraphError, ArithmeticError):
    def __init__(self, node: int):
        super().__init__(f"diagonal block of node {node} is not positive definite")
        self.node = node


class PivotBreakdown(WarpgraphError, ArithmeticError):
    def __init__(self, block: int):
        super().__init__(f"non-positive pivot in block row {block}")
        self.block = block


class FactorizationFailed(WarpgraphError, ArithmeticError):
    pass


class BreakdownError(WarpgraphError, ArithmeticError):
    pass


class NotSPD(WarpgraphError, ValueError):
    pass


class ProblemTooLarge(WarpgraphError, ValueError):
    pass


class NonFinite(WarpgraphError, ArithmeticError):
    pass


class DegenerateScene(WarpgraphError):
    pass


class NoCovisiblePixels(WarpgraphError):
    pass


class NoValidNodes(WarpgraphError):
    pass


class DescentViolation(WarpgraphError, ArithmeticError):
    pass
