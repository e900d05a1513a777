"""Exception types shared across the package."""


class YieldNetError(Exception):
    """Base class for all package-specific errors."""


class RasterFormatError(YieldNetError, ValueError):
    """Malformed binary raster/mask/cube/checkpoint file.

    Carries the byte offset at which parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class BinFitError(YieldNetError, ValueError):
    """Bin-edge fitting failed for a band (no valid pixels or degenerate range)."""

    def __init__(self, message: str, band: int):
        super().__init__(f"band {band}: {message}")
        self.band = band


class GraphBuildError(YieldNetError, ValueError):
    """A layer cannot be constructed on the given input shape."""


class GraphStateError(YieldNetError, RuntimeError):
    """Backward pass requested without a cached forward pass."""


class LossError(YieldNetError, ValueError):
    """Loss undefined, e.g. a crop with zero labeled samples in the batch."""


class ConvergenceError(YieldNetError, RuntimeError):
    """Iterative solver exhausted its sweep budget."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last max coefficient change {residual:.3e})")
        self.residual = residual


class TrainingDivergedError(YieldNetError, RuntimeError):
    """Loss became NaN/Inf during training."""

    def __init__(self, iteration: int):
        super().__init__(f"non-finite loss at iteration {iteration}")
        self.iteration = iteration


class SplitError(YieldNetError, ValueError):
    """Invalid train/test split request."""
