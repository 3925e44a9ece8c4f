"""Exception types shared across the package."""


class IFlowError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(IFlowError):
    """Operands to a primitive have incompatible shapes."""

    def __init__(self, primitive, *shapes):
        self.primitive = primitive
        self.shapes = shapes
        super().__init__(
            f"{primitive}: incompatible shapes {', '.join(str(s) for s in shapes)}"
        )


class NonScalarRoot(IFlowError):
    """backward() was called on a node that is not scalar-valued."""


class SingularJacobian(IFlowError):
    """A Jacobian (or other matrix) is singular to working precision."""

    def __init__(self, message="matrix is singular to working precision", block=None):
        self.block = block
        if block is not None:
            message = f"{message} (residual block {block})"
        super().__init__(message)


class NonConvergent(IFlowError):
    """Fixed-point inversion of a residual block did not converge."""

    def __init__(self, block, residual, sample_indices=None):
        self.block = block
        self.residual = residual
        self.sample_indices = sample_indices
        msg = f"fixed-point inversion of block {block} stalled at residual {residual:.3e}"
        if sample_indices is not None:
            msg += f" for {len(sample_indices)} sample(s)"
        super().__init__(msg)


class ConvergenceError(IFlowError):
    """An iterative routine (e.g. power iteration) failed to converge."""

    def __init__(self, message, residual):
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")


class EmptyGraphError(IFlowError):
    """A graph with zero nodes was requested."""


class EigenbasisError(IFlowError):
    """Two matrices required to share eigenvectors do not commute."""


class RegimeError(IFlowError):
    """Neither branch of a series expansion satisfies its spectral-radius bound."""

    def __init__(self, long_radius, short_radius):
        self.long_radius = long_radius
        self.short_radius = short_radius
        super().__init__(
            "series inverse applies to neither regime: "
            f"long-time radius {long_radius:.4f} >= 1 and "
            f"short-time radius {short_radius:.4f} >= 1"
        )


class CsvFormatError(IFlowError):
    """A CSV input violates the dataset format contract."""

    def __init__(self, path, line, reason):
        self.path = path
        self.line = line
        self.reason = reason
        super().__init__(f"{path}, line {line}: {reason}")


class ConfigError(IFlowError):
    """A run configuration is invalid; message names the offending field."""

    def __init__(self, field, reason):
        self.field = field
        super().__init__(f"config field '{field}': {reason}")


class TrainingAbort(IFlowError):
    """Training hit a non-finite loss and stopped."""

    def __init__(self, epoch, batch):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
