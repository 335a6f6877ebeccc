"""Exception types shared across the pipeline stages."""


class PipelineError(Exception):
    """Base class for every error raised by nodestage."""


class FormatError(PipelineError):
    """A file does not follow its binary or text layout."""


class MetadataError(PipelineError):
    """Sidecar metadata is missing or unreadable."""


class UnsupportedError(PipelineError):
    """A well-formed file uses a feature this package does not handle."""


class ValidationError(PipelineError):
    """Decoded values violate a type invariant."""


class ParameterError(PipelineError, ValueError):
    """An argument or configuration value is out of range."""


class DegenerateHistogramError(PipelineError):
    """Otsu thresholding needs at least two populated bins."""


class SamplingInfeasibleError(PipelineError):
    """No candidate window satisfies the sampling constraints."""


class ShapeError(PipelineError, ValueError):
    """Tensor dimensions do not match the network configuration."""


class BatchSizeError(PipelineError, ValueError):
    """Batch normalization in training mode needs at least two samples."""


class DivergenceError(PipelineError):
    """Training produced a non-finite loss."""


class TrainingError(PipelineError):
    """Classifier training inputs are degenerate."""


class SchemaError(PipelineError):
    """A feature vector does not match the model's feature schema."""


class InputError(PipelineError):
    """Paired inputs do not share the same keys."""
