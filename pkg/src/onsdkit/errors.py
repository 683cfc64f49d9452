"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PipelineError):
    """Bad input: malformed bundles, schema mismatches, broken contracts."""


class EmptyResultError(PipelineError):
    """A stage produced nothing to work on (no scorable/measurable frames)."""


class UnscorableFrame(PipelineError):
    """A single frame cannot be scored; callers skip the frame, not the video."""
