class ExtractionError(Exception):
    """User-facing failure: bad arguments, unknown model, broken inputs."""
