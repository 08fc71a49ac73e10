"""Package-level exception types, mapped to CLI exit codes."""


class DataError(ValueError):
    """Malformed or inconsistent input data (corpus, dictionary, embeddings,
    checkpoints). CLI exit code 2."""


class VerificationError(RuntimeError):
    """A verification step (e.g. gradient check) failed. CLI exit code 3."""
