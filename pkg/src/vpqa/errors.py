"""Exception types shared across the toolkit."""


class VpqaError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(VpqaError, ValueError):
    """Invalid prompt geometry or mismatched array dimensions."""


class InputError(VpqaError, ValueError):
    """Input values outside their contract (non-finite logits, out-of-range pixels, ...)."""


class ConfigError(VpqaError, ValueError):
    """Invalid configuration. `problems` lists every failure found, not just the first."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class IngestionError(VpqaError, ValueError):
    """Image or manifest file could not be read."""


class CheckpointError(VpqaError, ValueError):
    """Malformed or inconsistent prompt checkpoint."""


class ConstantInputError(VpqaError, ValueError):
    """Correlation requested on a constant array; the value is undefined, never silently 0."""


class BackendError(VpqaError, RuntimeError):
    """Frozen scorer failed or is unavailable."""


class TrainError(VpqaError, RuntimeError):
    """Training aborted (non-finite loss/gradient or unrecoverable backend failure)."""
