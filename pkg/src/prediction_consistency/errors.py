"""Exception types. CLI exit codes are keyed off these classes."""


class ConfigError(ValueError):
    """Invalid configuration or parameter value."""


class DataError(ValueError):
    """Malformed input data or inconsistent artifacts."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, seed=None, model_index=None):
        self.epoch = epoch
        self.seed = seed
        self.model_index = model_index
        msg = f"training diverged (non-finite loss) at epoch {epoch}"
        if model_index is not None:
            msg += f" for model {model_index}"
        if seed is not None:
            msg += f" (seed {seed})"
        super().__init__(msg)


class SamplingError(RuntimeError):
    """Rejection sampling could not fill a neighborhood."""
