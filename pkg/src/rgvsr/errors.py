"""Exception hierarchy shared across the package."""


class RgvsrError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(RgvsrError):
    """Invalid configuration value or inconsistent model wiring."""


class ContractError(RgvsrError):
    """A runtime precondition was violated (shapes, finiteness, ranges)."""


class DataError(RgvsrError):
    """Dataset ingestion problem: missing frames, mixed resolutions, bad files."""


class CheckpointError(RgvsrError):
    """Checkpoint file is corrupt, incompatible, or mismatched with the config."""


class TrainingDiverged(RgvsrError):
    """Training loss became non-finite."""
