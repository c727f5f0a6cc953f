"""Exception hierarchy shared across the package."""


class EnergyTLError(Exception):
    """Base class for all package errors."""


class DimensionError(EnergyTLError):
    """Tensor shapes are incompatible for the requested operation."""


class NumericError(EnergyTLError):
    """An operation produced or received non-finite values."""


class ContractError(EnergyTLError):
    """An operation was called outside its contract (bad argument, state)."""


class ConfigError(EnergyTLError):
    """Invalid configuration: model, plan, split, truncation or CLI config."""


class DataError(EnergyTLError):
    """Dataset content violates a requirement (all-missing series, zero std, ...)."""


class FormatError(DataError):
    """Raw input file cannot be parsed into a dataset."""


class PlanError(ConfigError):
    """An experiment plan violates a strategy invariant."""


class TrainingError(EnergyTLError):
    """Training failed at runtime (divergence, empty corpus)."""
