"""Exception types shared across the package."""


class FedlpError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(FedlpError):
    """Array dimensions do not line up; messages name the offending block/layer."""


class ContractError(FedlpError):
    """A caller violated an API precondition (stale cache, bad weights, ...)."""


class ConfigError(FedlpError):
    """Invalid experiment configuration. Collects every violation in one pass."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class IdxFormatError(FedlpError):
    """IDX file has a bad magic number or malformed header."""


class IdxTruncatedError(FedlpError):
    """IDX file ends before the payload its header promises."""


class IdxCountMismatchError(FedlpError):
    """Image and label files disagree on the sample count."""
