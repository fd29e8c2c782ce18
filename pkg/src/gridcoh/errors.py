"""Exception types shared across the package.

Exit-code mapping lives in the CLI: ConfigError -> 2, everything else -> 3.
"""


class ConfigError(ValueError):
    """Bad user input: file sizes, dtypes, rank/block mismatches, invalid dims."""


class InternalError(RuntimeError):
    """An invariant that the algorithm guarantees was observed broken."""


class DataCorruptionError(InternalError):
    """Merged column fragments overlapped, or a payload failed validation."""


class ProtocolError(InternalError):
    """A message that the exchange protocol forbids (e.g. an empty column)."""
