"""Exception types shared across the package.

Every error carries a short machine-readable ``code`` that the CLI uses to
emit single-line diagnostics.
"""

from __future__ import annotations


class HierVQError(Exception):
    """Base class for all package errors."""

    code = "E_GENERIC"


class ShapeError(HierVQError, ValueError):
    """Array shapes or dimensions do not line up."""

    code = "E_SHAPE"


class DomainError(HierVQError, ValueError):
    """Values outside the legal domain (NaN/Inf, zero vectors, ...)."""

    code = "E_DOMAIN"


class RangeError(HierVQError, IndexError):
    """An index falls outside its declared range."""

    code = "E_RANGE"


class ArgumentError(HierVQError, ValueError):
    """A scalar argument violates its precondition."""

    code = "E_ARGUMENT"


class FrozenCodebookError(HierVQError, RuntimeError):
    """A training operation was applied to a frozen codebook."""

    code = "E_FROZEN"


class ContractError(HierVQError, RuntimeError):
    """Stage-ordering contract violated (e.g. pixel training on an unfrozen
    semantic codebook)."""

    code = "E_CONTRACT"


class DataError(HierVQError, ValueError):
    """Empty or otherwise unusable input data."""

    code = "E_DATA"


class InitError(HierVQError, ValueError):
    """Codebook initialization cannot proceed (e.g. too few distinct samples)."""

    code = "E_INIT"


class FormatError(HierVQError, ValueError):
    """A file does not look like the expected format (magic/version)."""

    code = "E_FORMAT"


class ParseError(HierVQError, ValueError):
    """A file of the right format is truncated or internally inconsistent."""

    code = "E_PARSE"


class FrameError(HierVQError, ValueError):
    """A token frame is malformed (unbalanced delimiters, wrong counts)."""

    code = "E_FRAME"


class ConfigError(HierVQError, ValueError):
    """Invalid configuration, e.g. overlapping ID ranges."""

    code = "E_CONFIG"


class DegenerateInputError(HierVQError, ValueError):
    """Statistically degenerate input (e.g. zero global variance)."""

    code = "E_DEGENERATE"
