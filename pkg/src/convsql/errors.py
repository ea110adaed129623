"""Exception hierarchy shared across the package."""


class ConvSqlError(Exception):
    """Base class for all package errors."""


class SchemaError(ConvSqlError):
    """Invalid schema document or schema-inconsistent reference."""


class LinkingError(ConvSqlError):
    """Graph/layout mismatch or unresolvable SQL identifier."""


class LayoutError(ConvSqlError):
    """Encoder input cannot be assembled within the configured limits."""


class SqlParseError(ConvSqlError):
    """SQL text outside the supported grammar."""


class GrammarError(ConvSqlError):
    """Illegal action sequence or out-of-schema AST reference."""


class DecodeError(ConvSqlError):
    """Decoding failed (runaway derivation or step cap exceeded)."""


class ConfigError(ConvSqlError):
    """Unknown or malformed configuration key."""


class CheckpointError(ConvSqlError):
    """Checkpoint archive missing, corrupt, or failing checksum."""


class DataError(ConvSqlError):
    """Dataset or corpus file malformed."""


class TrainingDiverged(ConvSqlError):
    """Loss became non-finite; last good checkpoint was retained."""
