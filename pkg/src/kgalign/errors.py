"""Exception types shared across the package."""


class KgAlignError(Exception):
    """Base for all package errors."""


class ParseError(KgAlignError):
    """A text input file has a malformed line; message carries the line number."""


class IntegrityError(KgAlignError):
    """Dataset references an id that does not exist or ids are not dense."""


class FormatError(KgAlignError):
    """A binary file fails its header or payload-length checks."""


class DataError(KgAlignError):
    """Payload values violate a data invariant (NaN, broken norms)."""


class ShapeError(KgAlignError):
    """Operands have incompatible shapes."""


class ContractError(KgAlignError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class ConstraintError(KgAlignError):
    """A configuration value violates a hard constraint."""


class CheckpointError(KgAlignError):
    """Checkpoint incompatible with the dataset it is applied to."""
