"""Exception hierarchy shared by all distfno subsystems."""


class DistFnoError(Exception):
    """Base class for every error raised by this package."""


# --- tensor / serialization ---

class DimensionMismatchError(DistFnoError):
    """Operand extents (or labels) are incompatible for the requested contraction."""


class DTypeMismatchError(DistFnoError):
    """Operands do not share a dtype; mixed precision is disallowed."""


class UnknownLabelError(DistFnoError):
    """A dimension label is absent from the tensor or not transformable."""


class SerializationError(DistFnoError):
    """Base class for tensor stream decoding failures."""


class MalformedHeaderError(SerializationError):
    """Stream does not start with a valid tensor header."""


class TruncatedPayloadError(SerializationError):
    """Stream ended before the declared payload was complete."""


class UnknownDTypeError(SerializationError):
    """Header carries a dtype code this reader does not understand."""


# --- partition ---

class InfeasiblePartitionError(DistFnoError):
    """Requested rank count cannot give every rank a non-empty block."""


class ShapeMismatchError(DistFnoError):
    """Partition descriptors disagree with each other or with the data."""


# --- comm ---

class CommError(DistFnoError):
    """Base class for transport and collective failures."""


class CollectiveMismatchError(CommError):
    """Ranks invoked collectives inconsistently (tag, shape, or metadata disagree)."""


class CollectiveTimeoutError(CommError):
    """A rank waited too long for a peer message; a peer likely skipped the collective."""


class ReplicationError(CommError):
    """Weights that must be bit-identical across ranks have diverged."""


# --- training ---

class NonFiniteLossError(DistFnoError):
    """Loss evaluated to NaN or infinity; the training step is aborted."""


# --- taskpool ---

class TaskPoolError(DistFnoError):
    """Base class for task pool failures."""


class UnknownCallableError(TaskPoolError):
    """Callable key is not registered and not importable."""


class StoreKeyExistsError(TaskPoolError):
    """Attempt to overwrite a write-once object store key."""


class TaskFailedError(TaskPoolError):
    """The referenced task raised; carries the worker's error message."""


class FetchTimeoutError(TaskPoolError):
    """The referenced task did not complete within the fetch deadline."""
