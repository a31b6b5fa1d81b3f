"""Exception hierarchy shared across the package.

Every error raised on purpose derives from :class:`TSGPError`. The CLI maps
:class:`DataError` to exit status 2 and :class:`ConfigError` to exit status 3.
"""


class TSGPError(Exception):
    pass


class DataError(TSGPError):
    """Problem with an input file or dataset."""


class RaggedRows(DataError):
    pass


class NonNumericField(DataError):
    pass


class EmptyFile(DataError):
    pass


class SingleClass(DataError):
    pass


class TooFewInstances(DataError):
    pass


class LengthMismatch(DataError):
    pass


class MalformedModel(DataError):
    pass


class DegenerateInput(DataError):
    pass


class ConfigError(TSGPError):
    pass


class OperatorError(TSGPError):
    """A pipeline primitive was called outside its domain."""


class OutOfRange(OperatorError):
    pass


class TooShort(OperatorError):
    pass


class PatchTooSmall(OperatorError):
    pass


class PatchTooShort(OperatorError):
    pass


class KernelTooShort(OperatorError):
    pass


class KernelLongerThanPatch(OperatorError):
    pass


class EmptyMap(OperatorError):
    pass


class InfeasibleDepth(TSGPError):
    pass
