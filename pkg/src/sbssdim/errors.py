"""Exception hierarchy shared by all modules.

Every error carries an ``exit_code`` so the command line front-end can map
it to a process status: 2 for invalid input, 1 for numerical failure.
"""


class SbssError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ValidationError(SbssError, ValueError):
    exit_code = 2


class DuplicateLocations(ValidationError):
    pass


class NotRegular(ValidationError):
    pass


class RankOutOfRange(ValidationError):
    pass


class OverlappingKernelSupports(ValidationError):
    pass


class NonConformingKernel(ValidationError):
    pass


class TooLarge(ValidationError):
    pass


class NoDonorBlocks(ValidationError):
    pass


class DegenerateKernel(SbssError):
    pass


class SingularScatter(SbssError):
    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class NoConvergence(SbssError):
    def __init__(self, message, rotation=None):
        super().__init__(message)
        self.rotation = rotation


class QuadratureFailure(SbssError):
    pass


class FactorizationFailure(SbssError):
    pass


class EmptyResample(SbssError):
    pass


class ReplicateFailure(SbssError):
    """A bootstrap replicate failed; ``index`` identifies which one."""

    def __init__(self, index, cause):
        super().__init__(f"bootstrap replicate {index} failed: {cause}")
        self.index = index
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
