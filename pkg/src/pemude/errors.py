"""Exception types shared across the package."""


class PemUdeError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgument(PemUdeError, ValueError):
    pass


class EmptySeries(PemUdeError, ValueError):
    pass


class MaxStepsExceeded(PemUdeError, RuntimeError):
    pass


class DivergedTrajectory(PemUdeError, RuntimeError):
    """A solve produced non-finite (or runaway) states.

    ``partial`` holds the trajectory up to the last finite sample, flagged as
    failed.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class IntegrationUnstable(PemUdeError, RuntimeError):
    pass


class NoPeak(PemUdeError, ValueError):
    pass
