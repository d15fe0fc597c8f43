"""Exception hierarchy shared by all itolab modules.

The CLI maps these onto its exit-code contract: configuration, validation
and precondition failures exit with status 2, runtime/simulation failures
with status 1.
"""


class ItoLabError(Exception):
    """Base class for all itolab errors."""


class ValidationError(ItoLabError):
    """A model ingredient violates one of the standing assumptions.

    The message always names the violated clause (e.g. "uniform
    ellipticity") so callers can surface it verbatim.
    """


class PreconditionError(ItoLabError):
    """An operation was called outside its admissible parameter region."""


class ConfigError(ItoLabError):
    """Malformed or unknown configuration input."""


class DataError(ItoLabError):
    """Numerical inputs unusable for the requested computation."""


class UntrainedTableError(ItoLabError):
    """A quantile table was required but has not been trained."""


class DivergenceError(ItoLabError):
    """Too many trajectories blew up for the ensemble to be usable.

    Unbounded excursions are legitimate chain behavior (nothing assumes
    dissipativity), so a few flagged trajectories are only reported; this
    error fires when more than the tolerated fraction diverge.
    """
