"""Exception hierarchy shared across the package.

Every error carries a stable ``code`` (the class name) so the CLI can emit a
single-line machine-parseable failure, e.g. ``error: EmptyArm: arm 'a3' has no
randomized clusters``.
"""


class CrtpopError(Exception):
    """Base class for all package errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


# --- data model ---------------------------------------------------------


class MissingOutcome(CrtpopError):
    """Cluster-level outcome requested but the cluster carries no outcomes."""


class DimensionMismatch(CrtpopError):
    """Covariate or feature dimensions disagree."""


class IncompleteTrialCluster(CrtpopError):
    """A randomized cluster (s=1) is missing its arm or its outcomes."""


class DuplicateId(CrtpopError):
    """Two clusters share a cluster_id."""


class EmptyArm(CrtpopError):
    """A referenced arm has no randomized clusters in the data."""


class EmptyCluster(CrtpopError):
    """A cluster has no individual rows."""


# --- features -----------------------------------------------------------


class EmptySpec(CrtpopError):
    """A feature spec enables no feature source."""


# --- working models -----------------------------------------------------


class Separation(CrtpopError):
    """The logistic log-likelihood is unbounded (or labels are degenerate)."""


class SingularSystem(CrtpopError):
    """Collinear features make the fit underdetermined."""


class NotStandardized(CrtpopError):
    """Elastic-net fitting requires standardized features."""


class NonConvergence(CrtpopError):
    """An iterative fit failed to converge within its iteration budget."""


class ProbabilitiesDontSumToOne(CrtpopError):
    """Known treatment probabilities do not sum to 1 over the arms."""


# --- estimators ---------------------------------------------------------


class NoTreatedClusters(CrtpopError):
    """No randomized cluster received the requested arm."""


class NoNonRandomizedClusters(CrtpopError):
    """The dataset has no s=0 clusters, so the transport target is empty."""


class MismatchedEstimates(CrtpopError):
    """Two point estimates cannot be contrasted."""


class TooManyFolds(CrtpopError):
    """Cross-fitting requested more folds than clusters can support."""


# --- inference ----------------------------------------------------------


class NoInfluenceValues(CrtpopError):
    """The estimate carries no influence values."""


class TooManyFailedReplicates(CrtpopError):
    """More than the allowed share of bootstrap replicates failed."""


class FewerThanTwoClusters(CrtpopError):
    """Cluster-robust variance needs at least two clusters."""


# --- CLI / IO -----------------------------------------------------------


class OrphanIndividual(CrtpopError):
    """An individuals-file row references an unknown cluster."""


class UnparseableCell(CrtpopError):
    """A CSV cell could not be parsed; message names file, line and column."""


class ConfigError(CrtpopError):
    """The run configuration is invalid."""
