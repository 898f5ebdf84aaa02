"""Observed-data structures for a cluster randomized trial nested in a cohort.

Each cluster j contributes cluster-level covariates, a matrix of
individual-level covariates, a trial-participation flag s, and (for
randomized clusters) an arm label and individual outcomes. A validated
:class:`StudyDataset` is the unit every estimator operates on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateId,
    EmptyArm,
    EmptyCluster,
    IncompleteTrialCluster,
    MissingOutcome,
)

__all__ = [
    "ClusterRecord",
    "StudyDataset",
    "DatasetSummary",
    "cluster_average_outcome",
    "validate_dataset",
    "dataset_summary",
    "trial_fraction_percent",
]


@dataclass(frozen=True)
class ClusterRecord:
    """One cluster: covariates, participation flag, and trial data if randomized.

    ``x`` has shape (q,), ``w`` has shape (n_j, p). ``arm`` and ``y`` must be
    present when ``s == 1``; for non-randomized clusters they may be supplied
    (the estimators ignore them, see :func:`validate_dataset`).
    """

    cluster_id: str
    s: int
    x: np.ndarray
    w: np.ndarray
    arm: str | None = None
    y: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(-1))
        w = np.asarray(self.w, dtype=float)
        if w.ndim == 1:
            w = w.reshape(-1, 1)
        object.__setattr__(self, "w", w)
        if self.y is not None:
            object.__setattr__(self, "y", np.asarray(self.y, dtype=float).reshape(-1))

    @property
    def n(self) -> int:
        """Number of individuals in the cluster."""
        return self.w.shape[0]


def cluster_average_outcome(record: ClusterRecord) -> float:
    """Mean of the individual outcomes in the cluster.

    Raises MissingOutcome when the cluster carries no outcome vector.
    """
    if record.y is None:
        raise MissingOutcome(f"cluster '{record.cluster_id}' has no outcomes")
    return float(np.mean(record.y))


@dataclass(frozen=True)
class StudyDataset:
    """Validated, immutable collection of clusters plus the arm catalog.

    Construct through :func:`validate_dataset`; the cluster order given at
    validation is preserved and is the alignment order for all per-cluster
    arrays downstream.
    """

    clusters: tuple[ClusterRecord, ...]
    arms: tuple[str, ...]
    q: int
    p: int

    @property
    def m(self) -> int:
        return len(self.clusters)

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.array([c.n for c in self.clusters], dtype=int)

    @cached_property
    def s(self) -> np.ndarray:
        return np.array([c.s for c in self.clusters], dtype=int)

    @cached_property
    def sorted_order(self) -> np.ndarray:
        """Cluster indices in ascending cluster_id order (canonical sum order)."""
        ids = [c.cluster_id for c in self.clusters]
        return np.array(sorted(range(len(ids)), key=ids.__getitem__), dtype=int)

    def arm_mask(self, arm: str) -> np.ndarray:
        """Boolean mask of randomized clusters assigned to ``arm``."""
        return np.array(
            [c.s == 1 and c.arm == arm for c in self.clusters], dtype=bool
        )

    @cached_property
    def ybar(self) -> np.ndarray:
        """Cluster-average outcomes, NaN for clusters without outcomes."""
        out = np.full(self.m, np.nan)
        for j, c in enumerate(self.clusters):
            if c.s == 1:
                out[j] = cluster_average_outcome(c)
        return out


def validate_dataset(clusters: list[ClusterRecord]) -> StudyDataset:
    """Check every type invariant and assemble a StudyDataset.

    The arm catalog is built from s=1 clusters in first-appearance order.
    Raises DimensionMismatch, IncompleteTrialCluster, DuplicateId, EmptyCluster.
    """
    if len(clusters) < 2:
        raise DimensionMismatch(f"need at least 2 clusters, got {len(clusters)}")
    seen: set[str] = set()
    q = clusters[0].x.shape[0]
    p = clusters[0].w.shape[1]
    arms: list[str] = []
    for c in clusters:
        if c.cluster_id in seen:
            raise DuplicateId(f"duplicate cluster_id '{c.cluster_id}'")
        seen.add(c.cluster_id)
        if c.n < 1:
            raise EmptyCluster(f"cluster '{c.cluster_id}' has no individuals")
        if c.x.shape[0] != q:
            raise DimensionMismatch(
                f"cluster '{c.cluster_id}' has {c.x.shape[0]} cluster covariates, expected {q}"
            )
        if c.w.shape[1] != p:
            raise DimensionMismatch(
                f"cluster '{c.cluster_id}' has {c.w.shape[1]} individual covariates, expected {p}"
            )
        if not np.all(np.isfinite(c.x)) or not np.all(np.isfinite(c.w)):
            raise DimensionMismatch(
                f"cluster '{c.cluster_id}' has non-finite covariate entries"
            )
        if c.s not in (0, 1):
            raise IncompleteTrialCluster(
                f"cluster '{c.cluster_id}' has s={c.s}, expected 0 or 1"
            )
        if c.s == 1:
            if c.arm is None or c.y is None:
                raise IncompleteTrialCluster(
                    f"randomized cluster '{c.cluster_id}' lacks arm or outcomes"
                )
            if c.arm not in arms:
                arms.append(c.arm)
        if c.y is not None:
            if c.y.shape[0] != c.n:
                raise DimensionMismatch(
                    f"cluster '{c.cluster_id}' has {c.y.shape[0]} outcomes for {c.n} individuals"
                )
            if not np.all(np.isfinite(c.y)):
                raise DimensionMismatch(
                    f"cluster '{c.cluster_id}' has non-finite outcomes"
                )
    if not arms:
        raise EmptyArm("dataset has no randomized clusters")
    return StudyDataset(clusters=tuple(clusters), arms=tuple(arms), q=q, p=p)


@dataclass(frozen=True)
class DatasetSummary:
    m: int
    trial_clusters: int
    total_individuals: int
    trial_individuals: int
    per_arm_clusters: dict[str, int] = field(default_factory=dict)

    @property
    def trial_fraction(self) -> float:
        return self.trial_clusters / self.m


def trial_fraction_percent(trial_clusters: int, m: int) -> float:
    """Trial share of clusters, in percent rounded to one decimal."""
    return round(100.0 * trial_clusters / m, 1)


def dataset_summary(ds: StudyDataset) -> DatasetSummary:
    """Counts of clusters and individuals, overall and among trial participants."""
    s1 = ds.s == 1
    per_arm = {a: int(ds.arm_mask(a).sum()) for a in ds.arms}
    return DatasetSummary(
        m=ds.m,
        trial_clusters=int(s1.sum()),
        total_individuals=int(ds.sizes.sum()),
        trial_individuals=int(ds.sizes[s1].sum()),
        per_arm_clusters=per_arm,
    )
