"""Feature construction for the three working models.

Participation and treatment models consume cluster-level rows (raw cluster
covariates plus optional per-column means of the individual covariates).
The outcome model consumes one row per individual: the cluster block followed
by the individual's own covariates.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data_model import StudyDataset
from .errors import EmptySpec

__all__ = [
    "FeatureSpec",
    "FeatureMatrix",
    "Standardization",
    "cluster_features",
    "individual_features",
    "standardize",
    "destandardize",
]

MEAN = "mean"
NONE = "none"


@dataclass(frozen=True)
class FeatureSpec:
    """Which feature sources enter a working model.

    ``w_aggregates`` lists one aggregation kind per individual-covariate
    column ("mean" or "none"); None means "mean" for every column.
    ``include_individual`` appends the individual's own covariate row and is
    only valid for the outcome model.
    """

    use_x: bool = True
    w_aggregates: tuple[str, ...] | None = None
    include_individual: bool = False
    standardize: bool = False

    def resolved_aggregates(self, p: int) -> tuple[str, ...]:
        aggs = self.w_aggregates if self.w_aggregates is not None else (MEAN,) * p
        if len(aggs) != p:
            raise EmptySpec(
                f"w_aggregates has {len(aggs)} entries for {p} individual covariates"
            )
        for a in aggs:
            if a not in (MEAN, NONE):
                raise EmptySpec(f"unknown aggregation kind '{a}'")
        return tuple(aggs)

    def validate(self, p: int) -> None:
        aggs = self.resolved_aggregates(p)
        if not self.use_x and all(a == NONE for a in aggs) and not self.include_individual:
            raise EmptySpec("feature spec enables no feature source")


@dataclass(frozen=True)
class Standardization:
    """Column means and SDs (sample SD, divisor n-1) frozen at fit time.

    The intercept column is never standardized; constant columns get SD 1.
    """

    mean: np.ndarray
    sd: np.ndarray


@dataclass(frozen=True)
class FeatureMatrix:
    """Rows of features with a leading intercept column of ones."""

    values: np.ndarray
    columns: tuple[str, ...]
    spec: FeatureSpec
    stats: Standardization | None = None
    cluster_index: np.ndarray | None = None
    individual_index: np.ndarray | None = None

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def restrict(self, rows: np.ndarray) -> "FeatureMatrix":
        """Sub-matrix of the given rows (stats and spec carried over)."""
        return FeatureMatrix(
            values=self.values[rows],
            columns=self.columns,
            spec=self.spec,
            stats=self.stats,
            cluster_index=None if self.cluster_index is None else self.cluster_index[rows],
            individual_index=None
            if self.individual_index is None
            else self.individual_index[rows],
        )


def _column_stats(values: np.ndarray) -> Standardization:
    mean = values.mean(axis=0)
    if values.shape[0] > 1:
        sd = values.std(axis=0, ddof=1)
    else:
        sd = np.zeros(values.shape[1])
    sd = np.where(sd == 0.0, 1.0, sd)
    mean[0], sd[0] = 0.0, 1.0  # intercept untouched
    return Standardization(mean=mean, sd=sd)


def standardize(
    matrix: FeatureMatrix, stats: Standardization | None = None
) -> FeatureMatrix:
    """Center/scale every non-intercept column.

    With ``stats=None`` the statistics are computed from the matrix's own
    rows (the fitting sample); pass stored stats to transform prediction rows
    the same way.
    """
    if stats is None:
        stats = _column_stats(matrix.values)
    values = (matrix.values - stats.mean) / stats.sd
    return replace(matrix, values=values, stats=stats)


def destandardize(matrix: FeatureMatrix) -> FeatureMatrix:
    """Invert :func:`standardize` using the stored statistics."""
    if matrix.stats is None:
        return matrix
    values = matrix.values * matrix.stats.sd + matrix.stats.mean
    return replace(matrix, values=values, stats=None)


def _cluster_block(ds: StudyDataset, spec: FeatureSpec) -> tuple[np.ndarray, list[str]]:
    aggs = spec.resolved_aggregates(ds.p)
    cols: list[np.ndarray] = [np.ones((ds.m, 1))]
    names = ["intercept"]
    if spec.use_x:
        cols.append(np.array([c.x for c in ds.clusters]))
        names += [f"x{k + 1}" for k in range(ds.q)]
    for k, kind in enumerate(aggs):
        if kind == MEAN:
            cols.append(
                np.array([c.w[:, k].mean() for c in ds.clusters]).reshape(-1, 1)
            )
            names.append(f"w{k + 1}_mean")
    return np.hstack(cols), names


def cluster_features(ds: StudyDataset, spec: FeatureSpec) -> FeatureMatrix:
    """One row per cluster: [1, X_j, chosen W-column means]."""
    if spec.include_individual:
        raise EmptySpec("cluster features cannot include individual rows")
    spec.validate(ds.p)
    values, names = _cluster_block(ds, spec)
    matrix = FeatureMatrix(
        values=values,
        columns=tuple(names),
        spec=spec,
        cluster_index=np.arange(ds.m),
    )
    if spec.standardize:
        matrix = standardize(matrix)
    return matrix


def individual_features(ds: StudyDataset, spec: FeatureSpec) -> FeatureMatrix:
    """One row per individual: the cluster block plus the individual's W row.

    Rows carry (cluster index, individual index) back-references so
    predictions can be re-averaged per cluster.
    """
    if not spec.include_individual:
        raise EmptySpec("individual features require include_individual=True")
    spec.validate(ds.p)
    cluster_values, names = _cluster_block(ds, spec)
    names += [f"w{k + 1}" for k in range(ds.p)]
    sizes = ds.sizes
    total = int(sizes.sum())
    cluster_index = np.repeat(np.arange(ds.m), sizes)
    individual_index = np.concatenate([np.arange(n) for n in sizes])
    values = np.empty((total, cluster_values.shape[1] + ds.p))
    values[:, : cluster_values.shape[1]] = cluster_values[cluster_index]
    values[:, cluster_values.shape[1] :] = np.vstack([c.w for c in ds.clusters])
    matrix = FeatureMatrix(
        values=values,
        columns=tuple(names),
        spec=spec,
        cluster_index=cluster_index,
        individual_index=individual_index,
    )
    if spec.standardize:
        matrix = standardize(matrix)
    return matrix
