"""Load decision logs, bin covariates into strata and estimate a world model."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    DegenerateCovariate,
    EmptyCellWarning,
    EmptyTable,
    MissingColumn,
    NonBinaryProtected,
)
from .stats import StratifiedCounts
from .world import WorldModel

EMPTY_CELL_REWARD = 0.5


@dataclass(frozen=True)
class Schema:
    covariates: tuple[str, ...]
    protected: str
    outcome: str | None = None
    decision: str | None = None
    # Raw protected value -> group.  Rows with unmapped values are dropped.
    protected_map: dict = field(default_factory=dict)


@dataclass
class Table:
    frame: pd.DataFrame
    schema: Schema
    dropped_missing: int = 0
    dropped_unmapped: int = 0

    def __len__(self) -> int:
        return len(self.frame)


def parse_protected_binding(text: str) -> tuple[str, dict]:
    """Parse ``race=African-American:0,Caucasian:1`` into ("race", {...})."""
    column, sep, rest = text.partition("=")
    if not sep or not column:
        raise ValueError(f"protected binding must look like col=value:0,value:1, got {text!r}")
    mapping = {}
    for item in rest.split(","):
        value, sep, group = item.rpartition(":")
        if not sep or group.strip() not in ("0", "1"):
            raise ValueError(f"bad protected mapping entry {item!r}")
        mapping[value] = int(group)
    if set(mapping.values()) != {0, 1}:
        raise ValueError("protected mapping must assign both groups 0 and 1")
    return column, mapping


def _to_binary(series: pd.Series, column: str) -> pd.Series:
    values = pd.to_numeric(series, errors="coerce")
    if values.isna().any() or not values.isin([0, 1]).all():
        raise NonBinaryProtected(f"column {column!r} is not binary 0/1; pass a mapping")
    return values.astype(np.int64)


def load_table(path, schema: Schema) -> Table:
    """Read a UTF-8 CSV with a header row and keep the declared columns.

    Rows with a missing declared field are dropped and counted.  With a
    ``protected_map`` the protected column is mapped to 0/1 and rows with
    any other value are dropped; without one it must already be 0/1.
    """
    frame = pd.read_csv(path, encoding="utf-8", dtype=str, keep_default_na=False)
    declared = [*schema.covariates, schema.protected]
    declared += [c for c in (schema.outcome, schema.decision) if c is not None]
    missing = [c for c in declared if c not in frame.columns]
    if missing:
        raise MissingColumn(f"CSV is missing declared columns: {missing}")
    frame = frame[declared].apply(lambda s: s.str.strip())
    blank = (frame == "").any(axis=1)
    dropped_missing = int(blank.sum())
    frame = frame.loc[~blank].copy()

    dropped_unmapped = 0
    if schema.protected_map:
        mapped = frame[schema.protected].map({str(k): v for k, v in schema.protected_map.items()})
        dropped_unmapped = int(mapped.isna().sum())
        frame = frame.loc[mapped.notna()].copy()
        frame[schema.protected] = mapped.loc[mapped.notna()].astype(np.int64)
    else:
        frame[schema.protected] = _to_binary(frame[schema.protected], schema.protected)

    for col in (schema.outcome, schema.decision):
        if col is None:
            continue
        values = pd.to_numeric(frame[col], errors="coerce")
        if values.isna().any():
            raise ValueError(f"column {col!r} has non-numeric values")
        if col == schema.decision and not values.isin([0, 1]).all():
            raise ValueError(f"decision column {col!r} must be 0/1")
        if col == schema.outcome and ((values < 0) | (values > 1)).any():
            raise ValueError(f"outcome column {col!r} must lie in [0, 1]")
        frame[col] = values
    for col in schema.covariates:
        numeric = pd.to_numeric(frame[col], errors="coerce")
        if len(frame) and numeric.notna().all():
            frame[col] = numeric
    if frame.empty:
        raise EmptyTable("no usable rows after dropping missing or unmapped values")
    return Table(frame.reset_index(drop=True), schema, dropped_missing, dropped_unmapped)


def quantile_cuts(values: np.ndarray, bins: int) -> np.ndarray:
    """Inner cut points for ``bins`` nearest-rank quantile bins.

    Cut j is the sorted value at 0-based index ``floor(j * n / bins)``, the
    first value of bin j.  Duplicate cuts and a cut at the minimum are
    dropped, which merges bins on tied data.  A covariate with at most
    ``bins`` distinct values is cut between every pair of values instead.
    """
    ordered = np.sort(np.asarray(values, dtype=float))
    distinct = np.unique(ordered)
    if distinct.size <= bins:
        # Few enough values to give each its own bin.
        return distinct[1:]
    n = ordered.size
    cuts = [ordered[(j * n) // bins] for j in range(1, bins)]
    return np.unique([c for c in cuts if c > ordered[0]])


def _bin_numeric(values: np.ndarray, bins: int, name: str) -> tuple[np.ndarray, list[str]]:
    cuts = quantile_cuts(values, bins)
    if cuts.size + 1 < bins:
        warnings.warn(
            f"covariate {name!r} supports only {cuts.size + 1} of {bins} requested bins; collapsing",
            DegenerateCovariate,
            stacklevel=3,
        )
    # Left-closed, right-open bins; the last bin also takes the maximum.
    codes = np.searchsorted(cuts, values, side="right")
    edges = [-np.inf, *cuts.tolist(), np.inf]
    labels = [f"[{edges[i]:g}, {edges[i + 1]:g})" for i in range(len(edges) - 1)]
    labels[-1] = labels[-1][:-1] + "]"
    return codes, labels


@dataclass
class Stratification:
    assignment: np.ndarray
    cells: list[tuple]  # stratum index -> tuple of per-covariate bin labels
    k: int

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "strata": [
                {"x": x, "cell": list(cell)} for x, cell in enumerate(self.cells)
            ],
        }


def quantile_stratify(table: Table | pd.DataFrame, covariates, bins_per_covariate) -> Stratification:
    """Assign each row a stratum index 0..k-1 from the binned covariates.

    Numeric covariates are cut at empirical quantiles; other covariates keep
    their categories.  Strata are the occupied cells of the cross product,
    numbered in lexicographic order of their bin codes.
    """
    frame = table.frame if isinstance(table, Table) else table
    covariates = list(covariates)
    if isinstance(bins_per_covariate, int):
        bins_per_covariate = [bins_per_covariate] * len(covariates)
    bins_per_covariate = list(bins_per_covariate)
    if len(bins_per_covariate) != len(covariates):
        raise ValueError("need one bin count per covariate")
    if any(b < 1 for b in bins_per_covariate):
        raise ValueError("bin counts must be >= 1")
    if len(frame) == 0:
        raise EmptyTable("cannot stratify an empty table")
    codes, labels = [], []
    for col, bins in zip(covariates, bins_per_covariate):
        values = frame[col]
        if pd.api.types.is_numeric_dtype(values):
            c, lab = _bin_numeric(values.to_numpy(dtype=float), bins, col)
        else:
            cats = sorted(values.astype(str).unique())
            c = np.searchsorted(cats, values.astype(str).to_numpy())
            lab = cats
        codes.append(c)
        labels.append(lab)
    if not covariates:
        return Stratification(np.zeros(len(frame), dtype=np.int64), [()], 1)
    stacked = np.column_stack(codes)
    occupied, assignment = np.unique(stacked, axis=0, return_inverse=True)
    cells = [tuple(labels[i][code] for i, code in enumerate(row)) for row in occupied]
    return Stratification(assignment.ravel().astype(np.int64), cells, len(cells))


@dataclass
class Estimate:
    world: WorldModel
    strata_kept: list[int]
    empty_cells: list[tuple[int, int]]
    minimized: bool


def estimate_world(
    table: Table | pd.DataFrame,
    strata: Stratification | np.ndarray,
    protected: str,
    outcome: str,
    rho: float,
    *,
    minimize: bool = False,
    drop_empty_cells: bool = False,
) -> Estimate:
    """Plug-in estimate of pi and gamma per (stratum, group) cell.

    Cells with no rows get reward 0.5 and a warning, or with
    ``drop_empty_cells`` their whole stratum is removed.  With ``minimize``
    the rewards are stored as 1 - E[Y | x, p] so that maximizing welfare
    minimizes the outcome.
    """
    frame = table.frame if isinstance(table, Table) else table
    assignment = strata.assignment if isinstance(strata, Stratification) else np.asarray(strata)
    k = strata.k if isinstance(strata, Stratification) else int(assignment.max()) + 1
    if len(frame) == 0:
        raise EmptyTable("cannot estimate a world from an empty table")
    p = frame[protected].to_numpy(dtype=np.int64)
    y = frame[outcome].to_numpy(dtype=float)
    cell = 2 * assignment + p
    counts = np.bincount(cell, minlength=2 * k).reshape(k, 2).astype(float)
    sums = np.bincount(cell, weights=y, minlength=2 * k).reshape(k, 2)
    empty = counts == 0
    keep = np.arange(k)
    if drop_empty_cells:
        keep = np.flatnonzero(~empty.any(axis=1))
        if keep.size == 0:
            raise EmptyTable("every stratum has an empty cell")
        counts, sums, empty = counts[keep], sums[keep], empty[keep]
    gamma = np.where(empty, EMPTY_CELL_REWARD, sums / np.where(empty, 1.0, counts))
    empty_cells = [(int(x), int(q)) for x, q in np.argwhere(empty)]
    if empty_cells:
        warnings.warn(
            f"{len(empty_cells)} empty (x, p) cells {empty_cells}; reward set to {EMPTY_CELL_REWARD}",
            EmptyCellWarning,
            stacklevel=2,
        )
    if minimize:
        gamma = 1.0 - gamma
    pi = counts / counts.sum()
    world = WorldModel(k=int(keep.size), pi=pi, gamma=gamma, rho=rho)
    return Estimate(world, keep.tolist(), empty_cells, minimize)


def decision_counts(table: Table | pd.DataFrame, strata: Stratification, protected: str, decision: str) -> StratifiedCounts:
    frame = table.frame if isinstance(table, Table) else table
    return StratifiedCounts.from_arrays(
        strata.assignment,
        frame[protected].to_numpy(dtype=np.int64),
        frame[decision].to_numpy(dtype=np.int64),
        strata.k,
    )

