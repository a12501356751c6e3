"""Survival dataset ingestion, validation and slicing."""

from __future__ import annotations

import io
import os
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .exceptions import DataValidationError

ModelId = tuple[int, ...]


class TiedTimesWarning(UserWarning):
    """Observed times contain ties; rank order was perturbed to break them."""


@dataclass(frozen=True)
class SurvivalDataset:
    """Right-censored survival data sorted by observed time.

    Parameters
    ----------
    times : (n,) array
        Observed times, ascending.
    status : (n,) array of {0, 1}
        1 for an observed event, 0 for a censored record.
    design : (n, p) array
        Covariate matrix, rows co-sorted with ``times``.
    column_names : tuple of str
        One label per design column.
    fixed_columns : tuple of int
        Zero-based indices of covariates forced into every model.
    order : (n,) int array
        ``order[i]`` is the input row that ended up at sorted position ``i``.
    has_ties : bool
        Whether tied observed times were found during sorting.
    center, scale : (p,) arrays or None
        Present when non-fixed columns were standardized.
    """

    times: np.ndarray
    status: np.ndarray
    design: np.ndarray
    column_names: tuple[str, ...]
    fixed_columns: tuple[int, ...] = ()
    order: np.ndarray | None = None
    has_ties: bool = False
    center: np.ndarray | None = None
    scale: np.ndarray | None = None

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        status = np.asarray(self.status)
        design = np.array(self.design, dtype=float)
        if design.ndim == 1:
            design = design[:, None]
        n = times.shape[0]
        if times.ndim != 1 or status.shape != (n,) or design.shape[0] != n:
            raise DataValidationError(
                f"length mismatch: {times.shape[0]} times, {status.shape[0]} "
                f"status values, {design.shape[0]} design rows"
            )
        if n == 0:
            raise DataValidationError("dataset has no rows")
        if not np.all(np.isfinite(times)) or np.any(times < 0):
            bad = int(np.flatnonzero(~np.isfinite(times) | (times < 0))[0])
            raise DataValidationError(f"row {bad}: time must be a nonnegative number")
        if not np.all((status == 0) | (status == 1)):
            bad = int(np.flatnonzero((status != 0) & (status != 1))[0])
            raise DataValidationError(f"row {bad}: status {status[bad]!r} not in {{0, 1}}")
        if status.sum() == 0:
            raise DataValidationError("no events: every record is censored")
        if not np.all(np.isfinite(design)):
            r, c = np.argwhere(~np.isfinite(design))[0]
            raise DataValidationError(f"row {r}, column {c}: non-finite covariate")
        names = tuple(self.column_names) if self.column_names else tuple(
            f"x{j}" for j in range(design.shape[1]))
        if len(names) != design.shape[1]:
            raise DataValidationError(
                f"{len(names)} column names for {design.shape[1]} columns")
        fixed = tuple(sorted(set(int(j) for j in self.fixed_columns)))
        if fixed and (fixed[0] < 0 or fixed[-1] >= design.shape[1]):
            raise DataValidationError(f"fixed columns {fixed} out of range")
        if np.any(np.diff(times) < 0):
            raise DataValidationError("times must be sorted; use sort_by_time")
        if self.order is None:
            object.__setattr__(self, "order", np.arange(n))
        for arr in (times, design):
            arr.setflags(write=False)
        status = status.astype(np.float64)
        status.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "column_names", names)
        object.__setattr__(self, "fixed_columns", fixed)

    @property
    def n(self) -> int:
        return self.times.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]

    @property
    def nonfixed_columns(self) -> np.ndarray:
        mask = np.ones(self.p, dtype=bool)
        mask[list(self.fixed_columns)] = False
        return np.flatnonzero(mask)

    @property
    def censoring_fraction(self) -> float:
        return 1.0 - float(self.status.mean())

    def subset(self, rows: Sequence[int]) -> "SurvivalDataset":
        """Rows ``rows`` (sorted positions) as a new, still sorted dataset."""
        rows = np.sort(np.asarray(rows, dtype=int))
        return SurvivalDataset(
            times=self.times[rows], status=self.status[rows],
            design=self.design[rows], column_names=self.column_names,
            fixed_columns=self.fixed_columns, order=self.order[rows],
            has_ties=self.has_ties, center=self.center, scale=self.scale,
        )


def model_id(indices: Iterable[int], fixed: Iterable[int] = ()) -> ModelId:
    """Canonical model key: sorted, deduplicated indices including ``fixed``."""
    return tuple(sorted(set(int(i) for i in indices) | set(int(i) for i in fixed)))


def sort_by_time(times, status, design, column_names=None, fixed_columns=(),
                 order=None) -> SurvivalDataset:
    """Sort records by observed time and build a validated dataset.

    Ties are broken by a stable sort with events placed before censored
    records at equal times; a :class:`TiedTimesWarning` is emitted.
    """
    times = np.asarray(times, dtype=float)
    status = np.asarray(status)
    design = np.asarray(design, dtype=float)
    if design.ndim == 1:
        design = design[:, None]
    if times.shape[0] != status.shape[0] or times.shape[0] != design.shape[0]:
        raise DataValidationError("times, status and design differ in length")
    # lexsort keys: last is primary
    perm = np.lexsort((-np.asarray(status, dtype=float), times))
    sorted_times = times[perm]
    has_ties = bool(np.any(np.diff(sorted_times) == 0))
    if has_ties:
        warnings.warn(
            "tied observed times; ties broken by rank order (events first)",
            TiedTimesWarning, stacklevel=2)
    base = np.arange(times.shape[0]) if order is None else np.asarray(order)
    return SurvivalDataset(
        times=sorted_times, status=status[perm], design=design[perm],
        column_names=column_names, fixed_columns=fixed_columns,
        order=base[perm], has_ties=has_ties,
    )


def resort(dataset: SurvivalDataset) -> SurvivalDataset:
    """``sort_by_time`` applied to an existing dataset (idempotent)."""
    return sort_by_time(dataset.times, dataset.status, dataset.design,
                        dataset.column_names, dataset.fixed_columns,
                        order=dataset.order)


def submatrix(dataset: SurvivalDataset, model: Sequence[int]) -> np.ndarray:
    """Columns of the design matrix in model-index order."""
    idx = np.asarray(model, dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= dataset.p):
        raise IndexError(f"model indices {tuple(model)} out of range for p={dataset.p}")
    return dataset.design[:, idx]


def standardize(dataset: SurvivalDataset) -> SurvivalDataset:
    """Center and scale non-fixed columns to unit variance.

    Zero-variance columns are centered but left unscaled. The returned
    dataset carries ``center`` and ``scale`` so coefficients can be mapped
    back via ``beta_original = beta / scale``.
    """
    design = dataset.design.copy()
    center = np.zeros(dataset.p)
    scale = np.ones(dataset.p)
    cols = dataset.nonfixed_columns
    center[cols] = design[:, cols].mean(axis=0)
    sd = design[:, cols].std(axis=0)
    scale[cols] = np.where(sd > 0, sd, 1.0)
    design = (design - center) / scale
    return SurvivalDataset(
        times=dataset.times, status=dataset.status, design=design,
        column_names=dataset.column_names, fixed_columns=dataset.fixed_columns,
        order=dataset.order, has_ties=dataset.has_ties, center=center, scale=scale,
    )


def _reference_code(values: pd.Series, name: str) -> tuple[np.ndarray, list[str]]:
    levels = sorted(values.astype(str).unique())
    if len(levels) < 2:
        raise DataValidationError(f"categorical column {name!r} has a single level")
    as_str = values.astype(str).to_numpy()
    cols = [(as_str == lev).astype(float) for lev in levels[1:]]
    return np.column_stack(cols), [f"{name} {lev}" for lev in levels[1:]]


def ingest_dataset(source, time_col: str = "time", status_col: str = "status",
                   fixed_cols: Sequence[str] = (), categorical_cols: Sequence[str] = (),
                   sep: str | None = None, scale: bool = False) -> SurvivalDataset:
    """Read a CSV/TSV table into a sorted, validated :class:`SurvivalDataset`.

    Parameters
    ----------
    source : path, text stream or str of table contents
        Header row required. Tab-separated when ``sep`` is None and the
        header contains a tab or the path ends in ``.tsv``.
    time_col, status_col : str
        Names of the observed-time and event-indicator columns.
    fixed_cols : sequence of str
        Covariates included in every model. Non-numeric fixed columns, and
        those listed in ``categorical_cols``, are expanded to indicator
        columns with the first (sorted) level as reference.
    scale : bool
        Standardize non-fixed columns (see :func:`standardize`).
    """
    if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
        is_tsv = str(source).endswith(".tsv")
    elif isinstance(source, str):
        text, is_tsv = source, False
    else:
        text, is_tsv = source.read(), False
    header = text.split("\n", 1)[0]
    if sep is None:
        sep = "\t" if (is_tsv or "\t" in header) else ","
    frame = pd.read_csv(io.StringIO(text), sep=sep, comment=None, keep_default_na=True)

    for col in (time_col, status_col):
        if col not in frame.columns:
            raise DataValidationError(f"missing column {col!r}")
    missing = [c for c in fixed_cols if c not in frame.columns]
    if missing:
        raise DataValidationError(f"fixed columns not found: {missing}")
    covariates = [c for c in frame.columns if c not in (time_col, status_col)]
    if not covariates:
        raise DataValidationError("no covariate columns")

    na = frame.isna().to_numpy()
    if na.any():
        r, c = np.argwhere(na)[0]
        raise DataValidationError(
            f"row {r + 1}, column {frame.columns[c]!r}: missing value "
            "(missing data is not supported)")

    times = pd.to_numeric(frame[time_col], errors="coerce")
    if times.isna().any():
        r = int(np.flatnonzero(times.isna().to_numpy())[0])
        raise DataValidationError(f"row {r + 1}: non-numeric time {frame[time_col].iloc[r]!r}")
    status = pd.to_numeric(frame[status_col], errors="coerce")
    bad = status.isna() | ~status.isin([0, 1])
    if bad.any():
        r = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataValidationError(
            f"row {r + 1}: status {frame[status_col].iloc[r]!r} not in {{0, 1}}")

    blocks, names, fixed = [], [], []
    for col in covariates:
        values = frame[col]
        numeric = pd.to_numeric(values, errors="coerce")
        categorical = col in categorical_cols or numeric.isna().any()
        if categorical:
            if col not in fixed_cols:
                raise DataValidationError(
                    f"column {col!r} is non-numeric; only fixed covariates may be categorical")
            block, labels = _reference_code(values, col)
        else:
            block, labels = numeric.to_numpy(dtype=float)[:, None], [col]
        start = sum(b.shape[1] for b in blocks)
        if col in fixed_cols:
            fixed.extend(range(start, start + block.shape[1]))
        blocks.append(block)
        names.extend(labels)

    dataset = sort_by_time(times.to_numpy(dtype=float), status.to_numpy(dtype=int),
                           np.hstack(blocks), tuple(names), tuple(fixed))
    return standardize(dataset) if scale else dataset
