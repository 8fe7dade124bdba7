"""Statistics and transfer-matrix analysis.

The correlation side is a Pearson r with permutation significance (star
notation at 0.05 / 0.01 / 0.001); the matrix side assembles train-by-test
grids, normalizes them per column max or per row max with an absolute-max
fallback for all-negative rows, and classifies cells against ratio
thresholds.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    AllZeroLine,
    DegenerateVariance,
    DuplicateCell,
    EmptyInput,
    MissingCell,
    UnknownDomain,
)


# --------------------------------------------------------------------------
# correlation


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation, clamped to [-1, 1].

    Needs at least 3 pairs and nonzero variance on both sides.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or x.size != y.size:
        raise ValueError("pearson requires two equal-length 1-D sequences")
    if x.size < 3:
        raise ValueError(f"pearson requires >= 3 pairs, got {x.size}")
    xc = x - x.mean()
    yc = y - y.mean()
    ssx = float(xc @ xc)
    ssy = float(yc @ yc)
    if ssx == 0.0 or ssy == 0.0:
        raise DegenerateVariance("constant input has no defined correlation")
    r = float(xc @ yc) / np.sqrt(ssx * ssy)
    return float(np.clip(r, -1.0, 1.0))


def perm_pvalue(
    xs: Sequence[float],
    ys: Sequence[float],
    n_resamples: int = 10000,
    seed: int = 0,
) -> float:
    """Two-sided permutation p-value for the Pearson correlation.

    p = (1 + #{|r_perm| >= |r_obs|}) / (n_resamples + 1). Each resample
    draws its permutation from a generator seeded by (seed, index), so the
    result does not depend on how resamples are scheduled. Comparisons use
    a 1e-12 slack so float jitter counts ties conservatively (p can only
    grow).
    """
    if n_resamples < 1:
        raise ValueError("n_resamples must be >= 1")
    r_obs = abs(pearson(xs, ys))

    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    xc = x - x.mean()
    yc = y - y.mean()
    denom = float(np.sqrt((xc @ xc) * (yc @ yc)))

    hits = 0
    for i in range(n_resamples):
        rng = np.random.default_rng([seed, i])
        r_perm = abs(float(xc @ yc[rng.permutation(y.size)]) / denom)
        if r_perm >= r_obs - 1e-12:
            hits += 1
    return (1 + hits) / (n_resamples + 1)


def stars_for(p_value: float) -> str:
    if p_value < 0.001:
        return "***"
    if p_value < 0.01:
        return "**"
    if p_value < 0.05:
        return "*"
    return ""


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    p_value: float
    n: int
    stars: str

    def to_dict(self) -> dict:
        return {"r": self.r, "p_value": self.p_value, "n": self.n, "stars": self.stars}


def correlate(
    xs: Sequence[float],
    ys: Sequence[float],
    n_resamples: int = 10000,
    seed: int = 0,
) -> CorrelationResult:
    r = pearson(xs, ys)
    p = perm_pvalue(xs, ys, n_resamples=n_resamples, seed=seed)
    return CorrelationResult(r=r, p_value=p, n=len(xs), stars=stars_for(p))


# --------------------------------------------------------------------------
# transfer matrices


class MatrixKind(str, enum.Enum):
    ACCURACY = "accuracy"
    ROLE_ALIGNMENT = "role_alignment"
    CONNECTION_SIGNIFICANCE = "connection_significance"


class NormalizationMode(str, enum.Enum):
    NONE = "none"
    COLUMN_MAX = "column_max"
    ROW_MAX_AUTO = "row_max_auto"


class CellLabel(str, enum.Enum):
    SUCCESS = "success"
    NEUTRAL = "neutral"
    FAILED = "failed"


@dataclass(frozen=True)
class TransferMatrix:
    """Dense train-by-test grid. Row labels may include pseudo-rows (a
    mixed-training row, say) that have no matching test column.
    """

    train_domains: tuple[str, ...]
    test_domains: tuple[str, ...]
    values: tuple[tuple[float, ...], ...]
    kind: MatrixKind
    normalization: NormalizationMode = NormalizationMode.NONE

    def __post_init__(self) -> None:
        if len(self.values) != len(self.train_domains):
            raise ValueError("row count does not match train domain labels")
        for row in self.values:
            if len(row) != len(self.test_domains):
                raise ValueError("column count does not match test domain labels")

    def row(self, train_domain: str) -> tuple[float, ...]:
        try:
            return self.values[self.train_domains.index(train_domain)]
        except ValueError:
            raise UnknownDomain(f"no train row {train_domain!r}")

    def cell(self, train_domain: str, test_domain: str) -> float:
        row = self.row(train_domain)
        try:
            return row[self.test_domains.index(test_domain)]
        except ValueError:
            raise UnknownDomain(f"no test column {test_domain!r}")

    def to_array(self) -> np.ndarray:
        return np.array(self.values, dtype=float)


def build_transfer_matrix(
    results: Iterable[Mapping],
    kind: MatrixKind,
) -> TransferMatrix:
    """Assemble a dense grid from {train_domain, test_domain, value} records.

    Axis orders follow first appearance. Every (train, test) pair must
    occur exactly once; every test domain must also name a train row
    (extra train-only pseudo-rows are fine).
    """
    kind = MatrixKind(kind)
    train_order: list[str] = []
    test_order: list[str] = []
    cells: dict[tuple[str, str], float] = {}
    for rec in results:
        tr, te, val = str(rec["train_domain"]), str(rec["test_domain"]), float(rec["value"])
        if tr not in train_order:
            train_order.append(tr)
        if te not in test_order:
            test_order.append(te)
        if (tr, te) in cells:
            raise DuplicateCell(f"duplicate cell ({tr!r}, {te!r})")
        cells[(tr, te)] = val

    if not cells:
        raise EmptyInput("no transfer results")
    for te in test_order:
        if te not in train_order:
            raise MissingCell(f"test domain {te!r} has no train row")
    grid: list[tuple[float, ...]] = []
    for tr in train_order:
        row: list[float] = []
        for te in test_order:
            if (tr, te) not in cells:
                raise MissingCell(f"missing cell ({tr!r}, {te!r})")
            row.append(cells[(tr, te)])
        grid.append(tuple(row))
    return TransferMatrix(
        train_domains=tuple(train_order),
        test_domains=tuple(test_order),
        values=tuple(grid),
        kind=kind,
    )


def normalize_matrix(m: TransferMatrix, mode: NormalizationMode) -> TransferMatrix:
    """column_max divides each cell by its column's max (pseudo-rows
    participate); row_max_auto divides each row by its max, except rows
    that are entirely negative, which divide by the row's absolute max so
    sign structure survives.
    """
    mode = NormalizationMode(mode)
    grid = m.to_array()
    if mode is NormalizationMode.NONE:
        out = grid
    elif mode is NormalizationMode.COLUMN_MAX:
        divisors = grid.max(axis=0)
        for j, div in enumerate(divisors):
            if div == 0.0:
                raise AllZeroLine(f"column {m.test_domains[j]!r} has zero maximum")
        out = grid / divisors
    else:
        out = np.empty_like(grid)
        for i, row in enumerate(grid):
            div = float(np.abs(row).max()) if np.all(row < 0) else float(row.max())
            if div == 0.0:
                raise AllZeroLine(f"row {m.train_domains[i]!r} has zero maximum")
            out[i] = row / div
    return TransferMatrix(
        train_domains=m.train_domains,
        test_domains=m.test_domains,
        values=tuple(tuple(float(v) for v in row) for row in out),
        kind=m.kind,
        normalization=mode,
    )


def classify_cell(normalized_value: float, hi: float = 0.95, lo: float = 0.70) -> CellLabel:
    """Ratio thresholds: >= hi succeeds, < lo fails, the band between is
    neutral."""
    if not (0.0 < lo < hi <= 1.0):
        raise ValueError(f"thresholds must satisfy 0 < lo < hi <= 1, got lo={lo}, hi={hi}")
    if normalized_value >= hi:
        return CellLabel.SUCCESS
    if normalized_value < lo:
        return CellLabel.FAILED
    return CellLabel.NEUTRAL


def classify_matrix(
    m: TransferMatrix, hi: float = 0.95, lo: float = 0.70
) -> tuple[tuple[CellLabel, ...], ...]:
    return tuple(
        tuple(classify_cell(v, hi, lo) for v in row) for row in m.values
    )


def ood_row_mean(m: TransferMatrix, train_domain: str) -> float:
    """Mean of a train row over its out-of-domain cells (diagonal cell
    excluded). The domain must appear on both axes, which keeps pseudo-rows
    out by construction.
    """
    if train_domain not in m.train_domains or train_domain not in m.test_domains:
        raise UnknownDomain(f"{train_domain!r} must appear on both axes")
    row = m.row(train_domain)
    cells = [v for te, v in zip(m.test_domains, row) if te != train_domain]
    if not cells:
        raise EmptyInput(f"row {train_domain!r} has no out-of-domain cells")
    return sum(cells) / len(cells)


def ablation_delta(acc_base: float, acc_ablated: float) -> float:
    """Signed accuracy change in percentage points, to 2 decimals."""
    for name, v in (("acc_base", acc_base), ("acc_ablated", acc_ablated)):
        if not (0.0 <= v <= 100.0):
            raise ValueError(f"{name} must be a percentage in [0, 100], got {v}")
    return round(acc_ablated - acc_base, 2)


def matrix_csv(m: TransferMatrix) -> str:
    """Raw grid as CSV text, train rows by test columns."""
    lines = ["train_domain," + ",".join(m.test_domains)]
    for tr, row in zip(m.train_domains, m.values):
        lines.append(tr + "," + ",".join(repr(v) for v in row))
    return "\n".join(lines) + "\n"


def matrix_report(
    raw: TransferMatrix,
    normalized: TransferMatrix,
    labels: tuple[tuple[CellLabel, ...], ...],
    hi: float,
    lo: float,
) -> dict:
    return {
        "kind": raw.kind.value,
        "normalization": normalized.normalization.value,
        "train_domains": list(raw.train_domains),
        "test_domains": list(raw.test_domains),
        "raw": [list(row) for row in raw.values],
        "normalized": [list(row) for row in normalized.values],
        "labels": [[lab.value for lab in row] for row in labels],
        "hi": hi,
        "lo": lo,
    }


__all__ = [
    "pearson",
    "perm_pvalue",
    "stars_for",
    "CorrelationResult",
    "correlate",
    "MatrixKind",
    "NormalizationMode",
    "CellLabel",
    "TransferMatrix",
    "build_transfer_matrix",
    "normalize_matrix",
    "classify_cell",
    "classify_matrix",
    "ood_row_mean",
    "ablation_delta",
    "matrix_csv",
    "matrix_report",
]
