"""Per-patch error trajectories and convergence classification.

Each patch's error is recorded at ``J + 1`` checkpoints, a least-squares
line is fitted over the checkpoint index ``j = 0..J``, and the fitted
change ``delta = slope * J`` together with the final error decides one of
four categories.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .exceptions import InvalidInputError
from .metrics import PatchMetricKind

__all__ = [
    "PatchCategory",
    "AnalysisConfig",
    "ErrorSeries",
    "CategoryHistogram",
    "fit_linear",
    "fit_linear_batch",
    "mean_final_error",
    "classify",
    "build_series",
    "category_histogram",
    "trajectory_records",
    "matrix_from_records",
    "histogram_csv",
]


class PatchCategory(str, Enum):
    CONVERGING = "converging"
    EXPLODING = "exploding"
    CONVERGED = "converged"
    CHALLENGING = "challenging"


@dataclass(frozen=True)
class AnalysisConfig:
    checkpoint_interval: int = 1000
    delta_threshold: float = 0.01
    metric: PatchMetricKind = PatchMetricKind.MAG_L2

    def __post_init__(self):
        if self.delta_threshold <= 0:
            raise InvalidInputError(f"delta_threshold must be positive, got {self.delta_threshold}")
        if self.checkpoint_interval < 1:
            raise InvalidInputError(f"checkpoint_interval must be >= 1, got {self.checkpoint_interval}")


def fit_linear(values):
    """Least-squares line ``a * j + b`` through ``values[j]``; returns ``(a, b)``."""
    y = np.asarray(values, dtype=np.float64)
    if y.ndim != 1 or y.size < 2:
        raise InvalidInputError("need a 1-D sequence of at least two values")
    a, b = fit_linear_batch(y[np.newaxis])
    return float(a[0]), float(b[0])


def fit_linear_batch(matrix):
    """Row-wise :func:`fit_linear` over a ``(P, J+1)`` array; returns slope and intercept arrays."""
    y = np.asarray(matrix, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] < 2:
        raise InvalidInputError("need a (P, J+1) array with J >= 1")
    n = y.shape[1]
    j = np.arange(n, dtype=np.float64)
    jc = j - j.mean()
    y_mean = y.mean(axis=1)
    slope = (y - y_mean[:, None]) @ jc / (jc @ jc)
    intercept = y_mean - slope * j.mean()
    return slope, intercept


def classify(delta: float, final_error: float, e_mean: float, threshold: float = 0.01) -> PatchCategory:
    if threshold <= 0:
        raise InvalidInputError(f"threshold must be positive, got {threshold}")
    if delta < -threshold:
        return PatchCategory.CONVERGING
    if delta > threshold:
        return PatchCategory.EXPLODING
    if final_error <= e_mean:
        return PatchCategory.CONVERGED
    return PatchCategory.CHALLENGING


@dataclass(frozen=True, eq=False)
class ErrorSeries:
    patch_index: int
    values: np.ndarray
    slope: float
    intercept: float
    category: PatchCategory | None = None

    @classmethod
    def fit(cls, patch_index: int, values) -> "ErrorSeries":
        values = np.asarray(values, dtype=np.float64)
        a, b = fit_linear(values)
        return cls(int(patch_index), values, a, b)

    @property
    def J(self) -> int:
        return self.values.size - 1

    @property
    def delta(self) -> float:
        return self.slope * self.J

    @property
    def final(self) -> float:
        return float(self.values[-1])


def mean_final_error(series) -> float:
    series = list(series)
    if not series:
        raise InvalidInputError("need at least one error series")
    lengths = {s.values.size for s in series}
    if len(lengths) != 1:
        raise InvalidInputError(f"series lengths differ: {sorted(lengths)}")
    return float(np.mean([s.final for s in series]))


def build_series(matrix, threshold: float = 0.01):
    """Fit and classify every row of a ``(P, J+1)`` error matrix.

    The mean final error is taken over all rows, so pass one sample's
    patches at a time.
    """
    y = np.asarray(matrix, dtype=np.float64)
    slope, intercept = fit_linear_batch(y)
    raw = [ErrorSeries(p, y[p], float(slope[p]), float(intercept[p])) for p in range(y.shape[0])]
    e_mean = mean_final_error(raw)
    return [replace(s, category=classify(s.delta, s.final, e_mean, threshold)) for s in raw]


@dataclass
class CategoryHistogram:
    counts: dict
    fractions: dict
    mean_final_error: dict
    mean_trajectory: dict = field(repr=False)


def category_histogram(series) -> CategoryHistogram:
    """Category fractions plus per-category mean final error and mean trajectory.

    Categories with no members get ``nan`` statistics and an empty trajectory.
    """
    series = list(series)
    if not series:
        raise InvalidInputError("need at least one error series")
    if any(s.category is None for s in series):
        raise InvalidInputError("series must be classified first (see build_series)")
    total = len(series)
    counts, fractions, finals, trajs = {}, {}, {}, {}
    for cat in PatchCategory:
        members = [s for s in series if s.category is cat]
        counts[cat] = len(members)
        fractions[cat] = len(members) / total
        if members:
            stack = np.stack([s.values for s in members])
            finals[cat] = float(stack[:, -1].mean())
            trajs[cat] = stack.mean(axis=0)
        else:
            finals[cat] = float("nan")
            trajs[cat] = np.zeros(0)
    return CategoryHistogram(counts, fractions, finals, trajs)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def trajectory_records(matrix, steps, sample: int = 0):
    """JSON-lines records ``{step, sample, patch, error}``, one per checkpoint per patch."""
    y = np.asarray(matrix, dtype=np.float64)
    lines = []
    for j, step in enumerate(steps):
        for p in range(y.shape[0]):
            lines.append(json.dumps({"step": int(step), "sample": int(sample), "patch": p, "error": float(y[p, j])}))
    return lines


def matrix_from_records(lines, sample: int = 0):
    """Inverse of :func:`trajectory_records`; returns ``(steps, matrix)``."""
    rows = [json.loads(l) for l in lines if l.strip()]
    rows = [r for r in rows if r.get("sample", 0) == sample]
    if not rows:
        raise InvalidInputError(f"no trajectory records for sample {sample}")
    steps = sorted({r["step"] for r in rows})
    n_patches = max(r["patch"] for r in rows) + 1
    col = {s: j for j, s in enumerate(steps)}
    out = np.full((n_patches, len(steps)), np.nan)
    for r in rows:
        out[r["patch"], col[r["step"]]] = r["error"]
    if np.isnan(out).any():
        raise InvalidInputError("trajectory records are incomplete")
    return np.asarray(steps), out


def histogram_csv(histograms, header_lines=()) -> str:
    """CSV with columns ``sample, category, fraction, mean_final_error``.

    ``histograms`` maps sample id to :class:`CategoryHistogram`.
    ``header_lines`` are emitted first as ``#``-prefixed comments.
    """
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sample", "category", "fraction", "mean_final_error"])
    for sample, hist in histograms.items():
        for cat in PatchCategory:
            mfe = hist.mean_final_error[cat]
            writer.writerow([sample, cat.value, repr(hist.fractions[cat]), "" if np.isnan(mfe) else repr(mfe)])
    return buf.getvalue()
