"""Knowledge Gap Score, patch selection and the selective distillation loss."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

import numpy as np

from .exceptions import InvalidInputError
from .metrics import PatchMetricKind, grid_errors
from .patching import PatchGrid

__all__ = [
    "SelectionCriterion",
    "KgsReport",
    "selected_count",
    "compute_patch_errors",
    "compute_kgs",
    "top_m_mask",
    "select_patches",
    "dispatch_loss",
    "total_loss",
]


class SelectionCriterion(str, Enum):
    TOP_KGS = "kgs"
    TOP_TEACHER_ERROR = "top-et"
    BOTTOM_TEACHER_ERROR = "bottom-et"
    TOP_STUDENT_ERROR = "top-es"
    BOTTOM_STUDENT_ERROR = "bottom-es"

    @classmethod
    def parse(cls, value) -> "SelectionCriterion":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidInputError(
                f"unknown criterion {value!r}; expected one of {[c.value for c in cls]}"
            ) from None


def _check_k(k_percent):
    if not (0 < k_percent <= 100):
        raise InvalidInputError(
            f"k_percent must be in (0, 100], got {k_percent}: the DISPatch loss divides by P*k%"
        )


def selected_count(n_patches: int, k_percent) -> int:
    """``ceil(P * k / 100)`` evaluated exactly on the decimal value of ``k``."""
    _check_k(k_percent)
    return math.ceil(Fraction(n_patches) * Fraction(str(k_percent)) / 100)


def compute_patch_errors(target: PatchGrid, student: PatchGrid, teacher: PatchGrid,
                         kind=PatchMetricKind.MAG_L2, phase_weight: float = 1.0):
    """Per-patch errors ``(E_student, E_teacher)`` of both models against the target."""
    if not (target.congruent(student) and target.congruent(teacher)):
        raise InvalidInputError("target, student and teacher grids are not congruent")
    return (
        grid_errors(target, student, kind, phase_weight),
        grid_errors(target, teacher, kind, phase_weight),
    )


def compute_kgs(e_student, e_teacher) -> np.ndarray:
    e_student = np.asarray(e_student, dtype=np.float64)
    e_teacher = np.asarray(e_teacher, dtype=np.float64)
    if e_student.shape != e_teacher.shape:
        raise InvalidInputError(f"length mismatch: {e_student.shape} vs {e_teacher.shape}")
    return e_student - e_teacher


def top_m_mask(scores, m: int, largest: bool = True) -> np.ndarray:
    """Boolean mask of the ``m`` largest (or smallest) scores; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    if np.isnan(scores).any():
        raise InvalidInputError("selection scores contain NaN")
    order = np.argsort(-scores if largest else scores, kind="stable")
    mask = np.zeros(scores.size, dtype=bool)
    mask[order[:m]] = True
    return mask


def select_patches(e_student, e_teacher, criterion=SelectionCriterion.TOP_KGS, k_percent=80) -> np.ndarray:
    """Selection mask with exactly ``ceil(P * k / 100)`` patches set."""
    criterion = SelectionCriterion.parse(criterion)
    e_student = np.asarray(e_student, dtype=np.float64)
    e_teacher = np.asarray(e_teacher, dtype=np.float64)
    if e_student.size < 1:
        raise InvalidInputError("need at least one patch to select from")
    m = selected_count(e_student.size, k_percent)
    if criterion is SelectionCriterion.TOP_KGS:
        return top_m_mask(compute_kgs(e_student, e_teacher), m, largest=True)
    if criterion is SelectionCriterion.TOP_TEACHER_ERROR:
        return top_m_mask(e_teacher, m, largest=True)
    if criterion is SelectionCriterion.BOTTOM_TEACHER_ERROR:
        return top_m_mask(e_teacher, m, largest=False)
    if criterion is SelectionCriterion.TOP_STUDENT_ERROR:
        return top_m_mask(e_student, m, largest=True)
    return top_m_mask(e_student, m, largest=False)


@dataclass(frozen=True, eq=False)
class KgsReport:
    e_student: np.ndarray
    e_teacher: np.ndarray
    kgs: np.ndarray
    mask: np.ndarray
    criterion: SelectionCriterion
    k_percent: float

    @classmethod
    def from_errors(cls, e_student, e_teacher, criterion=SelectionCriterion.TOP_KGS, k_percent=80) -> "KgsReport":
        criterion = SelectionCriterion.parse(criterion)
        kgs = compute_kgs(e_student, e_teacher)
        mask = select_patches(e_student, e_teacher, criterion, k_percent)
        return cls(np.asarray(e_student, float), np.asarray(e_teacher, float), kgs, mask, criterion, k_percent)

    @classmethod
    def from_grids(cls, target, student, teacher, kind=PatchMetricKind.MAG_L2,
                   criterion=SelectionCriterion.TOP_KGS, k_percent=80) -> "KgsReport":
        es, et = compute_patch_errors(target, student, teacher, kind)
        return cls.from_errors(es, et, criterion, k_percent)

    @property
    def n_selected(self) -> int:
        return int(self.mask.sum())

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion.value,
            "k_percent": self.k_percent,
            "n_patches": int(self.mask.size),
            "n_selected": self.n_selected,
            "e_student": self.e_student.tolist(),
            "e_teacher": self.e_teacher.tolist(),
            "kgs": self.kgs.tolist(),
            "mask": self.mask.astype(bool).tolist(),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "KgsReport":
        return cls(
            np.asarray(d["e_student"], float),
            np.asarray(d["e_teacher"], float),
            np.asarray(d["kgs"], float),
            np.asarray(d["mask"], bool),
            SelectionCriterion.parse(d["criterion"]),
            d["k_percent"],
        )


def dispatch_loss(student: PatchGrid, teacher: PatchGrid, mask, kd_kind=PatchMetricKind.MAG_L2,
                  phase_weight: float = 1.0) -> float:
    """Mean KD loss between student and teacher outputs over the selected patches."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (student.n_patches,):
        raise InvalidInputError(f"mask has shape {mask.shape}, expected ({student.n_patches},)")
    m = int(mask.sum())
    if m == 0:
        raise InvalidInputError("selection mask is empty")
    kd = grid_errors(teacher, student, kd_kind, phase_weight)
    return float(kd[mask].sum() / m)


def total_loss(l_se: float, l_dispatch: float, alpha: float = 0.5) -> float:
    if not (0.0 <= alpha <= 1.0):
        raise InvalidInputError(f"alpha must be in [0, 1], got {alpha}")
    return alpha * l_se + (1.0 - alpha) * l_dispatch
