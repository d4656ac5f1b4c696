"""Patch-wise error metrics and per-patch distillation losses.

All metrics are unnormalized sums over non-padded entries (and over
channels). The elementwise ``entry_errors`` form is what the trainer uses;
``patch_error`` and ``grid_errors`` reduce it over patches.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .exceptions import InvalidInputError
from .patching import Patch, PatchGrid

__all__ = [
    "PatchMetricKind",
    "PHASE_EPS",
    "entry_errors",
    "scaled_entry_errors",
    "patch_error",
    "grid_errors",
    "dfkd_low_loss",
    "dfkd_high_loss",
]

# phase is undefined below this magnitude; such entries contribute nothing
PHASE_EPS = 1e-8


class PatchMetricKind(str, Enum):
    MAG_L2 = "mag-l2"
    MAG_L1 = "mag-l1"
    COMPLEX_L2 = "complex-l2"
    DFKD_LOW = "dfkd-low"
    DFKD_HIGH = "dfkd-high"

    @classmethod
    def parse(cls, value) -> "PatchMetricKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("_", "-"))
        except ValueError:
            raise InvalidInputError(
                f"unknown metric {value!r}; expected one of {[k.value for k in cls]}"
            ) from None


def _phase_term(target, estimate):
    mt = np.abs(target)
    me = np.abs(estimate)
    ok = (mt >= PHASE_EPS) & (me >= PHASE_EPS)
    denom = np.where(ok, mt * me, 1.0)
    cos = np.real(np.conj(target) * estimate) / denom
    return np.where(ok, 1.0 - np.clip(cos, -1.0, 1.0), 0.0)


def entry_errors(target, estimate, kind=PatchMetricKind.MAG_L2, phase_weight: float = 1.0) -> np.ndarray:
    """Elementwise contribution of each complex entry to the metric ``kind``."""
    kind = PatchMetricKind.parse(kind)
    target = np.asarray(target)
    estimate = np.asarray(estimate)
    if target.shape != estimate.shape:
        raise InvalidInputError(f"shape mismatch: {target.shape} vs {estimate.shape}")
    if kind is PatchMetricKind.MAG_L2:
        return (np.abs(target) - np.abs(estimate)) ** 2
    if kind is PatchMetricKind.MAG_L1:
        return np.abs(np.abs(target) - np.abs(estimate))
    if kind is PatchMetricKind.COMPLEX_L2:
        return np.abs(target - estimate) ** 2
    if kind is PatchMetricKind.DFKD_LOW:
        return _phase_term(target, estimate)
    if phase_weight < 0:
        raise InvalidInputError(f"phase_weight must be non-negative, got {phase_weight}")
    return (np.abs(target) - np.abs(estimate)) ** 2 + phase_weight * _phase_term(target, estimate)


def scaled_entry_errors(target, x, gain, kind=PatchMetricKind.MAG_L2, phase_weight: float = 1.0,
                        target_abs=None, x_abs=None):
    """Entry errors of the estimate ``gain * x`` and their derivative in ``gain``.

    ``gain`` is real and broadcast against ``x``. Returns ``(errors, derrors_dgain)``.
    The phase of ``gain * x`` does not move with a real gain, so the phase
    terms have zero derivative wherever they are defined. ``target_abs`` and
    ``x_abs`` may carry precomputed magnitudes.
    """
    kind = PatchMetricKind.parse(kind)
    gain = np.asarray(gain, dtype=np.float64)
    at = np.abs(target) if target_abs is None else target_abs
    ax = np.abs(x) if x_abs is None else x_abs
    sg = np.sign(gain)
    if kind is PatchMetricKind.MAG_L2:
        diff = at - np.abs(gain) * ax
        return diff**2, -2.0 * diff * sg * ax
    if kind is PatchMetricKind.MAG_L1:
        diff = at - np.abs(gain) * ax
        return np.abs(diff), -np.sign(diff) * sg * ax
    est = gain * x
    err = entry_errors(target, est, kind, phase_weight)
    if kind is PatchMetricKind.DFKD_HIGH:
        grad = -2.0 * (at - np.abs(est)) * sg * ax
    elif kind is PatchMetricKind.COMPLEX_L2:
        grad = 2.0 * (gain * ax**2 - np.real(np.conj(target) * x))
    else:
        grad = np.zeros(np.broadcast(gain, x).shape)
    return err, np.broadcast_to(grad, err.shape)


def _check_congruent(target: Patch, estimate: Patch):
    if target.data.shape != estimate.data.shape:
        raise InvalidInputError(f"patch shape mismatch: {target.data.shape} vs {estimate.data.shape}")
    if not np.array_equal(target.valid, estimate.valid):
        raise InvalidInputError("patches flag different padded entries")


def patch_error(target: Patch, estimate: Patch, kind=PatchMetricKind.MAG_L2, phase_weight: float = 1.0) -> float:
    """Metric ``kind`` between two congruent patches, summed over non-padded entries."""
    _check_congruent(target, estimate)
    e = entry_errors(target.data, estimate.data, kind, phase_weight)
    return float(e[:, target.valid].sum())


def dfkd_low_loss(target: Patch, estimate: Patch) -> float:
    """Phase-only cosine loss: sum of ``1 - cos(angle difference)``."""
    return patch_error(target, estimate, PatchMetricKind.DFKD_LOW)


def dfkd_high_loss(target: Patch, estimate: Patch, phase_weight: float = 1.0) -> float:
    """Magnitude L2 plus ``phase_weight`` times the phase cosine loss."""
    if phase_weight < 0:
        raise InvalidInputError(f"phase_weight must be non-negative, got {phase_weight}")
    return patch_error(target, estimate, PatchMetricKind.DFKD_HIGH, phase_weight)


def grid_errors(target: PatchGrid, estimate: PatchGrid, kind=PatchMetricKind.MAG_L2, phase_weight: float = 1.0) -> np.ndarray:
    """Per-patch metric between two congruent grids -> ``(P,)``."""
    if not target.congruent(estimate):
        raise InvalidInputError("patch grids are not congruent")
    e = entry_errors(target.patches, estimate.patches, kind, phase_weight).sum(axis=1)
    return np.where(target.valid, e, 0.0).sum(axis=1)
