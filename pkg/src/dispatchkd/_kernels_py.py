"""Pure-numpy implementations of the patch reduction kernels.

Both backends share one contract. ``index`` is a ``(P, N)`` int64 array of
flat entry offsets into a field, with ``-1`` marking padded slots.
"""

import numpy as np


def patch_sums(field, index):
    """Sum ``field`` over each patch's non-padded entries -> ``(P,)``."""
    field = np.ascontiguousarray(field, dtype=np.float64).ravel()
    index = np.asarray(index, dtype=np.int64)
    if index.size == 0:
        return np.zeros(index.shape[0])
    valid = index >= 0
    vals = np.where(valid, field[np.where(valid, index, 0)], 0.0)
    return vals.sum(axis=1)


def expand_patch_values(values, index, size):
    """Scatter-add each patch's value onto its entries -> ``(size,)``."""
    values = np.asarray(values, dtype=np.float64)
    index = np.asarray(index, dtype=np.int64)
    if index.size == 0:
        return np.zeros(size)
    valid = index >= 0
    weights = np.broadcast_to(values[:, None], index.shape)[valid]
    return np.bincount(index[valid], weights=weights, minlength=size).astype(np.float64)


def coverage_counts(index, size):
    """Number of patch slots that reference each entry -> ``(size,)`` int64."""
    index = np.asarray(index, dtype=np.int64)
    valid = index[index >= 0]
    if valid.size and (valid.max() >= size):
        raise IndexError("patch index out of range")
    return np.bincount(valid, minlength=size).astype(np.int64)
