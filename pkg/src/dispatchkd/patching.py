"""Partition spectrograms into N-bin x 1-frame patches.

Patches are ordered frame-major, then by ascending frequency block. Each
(band of a) frame is zero-padded at its high-frequency end up to a
multiple of the patch size; padded slots carry bin index ``-1`` and are
excluded from every downstream sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .exceptions import InvalidInputError, PatchGridError
from .spectral import ComplexSpectrogram

__all__ = [
    "Patch",
    "PatchGrid",
    "MsspConfig",
    "partition",
    "partition_mssp",
    "reassemble",
    "estimate_crossover",
]


@dataclass(frozen=True, eq=False)
class Patch:
    """One patch: ``data`` is ``(C, N)`` complex, ``valid`` flags non-padded slots."""

    data: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.ndim == 1:
            data = data[np.newaxis]
        valid = np.asarray(self.valid, dtype=bool)
        if valid.shape != data.shape[-1:]:
            raise InvalidInputError(f"valid mask shape {valid.shape} does not match patch {data.shape}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_values(cls, values) -> "Patch":
        data = np.atleast_2d(np.asarray(values, dtype=np.complex128))
        return cls(data, np.ones(data.shape[-1], dtype=bool))

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True, eq=False)
class PatchGrid:
    """A spectrogram cut into patches.

    Attributes
    ----------
    source_dims : (C, F, T) of the partitioned spectrogram.
    patch_bins : frequency bins per patch (N).
    patches : ``(P, C, N)`` complex patch contents, zero in padded slots.
    bins : ``(P, N)`` source bin of each slot, ``-1`` for padding.
    frame : ``(P,)`` source frame of each patch.
    block : ``(P,)`` frequency-block position of each patch within its frame and band.
    band : ``"full"``, ``"low"`` or ``"high"``.
    """

    source_dims: tuple
    patch_bins: int
    patches: np.ndarray
    bins: np.ndarray
    frame: np.ndarray
    block: np.ndarray
    band: str = "full"
    sample_rate: int = 16000
    hop: int = 0
    window_length: int = 0

    @property
    def n_patches(self) -> int:
        return self.patches.shape[0]

    def __len__(self):
        return self.n_patches

    @property
    def valid(self) -> np.ndarray:
        return self.bins >= 0

    @property
    def index(self) -> np.ndarray:
        """Flat offsets into a ``(F, T)`` C-ordered field, ``-1`` for padding."""
        T = self.source_dims[2]
        return np.where(self.bins >= 0, self.bins * T + self.frame[:, None], -1).astype(np.int64)

    @property
    def frame_padding(self) -> np.ndarray:
        """Padded slots per frame."""
        pad = (~self.valid).sum(axis=1)
        return np.bincount(self.frame, weights=pad, minlength=self.source_dims[2]).astype(np.int64)

    @property
    def padded_bins(self) -> int:
        """Padded bins per frame (the maximum over frames when they differ)."""
        fp = self.frame_padding
        return int(fp.max()) if fp.size else 0

    def patch(self, p: int) -> Patch:
        return Patch(self.patches[p], self.valid[p])

    def __iter__(self):
        for p in range(self.n_patches):
            yield self.patch(p)

    def with_patches(self, patches) -> "PatchGrid":
        """Same layout, new contents (padded slots forced to zero)."""
        patches = np.asarray(patches, dtype=np.complex128)
        if patches.shape != self.patches.shape:
            raise InvalidInputError(f"patch array shape {patches.shape} != {self.patches.shape}")
        patches = np.where(self.valid[:, None, :], patches, 0.0)
        return PatchGrid(
            self.source_dims, self.patch_bins, patches, self.bins, self.frame, self.block,
            self.band, self.sample_rate, self.hop, self.window_length,
        )

    def congruent(self, other: "PatchGrid") -> bool:
        return (
            self.source_dims == other.source_dims
            and self.patches.shape == other.patches.shape
            and np.array_equal(self.bins, other.bins)
            and np.array_equal(self.frame, other.frame)
        )

    def regrid(self, s: ComplexSpectrogram) -> "PatchGrid":
        """Cut another spectrogram of the same dimensions with this grid's layout."""
        if tuple(s.shape) != tuple(self.source_dims):
            raise InvalidInputError(f"spectrogram shape {s.shape} != grid source {self.source_dims}")
        return self.with_patches(_gather(s.data, self.bins, self.frame))


def _gather(data, bins, frame):
    safe = np.where(bins >= 0, bins, 0)
    out = data[:, safe, frame[:, None]]  # (C, P, N)
    out = np.where(bins[None] >= 0, out, 0.0)
    return np.ascontiguousarray(np.moveaxis(out, 0, 1))


def _layout(ranges, n):
    """Slot layout for per-frame ``[lo, hi)`` bin ranges cut into ``n``-bin blocks."""
    bins_rows, frames, blocks = [], [], []
    offs = np.arange(n)
    for t, (lo, hi) in enumerate(ranges):
        width = hi - lo
        if width <= 0:
            continue
        nb = -(-width // n)
        starts = lo + n * np.arange(nb)
        rows = starts[:, None] + offs[None, :]
        rows = np.where(rows < hi, rows, -1)
        bins_rows.append(rows)
        frames.append(np.full(nb, t))
        blocks.append(np.arange(nb))
    if not bins_rows:
        return (np.zeros((0, n), np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64))
    return (
        np.concatenate(bins_rows).astype(np.int64),
        np.concatenate(frames).astype(np.int64),
        np.concatenate(blocks).astype(np.int64),
    )


def _grid(s: ComplexSpectrogram, ranges, n, band) -> PatchGrid:
    bins, frame, block = _layout(ranges, n)
    patches = _gather(s.data, bins, frame)
    return PatchGrid(
        tuple(s.shape), int(n), patches, bins, frame, block, band,
        s.sample_rate, s.hop, s.window_length,
    )


def partition(s: ComplexSpectrogram, n: int) -> PatchGrid:
    """Cut ``s`` into ``ceil(F/n) * T`` patches of ``n`` bins by one frame."""
    F, T = s.bins, s.frames
    if not (isinstance(n, (int, np.integer)) and 1 <= n <= F):
        raise InvalidInputError(f"patch size must be an integer in [1, {F}], got {n!r}")
    return _grid(s, [(0, F)] * T, int(n), "full")


@dataclass(frozen=True)
class MsspConfig:
    """Multi-scale patching: ``n_low`` bins below the crossover, ``n_high`` above."""

    n_low: int = 10
    n_high: int = 40
    crossover: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "crossover", tuple(int(c) for c in np.atleast_1d(self.crossover)))

    @classmethod
    def fixed(cls, n_low, n_high, crossover_bin, frames) -> "MsspConfig":
        return cls(n_low, n_high, (int(crossover_bin),) * int(frames))

    def validate(self, s: ComplexSpectrogram) -> None:
        F, T = s.bins, s.frames
        for name, n in (("n_low", self.n_low), ("n_high", self.n_high)):
            if not (1 <= n <= F):
                raise InvalidInputError(f"{name} must be in [1, {F}], got {n}")
        if len(self.crossover) != T:
            raise InvalidInputError(f"crossover needs {T} entries (one per frame), got {len(self.crossover)}")
        c = np.asarray(self.crossover)
        if c.size and (c.min() < 0 or c.max() > F):
            raise InvalidInputError(f"crossover bins must lie in [0, {F}]")


def partition_mssp(s: ComplexSpectrogram, cfg: MsspConfig):
    """Cut ``s`` into a low-band grid and a high-band grid split per frame at ``cfg.crossover``."""
    cfg.validate(s)
    F = s.bins
    low = _grid(s, [(0, c) for c in cfg.crossover], cfg.n_low, "low")
    high = _grid(s, [(c, F) for c in cfg.crossover], cfg.n_high, "high")
    return low, high


def reassemble(grid: PatchGrid, *more: PatchGrid, complete: bool = True) -> ComplexSpectrogram:
    """Scatter one or more grids back into a spectrogram.

    With ``complete=True`` every source entry must be covered exactly once
    across the given grids (e.g. both MSSP bands); otherwise uncovered
    entries are left at zero.
    """
    grids = (grid,) + more
    C, F, T = grid.source_dims
    size = F * T
    counts = np.zeros(size, dtype=np.int64)
    out = np.zeros((C, size), dtype=np.complex128)
    for g in grids:
        if tuple(g.source_dims) != (C, F, T):
            raise PatchGridError("grids disagree on source dimensions")
        if g.bins.shape != g.patches.shape[::2] or g.frame.shape != (g.n_patches,):
            raise PatchGridError("patch array and index map shapes disagree")
        if g.n_patches == 0:
            continue
        if g.bins.max() >= F or g.bins.min() < -1 or g.frame.min() < 0 or g.frame.max() >= T:
            raise PatchGridError("patch index map points outside the source spectrogram")
        idx = g.index
        try:
            counts += kernels.coverage_counts(idx, size)
        except IndexError as exc:
            raise PatchGridError(str(exc)) from exc
        valid = idx >= 0
        vals = np.moveaxis(g.patches, 1, 0)[:, valid]  # (C, n_valid)
        out[:, idx[valid]] = vals
    if counts.max(initial=0) > 1:
        raise PatchGridError("some source entries appear in more than one patch")
    if complete and counts.min(initial=1) < 1:
        raise PatchGridError("some source entries are not covered by any patch")
    return ComplexSpectrogram(out.reshape(C, F, T), grid.sample_rate, grid.hop, grid.window_length)


def estimate_crossover(noisy: ComplexSpectrogram, percentile: float = 0.5) -> np.ndarray:
    """Per-frame energy split: the smallest bin ``k`` whose lower bins hold ``percentile`` of the energy.

    Results are clamped to ``[1, F-1]``; silent frames fall back to ``F // 2``.
    """
    if not (0.0 < percentile < 1.0):
        raise InvalidInputError(f"percentile must be in (0, 1), got {percentile}")
    F = noisy.bins
    energy = (np.abs(noisy.data) ** 2).sum(axis=0)  # (F, T)
    cum = np.cumsum(energy, axis=0)
    total = cum[-1]
    out = np.full(noisy.frames, F // 2, dtype=np.int64)
    for t in np.flatnonzero(total > 0):
        k = int(np.searchsorted(cum[:, t], percentile * total[t], side="left")) + 1
        out[t] = min(max(k, 1), max(F - 1, 1))
    return out
