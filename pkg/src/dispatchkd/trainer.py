"""Desk-scale teacher/student harness for selective distillation.

The student is a per-bin real gain applied to the noisy spectrogram; the
teacher is the clean target with a seeded subset of patches corrupted.
Losses and gradients are written out by hand so every step is exact and
auditable.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .analysis import build_series
from .exceptions import InvalidInputError, TrainingDivergedError
from .metrics import PatchMetricKind, entry_errors, scaled_entry_errors
from .patching import MsspConfig, partition, partition_mssp
from .selection import KgsReport, SelectionCriterion, selected_count, total_loss
from .spectral import ComplexSpectrogram, SignalSpec, StftConfig, stft, synthesize_mixture

logger = logging.getLogger(__name__)

__all__ = [
    "DFKD",
    "ToyModel",
    "OracleTeacherConfig",
    "TrainConfig",
    "Sample",
    "TrainingReport",
    "oracle_teacher",
    "student_forward",
    "make_sample",
    "make_synthetic_dataset",
    "loss_and_grad",
    "kgs_reports",
    "selection_masks",
    "dataset_loss_and_grad",
    "auto_learning_rate",
    "train",
    "corrupted_region_error",
    "student_error",
    "STANDARD_SCENARIO",
]

# the desk-scale setting used by the directional checks: 8 one-second
# mixtures, 10% of teacher patches zeroed, 100 steps of gradient descent
STANDARD_SCENARIO = {
    "n_samples": 8,
    "corruption_fraction": 0.1,
    "corruption_gain": 0.0,
    "steps": 100,
}

# band-aware metric: phase cosine below the crossover, amplitude + phase above
DFKD = "dfkd"


@dataclass(eq=False)
class ToyModel:
    gains: np.ndarray

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=np.float64).copy()
        if self.gains.ndim != 1:
            raise InvalidInputError("gains must be a 1-D array")
        if not np.all(np.isfinite(self.gains)):
            raise InvalidInputError("gains must be finite")

    @classmethod
    def identity(cls, n_bins: int) -> "ToyModel":
        return cls(np.ones(n_bins))

    def copy(self) -> "ToyModel":
        return ToyModel(self.gains)


def student_forward(model: ToyModel, noisy: ComplexSpectrogram) -> ComplexSpectrogram:
    if model.gains.size != noisy.bins:
        raise InvalidInputError(f"model has {model.gains.size} gains, spectrogram has {noisy.bins} bins")
    return noisy.with_data(model.gains[None, :, None] * noisy.data)


@dataclass(frozen=True)
class OracleTeacherConfig:
    corruption_fraction: float = 0.1
    corruption_gain: float = 0.0
    seed: int = 0
    patch_bins: int = 20

    def __post_init__(self):
        if not (0.0 <= self.corruption_fraction <= 1.0):
            raise InvalidInputError(f"corruption_fraction must be in [0, 1], got {self.corruption_fraction}")


def oracle_teacher(clean: ComplexSpectrogram, noisy: ComplexSpectrogram, cfg: OracleTeacherConfig = OracleTeacherConfig()):
    """The clean spectrogram with ``round(fraction * P)`` patches scaled by ``corruption_gain``.

    Patches are those of ``partition(clean, cfg.patch_bins)``. Returns
    ``(teacher, corrupted_patch_indices)``.
    """
    if clean.shape != noisy.shape:
        raise InvalidInputError(f"clean {clean.shape} and noisy {noisy.shape} shapes differ")
    grid = partition(clean, min(cfg.patch_bins, clean.bins))
    P = grid.n_patches
    n_bad = int(round(cfg.corruption_fraction * P))
    rng = np.random.default_rng(cfg.seed)
    bad = np.sort(rng.choice(P, size=n_bad, replace=False)).astype(np.int64)
    scale = np.ones(clean.bins * clean.frames)
    idx = grid.index[bad]
    scale[idx[idx >= 0]] = cfg.corruption_gain
    data = clean.data * scale.reshape(clean.bins, clean.frames)[None]
    return clean.with_data(data), bad


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.5
    k_percent: float = 80
    learning_rate: float | None = None  # None: 1 / curvature bound of the loss
    steps: int = 100
    checkpoint_interval: int = 10
    kd_metric: str = "mag-l2"
    se_metric: str = "mag-l2"
    selection_metric: str | None = None  # None: same as kd_metric
    criterion: SelectionCriterion = SelectionCriterion.TOP_KGS
    patch_bins: int = 20
    mssp: tuple | None = None  # (n_low, n_high)
    phase_weight: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise InvalidInputError(f"alpha must be in [0, 1], got {self.alpha}")
        selected_count(1, self.k_percent)
        if self.learning_rate is not None and self.learning_rate < 0:
            raise InvalidInputError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.steps < 0 or self.checkpoint_interval < 1:
            raise InvalidInputError("steps must be >= 0 and checkpoint_interval >= 1")
        object.__setattr__(self, "criterion", SelectionCriterion.parse(self.criterion))
        for name in ("kd_metric", "se_metric", "selection_metric"):
            value = getattr(self, name)
            if value is not None and value != DFKD:
                object.__setattr__(self, name, PatchMetricKind.parse(value).value)
        if self.mssp is not None:
            n_low, n_high = self.mssp
            if n_low < 1 or n_high < 1:
                raise InvalidInputError(f"MSSP patch sizes must be >= 1, got {self.mssp}")
            object.__setattr__(self, "mssp", (int(n_low), int(n_high)))

    @property
    def effective_selection_metric(self) -> str:
        return self.selection_metric or self.kd_metric

    def to_dict(self) -> dict:
        d = asdict(self)
        d["criterion"] = self.criterion.value
        d["mssp"] = list(self.mssp) if self.mssp else None
        return d


@dataclass(eq=False)
class Sample:
    """One training example with its cached patch layouts."""

    clean: ComplexSpectrogram
    noisy: ComplexSpectrogram
    teacher: ComplexSpectrogram
    corrupted: np.ndarray
    crossover: np.ndarray
    snr_db: float = float("nan")
    _layouts: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not (self.clean.shape == self.noisy.shape == self.teacher.shape):
            raise InvalidInputError("clean, noisy and teacher spectrograms must be congruent")
        self.crossover = np.asarray(self.crossover, dtype=np.int64)
        if self.crossover.shape != (self.clean.frames,):
            raise InvalidInputError("crossover needs one bin index per frame")

    def kd_indices(self, cfg: TrainConfig):
        """Flat index maps of the distillation grids (one, or two for MSSP)."""
        key = ("kd", cfg.patch_bins, cfg.mssp)
        if key not in self._layouts:
            if cfg.mssp is None:
                grids = [partition(self.clean, min(cfg.patch_bins, self.clean.bins))]
            else:
                mcfg = MsspConfig(cfg.mssp[0], cfg.mssp[1], tuple(self.crossover))
                grids = [g for g in partition_mssp(self.clean, mcfg) if g.n_patches]
            self._layouts[key] = [g.index for g in grids]
        return self._layouts[key]

    def grid_index(self, n: int):
        key = ("uniform", n)
        if key not in self._layouts:
            self._layouts[key] = partition(self.clean, min(n, self.clean.bins)).index
        return self._layouts[key]


def make_sample(clean: ComplexSpectrogram, noisy: ComplexSpectrogram, teacher_cfg=OracleTeacherConfig(),
                crossover=None, crossover_percentile: float = 0.5, snr_db=float("nan")) -> Sample:
    from .patching import estimate_crossover

    teacher, bad = oracle_teacher(clean, noisy, teacher_cfg)
    if crossover is None:
        crossover = estimate_crossover(noisy, crossover_percentile)
    elif np.ndim(crossover) == 0:
        crossover = np.full(clean.frames, int(crossover))
    return Sample(clean, noisy, teacher, bad, crossover, snr_db)


def make_synthetic_dataset(n_samples: int = 8, seed: int = 0, stft_cfg: StftConfig = StftConfig(),
                           duration_s: float = 1.0, sample_rate: int = 16000,
                           corruption_fraction: float = 0.1, corruption_gain: float = 0.0,
                           crossover_percentile: float = 0.5, crossover_fixed=None):
    """Harmonic-tone utterances in band-limited noise at SNRs drawn from U[0, 20] dB."""
    if n_samples < 1:
        raise InvalidInputError("dataset needs at least one sample")
    seeds = np.random.SeedSequence(seed).generate_state(3 * n_samples)
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n_samples):
        snr = float(rng.uniform(0.0, 20.0))
        clean_spec = SignalSpec("speech", duration_s, sample_rate, f0_hz=float(rng.uniform(100, 220)))
        lo = float(rng.uniform(50, 400))
        noise_spec = SignalSpec("noise", duration_s, sample_rate, band_hz=(lo, float(rng.uniform(3000, 7500))))
        clean_w, _, mix_w = synthesize_mixture(clean_spec, noise_spec, snr, int(seeds[3 * i]))
        clean = stft(clean_w, stft_cfg)
        noisy = stft(mix_w, stft_cfg)
        tcfg = OracleTeacherConfig(corruption_fraction, corruption_gain, int(seeds[3 * i + 1]))
        samples.append(make_sample(clean, noisy, tcfg, crossover_fixed, crossover_percentile, snr))
    return samples


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _below(sample: Sample):
    key = ("below",)
    if key not in sample._layouts:
        F = sample.clean.bins
        sample._layouts[key] = (np.arange(F)[:, None] < sample.crossover[None, :])[None]
    return sample._layouts[key]


def _abs(sample: Sample, name: str):
    key = ("abs", name)
    if key not in sample._layouts:
        sample._layouts[key] = np.abs(getattr(sample, name).data)
    return sample._layouts[key]


def _field(sample: Sample, target_name: str, gain, metric, phase_weight):
    """Entry errors of ``gain * noisy`` against a target, with gain-derivatives.

    Resolves the band-aware DFKD metric using the sample's crossover.
    """
    target = getattr(sample, target_name).data
    x = sample.noisy.data
    at, ax = _abs(sample, target_name), _abs(sample, "noisy")
    if metric != DFKD:
        return scaled_entry_errors(target, x, gain, metric, phase_weight, at, ax)
    lo_e, lo_d = scaled_entry_errors(target, x, gain, PatchMetricKind.DFKD_LOW, 1.0, at, ax)
    hi_e, hi_d = scaled_entry_errors(target, x, gain, PatchMetricKind.DFKD_HIGH, phase_weight, at, ax)
    below = _below(sample)
    return np.where(below, lo_e, hi_e), np.where(below, lo_d, hi_d)


def _errors(sample: Sample, target, estimate, metric, phase_weight):
    if metric != DFKD:
        return entry_errors(target, estimate, metric, phase_weight)
    lo = entry_errors(target, estimate, PatchMetricKind.DFKD_LOW)
    hi = entry_errors(target, estimate, PatchMetricKind.DFKD_HIGH, phase_weight)
    return np.where(_below(sample), lo, hi)


def _teacher_field(sample: Sample, cfg: TrainConfig):
    metric = cfg.effective_selection_metric
    key = ("et", metric, cfg.phase_weight)
    if key not in sample._layouts:
        et = _errors(sample, sample.clean.data, sample.teacher.data, metric, cfg.phase_weight)
        sample._layouts[key] = et.sum(axis=0).ravel()
    return sample._layouts[key]


def kgs_reports(model: ToyModel, sample: Sample, cfg: TrainConfig, student_field=None):
    """One :class:`KgsReport` per distillation grid for the current student.

    ``student_field`` may pass the precomputed flat student-vs-clean error field.
    """
    if student_field is None:
        est = model.gains[None, :, None] * sample.noisy.data
        metric = cfg.effective_selection_metric
        student_field = _errors(sample, sample.clean.data, est, metric, cfg.phase_weight).sum(axis=0).ravel()
    et = _teacher_field(sample, cfg)
    return [
        KgsReport.from_errors(kernels.patch_sums(student_field, idx), kernels.patch_sums(et, idx),
                              cfg.criterion, cfg.k_percent)
        for idx in sample.kd_indices(cfg)
    ]


def selection_masks(model: ToyModel, sample: Sample, cfg: TrainConfig, student_field=None):
    """Per-grid selection masks for the current student (recomputed every step)."""
    return [r.mask for r in kgs_reports(model, sample, cfg, student_field)]


def loss_and_grad(model: ToyModel, sample: Sample, cfg: TrainConfig, masks=None):
    """Total loss and its gradient in the gains for one sample.

    ``masks`` fixes the patch selection (one boolean array per distillation
    grid); by default it is recomputed from the current student. The mask
    is treated as a constant. Returns ``(total, grad, parts)`` where
    ``parts`` holds ``loss_se``, ``loss_kd`` and ``selected_fraction``.
    """
    F, T = sample.clean.bins, sample.clean.frames
    if model.gains.size != F:
        raise InvalidInputError(f"model has {model.gains.size} gains, sample has {F} bins")
    g = model.gains[None, :, None]

    n_se = sample.grid_index(cfg.patch_bins).shape[0]
    se_e, se_d = _field(sample, "clean", g, cfg.se_metric, cfg.phase_weight)
    l_se = se_e.sum() / n_se
    grad_se = se_d.sum(axis=(0, 2)) / n_se

    indices = sample.kd_indices(cfg)
    if masks is None:
        shared = cfg.effective_selection_metric == cfg.se_metric
        masks = selection_masks(model, sample, cfg, se_e.sum(axis=0).ravel() if shared else None)
    if len(masks) != len(indices):
        raise InvalidInputError(f"expected {len(indices)} masks, got {len(masks)}")

    kd_e, kd_d = _field(sample, "teacher", g, cfg.kd_metric, cfg.phase_weight)
    kd_flat = kd_e.sum(axis=0).ravel()
    weight = np.zeros(F * T)
    l_kd = 0.0
    n_sel = n_tot = 0
    for idx, mask in zip(indices, masks):
        mask = np.asarray(mask, dtype=bool)
        m = int(mask.sum())
        if m == 0:
            raise InvalidInputError("selection mask is empty")
        per_patch = kernels.patch_sums(kd_flat, idx)
        l_kd += per_patch[mask].sum() / m
        weight += kernels.expand_patch_values(mask / m, idx, F * T)
        n_sel += m
        n_tot += mask.size
    grad_kd = (kd_d * weight.reshape(F, T)[None]).sum(axis=(0, 2))

    total = total_loss(l_se, l_kd, cfg.alpha)
    grad = cfg.alpha * grad_se + (1.0 - cfg.alpha) * grad_kd
    parts = {"loss_se": float(l_se), "loss_kd": float(l_kd), "selected_fraction": n_sel / n_tot}
    return float(total), grad, parts


def dataset_loss_and_grad(model: ToyModel, dataset, cfg: TrainConfig):
    """Mean of :func:`loss_and_grad` over samples, reduced in sample order."""
    total = 0.0
    grad = np.zeros_like(model.gains)
    parts = {"loss_se": 0.0, "loss_kd": 0.0, "selected_fraction": 0.0}
    for sample in dataset:
        l, g, p = loss_and_grad(model, sample, cfg)
        total += l
        grad += g
        for k in parts:
            parts[k] += p[k]
    n = len(dataset)
    return total / n, grad / n, {k: v / n for k, v in parts.items()}


def auto_learning_rate(dataset, cfg: TrainConfig) -> float:
    """Reciprocal of a per-bin bound on the loss curvature in the gains.

    For the squared magnitude metrics the second derivative of every
    entry term is ``2 |x|^2``, weighted by ``alpha / P`` (enhancement term)
    plus at most ``(1 - alpha) / m`` (distillation term).
    """
    F = dataset[0].clean.bins
    bound = np.zeros(F)
    for s in dataset:
        n_se = s.grid_index(cfg.patch_bins).shape[0]
        w_kd = max(1.0 / selected_count(idx.shape[0], cfg.k_percent) for idx in s.kd_indices(cfg))
        power = 2.0 * (np.abs(s.noisy.data) ** 2).sum(axis=(0, 2))
        bound += power * (cfg.alpha / n_se + (1.0 - cfg.alpha) * w_kd)
    bound /= len(dataset)
    top = bound.max()
    return 1.0 / top if top > 0 else 1.0


def student_error(model: ToyModel, sample: Sample, n: int = 20) -> np.ndarray:
    """Per-patch magnitude L2 error of the student against the clean target."""
    est = model.gains[None, :, None] * sample.noisy.data
    field_ = entry_errors(sample.clean.data, est, PatchMetricKind.MAG_L2).sum(axis=0).ravel()
    return kernels.patch_sums(field_, sample.grid_index(n))


def corrupted_region_error(model: ToyModel, dataset, n: int = 20) -> float:
    """Mean student magnitude error over the patches where the teacher is corrupted."""
    vals = [student_error(model, s, n)[s.corrupted] for s in dataset if s.corrupted.size]
    if not vals:
        return float("nan")
    return float(np.concatenate(vals).mean())


@dataclass
class TrainingReport:
    config: dict
    learning_rate: float
    records: list
    checkpoint_steps: list
    trajectories: dict = field(repr=False)
    initial_loss: float = float("nan")
    final_gains: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "learning_rate": self.learning_rate,
            "initial_loss": self.initial_loss,
            "records": self.records,
        }


def train(model: ToyModel, dataset, cfg: TrainConfig, delta_threshold: float = 0.01, analysis_bins: int = 20):
    """Plain gradient descent on the mean total loss.

    Per-patch student errors (magnitude L2 on ``analysis_bins``-bin patches)
    are recorded every ``checkpoint_interval`` steps and after the last step.
    Returns ``(model, series, report)`` where ``series`` maps sample index
    to its classified error series.
    """
    dataset = list(dataset)
    if not dataset:
        raise InvalidInputError("dataset is empty")
    model = model.copy()
    lr = auto_learning_rate(dataset, cfg) if cfg.learning_rate is None else float(cfg.learning_rate)

    records, steps_seen = [], []
    traj = {i: [] for i in range(len(dataset))}
    last_good = model.gains.copy()
    initial_loss = float("nan")

    for step in range(cfg.steps + 1):
        with np.errstate(over="ignore", invalid="ignore"):  # divergence is checked below
            loss, grad, parts = dataset_loss_and_grad(model, dataset, cfg)
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise TrainingDivergedError(f"non-finite loss at step {step}", step, last_good)
        if step == 0:
            initial_loss = loss
        if step % cfg.checkpoint_interval == 0 or step == cfg.steps:
            last_good = model.gains.copy()
            steps_seen.append(step)
            records.append({"step": step, "loss_total": loss, **parts})
            for i, s in enumerate(dataset):
                traj[i].append(student_error(model, s, analysis_bins))
        if step == cfg.steps:
            break
        new = model.gains - lr * grad
        if not np.all(np.isfinite(new)):
            raise TrainingDivergedError(f"non-finite gains at step {step + 1}", step + 1, last_good)
        model.gains = new

    trajectories = {i: np.stack(v, axis=1) for i, v in traj.items()}
    series = {}
    if len(steps_seen) >= 2:
        series = {i: build_series(m, delta_threshold) for i, m in trajectories.items()}
    report = TrainingReport(
        cfg.to_dict(), lr, records, steps_seen, trajectories, initial_loss, model.gains.tolist()
    )
    logger.debug("trained %d steps, final loss %.6g", cfg.steps, records[-1]["loss_total"])
    return model, series, report
