"""Waveform / complex-spectrogram transforms and signal ingestion.

The analysis transform is a one-sided STFT with a periodic Hann window.
Frames are taken without any leading padding, so a waveform of ``L``
samples yields ``floor((L - win) / hop) + 1`` frames.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import butter, get_window, sosfilt

from .exceptions import InvalidInputError, WavFormatError

__all__ = [
    "Waveform",
    "ComplexSpectrogram",
    "StftConfig",
    "SignalSpec",
    "stft",
    "istft",
    "interior_slice",
    "synthesize_mixture",
    "signal_power",
    "load_wav",
    "save_wav",
]


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InvalidInputError(f"waveform must be 1-D, got shape {samples.shape}")
        if samples.size < 1:
            raise InvalidInputError("waveform must contain at least one sample")
        if int(self.sample_rate) <= 0:
            raise InvalidInputError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True, eq=False)
class ComplexSpectrogram:
    """Complex spectrogram indexed ``data[channel, bin, frame]``.

    ``hop`` and ``window_length`` record the transform that produced it;
    they are ``0`` for spectrograms built by hand.
    """

    data: np.ndarray
    sample_rate: int = 16000
    hop: int = 0
    window_length: int = 0

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[np.newaxis]
        if data.ndim != 3:
            raise InvalidInputError(f"spectrogram data must be (C, F, T), got shape {data.shape}")
        if min(data.shape) < 1:
            raise InvalidInputError(f"spectrogram dimensions must be >= 1, got {data.shape}")
        object.__setattr__(self, "data", data.astype(np.complex128, copy=False))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def bins(self) -> int:
        return self.data.shape[1]

    @property
    def frames(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def magnitude(self) -> np.ndarray:
        return np.abs(self.data)

    def with_data(self, data) -> "ComplexSpectrogram":
        """Copy of this spectrogram's metadata around new ``data``."""
        return ComplexSpectrogram(data, self.sample_rate, self.hop, self.window_length)


def _nearest_power_of_two(n: float) -> int:
    if n < 1:
        return 1
    return int(2 ** round(math.log2(n)))


@dataclass(frozen=True)
class StftConfig:
    window_ms: float = 32.0
    hop_ms: float = 8.0
    window_kind: str = "hann"

    def __post_init__(self):
        if not (0 < self.hop_ms <= self.window_ms):
            raise InvalidInputError(
                f"need 0 < hop_ms <= window_ms, got hop_ms={self.hop_ms}, window_ms={self.window_ms}"
            )
        if self.window_kind != "hann":
            raise InvalidInputError(f"unsupported window kind {self.window_kind!r}")

    def window_length(self, sample_rate: int) -> int:
        return _nearest_power_of_two(self.window_ms * sample_rate / 1000.0)

    def hop_length(self, sample_rate: int) -> int:
        hop = max(1, int(round(self.hop_ms * sample_rate / 1000.0)))
        return min(hop, self.window_length(sample_rate))

    def window(self, sample_rate: int) -> np.ndarray:
        # periodic Hann: satisfies constant overlap-add at hop = win/4
        return get_window("hann", self.window_length(sample_rate), fftbins=True)


def stft(w: Waveform, cfg: StftConfig = StftConfig()) -> ComplexSpectrogram:
    """One-sided STFT of a mono waveform, returned as a single-channel spectrogram."""
    win_len = cfg.window_length(w.sample_rate)
    hop = cfg.hop_length(w.sample_rate)
    if len(w) < win_len:
        raise InvalidInputError(
            f"waveform has {len(w)} samples, shorter than one {win_len}-sample window"
        )
    frames = np.lib.stride_tricks.sliding_window_view(w.samples, win_len)[::hop]
    spec = np.fft.rfft(frames * cfg.window(w.sample_rate), n=win_len, axis=-1)
    return ComplexSpectrogram(spec.T[np.newaxis], w.sample_rate, hop, win_len)


def interior_slice(n_frames: int, window_length: int, hop: int) -> slice:
    """Samples of an ``istft`` output covered by ``window_length // hop`` frames."""
    return slice(window_length - hop, n_frames * hop)


def istft(s: ComplexSpectrogram, cfg: StftConfig = StftConfig(), channel: int = 0) -> Waveform:
    """Weighted overlap-add inverse of :func:`stft` for one channel.

    Output length is ``(T - 1) * hop + win``. Reconstruction is exact
    wherever the summed squared window is non-zero, which excludes only
    the very first sample for a periodic Hann window.
    """
    win_len = cfg.window_length(s.sample_rate)
    hop = cfg.hop_length(s.sample_rate)
    if s.window_length and s.window_length != win_len:
        raise InvalidInputError(
            f"config window length {win_len} does not match spectrogram's {s.window_length}"
        )
    if s.hop and s.hop != hop:
        raise InvalidInputError(f"config hop {hop} does not match spectrogram's {s.hop}")
    if s.bins != win_len // 2 + 1:
        raise InvalidInputError(
            f"spectrogram has {s.bins} bins, expected {win_len // 2 + 1} for a {win_len}-point FFT"
        )

    window = cfg.window(s.sample_rate)
    frames = np.fft.irfft(s.data[channel].T, n=win_len, axis=-1) * window
    n_frames = frames.shape[0]
    length = (n_frames - 1) * hop + win_len
    out = np.zeros(length)
    norm = np.zeros(length)
    w2 = window**2
    for t in range(n_frames):
        out[t * hop : t * hop + win_len] += frames[t]
        norm[t * hop : t * hop + win_len] += w2
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    out[~nz] = 0.0
    return Waveform(out, s.sample_rate)


# ---------------------------------------------------------------------------
# Synthetic signals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SignalSpec:
    """Recipe for a synthetic signal.

    ``kind="speech"`` gives an utterance-like harmonic tone: a drifting
    fundamental with ``n_harmonics`` partials under syllable-rate bursts.
    ``kind="noise"`` gives white noise band-limited to ``band_hz``.
    """

    kind: str = "speech"
    duration_s: float = 1.0
    sample_rate: int = 16000
    f0_hz: float = 140.0
    n_harmonics: int = 16
    syllable_rate_hz: float = 4.0
    band_hz: tuple = (100.0, 6000.0)
    amplitude: float = 0.3

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate))


def signal_power(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x * x))


def _speech_like(spec: SignalSpec, rng: np.random.Generator) -> np.ndarray:
    n = spec.n_samples
    sr = spec.sample_rate
    t = np.arange(n) / sr
    f0 = spec.f0_hz * rng.uniform(0.8, 1.25)
    vibrato = 1.0 + 0.04 * np.sin(2 * np.pi * rng.uniform(2.0, 5.0) * t + rng.uniform(0, 2 * np.pi))
    glide = 1.0 + rng.uniform(-0.15, 0.15) * t / max(spec.duration_s, 1e-9)
    phase = 2 * np.pi * np.cumsum(f0 * vibrato * glide) / sr

    # formant-like spectral envelope over harmonic index
    formants = rng.uniform([300, 900, 2000], [800, 1800, 3200])
    x = np.zeros(n)
    for h in range(1, spec.n_harmonics + 1):
        freq = h * f0
        if freq >= 0.45 * sr:
            break
        gain = sum(np.exp(-0.5 * ((freq - fm) / 250.0) ** 2) for fm in formants) + 0.3 / h
        x += gain * np.sin(h * phase + rng.uniform(0, 2 * np.pi))

    # syllable bursts separated by short pauses
    env = np.zeros(n)
    period = 1.0 / spec.syllable_rate_hz
    start = rng.uniform(0.0, 0.3 * period)
    while start < spec.duration_s:
        length = period * rng.uniform(0.5, 0.85)
        mask = (t >= start) & (t < start + length)
        env[mask] = np.sin(np.pi * (t[mask] - start) / length) ** 2
        start += period * rng.uniform(0.9, 1.2)

    x *= env
    peak = np.max(np.abs(x))
    if peak > 0:
        x *= spec.amplitude / peak
    return x


def _band_noise(spec: SignalSpec, rng: np.random.Generator) -> np.ndarray:
    sr = spec.sample_rate
    lo, hi = spec.band_hz
    nyq = sr / 2.0
    noise = rng.standard_normal(spec.n_samples)
    lo_n = max(lo / nyq, 1e-4)
    hi_n = min(hi / nyq, 0.999)
    if lo_n < hi_n:
        sos = butter(4, [lo_n, hi_n], btype="bandpass", output="sos")
        noise = sosfilt(sos, noise)
    peak = np.max(np.abs(noise))
    if peak > 0:
        noise *= spec.amplitude / peak
    return noise


def _render(spec: SignalSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.kind == "speech":
        return _speech_like(spec, rng)
    if spec.kind == "noise":
        return _band_noise(spec, rng)
    raise InvalidInputError(f"unknown signal kind {spec.kind!r}")


def synthesize_mixture(clean_spec: SignalSpec, noise_spec: SignalSpec, snr_db: float, seed: int):
    """Render clean and noise signals and mix them at ``snr_db``.

    Returns ``(clean, noise_scaled, mixture)`` as :class:`Waveform` objects
    with ``mixture = clean + noise_scaled``.
    """
    if not np.isfinite(snr_db):
        raise InvalidInputError(f"snr_db must be finite, got {snr_db}")
    if clean_spec.n_samples != noise_spec.n_samples or clean_spec.sample_rate != noise_spec.sample_rate:
        raise InvalidInputError("clean and noise specs must share duration and sample rate")
    rng = np.random.default_rng(seed)
    clean = _render(clean_spec, rng)
    noise = _render(noise_spec, rng)
    p_clean = signal_power(clean)
    p_noise = signal_power(noise)
    if p_clean <= 0 or p_noise <= 0:
        raise InvalidInputError("clean and noise signals must have non-zero power")
    noise_scaled = noise * math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    sr = clean_spec.sample_rate
    return Waveform(clean, sr), Waveform(noise_scaled, sr), Waveform(clean + noise_scaled, sr)


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------


def load_wav(path) -> Waveform:
    """Read a PCM16 or float32 WAV file; multi-channel input keeps channel 0."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such WAV file: {path}")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            sr, data = wavfile.read(path)
    except OSError:
        raise
    except Exception as exc:  # scipy signals bad headers with assorted exception types
        raise WavFormatError(f"{path}: malformed or unsupported WAV ({exc})") from exc
    if data.ndim == 2:
        data = data[:, 0]
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise WavFormatError(f"{path}: unsupported sample format {data.dtype}")
    if samples.size == 0:
        raise WavFormatError(f"{path}: no samples")
    return Waveform(samples, sr)


def save_wav(w: Waveform, path, encoding: str = "pcm16") -> None:
    """Write ``w`` as mono WAV, ``encoding`` one of ``"pcm16"`` or ``"float32"``."""
    if encoding == "pcm16":
        data = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype(np.int16)
    elif encoding == "float32":
        data = w.samples.astype(np.float32)
    else:
        raise InvalidInputError(f"unsupported WAV encoding {encoding!r}")
    wavfile.write(Path(path), w.sample_rate, data)
