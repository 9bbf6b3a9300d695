"""Speech frontend: waveform loading, log-mel spectrogram and temporal derivative.

A 0.64 s window at 51200 Hz is 32768 samples; with hop 512 this yields exactly
64 spectrogram frames, i.e. four frames per video frame at 25 fps.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window, resample_poly


class AudioError(ValueError):
    """Raised for malformed waveforms or frontend configurations."""


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = 51200
    hop: int = 512
    fft_window: int = 1024
    mel_bands: int = 128
    window_seconds: float = 0.64
    log_floor: float = 1e-10
    pad: bool = False

    @property
    def window_samples(self) -> int:
        return int(round(self.window_seconds * self.sample_rate))

    @property
    def frames_per_window(self) -> int:
        return self.window_samples // self.hop

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "FrontendConfig":
        data = json.loads(Path(path).read_text())
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise AudioError(f"unknown frontend config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError(f"waveform must be mono 1-D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


# Slaney mel scale: linear below 1 kHz, logarithmic above.
_F_SP = 200.0 / 3
_MIN_LOG_HZ = 1000.0
_MIN_LOG_MEL = _MIN_LOG_HZ / _F_SP
_LOGSTEP = math.log(6.4) / 27.0


def hz_to_mel(freq):
    freq = np.asarray(freq, dtype=np.float64)
    mel = freq / _F_SP
    log_region = freq >= _MIN_LOG_HZ
    mel = np.where(log_region, _MIN_LOG_MEL + np.log(np.maximum(freq, 1e-12) / _MIN_LOG_HZ) / _LOGSTEP, mel)
    return mel


def mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    freq = _F_SP * mel
    return np.where(mel >= _MIN_LOG_MEL, _MIN_LOG_HZ * np.exp(_LOGSTEP * (mel - _MIN_LOG_MEL)), freq)


def mel_band_edges(sample_rate: int, mel_bands: int, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Return the ``mel_bands + 2`` band edge frequencies in Hz."""
    fmax = sample_rate / 2 if fmax is None else fmax
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), mel_bands + 2))


def mel_filterbank(sample_rate: int, n_fft: int, mel_bands: int) -> np.ndarray:
    """Slaney-normalised triangular filterbank of shape (mel_bands, n_fft // 2 + 1)."""
    fft_freqs = np.linspace(0, sample_rate / 2, n_fft // 2 + 1)
    edges = mel_band_edges(sample_rate, mel_bands)
    widths = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / widths[:-1, None]
    upper = ramps[2:] / widths[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    return weights


def _stft_magnitude(samples: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    padded = np.pad(samples, n_fft // 2, mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_fft)[::hop]
    window = get_window("hann", n_fft, fftbins=True)
    return np.abs(np.fft.rfft(frames * window, axis=-1))


def log_mel(samples: np.ndarray, cfg: FrontendConfig = FrontendConfig()) -> np.ndarray:
    """Log mel magnitudes for an arbitrary-length signal.

    Frames are centred with reflect padding; only the ``len // hop`` frames
    whose centres fall inside the signal are kept. Returns (frames, mel_bands).
    """
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) < cfg.fft_window:
        raise AudioError(f"signal of {len(samples)} samples is shorter than one FFT window")
    mag = _stft_magnitude(samples, cfg.fft_window, cfg.hop)[: len(samples) // cfg.hop]
    mel = mag @ mel_filterbank(cfg.sample_rate, cfg.fft_window, cfg.mel_bands).T
    return np.log(np.maximum(mel, cfg.log_floor)).astype(np.float32)


def compute_lms(w: Waveform, cfg: FrontendConfig = FrontendConfig()) -> np.ndarray:
    """Log-mel spectrogram of exactly one window; (64, 128) with default config."""
    if w.sample_rate != cfg.sample_rate:
        w = resample(w, cfg.sample_rate)
    n = cfg.window_samples
    samples = w.samples
    if len(samples) < n:
        if not cfg.pad:
            raise AudioError(
                f"window has {len(samples)} samples, need {n}; set pad=True to zero-pad"
            )
        samples = np.pad(samples, (0, n - len(samples)))
    elif len(samples) > n:
        raise AudioError(f"window has {len(samples)} samples, expected exactly {n}")
    return log_mel(samples, cfg)


def temporal_derivative(f):
    """Finite difference along the time axis (second to last).

    Accepts numpy arrays or torch tensors of shape (..., T, F).
    """
    if f.ndim < 2 or f.shape[-2] < 2:
        raise ValueError(f"temporal derivative needs at least 2 time steps, got shape {tuple(f.shape)}")
    return f[..., 1:, :] - f[..., :-1, :]


def resample(w: Waveform, target_rate: int) -> Waveform:
    if w.sample_rate == target_rate:
        return w
    g = math.gcd(int(w.sample_rate), int(target_rate))
    out = resample_poly(w.samples, target_rate // g, w.sample_rate // g)
    return Waveform(out, target_rate)


def load_audio(path, cfg: FrontendConfig = FrontendConfig()) -> Waveform:
    """Read a PCM wav file (int or float, mono or stereo) resampled to ``cfg.sample_rate``."""
    rate, data = wavfile.read(str(path))
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max + 1)
    else:
        data = data.astype(np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    return resample(Waveform(data, int(rate)), cfg.sample_rate)


def save_audio(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32767), -32768, 32767).astype(np.int16)
    wavfile.write(str(path), int(w.sample_rate), pcm)


def split_windows(w: Waveform, starts_in_frames, fps: float = 25.0, frames: int = 16):
    """Cut audio windows aligned with video windows starting at the given frame indices."""
    spf = w.sample_rate / fps
    out = []
    for s in starts_in_frames:
        a = int(round(s * spf))
        b = a + int(round(frames * spf))
        out.append(Waveform(w.samples[a:b], w.sample_rate))
    return out
