"""Log-Mel / phase front-end and center-frame windowing."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOG_EPS = 1e-12
FEATURE_MAGIC = b"ASDF"
FEATURE_VERSION = 1
_PI_F32 = float(np.nextafter(np.float32(np.pi), np.float32(0)))


class ClipTooShortError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def hann(n: int) -> np.ndarray:
    """Periodic Hann window of length ``n``."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def n_frames(n_samples: int, n_fft: int, hop: int) -> int:
    return (n_samples - n_fft) // hop + 1


def stft(waveform: np.ndarray, n_fft: int = 1024, hop: int = 512) -> np.ndarray:
    """Hann-windowed STFT without centre padding.

    Returns a complex array of shape ``(frames, n_fft // 2 + 1)``.
    """
    if n_fft <= 0 or n_fft & (n_fft - 1):
        raise ConfigError(f"n_fft must be a power of two, got {n_fft}")
    if hop <= 0:
        raise ConfigError(f"hop must be positive, got {hop}")
    x = np.asarray(waveform, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a mono waveform, got shape {x.shape}")
    if len(x) < n_fft:
        raise ClipTooShortError(f"clip too short: {len(x)} samples < n_fft={n_fft}")
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop]
    return np.fft.rfft(frames * hann(n_fft), axis=-1)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_fft: int = 1024,
    n_mels: int = 128,
    sample_rate: int = 16000,
    f_min: float = 0.0,
    f_max: float = 8000.0,
) -> np.ndarray:
    """Triangular HTK-mel filters, shape ``(n_mels, n_fft // 2 + 1)``.

    Band edges are equally spaced in mel between ``f_min`` and ``f_max``;
    each triangle peaks at 1 on its centre frequency.
    """
    if not 0 <= f_min < f_max <= sample_rate / 2:
        raise ConfigError(f"need 0 <= f_min < f_max <= sr/2, got f_min={f_min}, f_max={f_max}")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=1) == 0)
    if empty.size:
        raise ConfigError(
            f"{empty.size} mel filters have no FFT bin support "
            f"(n_mels={n_mels} too large for n_fft={n_fft}); first empty filter {empty[0]}"
        )
    return fb


def log_mel(spec: np.ndarray, fb: np.ndarray) -> np.ndarray:
    """``10 * log10(fb @ |spec|^2 + eps)`` per frame, shape ``(frames, n_mels)``."""
    if fb.shape[1] != spec.shape[-1]:
        raise ValueError(f"filterbank has {fb.shape[1]} bins, spectrogram has {spec.shape[-1]}")
    power = spec.real**2 + spec.imag**2
    return 10.0 * np.log10(power @ fb.T + LOG_EPS)


def phase_angles(spec: np.ndarray) -> np.ndarray:
    return np.arctan2(spec.imag, spec.real)


@dataclass
class FeatureClip:
    logmel: np.ndarray  # (frames, n_mels)
    phase: np.ndarray  # (frames, n_fft // 2 + 1)

    @property
    def frames(self) -> int:
        return self.logmel.shape[0]


def featurize(
    waveform: np.ndarray,
    n_fft: int = 1024,
    hop: int = 512,
    fb: np.ndarray | None = None,
) -> FeatureClip:
    spec = stft(waveform, n_fft, hop)
    if fb is None:
        fb = mel_filterbank(n_fft)
    return FeatureClip(log_mel(spec, fb), phase_angles(spec))


@dataclass
class FrameWindow:
    context: np.ndarray  # (n - 1, n_mels)
    phase_context: np.ndarray  # (n - 1, bins)
    center_target: np.ndarray  # (n_mels,)
    clip_index: int


@dataclass
class FrameWindows:
    """Batched windows; row ``i`` is one :class:`FrameWindow`."""

    context: np.ndarray  # (I, n - 1, n_mels)
    phase_context: np.ndarray  # (I, n - 1, bins)
    center_target: np.ndarray  # (I, n_mels)
    clip_index: np.ndarray  # (I,)

    def __len__(self) -> int:
        return len(self.center_target)

    def __getitem__(self, i: int) -> FrameWindow:
        return FrameWindow(
            self.context[i], self.phase_context[i], self.center_target[i], int(self.clip_index[i])
        )

    def take(self, idx) -> "FrameWindows":
        return FrameWindows(
            self.context[idx], self.phase_context[idx], self.center_target[idx], self.clip_index[idx]
        )

    @staticmethod
    def concatenate(parts: list["FrameWindows"]) -> "FrameWindows":
        return FrameWindows(
            np.concatenate([p.context for p in parts]),
            np.concatenate([p.phase_context for p in parts]),
            np.concatenate([p.center_target for p in parts]),
            np.concatenate([p.clip_index for p in parts]),
        )


def window_frames(
    logmel: np.ndarray, phase: np.ndarray, n: int = 5, stride: int = 1
) -> FrameWindows:
    """Slice ``n``-frame windows and hold out each window's centre frame.

    Windows start at offsets ``0, stride, 2*stride, ...``. The centre
    (0-based index ``n // 2``) is dropped from both streams and the log-Mel
    centre is kept as the prediction target.
    """
    if n % 2 == 0 or n < 3:
        raise ConfigError(f"window length must be odd and >= 3, got {n}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if phase.shape[0] != logmel.shape[0]:
        raise ValueError(f"log-Mel has {logmel.shape[0]} frames, phase has {phase.shape[0]}")
    total = logmel.shape[0]
    if total < n:
        raise ClipTooShortError(f"clip too short: {total} frames < window of {n}")
    starts = np.arange(0, total - n + 1, stride)
    keep = np.array([k for k in range(n) if k != n // 2])
    rows = starts[:, None] + keep[None, :]
    return FrameWindows(
        context=logmel[rows],
        phase_context=phase[rows],
        center_target=logmel[starts + n // 2],
        clip_index=starts,
    )


def write_features(path: str | Path, clip: FeatureClip) -> None:
    logmel = np.ascontiguousarray(clip.logmel, dtype="<f4")
    # float32(pi) rounds above pi; keep cached angles inside [-pi, pi]
    phase = np.ascontiguousarray(np.clip(clip.phase, -_PI_F32, _PI_F32), dtype="<f4")
    if logmel.shape[0] != phase.shape[0]:
        raise ValueError("log-Mel and phase frame counts differ")
    header = FEATURE_MAGIC + struct.pack(
        "<IIII", FEATURE_VERSION, logmel.shape[0], logmel.shape[1], phase.shape[1]
    )
    Path(path).write_bytes(header + logmel.tobytes() + phase.tobytes())


def read_features(path: str | Path) -> FeatureClip:
    buf = Path(path).read_bytes()
    if buf[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: not a feature cache file")
    version, frames, mels, bins = struct.unpack_from("<IIII", buf, 4)
    if version != FEATURE_VERSION:
        raise ValueError(f"{path}: unsupported feature cache version {version}")
    off = 20
    logmel = np.frombuffer(buf, "<f4", frames * mels, off).reshape(frames, mels)
    off += 4 * frames * mels
    phase = np.frombuffer(buf, "<f4", frames * bins, off).reshape(frames, bins)
    return FeatureClip(logmel.astype(np.float32), phase.astype(np.float32))
