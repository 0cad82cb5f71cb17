"""Multichannel STFT and multi-frame block extraction.

Spectrograms are stored as complex128 arrays indexed ``(f, t, m)``. Only the
strictly positive frequency bins ``1 .. fft_len // 2`` are kept, so a
256-point FFT yields ``F = 128`` bins with the Nyquist bin last.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ConfigError, DataError

WINDOW_KINDS = ("hann", "hamming", "blackman", "rect")


def make_window(kind: str, n: int) -> np.ndarray:
    """Periodic (DFT-even) analysis window of length ``n``."""
    k = np.arange(n) / n
    if kind == "hann":
        return 0.5 - 0.5 * np.cos(2 * np.pi * k)
    if kind == "hamming":
        return 0.54 - 0.46 * np.cos(2 * np.pi * k)
    if kind == "blackman":
        return 0.42 - 0.5 * np.cos(2 * np.pi * k) + 0.08 * np.cos(4 * np.pi * k)
    if kind == "rect":
        return np.ones(n)
    raise ConfigError(f"unknown window kind {kind!r}; expected one of {WINDOW_KINDS}")


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 256
    hop: int = 128
    window: str = "hann"
    fft_len: int | None = None

    def __post_init__(self):
        if self.fft_len is None:
            object.__setattr__(self, "fft_len", self.window_len)
        if self.window not in WINDOW_KINDS:
            raise ConfigError(f"unknown window kind {self.window!r}")
        if not 0 < self.hop <= self.window_len <= self.fft_len:
            raise ConfigError(
                "need 0 < hop <= window_len <= fft_len, got "
                f"hop={self.hop}, window_len={self.window_len}, fft_len={self.fft_len}"
            )

    @property
    def n_freqs(self) -> int:
        return self.fft_len // 2

    def bin_frequencies(self, sample_rate: float) -> np.ndarray:
        """Centre frequency in Hz of every retained bin."""
        return np.arange(1, self.n_freqs + 1) * sample_rate / self.fft_len

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.window_len:
            return 0
        return (n_samples - self.window_len) // self.hop + 1


@dataclass(frozen=True)
class MultichannelSignal:
    """Real time-domain samples, shape ``(M, n)``."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[np.newaxis, :]
        if x.ndim != 2 or x.shape[0] < 1:
            raise DataError(f"samples must be (channels, n), got shape {x.shape}")
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    @classmethod
    def from_channels(cls, channels, sample_rate: int) -> "MultichannelSignal":
        """Build from a sequence of per-channel arrays; lengths must agree."""
        lengths = {len(c) for c in channels}
        if len(lengths) != 1:
            raise DataError(f"inconsistent channel lengths: {sorted(lengths)}")
        return cls(np.vstack([np.asarray(c, dtype=np.float64) for c in channels]), sample_rate)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    def __len__(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class SpectrogramTensor:
    bins: np.ndarray
    sample_rate: int
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        b = np.array(self.bins, dtype=np.complex128)
        if b.ndim != 3:
            raise DataError(f"bins must be indexed (f, t, m), got shape {b.shape}")
        if b.shape[0] != self.config.n_freqs:
            raise DataError(
                f"{b.shape[0]} frequency bins but config implies {self.config.n_freqs}"
            )
        b.setflags(write=False)
        object.__setattr__(self, "bins", b)

    @property
    def F(self) -> int:
        return self.bins.shape[0]

    @property
    def T(self) -> int:
        return self.bins.shape[1]

    @property
    def M(self) -> int:
        return self.bins.shape[2]

    def frequencies(self) -> np.ndarray:
        return self.config.bin_frequencies(self.sample_rate)

    def segment(self, t: int, K: int) -> np.ndarray:
        """All blocks starting at frame ``t``, shape ``(F, M, K)``."""
        _check_frames(self, t, K)
        return np.ascontiguousarray(self.bins[:, t:t + K, :].transpose(0, 2, 1))

    def segments(self, K: int, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Blocks for every start frame ``0, stride, ...``.

        Returns ``(starts, blocks)`` with ``blocks`` of shape
        ``(n_starts, F, M, K)``.
        """
        starts = segment_starts(self.T, K, stride)
        idx = starts[:, None] + np.arange(K)[None, :]
        blocks = self.bins[:, idx, :]  # (F, S, K, M)
        return starts, np.ascontiguousarray(blocks.transpose(1, 0, 3, 2))


@dataclass(frozen=True)
class MultiFrameBlock:
    """``M x K`` block whose column ``j`` is the observation at frame ``t + j``."""

    entries: np.ndarray
    f: int
    t: int

    @property
    def K(self) -> int:
        return self.entries.shape[1]

    @property
    def M(self) -> int:
        return self.entries.shape[0]


def stft(signal: MultichannelSignal, config: StftConfig = StftConfig()) -> SpectrogramTensor:
    """Short-time Fourier transform of every channel.

    Frames start at multiples of ``hop``; a trailing partial frame is dropped,
    so ``T = (n - window_len) // hop + 1``.
    """
    x = signal.samples
    n = x.shape[1]
    if n < config.window_len:
        raise DataError(
            f"signal has {n} samples, shorter than one window ({config.window_len})"
        )
    frames = np.lib.stride_tricks.sliding_window_view(x, config.window_len, axis=1)
    frames = frames[:, ::config.hop, :]  # (M, T, window_len)
    w = make_window(config.window, config.window_len)
    coeffs = np.fft.rfft(frames * w, n=config.fft_len, axis=-1)
    coeffs = coeffs[:, :, 1:config.n_freqs + 1]
    return SpectrogramTensor(coeffs.transpose(2, 1, 0), signal.sample_rate, config)


def _check_frames(spec: SpectrogramTensor, t: int, K: int):
    if K < 1:
        raise DataError(f"order K must be >= 1, got {K}")
    if t < 0 or t + K > spec.T:
        raise DataError(
            f"frames {t}..{t + K - 1} out of range for spectrogram with T={spec.T}"
        )


def extract_block(spec: SpectrogramTensor, f: int, t: int, K: int) -> MultiFrameBlock:
    _check_frames(spec, t, K)
    if not 0 <= f < spec.F:
        raise DataError(f"frequency index {f} out of range for F={spec.F}")
    return MultiFrameBlock(spec.bins[f, t:t + K, :].T.copy(), f, t)


def segment_starts(T: int, K: int, stride: int = 1) -> np.ndarray:
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if K < 1 or K > T:
        raise DataError(f"need 1 <= K <= T, got K={K}, T={T}")
    return np.arange(0, T - K + 1, stride)


def iter_blocks(spec: SpectrogramTensor, K: int, stride: int = 1) -> Iterator[MultiFrameBlock]:
    """Every block of order ``K``, frequency-major then by start frame."""
    starts = segment_starts(spec.T, K, stride)
    for f in range(spec.F):
        for t in starts:
            yield extract_block(spec, f, int(t), K)
