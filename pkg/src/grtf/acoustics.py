"""Synthetic transfer functions, scene simulation and noise injection.

A transfer function here is parametric: a direct path with a (possibly
fractional) delay in samples and a gain, plus an optional integer-lag
reflection FIR. Its frequency response is evaluated exactly at any
frequency, and time-domain synthesis applies that same response on a fine
FFT grid, so the ATFs stored in an :class:`AtfSet` are exactly the
responses used to render scenes.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import next_fast_len

from .errors import ConfigError, DataError
from .spectral import MultichannelSignal, SpectrogramTensor, StftConfig

FREE_FIELD = "free-field"
SYNTHETIC_ROOM = "synthetic-room"


@dataclass(frozen=True)
class Direction:
    id: int
    azimuth: float
    elevation: float

    def __post_init__(self):
        object.__setattr__(self, "azimuth", wrap_azimuth(self.azimuth))

    def unit_vector(self) -> np.ndarray:
        """Unit vector pointing from the array toward the source."""
        az, el = np.deg2rad(self.azimuth), np.deg2rad(self.elevation)
        return np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])


def wrap_azimuth(az: float) -> float:
    """Wrap degrees into ``[-180, 180)``."""
    return float((az + 180.0) % 360.0 - 180.0)


def azimuth_distance(a, b):
    """Circular absolute difference in degrees."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 360.0
    return np.minimum(d, 360.0 - d)


class DirectionSet(tuple):
    """Tuple of :class:`Direction` with unique ids, addressable by id."""

    def __new__(cls, directions):
        directions = tuple(directions)
        ids = [d.id for d in directions]
        if len(set(ids)) != len(ids):
            raise ConfigError("direction ids must be unique")
        return super().__new__(cls, directions)

    def by_id(self, i: int) -> Direction:
        for d in self:
            if d.id == i:
                return d
        raise DataError(f"unknown direction id {i}")

    @property
    def ids(self) -> list[int]:
        return [d.id for d in self]

    def position(self, i: int) -> int:
        for n, d in enumerate(self):
            if d.id == i:
                return n
        raise DataError(f"unknown direction id {i}")


def random_directions(n: int, seed: int, azimuth_range=(-180.0, 180.0),
                      elevation_range=(-10.0, 10.0), min_azimuth_sep: float = 1.0,
                      min_elevation_sep: float = 3.0) -> DirectionSet:
    """Draw ``n`` random directions, ids assigned in order of increasing azimuth.

    A candidate is rejected if it lies within ``min_azimuth_sep`` in azimuth
    *and* within ``min_elevation_sep`` in elevation of an accepted direction.
    """
    rng = np.random.default_rng(seed)
    accepted: list[tuple[float, float]] = []
    tries = 0
    while len(accepted) < n:
        tries += 1
        if tries > 1000 * n:
            raise ConfigError(f"cannot place {n} directions with the requested spacing")
        az = rng.uniform(*azimuth_range)
        el = rng.uniform(*elevation_range)
        if all(
            azimuth_distance(az, a) >= min_azimuth_sep or abs(el - e) >= min_elevation_sep
            for a, e in accepted
        ):
            accepted.append((az, el))
    accepted.sort()
    return DirectionSet(Direction(i, az, el) for i, (az, el) in enumerate(accepted))


@dataclass(frozen=True)
class MicArray:
    positions: np.ndarray
    speed_of_sound: float = 343.0

    def __post_init__(self):
        p = np.array(self.positions, dtype=float)
        if p.ndim != 2 or p.shape[1] != 3 or p.shape[0] < 2:
            raise ConfigError(f"need at least 2 microphone positions in 3D, got {p.shape}")
        d = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)
        if np.any(d[np.triu_indices(len(p), 1)] == 0):
            raise ConfigError("microphone positions must be pairwise distinct")
        if self.speed_of_sound <= 0:
            raise ConfigError("speed_of_sound must be positive")
        p.setflags(write=False)
        object.__setattr__(self, "positions", p)

    @property
    def M(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def tetrahedron(cls, radius: float = 0.1, speed_of_sound: float = 343.0) -> "MicArray":
        v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
        return cls(radius * v / np.sqrt(3.0), speed_of_sound)

    def delays(self, directions) -> np.ndarray:
        """Plane-wave arrival delays in seconds relative to the origin, ``(N, M)``."""
        u = np.array([d.unit_vector() for d in directions]).reshape(-1, 3)
        return -(u @ self.positions.T) / self.speed_of_sound


@dataclass(frozen=True)
class AtfSet:
    """Transfer functions for every direction, shape ``atf[f, n, m]``.

    ``direct_delay`` and ``direct_gain`` are ``(N, M)``; ``taps`` is
    ``(N, M, R)`` reflection FIR coefficients at integer lags ``0 .. R-1``.
    """

    atf: np.ndarray
    directions: DirectionSet
    sample_rate: int
    fft_len: int
    kind: str
    direct_delay: np.ndarray
    direct_gain: np.ndarray
    taps: np.ndarray
    seed: int | None = None
    params: dict = field(default_factory=dict)

    @property
    def F(self) -> int:
        return self.atf.shape[0]

    @property
    def N(self) -> int:
        return self.atf.shape[1]

    @property
    def M(self) -> int:
        return self.atf.shape[2]

    def frequencies(self) -> np.ndarray:
        return np.arange(1, self.F + 1) * self.sample_rate / self.fft_len

    def matrix(self, f: int, ids) -> np.ndarray:
        """``M x K`` matrix of transfer vectors for directions ``ids`` at bin ``f``."""
        cols = [self.directions.position(i) for i in ids]
        return self.atf[f][cols].T

    def matrices(self, ids) -> np.ndarray:
        """``(F, M, K)`` stack of :meth:`matrix` over all bins."""
        cols = [self.directions.position(i) for i in ids]
        return self.atf[:, cols, :].transpose(0, 2, 1)

    def frequency_response(self, omega: np.ndarray, ids=None) -> np.ndarray:
        """Response at normalized angular frequencies ``omega`` (rad/sample).

        Returns ``(len(omega), K, M)`` for the directions ``ids`` (all when None).
        """
        cols = slice(None) if ids is None else [self.directions.position(i) for i in ids]
        omega = np.asarray(omega, dtype=float)
        d = self.direct_delay[cols]
        g = self.direct_gain[cols]
        H = g[None] * np.exp(-1j * omega[:, None, None] * d[None])
        taps = self.taps[cols]
        if taps.shape[-1]:
            lags = np.arange(taps.shape[-1])
            basis = np.exp(-1j * np.outer(omega, lags))  # (W, R)
            H = H + np.einsum("wr,kmr->wkm", basis, taps)
        return H

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.atf).tobytes())
        h.update(np.ascontiguousarray(self.taps).tobytes())
        return h.hexdigest()[:16]


def _bin_omega(F: int, fft_len: int) -> np.ndarray:
    return 2 * np.pi * np.arange(1, F + 1) / fft_len


def _make_atfset(direct_delay, direct_gain, taps, dirs, F, sample_rate, fft_len, kind,
                 seed=None, params=None) -> AtfSet:
    tmp = AtfSet(np.zeros((F, len(dirs), direct_delay.shape[1]), complex), DirectionSet(dirs),
                 sample_rate, fft_len, kind, direct_delay, direct_gain, taps, seed, params or {})
    atf = tmp.frequency_response(_bin_omega(F, fft_len))
    for a in (atf, direct_delay, direct_gain, taps):
        a.setflags(write=False)
    return AtfSet(atf, tmp.directions, sample_rate, fft_len, kind, direct_delay,
                  direct_gain, taps, seed, params or {})


def freefield_atf(array: MicArray, dirs, F: int = 128, sample_rate: int = 8000,
                  fft_len: int | None = None) -> AtfSet:
    """Far-field steering vectors: ``a[f, m] = exp(-2j*pi*f_hz*tau_m)``."""
    fft_len = fft_len or 2 * F
    dirs = DirectionSet(dirs)
    delay = array.delays(dirs) * sample_rate
    return _make_atfset(delay, np.ones_like(delay), np.zeros(delay.shape + (0,)),
                        dirs, F, sample_rate, fft_len, FREE_FIELD)


def synthetic_room_atf(array: MicArray, dirs, F: int = 128, sample_rate: int = 8000,
                       rir_len_ms: float = 10.0, decay: float = 600.0,
                       reflection_gain: float = 0.3, seed: int = 0,
                       fft_len: int | None = None) -> AtfSet:
    """Seeded random room responses no longer than ``rir_len_ms``.

    Each (microphone, direction) response is the free-field direct path,
    shifted by a common bulk delay that keeps it causal, followed by random
    Gaussian reflection taps with envelope ``reflection_gain *
    exp(-decay * lag_seconds)`` measured from the direct path. ``decay`` is in
    1/s; ``decay=inf`` leaves only the direct path.
    """
    if rir_len_ms <= 0:
        raise ConfigError("rir_len_ms must be positive")
    fft_len = fft_len or 2 * F
    dirs = DirectionSet(dirs)
    R = int(math.floor(rir_len_ms * 1e-3 * sample_rate))
    tau = array.delays(dirs) * sample_rate
    bulk = math.ceil(np.max(np.abs(tau))) + 1
    delay = bulk + tau
    if R <= math.ceil(delay.max()):
        raise ConfigError(f"rir_len_ms={rir_len_ms} too short for the array aperture")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(delay.shape + (R,))
    lag = np.arange(R)[None, None, :] - delay[..., None]
    with np.errstate(invalid="ignore"):
        envelope = np.where(lag > 0, reflection_gain * np.exp(-decay * lag / sample_rate), 0.0)
    taps = np.nan_to_num(noise * envelope)
    params = {"rir_len_ms": rir_len_ms, "decay": decay, "reflection_gain": reflection_gain,
              "bulk_delay": bulk}
    return _make_atfset(delay, np.ones_like(delay), taps, dirs, F, sample_rate, fft_len,
                        SYNTHETIC_ROOM, seed, params)


# ---------------------------------------------------------------- scenes


@dataclass(frozen=True)
class SceneConfig:
    source_directions: tuple[int, ...]
    duration_s: float = 1.0
    snr_db: float = math.inf
    seed: int = 0
    signal_kind: str = "white-noise"

    def __post_init__(self):
        dirs = tuple(int(i) for i in self.source_directions)
        if not dirs:
            raise ConfigError("a scene needs at least one source")
        if len(set(dirs)) != len(dirs):
            raise ConfigError(f"source directions must be distinct, got {dirs}")
        if self.duration_s <= 0:
            raise ConfigError("duration_s must be positive")
        if self.signal_kind != "white-noise":
            raise ConfigError(f"unsupported signal kind {self.signal_kind!r}")
        object.__setattr__(self, "source_directions", dirs)

    @property
    def K(self) -> int:
        return len(self.source_directions)

    def seeds(self) -> tuple[np.random.SeedSequence, list[np.random.SeedSequence]]:
        """Noise seed and one seed per source; source k's seed does not depend on K."""
        noise = np.random.SeedSequence(self.seed, spawn_key=(0,))
        sources = [np.random.SeedSequence(self.seed, spawn_key=(k + 1,)) for k in range(self.K)]
        return noise, sources


def source_signals(cfg: SceneConfig, n_samples: int) -> np.ndarray:
    """White Gaussian source signals, ``(K, n_samples)``, unit variance."""
    _, seeds = cfg.seeds()
    return np.vstack([np.random.default_rng(s).standard_normal(n_samples) for s in seeds])


def convolve_sources(atfs: AtfSet, ids, sources: np.ndarray) -> np.ndarray:
    """Noiseless mixture ``sum_k h(m, theta_k) * s_k``, shape ``(M, n)``.

    Filtering is done on a zero-padded FFT grid with the exact parametric
    response, so fractional direct-path delays are band-limited and ideal.
    """
    sources = np.atleast_2d(np.asarray(sources, dtype=float))
    ids = list(ids)
    if len(ids) != sources.shape[0]:
        raise DataError(f"{len(ids)} directions but {sources.shape[0]} source signals")
    n = sources.shape[1]
    pad = atfs.taps.shape[-1] + int(np.ceil(np.abs(atfs.direct_delay).max())) + 64
    nfft = next_fast_len(n + pad, real=True)
    omega = 2 * np.pi * np.arange(nfft // 2 + 1) / nfft
    H = atfs.frequency_response(omega, ids)  # (W, K, M)
    S = np.fft.rfft(sources, nfft, axis=-1)  # (K, W)
    X = np.einsum("wkm,kw->mw", H, S)
    return np.fft.irfft(X, nfft, axis=-1)[:, :n]


def add_noise(signal: MultichannelSignal, snr_db: float, seed) -> MultichannelSignal:
    """Add white Gaussian noise at a total-power SNR of ``snr_db``.

    The realized noise is rescaled so that (total clean power) / (total noise
    power) matches the target exactly. ``snr_db = inf`` returns the input.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return signal
    x = signal.samples
    power = np.mean(x ** 2)
    if power == 0:
        raise DataError("cannot set an SNR relative to a zero-power signal")
    noise = np.random.default_rng(seed).standard_normal(x.shape)
    noise *= np.sqrt(power / 10 ** (snr_db / 10) / np.mean(noise ** 2))
    return MultichannelSignal(x + noise, signal.sample_rate)


def measured_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    clean = np.asarray(clean)
    return float(10 * np.log10(np.mean(clean ** 2) / np.mean((np.asarray(noisy) - clean) ** 2)))


def simulate_scene(atfs: AtfSet, cfg: SceneConfig) -> MultichannelSignal:
    """Time-domain mixture of white-noise sources at the configured SNR."""
    for i in cfg.source_directions:
        atfs.directions.position(i)
    n = int(round(cfg.duration_s * atfs.sample_rate))
    clean = convolve_sources(atfs, cfg.source_directions, source_signals(cfg, n))
    noise_seed, _ = cfg.seeds()
    return add_noise(MultichannelSignal(clean, atfs.sample_rate), cfg.snr_db, noise_seed)


def _complex_gaussian(seed, shape) -> np.ndarray:
    g = np.random.default_rng(seed)
    return (g.standard_normal(shape) + 1j * g.standard_normal(shape)) / np.sqrt(2)


def simulate_spectrogram(atfs: AtfSet, cfg: SceneConfig, n_frames: int,
                         source_gain: np.ndarray | None = None,
                         mixing: np.ndarray | None = None) -> SpectrogramTensor:
    """Mixture synthesized directly in the STFT domain: ``x_ft = A_f s_ft``.

    This is the narrowband model exactly, with no convolution-to-product
    approximation error, so noiseless blocks have exact rank. Sources are
    circular complex Gaussian. ``source_gain`` ``(K, F)`` scales each source
    per bin (zero makes a source silent there). ``mixing`` ``(K, K)``
    replaces the independent sources ``s`` by ``mixing @ s`` (e.g. to make
    two sources perfectly correlated). Noise, when ``snr_db`` is finite, is
    complex Gaussian scaled on total power.
    """
    F = atfs.F
    _, seeds = cfg.seeds()
    s = np.stack([_complex_gaussian(sd, (F, n_frames)) for sd in seeds], axis=-1)  # (F, T, K)
    if mixing is not None:
        s = s @ np.asarray(mixing).T
    if source_gain is not None:
        s = s * np.asarray(source_gain).T[:, None, :]
    A = atfs.matrices(cfg.source_directions)  # (F, M, K)
    X = np.einsum("fmk,ftk->ftm", A, s)
    if not math.isinf(cfg.snr_db):
        power = np.mean(np.abs(X) ** 2)
        if power == 0:
            raise DataError("cannot set an SNR relative to a zero-power signal")
        noise = _complex_gaussian(cfg.seeds()[0], X.shape)
        noise *= np.sqrt(power / 10 ** (cfg.snr_db / 10) / np.mean(np.abs(noise) ** 2))
        X = X + noise
    config = StftConfig(window_len=atfs.fft_len, hop=atfs.fft_len // 2, fft_len=atfs.fft_len)
    return SpectrogramTensor(X, atfs.sample_rate, config)
