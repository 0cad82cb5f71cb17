"""Plücker spectrogram transform, generalized RTFs and rank-based source counting.

For an ``M x K`` block ``X`` (``K`` consecutive STFT frames at one frequency)
the order-``K`` transform is the vector of all ``K x K`` minors of ``X``, taken
over row subsets in lexicographic order and scaled by ``1/K!``. Because
``minor(A @ S) = minor(A) * det(S)`` for every row subset, normalizing the
transform by one of its entries cancels the source-dependent factor
``det(S)`` and leaves a vector that depends only on the column space of the
transfer-function matrix ``A``. With ``K = 1`` this is the ordinary relative
transfer function.

Everything here works on single blocks and, through the ``*_batch``
variants, on stacks of blocks with arbitrary leading dimensions.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .spectral import MultiFrameBlock, SpectrogramTensor

DEFAULT_VALID_TOL = 1e-6
DEFAULT_RANK_TOL = 1e-8
# relative to the Hadamard bound; rounding noise of rank-deficient blocks sits near 1e-16
DEFAULT_SINGULAR_TOL = 1e-10


class Normalization(str, enum.Enum):
    FIRST_ENTRY = "first-entry"
    ANCHOR_MAX = "anchor-max"


@dataclass(frozen=True)
class CombinationIndex:
    """Lexicographically ordered ``K``-subsets of ``{1, ..., M}``.

    ``subsets`` holds 1-based tuples for display; ``rows`` holds the same
    subsets 0-based as an ``(L, K)`` integer array for indexing.
    """

    M: int
    K: int
    subsets: tuple[tuple[int, ...], ...]
    rows: np.ndarray

    @property
    def L(self) -> int:
        return len(self.subsets)


_COMBINATION_CACHE: dict[tuple[int, int], CombinationIndex] = {}


def combinations(M: int, K: int) -> CombinationIndex:
    if not 1 <= K <= M:
        raise DataError(f"need 1 <= K <= M, got M={M}, K={K}")
    key = (M, K)
    if key not in _COMBINATION_CACHE:
        subsets = tuple(
            tuple(i + 1 for i in c) for c in itertools.combinations(range(M), K)
        )
        rows = np.array(subsets, dtype=np.intp) - 1
        rows.setflags(write=False)
        _COMBINATION_CACHE[key] = CombinationIndex(M, K, subsets, rows)
    return _COMBINATION_CACHE[key]


# ---------------------------------------------------------------- determinants


def _det_cofactor(A: np.ndarray) -> np.ndarray:
    K = A.shape[-1]
    if K == 1:
        return A[..., 0, 0].copy()
    if K == 2:
        return A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    a, b, c = A[..., 0, 0], A[..., 0, 1], A[..., 0, 2]
    d, e, f = A[..., 1, 0], A[..., 1, 1], A[..., 1, 2]
    g, h, i = A[..., 2, 0], A[..., 2, 1], A[..., 2, 2]
    return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)


def _det_elimination(A: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting, vectorized over the batch."""
    n = A.shape[-1]
    batch = A.shape[:-2]
    U = np.array(A, dtype=np.complex128).reshape(-1, n, n)
    B = U.shape[0]
    det = np.ones(B, dtype=np.complex128)
    ar = np.arange(B)
    for k in range(n):
        p = k + np.argmax(np.abs(U[:, k:, k]), axis=1)
        swap = p != k
        if swap.any():
            rows_k = U[ar, k, :].copy()
            U[ar, k, :] = U[ar, p, :]
            U[ar, p, :] = rows_k
            det[swap] = -det[swap]
        pivot = U[:, k, k]
        det *= pivot
        if k + 1 < n:
            safe = np.where(pivot == 0, 1.0, pivot)
            factors = U[:, k + 1:, k] / safe[:, None]
            factors[pivot == 0] = 0.0
            U[:, k + 1:, k:] -= factors[:, :, None] * U[:, None, k, k:]
    return det.reshape(batch)


def det_batch(A: np.ndarray) -> np.ndarray:
    """Determinants of a stack of square matrices, shape ``(..., K, K)``."""
    A = np.asarray(A)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise DataError(f"expected square matrices, got shape {A.shape}")
    if A.shape[-1] == 0:
        raise DataError("empty matrix has no determinant here")
    if A.shape[-1] <= 3:
        return _det_cofactor(A.astype(np.complex128, copy=False))
    return _det_elimination(A)


def det_small(A) -> complex:
    """Determinant of one small complex matrix.

    Closed-form cofactor expansion up to 3x3, pivoted elimination above.
    """
    A = np.asarray(A, dtype=np.complex128)
    if A.ndim != 2:
        raise DataError(f"expected a matrix, got shape {A.shape}")
    return complex(det_batch(A))


# ---------------------------------------------------------------- transform


@dataclass(frozen=True)
class PluckerVector:
    coords: np.ndarray
    M: int
    K: int


@dataclass(frozen=True)
class Grtf:
    """Normalized Plücker vector; ``values[anchor_index] == 1`` when valid."""

    values: np.ndarray
    anchor_index: int
    valid: bool
    M: int
    K: int


def _as_matrix(X) -> np.ndarray:
    if isinstance(X, MultiFrameBlock):
        return X.entries
    return np.asarray(X, dtype=np.complex128)


def plucker_coords(X: np.ndarray, idx: CombinationIndex | None = None) -> np.ndarray:
    """Order-K transform of a stack of blocks ``(..., M, K)`` -> ``(..., L)``."""
    X = np.asarray(X, dtype=np.complex128)
    M, K = X.shape[-2:]
    if idx is None:
        idx = combinations(M, K)
    if (idx.M, idx.K) != (M, K):
        raise DataError(
            f"block is {M}x{K} but combination index is for M={idx.M}, K={idx.K}"
        )
    minors = X[..., idx.rows, :]  # (..., L, K, K)
    return det_batch(minors) / math.factorial(K)


def plucker_transform(X, idx: CombinationIndex | None = None) -> PluckerVector:
    A = _as_matrix(X)
    if A.ndim != 2:
        raise DataError(f"expected an M x K block, got shape {A.shape}")
    M, K = A.shape
    if K > M:
        raise DataError(f"order K={K} exceeds channel count M={M}")
    return PluckerVector(plucker_coords(A, idx), M, K)


def hadamard_scale(X: np.ndarray) -> np.ndarray:
    """Upper bound on every ``|coord|`` of the transform: prod of column norms / K!.

    Used as the reference magnitude when deciding that a block is numerically
    rank deficient (all minors vanish up to rounding).
    """
    X = np.asarray(X)
    K = X.shape[-1]
    return np.prod(np.linalg.norm(X, axis=-2), axis=-1) / math.factorial(K)


def normalize_batch(coords: np.ndarray, strategy=Normalization.FIRST_ENTRY,
                    rel_tol: float = DEFAULT_VALID_TOL, scale=None,
                    singular_tol: float = DEFAULT_SINGULAR_TOL):
    """Vectorized normalization of Plücker vectors ``(..., L)``.

    Returns ``(values, anchors, valid)``. Invalid entries get ``values`` of 0.
    ``scale`` is an optional reference magnitude per vector; when given, a
    vector whose largest coordinate falls below ``singular_tol * scale`` is
    treated as identically zero.
    """
    strategy = Normalization(strategy)
    coords = np.asarray(coords, dtype=np.complex128)
    mag = np.abs(coords)
    peak = mag.max(axis=-1)
    if strategy is Normalization.FIRST_ENTRY:
        anchors = np.zeros(peak.shape, dtype=np.intp)
        valid = (peak > 0) & (mag[..., 0] >= rel_tol * peak)
    else:
        anchors = np.argmax(mag, axis=-1)
        valid = peak > 0
    if scale is not None:
        valid &= peak >= singular_tol * np.asarray(scale)
    denom = np.take_along_axis(coords, anchors[..., None], axis=-1)
    denom = np.where(valid[..., None], denom, 1.0)
    values = np.where(valid[..., None], coords / denom, 0.0)
    # exact anchor, independent of rounding in the division
    np.put_along_axis(values, anchors[..., None], np.where(valid, 1.0, 0.0)[..., None], axis=-1)
    return values, anchors, valid


def normalize(p: PluckerVector, strategy=Normalization.FIRST_ENTRY,
              rel_tol: float = DEFAULT_VALID_TOL, scale: float | None = None) -> Grtf:
    """Divide a Plücker vector by its anchor entry.

    ``FIRST_ENTRY`` always anchors on the first coordinate and flags the
    result invalid when that coordinate is tiny relative to the largest one.
    ``ANCHOR_MAX`` anchors on the largest coordinate and records its index.
    A zero vector is invalid under either strategy. Invalidity is reported
    through ``Grtf.valid``, never raised.
    """
    coords = np.asarray(p.coords, dtype=np.complex128)
    if coords.size < 1:
        raise DataError("empty Plücker vector")
    values, anchor, valid = normalize_batch(coords, strategy, rel_tol, scale)
    return Grtf(values, int(anchor), bool(valid), p.M, p.K)


def grtf_batch(X: np.ndarray, strategy=Normalization.FIRST_ENTRY,
               rel_tol: float = DEFAULT_VALID_TOL, idx: CombinationIndex | None = None,
               singular_tol: float = DEFAULT_SINGULAR_TOL):
    """GRTFs for a stack of ``(..., M, K)`` blocks; see :func:`normalize_batch`."""
    X = np.asarray(X, dtype=np.complex128)
    M, K = X.shape[-2:]
    if K >= M:
        raise DataError(f"GRTF requires K < M, got K={K}, M={M}")
    coords = plucker_coords(X, idx)
    return normalize_batch(coords, strategy, rel_tol, hadamard_scale(X), singular_tol)


def grtf(X, idx: CombinationIndex | None = None, strategy=Normalization.FIRST_ENTRY,
         rel_tol: float = DEFAULT_VALID_TOL) -> Grtf:
    """Generalized relative transfer function of one ``M x K`` block (``K < M``)."""
    A = _as_matrix(X)
    if A.ndim != 2:
        raise DataError(f"expected an M x K block, got shape {A.shape}")
    M, K = A.shape
    values, anchor, valid = grtf_batch(A, strategy, rel_tol, idx)
    return Grtf(values, int(anchor), bool(valid), M, K)


# ---------------------------------------------------------------- rank / counting


def rank_batch(X: np.ndarray, rel_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Numerical rank of a stack of matrices ``(..., M, K)``."""
    s = np.linalg.svd(np.asarray(X, dtype=np.complex128), compute_uv=False)
    smax = s[..., :1]
    return np.sum((s >= rel_tol * smax) & (smax > 0), axis=-1)


def numerical_rank(X, rel_tol: float = DEFAULT_RANK_TOL) -> int:
    """Number of singular values at least ``rel_tol * sigma_max``; 0 for a zero block."""
    if not 0 < rel_tol < 1:
        raise DataError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    return int(rank_batch(_as_matrix(X), rel_tol))


def _count_from_blocks(blocks_by_order, M: int, rel_tol: float) -> np.ndarray:
    count = None
    for K, blocks in enumerate(blocks_by_order, start=1):
        r = rank_batch(blocks, rel_tol)
        if count is None:
            count = np.full(r.shape, -1, dtype=np.int64)
        hit = (count < 0) & (r < K)
        count[hit] = r[hit]
    count[count < 0] = M - 1
    return count


def count_sources(spec: SpectrogramTensor, f: int, t: int,
                  rel_tol: float = DEFAULT_RANK_TOL) -> int:
    """Number of active sources at ``(f, t)`` from the ranks of growing blocks.

    Tries ``K = 1 .. M-1`` and returns the rank of the first block that is
    rank deficient. If none is, returns ``M - 1``, meaning "at least M - 1".
    """
    M = spec.M
    if M < 2:
        raise DataError("source counting needs at least two channels")
    if t < 0 or t + M - 2 >= spec.T:
        raise DataError(f"need frames {t}..{t + M - 2}, spectrogram has T={spec.T}")
    blocks = [spec.bins[f, t:t + K, :].T for K in range(1, M)]
    return int(_count_from_blocks(blocks, M, rel_tol))


def count_sources_all(spec: SpectrogramTensor, rel_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """:func:`count_sources` at every ``(f, t)`` with enough frames; shape ``(F, T-M+2)``."""
    M = spec.M
    if M < 2:
        raise DataError("source counting needs at least two channels")
    n_t = spec.T - M + 2
    if n_t < 1:
        raise DataError(f"need at least {M - 1} frames, spectrogram has T={spec.T}")
    blocks = []
    for K in range(1, M):
        idx = np.arange(n_t)[:, None] + np.arange(K)[None, :]
        blocks.append(spec.bins[:, idx, :].transpose(0, 1, 3, 2))  # (F, n_t, M, K)
    return _count_from_blocks(blocks, M, rel_tol)
