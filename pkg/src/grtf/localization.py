"""GRTF dictionaries, nearest-neighbour localization and scoring."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .acoustics import AtfSet, DirectionSet, azimuth_distance
from .errors import DataError
from .plucker import DEFAULT_VALID_TOL, Normalization, combinations, grtf_batch
from .spectral import SpectrogramTensor


@dataclass(frozen=True)
class GrtfDictionary:
    """Concatenated-over-frequency GRTFs for every K-subset of directions.

    ``tuples[c]`` is the increasing id tuple of entry ``c``; entries are in
    lexicographic order of these tuples. ``values`` is ``(C, F, L)`` with
    zeros in invalid bins, ``valid`` and ``anchors`` are ``(C, F)``.
    """

    tuples: np.ndarray
    values: np.ndarray
    valid: np.ndarray
    anchors: np.ndarray
    directions: DirectionSet
    meta: dict

    @property
    def K(self) -> int:
        return int(self.meta["K"])

    @property
    def M(self) -> int:
        return int(self.meta["M"])

    @property
    def F(self) -> int:
        return int(self.meta["F"])

    @property
    def strategy(self) -> Normalization:
        return Normalization(self.meta["strategy"])

    def __len__(self) -> int:
        return len(self.tuples)

    def entry(self, ids) -> int:
        key = tuple(sorted(int(i) for i in ids))
        hits = np.flatnonzero((self.tuples == np.array(key)).all(axis=1))
        if not len(hits):
            raise DataError(f"no dictionary entry for directions {key}")
        return int(hits[0])


@dataclass(frozen=True)
class QueryGrtf:
    values: np.ndarray
    valid: np.ndarray
    anchors: np.ndarray
    t: int
    K: int
    M: int
    strategy: Normalization


@dataclass(frozen=True)
class LocalizationResult:
    estimated: tuple[int, ...] | None
    distance: float
    valid_bin_count: int
    segment: tuple[int, int]

    @property
    def decided(self) -> bool:
        return self.estimated is not None


@dataclass
class ErrorReport:
    mean_abs_azimuth_error: float
    exact_match_rate: float
    source_match_rate: float
    n_tasks: int
    no_decision: int
    per_task: list[dict] = field(default_factory=list)


def build_dictionary(atfs: AtfSet, K: int, strategy=Normalization.FIRST_ENTRY,
                     rel_tol: float = DEFAULT_VALID_TOL, ids=None) -> GrtfDictionary:
    if K >= atfs.M:
        raise DataError(f"dictionary order K={K} must be below M={atfs.M}")
    strategy = Normalization(strategy)
    ids = sorted(atfs.directions.ids if ids is None else ids)
    if len(ids) < K:
        raise DataError(f"{len(ids)} directions cannot form {K}-subsets")
    tuples = np.array(list(itertools.combinations(ids, K)), dtype=np.int64).reshape(-1, K)
    cols = np.array([[atfs.directions.position(i) for i in row] for row in tuples])
    A = atfs.atf[:, cols, :]  # (F, C, K, M)
    A = A.transpose(1, 0, 3, 2)  # (C, F, M, K)
    values, anchors, valid = grtf_batch(A, strategy, rel_tol, combinations(atfs.M, K))
    meta = {"M": atfs.M, "K": K, "F": atfs.F, "strategy": strategy.value,
            "rel_tol": rel_tol, "atf_fingerprint": atfs.fingerprint()}
    for a in (tuples, values, valid, anchors):
        a.setflags(write=False)
    return GrtfDictionary(tuples, values, valid, anchors.astype(np.int64),
                          atfs.directions, meta)


def query_grtf(spec: SpectrogramTensor, t: int, K: int, strategy=Normalization.FIRST_ENTRY,
               rel_tol: float = DEFAULT_VALID_TOL) -> QueryGrtf:
    """Per-bin GRTFs of the K-frame segment starting at frame ``t``."""
    if t < 0 or t + K > spec.T:
        raise DataError(f"segment {t}..{t + K - 1} needs more frames than T={spec.T}")
    strategy = Normalization(strategy)
    values, anchors, valid = grtf_batch(spec.segment(t, K), strategy, rel_tol)
    return QueryGrtf(values, valid, anchors.astype(np.int64), t, K, spec.M, strategy)


def query_segments(spec: SpectrogramTensor, K: int, stride: int = 1,
                   strategy=Normalization.FIRST_ENTRY, rel_tol: float = DEFAULT_VALID_TOL):
    """Queries for every segment start, as stacked arrays.

    Returns ``(starts, values, valid, anchors)`` with leading dimension over
    segments.
    """
    starts, blocks = spec.segments(K, stride)
    values, anchors, valid = grtf_batch(blocks, Normalization(strategy), rel_tol)
    return starts, values, valid, anchors.astype(np.int64)


class Localizer:
    """Batched nearest-neighbour search against one dictionary.

    Squared distances are summed over mutually valid (and, for
    ``ANCHOR_MAX``, equally anchored) bins and rescaled by
    ``F / n_mutually_valid``. A candidate set within rounding of the minimum
    is re-scored exactly so that ties resolve to the lexicographically
    smallest id tuple.
    """

    def __init__(self, dictionary: GrtfDictionary):
        self.dictionary = dictionary
        d = dictionary
        self._anchor_values = np.unique(d.anchors[d.valid]) if d.valid.any() else np.array([0])
        self._groups = []
        power = np.sum(np.abs(d.values) ** 2, axis=-1)  # (C, F)
        for a in self._anchor_values:
            mask = (d.valid & (d.anchors == a)).astype(float)
            D = (d.values * mask[..., None]).reshape(len(d), -1)
            self._groups.append((a, mask, D.conj().T.copy(), (power * mask).T.copy()))

    def distances(self, values, valid, anchors):
        """Rescaled distances ``(S, C)`` and mutual-valid counts for stacked queries."""
        values = np.asarray(values).reshape(-1, *self.dictionary.values.shape[1:])
        valid = np.asarray(valid).reshape(values.shape[0], -1)
        anchors = np.asarray(anchors).reshape(values.shape[0], -1)
        S = values.shape[0]
        C = len(self.dictionary)
        dist = np.zeros((S, C))
        count = np.zeros((S, C))
        qpow = np.sum(np.abs(values) ** 2, axis=-1)  # (S, F)
        for a, mask, Dh, dpow in self._groups:
            mq = (valid & (anchors == a)).astype(float)
            Q = (values * mq[..., None]).reshape(S, -1)
            dist += (qpow * mq) @ mask.T + mq @ dpow - 2 * (Q @ Dh).real
            count += mq @ mask.T
        np.maximum(dist, 0.0, out=dist)
        with np.errstate(divide="ignore", invalid="ignore"):
            scaled = np.where(count > 0, dist * self.dictionary.F / count, np.inf)
        return scaled, count.astype(np.int64)

    def _exact(self, values, valid, anchors, c: int) -> tuple[float, int]:
        d = self.dictionary
        m = valid & d.valid[c] & (anchors == d.anchors[c])
        n = int(m.sum())
        if n == 0:
            return np.inf, 0
        err = np.sum(np.abs(values[m] - d.values[c][m]) ** 2)
        return float(err * d.F / n), n

    def localize_many(self, values, valid, anchors, starts=None) -> list[LocalizationResult]:
        values = np.asarray(values)
        S = values.shape[0]
        starts = np.zeros(S, dtype=int) if starts is None else starts
        scaled, _ = self.distances(values, valid, anchors)
        K = self.dictionary.K
        out = []
        for s in range(S):
            row = scaled[s]
            best = row.min()
            if not np.isfinite(best):
                out.append(LocalizationResult(None, float("inf"), 0, (int(starts[s]), K)))
                continue
            slack = 1e-9 * best + 1e-9 * self.dictionary.F
            cands = np.flatnonzero(row <= best + slack)
            exact = [self._exact(values[s], valid[s], anchors[s], int(c)) for c in cands]
            j = min(range(len(cands)), key=lambda i: (exact[i][0], cands[i]))
            c = int(cands[j])
            out.append(LocalizationResult(tuple(int(i) for i in self.dictionary.tuples[c]),
                                          exact[j][0], exact[j][1], (int(starts[s]), K)))
        return out

    def localize(self, query: QueryGrtf) -> LocalizationResult:
        _check_compatible(query, self.dictionary)
        res = self.localize_many(query.values[None], query.valid[None], query.anchors[None],
                                 np.array([query.t]))
        return res[0]


def _check_compatible(query: QueryGrtf, d: GrtfDictionary):
    mismatch = []
    if query.K != d.K:
        mismatch.append(f"K {query.K} != {d.K}")
    if query.M != d.M:
        mismatch.append(f"M {query.M} != {d.M}")
    if query.values.shape[0] != d.F:
        mismatch.append(f"F {query.values.shape[0]} != {d.F}")
    if query.strategy is not d.strategy:
        mismatch.append(f"strategy {query.strategy.value} != {d.strategy.value}")
    if mismatch:
        raise DataError("query and dictionary are incompatible: " + ", ".join(mismatch))


def localize(query: QueryGrtf, dictionary: GrtfDictionary) -> LocalizationResult:
    """Entry of ``dictionary`` nearest to ``query``; ``estimated`` is None when undecidable."""
    return Localizer(dictionary).localize(query)


def assign_azimuths(estimated, truth) -> tuple[np.ndarray, tuple[int, ...]]:
    """Best permutation of ``estimated`` azimuths against ``truth``.

    Returns per-pair circular errors and the permutation used.
    """
    estimated = np.asarray(estimated, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimated.shape != truth.shape:
        raise DataError(f"estimate has {estimated.size} sources, truth has {truth.size}")
    best = None
    for perm in itertools.permutations(range(len(truth))):
        err = azimuth_distance(estimated[list(perm)], truth)
        if best is None or err.sum() < best[0].sum():
            best = (err, perm)
    return best


def score(results, ground_truth, directions: DirectionSet) -> ErrorReport:
    """Mean absolute azimuth error and exact-match rates.

    Undecided results are excluded from the error mean and count as misses
    in both match rates.
    """
    results = list(results)
    ground_truth = [tuple(g) for g in ground_truth]
    if len(results) != len(ground_truth):
        raise DataError(f"{len(results)} results for {len(ground_truth)} ground-truth tasks")
    errors, exact, sources_hit, n_sources, undecided = [], 0, 0, 0, 0
    per_task = []
    for res, truth in zip(results, ground_truth):
        n_sources += len(truth)
        est = res.estimated if isinstance(res, LocalizationResult) else res
        if est is None:
            undecided += 1
            per_task.append({"truth": truth, "estimated": None, "errors": None})
            continue
        if len(est) != len(truth):
            raise DataError(f"estimate {est} and truth {truth} differ in source count")
        err, _ = assign_azimuths([directions.by_id(i).azimuth for i in est],
                                 [directions.by_id(i).azimuth for i in truth])
        errors.extend(err.tolist())
        exact += set(est) == set(truth)
        sources_hit += len(set(est) & set(truth))
        per_task.append({"truth": truth, "estimated": tuple(est), "errors": err.tolist()})
    n = len(results)
    return ErrorReport(
        mean_abs_azimuth_error=float(np.mean(errors)) if errors else float("nan"),
        exact_match_rate=exact / n if n else float("nan"),
        source_match_rate=sources_hit / n_sources if n_sources else float("nan"),
        n_tasks=n,
        no_decision=undecided,
        per_task=per_task,
    )
