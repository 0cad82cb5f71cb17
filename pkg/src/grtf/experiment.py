"""Batch localization experiment: config, runner and Table-1-style report."""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
import math
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .acoustics import (SYNTHETIC_ROOM, FREE_FIELD, AtfSet, MicArray, SceneConfig,
                        freefield_atf, random_directions, simulate_scene, synthetic_room_atf)
from .errors import ConfigError, DataError
from .localization import Localizer, build_dictionary, query_segments, score
from .plucker import Normalization
from .spectral import StftConfig, stft

# Reference values from the original NAO-HRTF study, mean absolute azimuth error in degrees.
REFERENCE_TABLE = {50.0: {1: 0.04, 2: 0.68, 3: 1.45}, 10.0: {1: 10.9, 2: 17.5, 3: 27.4}}

CELLS_CSV = "cells.csv"
TASKS_CSV = "tasks.csv"
SUMMARY_JSON = "summary.json"


@dataclass
class ExperimentConfig:
    seed: int = 0
    sample_rate: int = 8000
    window: int = 256
    hop: int = 128
    window_kind: str = "hann"
    n_mics: int = 4
    array: dict = field(default_factory=lambda: {"kind": "tetrahedron", "radius": 0.1})
    speed_of_sound: float = 343.0
    n_directions: int = 21
    azimuth_range: list = field(default_factory=lambda: [-180.0, 180.0])
    elevation_range: list = field(default_factory=lambda: [-10.0, 10.0])
    min_azimuth_sep: float = 1.0
    min_elevation_sep: float = 3.0
    k_list: list = field(default_factory=lambda: [1, 2, 3])
    snr_db: list = field(default_factory=lambda: [10.0, 50.0])
    atf: dict = field(default_factory=lambda: {
        "kind": SYNTHETIC_ROOM, "rir_len_ms": 10.0, "decay": 600.0, "reflection_gain": 0.3})
    duration_s: float = 1.0
    stride: int = 4
    max_scenes: int | None = 200
    strategy: str = Normalization.FIRST_ENTRY.value
    rel_tol: float = 0.1
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self, locate=lambda key: ""):
        def fail(key, msg):
            raise ConfigError(f"{locate(key)}{key}: {msg}")

        if (not isinstance(self.k_list, list) or not self.k_list
                or not all(isinstance(k, int) and k >= 1 for k in self.k_list)):
            fail("k_list", "must be a non-empty list of positive integers")
        self.k_list = sorted(set(self.k_list))
        if not isinstance(self.snr_db, list):
            fail("snr_db", "must be a list")
        for key in ("seed", "sample_rate", "window", "hop", "n_mics", "n_directions",
                    "stride", "workers"):
            if not isinstance(getattr(self, key), int):
                fail(key, "must be an integer")
        self.snr_db = [_parse_snr(s, fail) for s in self.snr_db]
        if not self.snr_db:
            fail("snr_db", "must not be empty")
        if self.n_mics < 2:
            fail("n_mics", "need at least 2 microphones")
        if max(self.k_list) >= self.n_mics:
            fail("k_list", f"max K={max(self.k_list)} must be below n_mics={self.n_mics}")
        if self.n_directions < max(self.k_list):
            fail("n_directions", f"need at least max K={max(self.k_list)} directions")
        if self.sample_rate <= 0:
            fail("sample_rate", "must be positive")
        if not 0 < self.hop <= self.window:
            fail("hop", "need 0 < hop <= window")
        if self.duration_s <= 0 or self.duration_s * self.sample_rate < self.window:
            fail("duration_s", "signal must cover at least one window")
        if self.stride < 1:
            fail("stride", "must be >= 1")
        if self.max_scenes is not None and self.max_scenes < 1:
            fail("max_scenes", "must be >= 1 or null")
        if self.workers < 1:
            fail("workers", "must be >= 1")
        if not 0 < self.rel_tol < 1:
            fail("rel_tol", "must lie in (0, 1)")
        try:
            Normalization(self.strategy)
        except ValueError:
            fail("strategy", f"unknown strategy {self.strategy!r}")
        if self.atf.get("kind") not in (SYNTHETIC_ROOM, FREE_FIELD):
            fail("atf", f"kind must be {SYNTHETIC_ROOM!r} or {FREE_FIELD!r}")
        kind = self.array.get("kind")
        if kind == "tetrahedron":
            if self.n_mics != 4:
                fail("n_mics", "a tetrahedron array has 4 microphones")
        elif kind == "positions":
            pos = self.array.get("positions")
            if not isinstance(pos, list) or len(pos) != self.n_mics:
                fail("array", f"positions must list n_mics={self.n_mics} points")
        else:
            fail("array", "kind must be 'tetrahedron' or 'positions'")

    def mic_array(self) -> MicArray:
        if self.array["kind"] == "tetrahedron":
            return MicArray.tetrahedron(self.array.get("radius", 0.1), self.speed_of_sound)
        return MicArray(np.array(self.array["positions"], dtype=float), self.speed_of_sound)

    def stft_config(self) -> StftConfig:
        return StftConfig(self.window, self.hop, self.window_kind)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["snr_db"] = [_snr_json(s) for s in self.snr_db]
        return d


def _parse_snr(s, fail):
    if isinstance(s, str) and s.lower() in ("inf", "+inf", "infinity", "none"):
        return math.inf
    try:
        return float(s)
    except (TypeError, ValueError):
        fail("snr_db", f"bad SNR value {s!r}")


def _snr_json(s: float):
    return "inf" if math.isinf(s) else s


def _snr_label(s: float) -> str:
    return "inf" if math.isinf(s) else f"{s:g}"


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a JSON config; errors name the offending line where possible."""
    text, name = "{}", "<defaults>"
    if path is not None:
        name = str(path)
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{name}: cannot read config: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{name}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}:1: top level must be a JSON object")

    def locate(key):
        m = re.search(r'"%s"\s*:' % re.escape(key), text)
        return f"{name}:{text.count(chr(10), 0, m.start()) + 1}: " if m else f"{name}: "

    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{locate(key)}unknown field {key!r}")
    raw.update(overrides or {})
    try:
        cfg = ExperimentConfig.__new__(ExperimentConfig)
        defaults = ExperimentConfig.__dataclass_fields__
        for key, f in defaults.items():
            if key in raw:
                value = raw[key]
            elif f.default_factory is not dataclasses.MISSING:
                value = f.default_factory()
            else:
                value = f.default
            setattr(cfg, key, value)
        cfg.validate(locate)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"{name}: invalid config: {exc}") from exc
    return cfg


# ---------------------------------------------------------------- building blocks


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0])


def make_directions(cfg: ExperimentConfig):
    return random_directions(cfg.n_directions, _derived_seed(cfg.seed, 1), cfg.azimuth_range,
                             cfg.elevation_range, cfg.min_azimuth_sep, cfg.min_elevation_sep)


def make_atfs(cfg: ExperimentConfig) -> AtfSet:
    dirs = make_directions(cfg)
    F = cfg.stft_config().n_freqs
    opts = {k: v for k, v in cfg.atf.items() if k != "kind"}
    if cfg.atf["kind"] == FREE_FIELD:
        return freefield_atf(cfg.mic_array(), dirs, F, cfg.sample_rate, cfg.window)
    return synthetic_room_atf(cfg.mic_array(), dirs, F, cfg.sample_rate,
                              seed=_derived_seed(cfg.seed, 2), fft_len=cfg.window, **opts)


def scene_subsets(cfg: ExperimentConfig, ids, K: int) -> list[tuple[int, ...]]:
    subsets = list(itertools.combinations(sorted(ids), K))
    if cfg.max_scenes is not None and len(subsets) > cfg.max_scenes:
        rng = np.random.default_rng(_derived_seed(cfg.seed, 3, K))
        keep = np.sort(rng.choice(len(subsets), cfg.max_scenes, replace=False))
        subsets = [subsets[i] for i in keep]
    return subsets


# ---------------------------------------------------------------- runner

_STATE: dict = {}


def _init_worker(cfg: ExperimentConfig, atfs: AtfSet, dictionaries):
    _STATE["cfg"] = cfg
    _STATE["atfs"] = atfs
    _STATE["localizers"] = {K: Localizer(d) for K, d in dictionaries.items()}


def _run_scene(job):
    K, snr, scene_index, subset = job
    cfg, atfs = _STATE["cfg"], _STATE["atfs"]
    scene = SceneConfig(subset, cfg.duration_s, snr, _derived_seed(cfg.seed, 4, K, scene_index))
    signal = simulate_scene(atfs, scene)
    t0 = time.perf_counter()
    spec = stft(signal, cfg.stft_config())
    starts, values, valid, anchors = query_segments(spec, K, cfg.stride, cfg.strategy,
                                                    cfg.rel_tol)
    results = _STATE["localizers"][K].localize_many(values, valid, anchors, starts)
    return results, time.perf_counter() - t0


def run_experiment(cfg: ExperimentConfig, out_dir=None, log=None) -> dict:
    """Run every (K, SNR) cell; write CSV/JSON artifacts when ``out_dir`` is given.

    Returns a dict ``{(K, snr): ErrorReport}`` plus timing under ``"timing"``.
    Results do not depend on ``cfg.workers``.
    """
    log = log or (lambda msg: None)
    atfs = make_atfs(cfg)
    dirs = atfs.directions
    dictionaries = {K: build_dictionary(atfs, K, cfg.strategy, cfg.rel_tol) for K in cfg.k_list}
    jobs = []
    for K in cfg.k_list:
        for snr in cfg.snr_db:
            for i, subset in enumerate(scene_subsets(cfg, dirs.ids, K)):
                jobs.append((K, snr, i, subset))
    log(f"{len(jobs)} scenes over {len(cfg.k_list)} orders x {len(cfg.snr_db)} SNRs")

    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers, initializer=_init_worker,
                                 initargs=(cfg, atfs, dictionaries)) as pool:
            outputs = list(pool.map(_run_scene, jobs, chunksize=4))
    else:
        _init_worker(cfg, atfs, dictionaries)
        outputs = [_run_scene(j) for j in jobs]

    reports, timing, task_rows = {}, {}, []
    for K in cfg.k_list:
        for snr in cfg.snr_db:
            cell = [(j, o) for j, o in zip(jobs, outputs) if j[0] == K and j[1] == snr]
            results, truths, elapsed = [], [], 0.0
            for (_, _, i, subset), (res, dt) in cell:
                results.extend(res)
                truths.extend([subset] * len(res))
                elapsed += dt
            rep = score(results, truths, dirs)
            reports[(K, snr)] = rep
            n_scenes = len(cell)
            timing[(K, snr)] = {
                "compute_s": elapsed,
                "ms_per_source_per_second": 1e3 * elapsed / (n_scenes * K * cfg.duration_s),
            }
            scene_of = [i for (_, _, i, _), (res, _) in cell for _ in res]
            for res, rec, scene in zip(results, rep.per_task, scene_of):
                task_rows.append(_task_row(K, snr, scene, res, rec, dirs))
            log(f"K={K} snr={_snr_label(snr)}: {rep.n_tasks} tasks, "
                f"mean |az err| {rep.mean_abs_azimuth_error:.3f} deg, "
                f"exact {rep.exact_match_rate:.3f}")

    if out_dir is not None:
        write_artifacts(Path(out_dir), cfg, reports, timing, task_rows)
    return {"reports": reports, "timing": timing}


def _fmt(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    if math.isinf(x):
        return "inf"
    return f"{x:.6f}"


def _task_row(K, snr, scene, res, rec, dirs):
    truth = rec["truth"]
    est = rec["estimated"]
    return {
        "K": K,
        "snr_db": _snr_label(snr),
        "scene": scene,
        "start_frame": res.segment[0],
        "truth_ids": " ".join(map(str, truth)),
        "estimated_ids": "" if est is None else " ".join(map(str, est)),
        "truth_azimuths": " ".join(f"{dirs.by_id(i).azimuth:.3f}" for i in truth),
        "estimated_azimuths": "" if est is None else
        " ".join(f"{dirs.by_id(i).azimuth:.3f}" for i in est),
        "mean_abs_azimuth_error": "" if est is None else _fmt(float(np.mean(rec["errors"]))),
        "exact_match": int(est is not None and set(est) == set(truth)),
        "distance": _fmt(res.distance),
        "valid_bins": res.valid_bin_count,
    }


def _write_csv(path: Path, rows: list[dict], fields: list[str]):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def write_artifacts(out: Path, cfg, reports, timing, task_rows):
    out.mkdir(parents=True, exist_ok=True)
    cells, summary_cells = [], []
    for (K, snr), rep in reports.items():
        row = {
            "K": K,
            "snr_db": _snr_label(snr),
            "tasks": rep.n_tasks,
            "mean_abs_azimuth_error_deg": _fmt(rep.mean_abs_azimuth_error),
            "exact_match_rate": _fmt(rep.exact_match_rate),
            "source_match_rate": _fmt(rep.source_match_rate),
            "no_decision": rep.no_decision,
        }
        cells.append(row)
        summary_cells.append({**row, "timing": {k: round(v, 6)
                                                for k, v in timing[(K, snr)].items()}})
    _write_csv(out / CELLS_CSV, cells, list(cells[0]))
    if task_rows:
        _write_csv(out / TASKS_CSV, task_rows, list(task_rows[0]))
    summary = {"version": __version__, "config": cfg.to_dict(), "cells": summary_cells}
    (out / SUMMARY_JSON).write_text(json.dumps(summary, indent=2))


# ---------------------------------------------------------------- report


def load_cells(results_dir) -> list[dict]:
    path = Path(results_dir) / CELLS_CSV
    if not path.is_file():
        raise DataError(f"no experiment results in {results_dir} (missing {CELLS_CSV})")
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        for r in rows:
            r["K"] = int(r["K"])
            r["mean_abs_azimuth_error_deg"] = float(r["mean_abs_azimuth_error_deg"])
            r["exact_match_rate"] = float(r["exact_match_rate"])
    except (KeyError, ValueError, csv.Error) as exc:
        raise DataError(f"corrupt {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} holds no cells")
    return rows


def report(results_dir) -> tuple[str, str]:
    """Render the results as ``(text_table, csv_table)``.

    Rows are SNRs (highest first), columns are source counts.
    """
    rows = load_cells(results_dir)
    timing = {}
    summary_path = Path(results_dir) / SUMMARY_JSON
    if summary_path.is_file():
        try:
            for c in json.loads(summary_path.read_text()).get("cells", []):
                timing[(int(c["K"]), c["snr_db"])] = c["timing"]["ms_per_source_per_second"]
        except (ValueError, KeyError, TypeError) as exc:
            raise DataError(f"corrupt {summary_path}: {exc}") from exc
    ks = sorted({r["K"] for r in rows})
    snrs = sorted({r["snr_db"] for r in rows}, key=lambda s: -float(s))
    cell = {(r["K"], r["snr_db"]): r for r in rows}

    def line(label, fn):
        vals = []
        for K in ks:
            r = cell.get((K, snr))
            vals.append("-" if r is None else fn(r, K))
        return f"{label:<22}" + "".join(f"{v:>12}" for v in vals)

    header = f"{'':<22}" + "".join(f"{'K=' + str(K):>12}" for K in ks)
    out = ["Mean absolute azimuth error (deg)", header]
    for snr in snrs:
        out.append(line(f"GRTF (SNR={snr} dB)",
                        lambda r, K: f"{r['mean_abs_azimuth_error_deg']:.2f}"))
    out += ["", "Exact-match rate", header]
    for snr in snrs:
        out.append(line(f"GRTF (SNR={snr} dB)", lambda r, K: f"{r['exact_match_rate']:.3f}"))
    if timing:
        out += ["", "Compute time (ms per source per second of signal)", header]
        for snr in snrs:
            out.append(line(f"GRTF (SNR={snr} dB)",
                            lambda r, K: f"{timing.get((K, r['snr_db']), float('nan')):.1f}"))
    ref = "; ".join(f"{s:g} dB: " + " / ".join(f"{v:g}" for v in REFERENCE_TABLE[s].values())
                    for s in sorted(REFERENCE_TABLE, reverse=True))
    out += ["", f"Reference (NAO HRTFs, not reproducible here): {ref} deg for K = 1 / 2 / 3."]
    text = "\n".join(out)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["snr_db"] + [f"K={K}" for K in ks])
    for snr in snrs:
        w.writerow([snr] + [f"{cell[(K, snr)]['mean_abs_azimuth_error_deg']:.6f}"
                            if (K, snr) in cell else "" for K in ks])
    return text, buf.getvalue()
