"""Command-line entry point: ``grtf <subcommand> ...``.

Exit status is 0 on success, 2 for configuration errors and 3 for data errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from collections import Counter
from pathlib import Path


from . import io
from .acoustics import SceneConfig, simulate_scene, simulate_spectrogram
from .errors import ConfigError, DataError
from .experiment import load_config, make_atfs, report, run_experiment
from .localization import Localizer, build_dictionary, query_segments
from .plucker import DEFAULT_RANK_TOL, DEFAULT_VALID_TOL, Normalization, count_sources_all
from .spectral import StftConfig, stft

EXIT_CONFIG = 2
EXIT_DATA = 3


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _snr_list(text: str) -> list[float]:
    out = []
    for v in text.replace(" ", "").split(","):
        if v.lower() in ("inf", "+inf"):
            out.append(math.inf)
        else:
            try:
                out.append(float(v))
            except ValueError:
                raise argparse.ArgumentTypeError(f"bad SNR value {v!r}")
    return out


def _overrides(args) -> dict:
    o = {}
    if getattr(args, "seed", None) is not None:
        o["seed"] = args.seed
    if getattr(args, "k", None):
        o["k_list"] = args.k
    if getattr(args, "snr_db", None):
        o["snr_db"] = args.snr_db
    if getattr(args, "stride", None) is not None:
        o["stride"] = args.stride
    if getattr(args, "workers", None) is not None:
        o["workers"] = args.workers
    if getattr(args, "full_grid", False):
        o["stride"] = 1
        o["max_scenes"] = None
    return o


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_atf(args):
    cfg = load_config(args.config, _overrides(args))
    atfs = make_atfs(cfg)
    out = _out_dir(args)
    io.save_atfset(out / "atfs.bin", atfs)
    with open(out / "directions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "azimuth", "elevation"])
        for d in atfs.directions:
            w.writerow([d.id, f"{d.azimuth:.6f}", f"{d.elevation:.6f}"])
    print(f"wrote {out / 'atfs.bin'} ({atfs.N} directions, M={atfs.M}, F={atfs.F})")


def cmd_build_dict(args):
    atfs = io.load_atfset(args.atf)
    out = _out_dir(args)
    for K in args.k or [1]:
        d = build_dictionary(atfs, K, args.strategy, args.rel_tol)
        path = out / f"dict_K{K}.bin"
        io.save_dictionary(path, d)
        print(f"wrote {path} ({len(d)} entries, {int((~d.valid).sum())} invalid bins)")


def _scene_from_args(args) -> SceneConfig:
    return SceneConfig(tuple(args.sources), args.duration, args.snr_db_value, args.seed or 0)


def cmd_simulate(args):
    atfs = io.load_atfset(args.atf)
    signal = simulate_scene(atfs, _scene_from_args(args))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix.lower() == ".wav":
        io.write_wav(out, signal)
    else:
        io.write_raw(out, signal)
    print(f"wrote {out} ({signal.channels} channels, {len(signal)} samples)")


def cmd_localize(args):
    d = io.load_dictionary(args.dict)
    signal = io.read_signal(args.input)
    spec = stft(signal, StftConfig(args.window, args.hop))
    if spec.M != d.M or spec.F != d.F:
        raise DataError(f"input has M={spec.M}, F={spec.F}; dictionary expects "
                        f"M={d.M}, F={d.F}")
    starts, values, valid, anchors = query_segments(spec, d.K, args.stride or 1, d.strategy,
                                                    float(d.meta["rel_tol"]))
    results = Localizer(d).localize_many(values, valid, anchors, starts)
    out = _out_dir(args)
    with open(out / "localization.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["start_frame", "estimated_ids", "estimated_azimuths", "distance",
                    "valid_bins"])
        for r in results:
            ids = r.estimated or ()
            w.writerow([r.segment[0], " ".join(map(str, ids)),
                        " ".join(f"{d.directions.by_id(i).azimuth:.3f}" for i in ids),
                        f"{r.distance:.6f}", r.valid_bin_count])
    votes = Counter(r.estimated for r in results if r.decided)
    summary = {"segments": len(results),
               "no_decision": sum(not r.decided for r in results),
               "most_frequent": list(votes.most_common(1)[0][0]) if votes else None}
    (out / "localization.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))


def count_histogram(spec, rel_tol: float) -> dict:
    counts = count_sources_all(spec, rel_tol)
    hist = Counter(int(c) for c in counts.ravel())
    modal = max(sorted(hist), key=lambda c: hist[c])
    M = spec.M
    return {"modal_count": modal,
            "histogram": {str(k): hist[k] for k in sorted(hist)},
            "bins": int(counts.size),
            "saturated_label": f">={M - 1}"}


def cmd_count_sources(args):
    if args.input:
        spec = stft(io.read_signal(args.input), StftConfig(args.window, args.hop))
    elif args.atf and args.sources:
        atfs = io.load_atfset(args.atf)
        scene = _scene_from_args(args)
        if args.domain == "stft":
            n_frames = StftConfig(args.window, args.hop).n_frames(
                int(round(args.duration * atfs.sample_rate)))
            spec = simulate_spectrogram(atfs, scene, n_frames)
        else:
            spec = stft(simulate_scene(atfs, scene), StftConfig(args.window, args.hop))
    else:
        raise ConfigError("count-sources needs --input, or --atf with --sources")
    result = count_histogram(spec, args.rel_tol)
    if args.out:
        out = _out_dir(args)
        (out / "count_sources.json").write_text(json.dumps(result, indent=2))
    print(json.dumps(result))


def cmd_experiment(args):
    cfg = load_config(args.config, _overrides(args))
    out = _out_dir(args)
    run_experiment(cfg, out, log=lambda m: print(m, file=sys.stderr))
    print(report(out)[0])


def cmd_report(args):
    text, table = report(args.out)
    (Path(args.out) / "table.csv").write_text(table)
    print(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grtf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True, out=True):
        if config:
            sp.add_argument("--config", type=Path, help="experiment config (JSON)")
        sp.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        if out:
            sp.add_argument("--out", required=True, help="output directory")

    def stft_opts(sp):
        sp.add_argument("--window", type=int, default=256)
        sp.add_argument("--hop", type=int, default=128)

    def scene_opts(sp, required):
        sp.add_argument("--atf", required=required, help="ATF set file from gen-atf")
        sp.add_argument("--sources", type=_int_list, required=required,
                        help="comma-separated direction ids")
        sp.add_argument("--snr-db", dest="snr_db_value", type=lambda s: _snr_list(s)[0],
                        default=math.inf, help="SNR in dB, or inf")
        sp.add_argument("--duration", type=float, default=1.0)

    sp = sub.add_parser("gen-atf", help="generate directions and transfer functions")
    common(sp)
    sp.set_defaults(func=cmd_gen_atf)

    sp = sub.add_parser("build-dict", help="build GRTF dictionaries")
    common(sp, config=False)
    sp.add_argument("--atf", required=True)
    sp.add_argument("--k", type=_int_list)
    sp.add_argument("--strategy", default=Normalization.FIRST_ENTRY.value,
                    choices=[s.value for s in Normalization])
    sp.add_argument("--rel-tol", type=float, default=DEFAULT_VALID_TOL)
    sp.set_defaults(func=cmd_build_dict)

    sp = sub.add_parser("simulate", help="render a white-noise scene to WAV or raw")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True, help="output file (.wav or raw)")
    scene_opts(sp, required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("localize", help="localize every K-frame segment of a recording")
    common(sp, config=False)
    sp.add_argument("--dict", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--stride", type=int)
    stft_opts(sp)
    sp.set_defaults(func=cmd_localize)

    sp = sub.add_parser("count-sources", help="rank-based source counting per bin")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.add_argument("--input")
    scene_opts(sp, required=False)
    sp.add_argument("--domain", choices=["stft", "time"], default="stft",
                    help="synthesis domain for simulated scenes")
    sp.add_argument("--rel-tol", type=float, default=DEFAULT_RANK_TOL)
    stft_opts(sp)
    sp.set_defaults(func=cmd_count_sources)

    sp = sub.add_parser("experiment", help="run the full localization experiment")
    common(sp)
    sp.add_argument("--full-grid", action="store_true",
                    help="every direction subset and every segment start")
    sp.add_argument("--snr-db", type=_snr_list)
    sp.add_argument("--k", type=_int_list)
    sp.add_argument("--stride", type=int)
    sp.add_argument("--workers", type=int)
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("report", help="render a results directory as a table")
    sp.add_argument("--out", required=True, help="results directory")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
