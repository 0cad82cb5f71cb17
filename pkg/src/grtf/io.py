"""File formats: WAV, raw float64 with a JSON sidecar, and binary containers.

Binary containers (ATF sets, GRTF dictionaries) are laid out as::

    b"GRTFBIN1"                 8-byte magic
    uint64 little-endian        header length in bytes
    header                      UTF-8 JSON; "arrays" lists name/dtype/shape/offset
    payload                     little-endian arrays, offsets relative to payload start

Complex arrays are stored as interleaved float64 pairs (``<c16``).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .acoustics import AtfSet, Direction, DirectionSet
from .errors import DataError
from .localization import GrtfDictionary
from .spectral import MultichannelSignal

MAGIC = b"GRTFBIN1"


# ---------------------------------------------------------------- audio


def read_wav(path) -> MultichannelSignal:
    """Read 16-bit PCM or 32-bit float WAV; integer PCM is scaled to [-1, 1)."""
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError) as exc:
        raise DataError(f"cannot read WAV {path}: {exc}") from exc
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        data = data.astype(np.float64)
    else:
        raise DataError(f"unsupported WAV sample type {data.dtype}")
    data = data.reshape(len(data), -1).T
    return MultichannelSignal(data, int(rate))


def write_wav(path, signal: MultichannelSignal, sample_format: str = "float32"):
    """Write ``signal`` as ``float32`` (no clipping) or ``int16`` (clipped) WAV."""
    x = signal.samples.T
    if sample_format == "float32":
        data = x.astype(np.float32)
    elif sample_format == "int16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown sample format {sample_format!r}")
    wavfile.write(path, signal.sample_rate, data)


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_raw(path, signal: MultichannelSignal):
    """Interleaved little-endian float64 samples plus ``<path>.json`` header."""
    path = Path(path)
    path.write_bytes(signal.samples.T.astype("<f8").tobytes())
    _sidecar(path).write_text(json.dumps(
        {"channels": signal.channels, "sample_rate": signal.sample_rate}))


def read_raw(path) -> MultichannelSignal:
    path = Path(path)
    try:
        header = json.loads(_sidecar(path).read_text())
        channels, rate = int(header["channels"]), int(header["sample_rate"])
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"missing or bad sidecar header for {path}: {exc}") from exc
    data = np.frombuffer(path.read_bytes(), dtype="<f8")
    if channels < 1 or data.size % channels:
        raise DataError(f"{data.size} samples do not divide into {channels} channels")
    return MultichannelSignal(data.reshape(-1, channels).T, rate)


def read_signal(path) -> MultichannelSignal:
    """Dispatch on extension: ``.wav`` or raw float64 with sidecar."""
    path = Path(path)
    if path.suffix.lower() == ".wav":
        return read_wav(path)
    return read_raw(path)


# ---------------------------------------------------------------- containers


def write_container(path, header: dict, arrays: dict[str, np.ndarray]):
    specs, chunks, offset = [], [], 0
    for name, a in arrays.items():
        a = np.asarray(a)
        dtype = a.dtype.newbyteorder("<") if a.dtype.byteorder not in "|<" else a.dtype
        if a.dtype == np.bool_:
            dtype = np.dtype("|b1")
        buf = np.ascontiguousarray(a, dtype=dtype).tobytes()
        specs.append({"name": name, "dtype": dtype.str, "shape": list(a.shape),
                      "offset": offset, "nbytes": len(buf)})
        chunks.append(buf)
        offset += len(buf)
    head = json.dumps({**header, "arrays": specs}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for c in chunks:
            fh.write(c)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if raw[:8] != MAGIC or len(raw) < 16:
        raise DataError(f"{path} is not a GRTF binary container")
    (n,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + n])
    except ValueError as exc:
        raise DataError(f"corrupt header in {path}: {exc}") from exc
    payload = raw[16 + n:]
    arrays = {}
    for spec in header.pop("arrays", []):
        lo, hi = spec["offset"], spec["offset"] + spec["nbytes"]
        if hi > len(payload):
            raise DataError(f"{path}: array {spec['name']!r} truncated")
        a = np.frombuffer(payload[lo:hi], dtype=np.dtype(spec["dtype"]))
        arrays[spec["name"]] = a.reshape(spec["shape"]).astype(a.dtype.newbyteorder("="))
    return header, arrays


def _direction_table(dirs: DirectionSet) -> list[dict]:
    return [{"id": d.id, "azimuth": d.azimuth, "elevation": d.elevation} for d in dirs]


def _directions_from_table(table) -> DirectionSet:
    return DirectionSet(Direction(int(r["id"]), float(r["azimuth"]), float(r["elevation"]))
                        for r in table)


def save_atfset(path, atfs: AtfSet):
    header = {"format": "atfset", "M": atfs.M, "F": atfs.F, "sample_rate": atfs.sample_rate,
              "fft_len": atfs.fft_len, "kind": atfs.kind, "seed": atfs.seed,
              "params": atfs.params, "directions": _direction_table(atfs.directions),
              "fingerprint": atfs.fingerprint()}
    write_container(path, header, {"atf": atfs.atf, "direct_delay": atfs.direct_delay,
                                   "direct_gain": atfs.direct_gain, "taps": atfs.taps})


def load_atfset(path) -> AtfSet:
    header, arrays = read_container(path)
    if header.get("format") != "atfset":
        raise DataError(f"{path} does not hold an ATF set")
    try:
        atfs = AtfSet(arrays["atf"], _directions_from_table(header["directions"]),
                      int(header["sample_rate"]), int(header["fft_len"]), header["kind"],
                      arrays["direct_delay"], arrays["direct_gain"], arrays["taps"],
                      header.get("seed"), header.get("params", {}))
    except KeyError as exc:
        raise DataError(f"{path}: missing field {exc}") from exc
    if atfs.fingerprint() != header.get("fingerprint"):
        raise DataError(f"{path}: payload does not match its fingerprint")
    return atfs


def save_dictionary(path, d: GrtfDictionary):
    header = {"format": "grtf-dictionary", "meta": d.meta,
              "directions": _direction_table(d.directions),
              "entries": d.tuples.tolist()}
    write_container(path, header, {"values": d.values, "valid": d.valid,
                                   "anchors": d.anchors})


def load_dictionary(path) -> GrtfDictionary:
    header, arrays = read_container(path)
    if header.get("format") != "grtf-dictionary":
        raise DataError(f"{path} does not hold a GRTF dictionary")
    try:
        tuples = np.array(header["entries"], dtype=np.int64).reshape(-1, header["meta"]["K"])
        return GrtfDictionary(tuples, arrays["values"], arrays["valid"], arrays["anchors"],
                              _directions_from_table(header["directions"]), header["meta"])
    except KeyError as exc:
        raise DataError(f"{path}: missing field {exc}") from exc
