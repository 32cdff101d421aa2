"""On-disk formats: a flat binary matrix container, CSV tables, PGM dumps.

Container layout (all integers little-endian)::

    bytes 0..7    magic b"GSAEBIN1"
    bytes 8..15   u64 header length H
    bytes 16..    H bytes of UTF-8 JSON: {"arrays": [{"name", "shape", "offset"}], "meta": {...}}
    then          payload; each array is f64 little-endian, row-major (C order),
                  starting at ``offset`` bytes from the payload start

The JSON header is written with sorted keys, so identical inputs give
identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .autoencoder import AdamState, AutoencoderState
from .groups import GroupedDictionary, GroupStructure
from .synth import Dataset, SynthConfig

MAGIC = b"GSAEBIN1"
_DTYPE = np.dtype("<f8")


class FormatError(ValueError):
    """File content does not match the expected layout."""


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    path = Path(path)
    entries, offset = [], 0
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype=_DTYPE)
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes(order="C"))
        offset += a.nbytes
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    return path


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0")
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header length at offset 8")
    (hlen,) = struct.unpack_from("<Q", raw, 8)
    if 16 + hlen > len(raw):
        raise FormatError(f"{path}: header of {hlen} bytes truncated at offset 16")
    try:
        header = json.loads(raw[16:16 + hlen])
    except ValueError as exc:
        raise FormatError(f"{path}: unreadable JSON header at offset 16: {exc}") from None
    base = 16 + hlen
    arrays = {}
    for e in header["arrays"]:
        shape = tuple(e["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start = base + e["offset"]
        if start + 8 * count > len(raw):
            raise FormatError(f"{path}: array {e['name']!r} truncated at offset {start}")
        arrays[e["name"]] = np.frombuffer(raw, _DTYPE, count, start).reshape(shape).astype(np.float64)
    return arrays, header.get("meta", {})


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_dataset(path, ds: Dataset) -> Path:
    meta = {
        "kind": "dataset",
        "num_groups": ds.structure.num_groups,
        "group_size": ds.structure.group_size,
        "snr_db": ds.noise_snr_db,
        "supports": [sorted(s) for s in ds.supports],
        "config": ds.config.to_dict() if ds.config is not None else None,
    }
    return save_arrays(path, {"Y": ds.observations, "X": ds.codes,
                              "A_star": ds.dictionary.matrix, "Z": ds.noise}, meta)


def load_dataset(path) -> Dataset:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "dataset":
        raise FormatError(f"{path}: not a dataset container")
    s = GroupStructure(meta["num_groups"], meta["group_size"])
    cfg = SynthConfig(**meta["config"]) if meta.get("config") else None
    A = arrays["A_star"]
    normalized = bool(np.max(np.abs(np.linalg.norm(A, axis=0) - 1.0)) <= 1e-10)
    return Dataset(arrays["Y"], arrays["X"], [frozenset(s_) for s_ in meta["supports"]],
                   GroupedDictionary(A, s, normalized), arrays["Z"], meta["snr_db"], cfg)


def save_dictionary(path, dictionary: GroupedDictionary) -> Path:
    s = dictionary.structure
    return save_arrays(path, {"A": dictionary.matrix},
                       {"kind": "dictionary", "num_groups": s.num_groups, "group_size": s.group_size})


def load_dictionary(path) -> GroupedDictionary:
    arrays, meta = load_arrays(path)
    if "A" not in arrays:
        raise FormatError(f"{path}: no dictionary array 'A'")
    return GroupedDictionary(arrays["A"], GroupStructure(meta["num_groups"], meta["group_size"]))


def save_checkpoint(path, ae: AutoencoderState, epoch: int, adam: AdamState | None = None,
                    extra: dict | None = None) -> Path:
    s = ae.structure
    arrays = {"A": ae.weights}
    meta = {
        "kind": "checkpoint",
        "num_groups": s.num_groups,
        "group_size": s.group_size,
        "lam": ae.lam,
        "prox": ae.prox.value,
        "unroll": ae.unroll,
        "step": ae.step,
        "epoch": int(epoch),
        "adam_t": None,
        "extra": extra or {},
    }
    if adam is not None:
        arrays["adam_m"] = adam.m
        arrays["adam_v"] = adam.v
        meta["adam_t"] = adam.t
    return save_arrays(path, arrays, meta)


def load_checkpoint(path) -> tuple[AutoencoderState, int, AdamState | None, dict]:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "checkpoint":
        raise FormatError(f"{path}: not a checkpoint container")
    s = GroupStructure(meta["num_groups"], meta["group_size"])
    ae = AutoencoderState(GroupedDictionary(arrays["A"], s), meta["lam"], meta["prox"],
                          meta["unroll"], meta["step"])
    adam = None
    if meta.get("adam_t") is not None:
        adam = AdamState(arrays["adam_m"], arrays["adam_v"], int(meta["adam_t"]))
    return ae, int(meta["epoch"]), adam, meta.get("extra", {})


def fmt(value) -> str:
    """Shortest round-tripping text for a number (at most 17 significant digits)."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header: list[str], rows, append: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fresh = not append or not path.exists()
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if fresh:
            w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_supports_csv(path, ds: Dataset) -> Path:
    return write_csv(path, ["sample", "groups"],
                     ((i, " ".join(map(str, sorted(s)))) for i, s in enumerate(ds.supports)))


def write_pgm(path, matrix: np.ndarray) -> Path:
    """8-bit binary PGM; values are min-max scaled (a constant matrix becomes black)."""
    M = np.asarray(matrix, dtype=np.float64)
    lo, hi = float(M.min()), float(M.max())
    scaled = np.zeros_like(M) if hi == lo else (M - lo) / (hi - lo)
    pix = np.round(scaled * 255).astype(np.uint8)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{M.shape[1]} {M.shape[0]}\n255\n".encode())
        fh.write(pix.tobytes())
    return path


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    os.replace(tmp, path)
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
