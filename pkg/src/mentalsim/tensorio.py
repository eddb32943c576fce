"""Binary tensor container and JSON dataset manifests.

On-disk layout of a tensor file (all integers little-endian)::

    offset  size        field
    0       4           magic  b"MSB1"
    4       4           dtype  uint32 (0 = f32, 1 = f64, 2 = i64)
    8       4           ndim   uint32, >= 1
    12      8 * ndim    shape  uint64 each
    ...     prod(shape) * itemsize   payload, row-major, little-endian

Manifests are JSON documents of the form::

    {"kind": "latents" | "neural" | "judgements",
     "d": int, "subsample": int, "bin_width_ms": int,
     "animals": [{"name": str, "n_units": int}],      # neural only
     "items": [{"id": str, "path": str, "scenario": str, "label": int,
                "proportion": float}]}                 # judgements carry proportion

Relative item paths resolve against the manifest's directory.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

MAGIC = b"MSB1"
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2}
_DTYPES = {code: dt for dt, code in _CODES.items()}


class DataError(Exception):
    """Base class for every ingestion failure."""


class FormatError(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


def _le(dtype: np.dtype) -> np.dtype:
    return np.dtype(dtype).newbyteorder("<")


def encode_tensor(tensor: np.ndarray) -> bytes:
    arr = np.asarray(tensor)
    dt = _le(arr.dtype)
    if dt not in _CODES:
        raise TypeError(f"unsupported dtype {arr.dtype}; expected float32, float64 or int64")
    if arr.ndim < 1:
        raise ValueError("tensor must have ndim >= 1")
    header = MAGIC + struct.pack("<II", _CODES[dt], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=dt).tobytes(order="C")
    return header + payload


def decode_tensor(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < 12:
        raise FormatError(f"{source}: header truncated ({len(buf)} bytes)")
    if buf[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    code, ndim = struct.unpack_from("<II", buf, 4)
    if code not in _DTYPES:
        raise FormatError(f"{source}: unknown dtype code {code}")
    if ndim < 1:
        raise FormatError(f"{source}: ndim must be >= 1, got {ndim}")
    shape_end = 12 + 8 * ndim
    if len(buf) < shape_end:
        raise FormatError(f"{source}: shape header truncated")
    shape = struct.unpack_from(f"<{ndim}Q", buf, 12)
    dt = _DTYPES[code]
    expected = math.prod(shape) * dt.itemsize
    actual = len(buf) - shape_end
    if actual != expected:
        raise FormatError(
            f"{source}: payload is {actual} bytes, expected {expected} "
            f"(deficit {expected - actual} bytes)"
        )
    arr = np.frombuffer(buf, dtype=dt, offset=shape_end).reshape(shape)
    # native byte order, owned and writable
    return arr.astype(dt.newbyteorder("="), copy=True)


def write_tensor(tensor: np.ndarray, path) -> None:
    path = Path(path)
    data = encode_tensor(tensor)
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise OSError(f"cannot write tensor to {path}: {exc.strerror or exc}") from exc


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"tensor file not found: {path}") from exc
    return decode_tensor(buf, str(path))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class LatentDataset:
    stimuli: tuple
    latents: tuple  # per stimulus [frames x d]
    d: int
    subsample: int = 1
    scenarios: Optional[tuple] = None
    labels: Optional[tuple] = None

    def __len__(self):
        return len(self.stimuli)

    def subset(self, idx: Sequence[int]) -> "LatentDataset":
        pick = lambda seq: None if seq is None else tuple(seq[i] for i in idx)
        return LatentDataset(
            stimuli=pick(self.stimuli), latents=pick(self.latents), d=self.d,
            subsample=self.subsample, scenarios=pick(self.scenarios), labels=pick(self.labels),
        )


@dataclass(frozen=True)
class NeuralDataset:
    """Per-condition responses ``[trials x bins x units]``; NaN rows mark missing trials."""

    animals: tuple  # ((name, n_units), ...)
    responses: tuple
    bin_width: float
    condition_ids: tuple
    missing_trials: tuple = field(default=())

    @property
    def n_units(self) -> int:
        return sum(n for _, n in self.animals)

    def unit_slices(self) -> dict:
        out, start = {}, 0
        for name, n in self.animals:
            out[name] = slice(start, start + n)
            start += n
        return out

    def animal(self, name: str) -> "NeuralDataset":
        sl = self.unit_slices()[name]
        n = sl.stop - sl.start
        return make_neural_dataset(
            [(name, n)], [r[:, :, sl] for r in self.responses], self.bin_width, self.condition_ids
        )

    def unit_labels(self) -> list:
        return [(name, i) for name, n in self.animals for i in range(n)]


@dataclass(frozen=True)
class HumanJudgements:
    stimuli: tuple
    proportions: np.ndarray
    labels: np.ndarray
    scenarios: tuple

    def counts(self) -> dict:
        out: dict = {}
        for s in self.scenarios:
            out[s] = out.get(s, 0) + 1
        return out


def make_latent_dataset(stimuli, latents, subsample=1, scenarios=None, labels=None,
                        min_frames=2) -> LatentDataset:
    stimuli = tuple(str(s) for s in stimuli)
    if not stimuli:
        raise EmptyDataset("latent dataset has no stimuli")
    lat = []
    d = None
    for sid, arr in zip(stimuli, latents):
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise DimensionMismatch(f"stimulus {sid}: latents must be [frames x d], got shape {arr.shape}")
        if d is None:
            d = arr.shape[1]
        elif arr.shape[1] != d:
            raise DimensionMismatch(f"stimulus {sid}: d={arr.shape[1]} but first stimulus has d={d}")
        if arr.shape[0] < min_frames:
            raise DataError(f"stimulus {sid}: {arr.shape[0]} frames, need at least {min_frames}")
        lat.append(_frozen(arr))
    if len(lat) != len(stimuli):
        raise DataError("stimulus ids and latent tensors differ in count")
    return LatentDataset(
        stimuli=stimuli, latents=tuple(lat), d=int(d), subsample=int(subsample),
        scenarios=None if scenarios is None else tuple(scenarios),
        labels=None if labels is None else tuple(int(v) for v in labels),
    )


def make_neural_dataset(animals, responses, bin_width, condition_ids) -> NeuralDataset:
    animals = tuple((str(a), int(n)) for a, n in animals)
    if bin_width <= 0:
        raise DataError(f"bin_width must be positive, got {bin_width}")
    if not responses:
        raise EmptyDataset("neural dataset has no conditions")
    n_units = sum(n for _, n in animals)
    out, missing = [], []
    for cid, r in zip(condition_ids, responses):
        r = np.asarray(r)
        if r.ndim != 3:
            raise DimensionMismatch(f"condition {cid}: responses must be [trials x bins x units], got {r.shape}")
        if r.shape[2] != n_units:
            raise DimensionMismatch(
                f"condition {cid}: {r.shape[2]} units, animals declare {n_units}"
            )
        bad = np.isnan(r).all(axis=(1, 2)) if r.shape[1] and r.shape[2] else np.ones(r.shape[0], bool)
        if r.shape[0] - int(bad.sum()) < 1:
            raise DataError(f"condition {cid}: no usable (non-NaN) trials")
        missing.append(int(bad.sum()))
        out.append(_frozen(r))
    return NeuralDataset(
        animals=animals, responses=tuple(out), bin_width=float(bin_width),
        condition_ids=tuple(condition_ids), missing_trials=tuple(missing),
    )


# ---------------------------------------------------------------------------
# manifests


def _load_manifest(path: Path, kind: str) -> dict:
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise DataError(f"manifest not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if doc.get("kind") != kind:
        raise FormatError(f"{path}: field 'kind' is {doc.get('kind')!r}, expected {kind!r}")
    if not isinstance(doc.get("items"), list):
        raise FormatError(f"{path}: field 'items' missing or not a list")
    if not doc["items"]:
        raise EmptyDataset(f"{path}: field 'items' is empty")
    return doc


def _item_tensor(base: Path, item: dict, manifest: Path) -> np.ndarray:
    if "path" not in item:
        raise FormatError(f"{manifest}: item {item.get('id')!r} has no 'path'")
    p = Path(item["path"])
    if not p.is_absolute():
        p = base / p
    if not p.exists():
        raise DataError(f"{manifest}: item {item.get('id')!r}: tensor file missing: {p}")
    return read_tensor(p)


def load_latent_dataset(manifest_path) -> LatentDataset:
    manifest_path = Path(manifest_path)
    doc = _load_manifest(manifest_path, "latents")
    base = manifest_path.parent
    ids, lats, scen, labels = [], [], [], []
    for item in doc["items"]:
        arr = _item_tensor(base, item, manifest_path)
        if "d" in doc and arr.ndim == 2 and arr.shape[1] != doc["d"]:
            raise DimensionMismatch(
                f"{manifest_path}: item {item['id']!r} has d={arr.shape[1]}, manifest field 'd'={doc['d']}"
            )
        ids.append(item["id"])
        lats.append(arr)
        scen.append(item.get("scenario"))
        labels.append(item.get("label"))
    try:
        return make_latent_dataset(
            ids, lats, subsample=doc.get("subsample", 1),
            scenarios=None if all(s is None for s in scen) else scen,
            labels=None if any(v is None for v in labels) else labels,
        )
    except DataError as exc:
        raise type(exc)(f"{manifest_path}: {exc}") from exc


def load_neural_dataset(manifest_path) -> NeuralDataset:
    manifest_path = Path(manifest_path)
    doc = _load_manifest(manifest_path, "neural")
    if "bin_width_ms" not in doc:
        raise FormatError(f"{manifest_path}: field 'bin_width_ms' missing")
    if "animals" not in doc:
        raise FormatError(f"{manifest_path}: field 'animals' missing")
    animals = [(a["name"], a["n_units"]) for a in doc["animals"]]
    base = manifest_path.parent
    ids, resp = [], []
    for item in doc["items"]:
        ids.append(item["id"])
        resp.append(_item_tensor(base, item, manifest_path))
    try:
        return make_neural_dataset(animals, resp, doc["bin_width_ms"], ids)
    except DataError as exc:
        raise type(exc)(f"{manifest_path}: {exc}") from exc


def load_judgements(manifest_path) -> HumanJudgements:
    manifest_path = Path(manifest_path)
    doc = _load_manifest(manifest_path, "judgements")
    ids, props, labels, scen = [], [], [], []
    for item in doc["items"]:
        for key in ("id", "proportion", "label", "scenario"):
            if key not in item:
                raise FormatError(f"{manifest_path}: item {item.get('id')!r} lacks field {key!r}")
        p = float(item["proportion"])
        if not 0.0 <= p <= 1.0:
            raise DataError(f"{manifest_path}: item {item['id']!r}: proportion {p} outside [0, 1]")
        ids.append(str(item["id"]))
        props.append(p)
        labels.append(int(item["label"]))
        scen.append(str(item["scenario"]))
    return HumanJudgements(tuple(ids), _frozen(np.array(props)), _frozen(np.array(labels)), tuple(scen))


def save_latent_dataset(ds: LatentDataset, out_dir, name="latents") -> Path:
    out_dir = Path(out_dir)
    (out_dir / name).mkdir(parents=True, exist_ok=True)
    items = []
    for i, (sid, arr) in enumerate(zip(ds.stimuli, ds.latents)):
        rel = f"{name}/{i:05d}.msb"
        write_tensor(arr, out_dir / rel)
        item = {"id": sid, "path": rel}
        if ds.scenarios is not None:
            item["scenario"] = ds.scenarios[i]
        if ds.labels is not None:
            item["label"] = ds.labels[i]
        items.append(item)
    doc = {"kind": "latents", "d": ds.d, "subsample": ds.subsample, "items": items}
    path = out_dir / f"{name}.json"
    path.write_text(json.dumps(doc, indent=1))
    return path


def save_neural_dataset(ds: NeuralDataset, out_dir, name="neural") -> Path:
    out_dir = Path(out_dir)
    (out_dir / name).mkdir(parents=True, exist_ok=True)
    items = []
    for cid, r in zip(ds.condition_ids, ds.responses):
        rel = f"{name}/{cid}.msb"
        write_tensor(r, out_dir / rel)
        items.append({"id": str(cid), "path": rel})
    doc = {
        "kind": "neural",
        "bin_width_ms": ds.bin_width,
        "animals": [{"name": a, "n_units": n} for a, n in ds.animals],
        "items": items,
    }
    path = out_dir / f"{name}.json"
    path.write_text(json.dumps(doc, indent=1))
    return path


def save_judgements(j: HumanJudgements, path) -> Path:
    path = Path(path)
    items = [
        {"id": s, "proportion": float(p), "label": int(l), "scenario": sc}
        for s, p, l, sc in zip(j.stimuli, j.proportions, j.labels, j.scenarios)
    ]
    path.write_text(json.dumps({"kind": "judgements", "items": items}, indent=1))
    return path
