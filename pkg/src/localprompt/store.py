"""Embedding dataset model and the LPFS v1 binary container.

File layout (all integers little-endian; u32 unless noted):

    magic    8 bytes   b"LPFSTOR1"
    payload:
        u32 version (=1), d, N, C, record_count, crop_set_count
        C  x class name      (u32 byte length + UTF-8 bytes)
        record_count x record:
            id string (u32 length + UTF-8), i32 label,
            (1+N)*d float32 values, global vector first, then N local rows
        crop_set_count x crop set:
            parent id string, i32 label, u32 m, m x record
    crc32    4 bytes   CRC-32 of the payload

A sidecar plain-text manifest (`<path>.manifest`) lists counts and the split
role as key=value lines. It is informational; the binary file is
self-contained.

Vectors are kept as float32 in memory so a read/write round trip is
bit-exact. Numeric code upcasts to float64 at the point of use.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumMismatchError,
    DimensionMismatchError,
    EmptyClassError,
    InvalidLabelError,
    NonFiniteValueError,
    StoreIOError,
    TruncatedFileError,
    VersionMismatchError,
)

MAGIC = b"LPFSTOR1"
VERSION = 1
SPLIT_ROLES = ("id_train", "id_test", "ood_test")


@dataclass(eq=False)
class FeatureRecord:
    """One image: a global feature plus N patch-level local features."""

    image_id: str
    label: int  # class index in [0, C), or -1 for OOD/unlabeled
    global_feat: np.ndarray  # (d,) float32
    local_feats: np.ndarray  # (N, d) float32

    def __eq__(self, other):
        if not isinstance(other, FeatureRecord):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and self.label == other.label
            and np.array_equal(self.global_feat, other.global_feat)
            and np.array_equal(self.local_feats, other.local_feats)
        )


@dataclass(eq=False)
class CropCandidateSet:
    """The m crop candidates attached to one training image."""

    parent_image_id: str
    label: int
    candidates: list[FeatureRecord]

    def __eq__(self, other):
        if not isinstance(other, CropCandidateSet):
            return NotImplemented
        return (
            self.parent_image_id == other.parent_image_id
            and self.label == other.label
            and self.candidates == other.candidates
        )


@dataclass(eq=False)
class FeatureStore:
    """A validated collection of records sharing one (d, N, C) geometry."""

    d: int
    N: int
    C: int
    class_names: list[str]
    records: list[FeatureRecord] = field(default_factory=list)
    crop_sets: list[CropCandidateSet] | None = None

    def __eq__(self, other):
        if not isinstance(other, FeatureStore):
            return NotImplemented
        return (
            (self.d, self.N, self.C) == (other.d, other.N, other.C)
            and self.class_names == other.class_names
            and self.records == other.records
            and (self.crop_sets or []) == (other.crop_sets or [])
        )

    def validate(self) -> None:
        validate_store(self)


@dataclass
class DatasetSplit:
    """A store tagged with its role in the benchmark."""

    role: str  # id_train | id_test | ood_test
    store: FeatureStore

    def validate(self) -> None:
        if self.role not in SPLIT_ROLES:
            raise ValueError(f"unknown split role {self.role!r}")
        validate_store(self.store)
        if self.role == "ood_test":
            bad = [r.image_id for r in self.store.records if r.label != -1]
            if bad:
                raise InvalidLabelError(
                    f"ood_test records must carry label -1; offenders: {bad[:3]}"
                )


def validate_store(store: FeatureStore) -> None:
    """Eagerly check every invariant; raises on the first violation."""
    if store.d < 1 or store.N < 1 or store.C < 1:
        raise DimensionMismatchError(
            f"d, N, C must be >= 1 (got {store.d}, {store.N}, {store.C})"
        )
    if len(store.class_names) != store.C:
        raise DimensionMismatchError(
            f"{len(store.class_names)} class names for C={store.C}"
        )
    for rec in store.records:
        _validate_record(rec, store.d, store.N, store.C)
    for cs in store.crop_sets or []:
        if not cs.candidates:
            raise DimensionMismatchError(
                f"crop set for {cs.parent_image_id!r} has no candidates"
            )
        if not 0 <= cs.label < store.C:
            raise InvalidLabelError(
                f"crop set label {cs.label} outside [0, {store.C})"
            )
        for cand in cs.candidates:
            _validate_record(cand, store.d, store.N, store.C)
            if cand.label != cs.label:
                raise InvalidLabelError(
                    f"candidate {cand.image_id!r} label {cand.label} != "
                    f"crop set label {cs.label}"
                )


def _validate_record(rec: FeatureRecord, d: int, N: int, C: int) -> None:
    g = np.asarray(rec.global_feat)
    l = np.asarray(rec.local_feats)
    if g.shape != (d,):
        raise DimensionMismatchError(
            f"record {rec.image_id!r}: global shape {g.shape} != ({d},)"
        )
    if l.shape != (N, d):
        raise DimensionMismatchError(
            f"record {rec.image_id!r}: locals shape {l.shape} != ({N}, {d})"
        )
    if not (np.isfinite(g).all() and np.isfinite(l).all()):
        raise NonFiniteValueError(f"record {rec.image_id!r} contains NaN/Inf")
    if not -1 <= rec.label < C:
        raise InvalidLabelError(
            f"record {rec.image_id!r}: label {rec.label} outside [-1, {C})"
        )


# ---- serialization ----

def write_store(store: FeatureStore, path, role: str | None = None) -> None:
    """Write the store as LPFS v1 plus its sidecar manifest."""
    validate_store(store)
    payload = bytearray()
    crop_sets = store.crop_sets or []
    payload += struct.pack(
        "<6I", VERSION, store.d, store.N, store.C, len(store.records), len(crop_sets)
    )
    for name in store.class_names:
        _pack_str(payload, name)
    for rec in store.records:
        _pack_record(payload, rec)
    for cs in crop_sets:
        _pack_str(payload, cs.parent_image_id)
        payload += struct.pack("<i", cs.label)
        payload += struct.pack("<I", len(cs.candidates))
        for cand in cs.candidates:
            _pack_record(payload, cand)
    crc = zlib.crc32(bytes(payload))
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(payload)
            fh.write(struct.pack("<I", crc))
    except OSError as exc:
        raise StoreIOError(f"cannot write {path}: {exc}") from exc
    lines = {
        "format": "LPFS",
        "version": VERSION,
        "d": store.d,
        "N": store.N,
        "C": store.C,
        "records": len(store.records),
        "crop_sets": len(crop_sets),
    }
    if role is not None:
        lines["role"] = role
    write_manifest(str(path) + ".manifest", lines)


def read_store(path) -> FeatureStore:
    """Read and fully validate an LPFS v1 file."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise StoreIOError(f"cannot read {path}: {exc}") from exc
    if len(data) < len(MAGIC):
        raise TruncatedFileError(f"{path}: shorter than the magic header")
    if data[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: expected {MAGIC!r}, got {data[:8]!r}")
    if len(data) < len(MAGIC) + 4:
        raise TruncatedFileError(f"{path}: missing checksum")
    payload = data[len(MAGIC):-4]
    (stored_crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != stored_crc:
        raise ChecksumMismatchError(f"{path}: payload CRC-32 mismatch")
    cur = _Cursor(payload, str(path))
    version, d, N, C, n_records, n_crop_sets = (
        cur.u32(), cur.u32(), cur.u32(), cur.u32(), cur.u32(), cur.u32()
    )
    if version != VERSION:
        raise VersionMismatchError(f"{path}: version {version}, expected {VERSION}")
    class_names = [cur.string() for _ in range(C)]
    records = [_read_record(cur, d, N) for _ in range(n_records)]
    crop_sets: list[CropCandidateSet] | None = None
    if n_crop_sets:
        crop_sets = []
        for _ in range(n_crop_sets):
            parent = cur.string()
            label = cur.i32()
            m = cur.u32()
            cands = [_read_record(cur, d, N) for _ in range(m)]
            crop_sets.append(CropCandidateSet(parent, label, cands))
    if cur.remaining():
        raise DimensionMismatchError(
            f"{path}: {cur.remaining()} trailing payload bytes do not match the header"
        )
    store = FeatureStore(
        d=d, N=N, C=C, class_names=class_names, records=records, crop_sets=crop_sets
    )
    validate_store(store)
    return store


def _pack_str(buf: bytearray, s: str) -> None:
    raw = s.encode("utf-8")
    buf += struct.pack("<I", len(raw))
    buf += raw


def _pack_record(buf: bytearray, rec: FeatureRecord) -> None:
    _pack_str(buf, rec.image_id)
    buf += struct.pack("<i", rec.label)
    vals = np.concatenate(
        [np.asarray(rec.global_feat).ravel(), np.asarray(rec.local_feats).ravel()]
    ).astype("<f4")
    buf += vals.tobytes()


def _read_record(cur: "_Cursor", d: int, N: int) -> FeatureRecord:
    image_id = cur.string()
    label = cur.i32()
    vals = cur.f32s((1 + N) * d)
    return FeatureRecord(
        image_id=image_id,
        label=label,
        global_feat=vals[:d].copy(),
        local_feats=vals[d:].reshape(N, d).copy(),
    )


class _Cursor:
    """Byte cursor that raises TruncatedFileError on overrun."""

    def __init__(self, data: bytes, name: str):
        self.data = data
        self.pos = 0
        self.name = name

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"{self.name}: needed {n} bytes at offset {self.pos}, "
                f"only {len(self.data) - self.pos} left"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def i32(self) -> int:
        return struct.unpack("<i", self.take(4))[0]

    def string(self) -> str:
        n = self.u32()
        return self.take(n).decode("utf-8")

    def f32s(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)


# ---- manifests ----

def write_manifest(path, entries: dict) -> None:
    text = "".join(f"{k}={v}\n" for k, v in entries.items())
    Path(path).write_text(text, encoding="utf-8")


def read_manifest(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# ---- few-shot subsampling ----

def few_shot_subsample(store: FeatureStore, shots: int, seed: int) -> FeatureStore:
    """Keep at most `shots` records per class, chosen by a seeded shuffle.

    Class-balanced and deterministic in (store, shots, seed); kept records
    stay in store order and crop sets are filtered to match. Unlabeled
    records (label -1) are dropped.
    """
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    rng = np.random.default_rng(seed)
    keep: list[int] = []
    by_class: dict[int, list[int]] = {c: [] for c in range(store.C)}
    for i, rec in enumerate(store.records):
        if rec.label >= 0:
            by_class[rec.label].append(i)
    for c in range(store.C):
        idx = np.array(by_class[c], dtype=np.int64)
        if idx.size == 0:
            raise EmptyClassError(f"class {c} has no records to sample from")
        rng.shuffle(idx)
        keep.extend(idx[: min(shots, idx.size)].tolist())
    keep.sort()
    records = [store.records[i] for i in keep]
    kept_ids = {r.image_id for r in records}
    crop_sets = None
    if store.crop_sets is not None:
        crop_sets = [cs for cs in store.crop_sets if cs.parent_image_id in kept_ids]
    return FeatureStore(
        d=store.d,
        N=store.N,
        C=store.C,
        class_names=list(store.class_names),
        records=records,
        crop_sets=crop_sets,
    )
