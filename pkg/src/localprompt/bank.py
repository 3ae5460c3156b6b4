"""Prompt bank: frozen global prompts, learnable local and negative prompts.

Prompts live directly in embedding space as (C, d) / (N_neg, d) arrays. The
LPBANK01 checkpoint mirrors the LPFS conventions: magic, u32 header, float32
payload, trailing CRC-32. Arrays are float64 in memory (training precision)
and are rounded to the float32 grid on save; `init_bank` rounds its output so
a fresh bank survives a save/load cycle bit-exactly.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumMismatchError,
    NonFiniteValueError,
    ShapeMismatchError,
    StoreIOError,
    TruncatedFileError,
    VersionMismatchError,
)
from .numerics import unit_rows
from .store import FeatureStore, read_store

BANK_MAGIC = b"LPBANK01"
BANK_VERSION = 1


@dataclass(eq=False)
class PromptBank:
    global_prompts: np.ndarray    # (C, d), frozen for the whole run
    local_prompts: np.ndarray     # (C, d), learnable
    negative_prompts: np.ndarray  # (N_neg, d), learnable

    @property
    def C(self) -> int:
        return int(self.global_prompts.shape[0])

    @property
    def d(self) -> int:
        return int(self.global_prompts.shape[1])

    @property
    def n_neg(self) -> int:
        return int(self.negative_prompts.shape[0])

    def copy(self) -> "PromptBank":
        return PromptBank(
            self.global_prompts.copy(),
            self.local_prompts.copy(),
            self.negative_prompts.copy(),
        )

    def __eq__(self, other):
        if not isinstance(other, PromptBank):
            return NotImplemented
        return (
            np.array_equal(self.global_prompts, other.global_prompts)
            and np.array_equal(self.local_prompts, other.local_prompts)
            and np.array_equal(self.negative_prompts, other.negative_prompts)
        )

    def validate(self) -> None:
        g, l, n = self.global_prompts, self.local_prompts, self.negative_prompts
        if g.ndim != 2 or l.shape != g.shape:
            raise ShapeMismatchError(
                f"global {g.shape} and local {l.shape} prompt shapes disagree"
            )
        if n.ndim != 2 or (n.shape[0] > 0 and n.shape[1] != g.shape[1]):
            raise ShapeMismatchError(
                f"negative prompts {n.shape} do not match d={g.shape[1]}"
            )
        for name, arr in (("global", g), ("local", l), ("negative", n)):
            if arr.size and not np.isfinite(arr).all():
                raise NonFiniteValueError(f"{name} prompts contain NaN/Inf")


@dataclass
class GradientBank:
    """Gradients of the total loss w.r.t. the learnable prompts."""

    d_local: np.ndarray     # (C, d)
    d_negative: np.ndarray  # (N_neg, d)


def init_bank(global_source, n_neg: int, seed: int = 0,
              C: int | None = None, d: int | None = None) -> PromptBank:
    """Build a fresh bank from frozen global prompt features.

    Local prompts start as a copy of their class's global prompt; negative
    prompts are seeded unit-norm Gaussian draws. Pass C/d to assert the
    source's shape. n_neg=0 yields a bank without negatives.
    """
    globals_ = resolve_global_source(global_source)
    if C is not None and globals_.shape[0] != C:
        raise ShapeMismatchError(f"expected C={C}, source has {globals_.shape[0]}")
    if d is not None and globals_.shape[1] != d:
        raise ShapeMismatchError(f"expected d={d}, source has {globals_.shape[1]}")
    if n_neg < 0:
        raise ShapeMismatchError(f"n_neg must be >= 0, got {n_neg}")
    dim = globals_.shape[1]
    rng = np.random.default_rng(seed)
    if n_neg:
        negatives = unit_rows(rng.standard_normal((n_neg, dim)))
    else:
        negatives = np.zeros((0, dim))
    bank = PromptBank(
        global_prompts=_f32_grid(globals_),
        local_prompts=_f32_grid(globals_.copy()),
        negative_prompts=_f32_grid(negatives),
    )
    bank.validate()
    return bank


def resolve_global_source(source) -> np.ndarray:
    """Accepts a (C, d) array, a prompt FeatureStore, or a path to one.

    A prompt store holds exactly one record per class (label = class index);
    the record's global vector is the prompt feature.
    """
    if isinstance(source, (str, Path)):
        source = read_store(source)
    if isinstance(source, FeatureStore):
        by_label: dict[int, np.ndarray] = {}
        for rec in source.records:
            if rec.label in by_label:
                raise ShapeMismatchError(
                    f"prompt store has duplicate record for class {rec.label}"
                )
            by_label[rec.label] = np.asarray(rec.global_feat, dtype=np.float64)
        if sorted(by_label) != list(range(source.C)):
            raise ShapeMismatchError(
                "prompt store must hold exactly one record per class "
                f"(labels seen: {sorted(by_label)}, C={source.C})"
            )
        return np.stack([by_label[c] for c in range(source.C)])
    arr = np.asarray(source, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ShapeMismatchError(f"global prompt source must be (C, d), got {arr.shape}")
    return arr


def swap_global_prompts(bank: PromptBank, trained_globals) -> PromptBank:
    """Return a bank with replacement global prompts; locals/negatives untouched.

    This is the inference-time extension point: a better set of global
    prompts (e.g. trained elsewhere) slots in under the same shape.
    """
    new_globals = resolve_global_source(trained_globals)
    if new_globals.shape != bank.global_prompts.shape:
        raise ShapeMismatchError(
            f"replacement globals {new_globals.shape} != {bank.global_prompts.shape}"
        )
    out = PromptBank(
        global_prompts=new_globals.copy(),
        local_prompts=bank.local_prompts.copy(),
        negative_prompts=bank.negative_prompts.copy(),
    )
    out.validate()
    return out


# ---- checkpoint I/O ----

def save_bank(bank: PromptBank, path) -> None:
    bank.validate()
    payload = bytearray()
    payload += struct.pack("<4I", BANK_VERSION, bank.d, bank.C, bank.n_neg)
    for arr in (bank.global_prompts, bank.local_prompts, bank.negative_prompts):
        payload += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    crc = zlib.crc32(bytes(payload))
    try:
        with open(path, "wb") as fh:
            fh.write(BANK_MAGIC)
            fh.write(payload)
            fh.write(struct.pack("<I", crc))
    except OSError as exc:
        raise StoreIOError(f"cannot write {path}: {exc}") from exc


def load_bank(path) -> PromptBank:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise StoreIOError(f"cannot read {path}: {exc}") from exc
    if len(data) < len(BANK_MAGIC):
        raise TruncatedFileError(f"{path}: shorter than the magic header")
    if data[: len(BANK_MAGIC)] != BANK_MAGIC:
        raise BadMagicError(f"{path}: expected {BANK_MAGIC!r}, got {data[:8]!r}")
    if len(data) < len(BANK_MAGIC) + 4:
        raise TruncatedFileError(f"{path}: missing checksum")
    payload = data[len(BANK_MAGIC):-4]
    (stored_crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != stored_crc:
        raise ChecksumMismatchError(f"{path}: payload CRC-32 mismatch")
    if len(payload) < 16:
        raise TruncatedFileError(f"{path}: header incomplete")
    version, d, C, n_neg = struct.unpack("<4I", payload[:16])
    if version != BANK_VERSION:
        raise VersionMismatchError(f"{path}: version {version}, expected {BANK_VERSION}")
    need = 16 + 4 * d * (2 * C + n_neg)
    if len(payload) != need:
        raise TruncatedFileError(
            f"{path}: payload is {len(payload)} bytes, header implies {need}"
        )
    flat = np.frombuffer(payload[16:], dtype="<f4").astype(np.float64)
    g = flat[: C * d].reshape(C, d)
    l = flat[C * d: 2 * C * d].reshape(C, d)
    n = flat[2 * C * d:].reshape(n_neg, d)
    bank = PromptBank(g.copy(), l.copy(), n.copy())
    bank.validate()
    return bank


def bank_digest(bank: PromptBank) -> int:
    """CRC-32 over the float32 image of all three prompt blocks."""
    crc = 0
    for arr in (bank.global_prompts, bank.local_prompts, bank.negative_prompts):
        crc = zlib.crc32(np.ascontiguousarray(arr, dtype="<f4").tobytes(), crc)
    return crc


def _f32_grid(arr: np.ndarray) -> np.ndarray:
    """Round float64 values onto the float32 grid (keeps checkpoints lossless)."""
    return arr.astype(np.float32).astype(np.float64)
