"""Deterministic synthetic embedding benchmark with controllable ID/OOD geometry.

Each class gets a unit prototype (orthonormalized against the background
prototypes whenever C + B <= d). An image is N region tokens: a contiguous
object block whose expected extent is id_token_fraction of the regions,
background tokens elsewhere, Gaussian noise on top; the global feature is the
token mean. Crop candidates are contiguous token windows (window mean as the
crop's global, the window resampled to N rows as its locals), so positives
naturally overlap the object block and the worst candidates are pure
background.

OOD modes:
  far            images built from fresh prototypes unrelated to any class
  near           images built from a class prototype nudged by near_epsilon
  local_outlier  an ID-like image whose class block is swapped for a foreign
                 prototype; globally it still looks like background-plus-
                 something, only a few regions give it away
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import InvalidSynthSpecError
from .numerics import unit_rows
from .store import (
    CropCandidateSet,
    DatasetSplit,
    FeatureRecord,
    FeatureStore,
)

OOD_MODES = ("far", "near", "local_outlier")

# Background prototypes lean toward a class prototype by this factor before
# renormalization (cos = bleed / sqrt(1 + bleed^2)), the way grass co-occurs
# with impala. This is what keeps the global score imperfect and gives
# negative prompts something real to absorb; class prototypes themselves stay
# exactly orthonormal, so the clean-limit invariants are untouched.
BG_CLASS_BLEED = 0.65

# The local_outlier foreign prototype leans toward one background prototype by
# this factor: the alien object resembles known context (and through the
# background's class bleed it spuriously excites class prompts), which is what
# makes these outliers hard for class-only scores and absorbable by trained
# negative prompts. far-mode prototypes stay plain fresh directions.
FOREIGN_CONTEXT = 3.0

# Per-image appearance spread: the object's effective prototype is tilted by
# |N(0, APPEARANCE_SPREAD * sigma * sqrt(d))| in a random direction
# (pose / lighting / subspecies variation). Scaled by noise_sigma so the
# sigma=0 clean limit stays exact. This puts a mid-evidence ID population in
# play whose weakness lives in the class direction, not the background
# direction, which is precisely the population negative prompts can rescue.
APPEARANCE_SPREAD = 1.2


@dataclass
class SynthSpec:
    C: int = 10                      # ID classes
    d: int = 64                      # embedding dimension
    N: int = 16                      # region tokens per image
    B: int = 6                       # background prototypes
    shots: int = 8                   # train images per class
    id_test_per_class: int = 40
    ood_test_count: int = 400
    id_token_fraction: float = 0.1875
    noise_sigma: float = 0.1
    ood_mode: str = "local_outlier"
    near_epsilon: float = 0.25
    m: int = 24                      # crop candidates per train image
    seed: int = 0

    def validate(self) -> None:
        for name in ("C", "d", "N", "B", "shots", "id_test_per_class",
                     "ood_test_count", "m"):
            if getattr(self, name) < 1:
                raise InvalidSynthSpecError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0 < self.id_token_fraction <= 1:
            raise InvalidSynthSpecError(
                f"id_token_fraction must be in (0, 1], got {self.id_token_fraction}"
            )
        if self.noise_sigma < 0:
            raise InvalidSynthSpecError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.near_epsilon < 0:
            raise InvalidSynthSpecError(f"near_epsilon must be >= 0, got {self.near_epsilon}")
        if self.ood_mode not in OOD_MODES:
            raise InvalidSynthSpecError(
                f"ood_mode must be one of {OOD_MODES}, got {self.ood_mode!r}"
            )

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def generate(spec: SynthSpec) -> tuple[DatasetSplit, DatasetSplit, DatasetSplit, FeatureStore]:
    """Produce (id_train with crops, id_test, ood_test, global prompt store).

    Bit-identical output for identical (spec, seed): every image draws from
    its own generator keyed by (seed, section, index).
    """
    spec.validate()
    class_protos, bg_protos = _prototypes(spec)
    f_rng = np.random.default_rng([spec.seed, 4])
    fresh = f_rng.standard_normal((spec.C, spec.d))
    if spec.ood_mode == "local_outlier":
        ctx = bg_protos[f_rng.integers(0, spec.B, size=spec.C)]
        foreign = unit_rows(unit_rows(fresh) + FOREIGN_CONTEXT * ctx)
    else:
        foreign = unit_rows(fresh)
    class_names = [f"class_{c:03d}" for c in range(spec.C)]

    train_records: list[FeatureRecord] = []
    crop_sets: list[CropCandidateSet] = []
    for c in range(spec.C):
        for i in range(spec.shots):
            idx = c * spec.shots + i
            rng = np.random.default_rng([spec.seed, 1, idx])
            image_id = f"train_c{c:03d}_{i:04d}"
            tokens, _, _ = _build_tokens(spec, rng, class_protos[c], bg_protos,
                                         curated=True)
            train_records.append(_record(image_id, c, tokens))
            crop_sets.append(_crop_set(spec, rng, image_id, c, tokens))

    test_records: list[FeatureRecord] = []
    for c in range(spec.C):
        for i in range(spec.id_test_per_class):
            idx = c * spec.id_test_per_class + i
            rng = np.random.default_rng([spec.seed, 2, idx])
            tokens, _, _ = _build_tokens(spec, rng, class_protos[c], bg_protos)
            test_records.append(_record(f"test_c{c:03d}_{i:04d}", c, tokens))

    ood_records: list[FeatureRecord] = []
    for i in range(spec.ood_test_count):
        rng = np.random.default_rng([spec.seed, 3, i])
        tokens = _build_ood_tokens(spec, rng, class_protos, bg_protos, foreign)
        ood_records.append(_record(f"ood_{i:05d}", -1, tokens))

    def _store(records, crops=None):
        return FeatureStore(d=spec.d, N=spec.N, C=spec.C,
                            class_names=list(class_names),
                            records=records, crop_sets=crops)

    prompt_store = FeatureStore(
        d=spec.d, N=1, C=spec.C, class_names=list(class_names),
        records=[
            FeatureRecord(
                image_id=f"prompt_{c:03d}",
                label=c,
                global_feat=class_protos[c].astype(np.float32),
                local_feats=class_protos[c][None, :].astype(np.float32),
            )
            for c in range(spec.C)
        ],
    )
    return (
        DatasetSplit("id_train", _store(train_records, crop_sets)),
        DatasetSplit("id_test", _store(test_records)),
        DatasetSplit("ood_test", _store(ood_records)),
        prompt_store,
    )


# ---- internals ----

def _prototypes(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([spec.seed, 0])
    n = spec.C + spec.B
    raw = rng.standard_normal((n, spec.d))
    if n <= spec.d:
        # exactly orthonormal: class sims are one-hot in the clean limit
        q, _ = np.linalg.qr(raw.T)
        protos = q.T[:n]
    else:
        protos = unit_rows(raw)
    class_protos = protos[:spec.C]
    # each background co-occurs with a spread of classes (round-robin pairs),
    # so every class has correlated context and no class wins a suppression
    # lottery when negative prompts later absorb the backgrounds
    first = np.arange(spec.B) % spec.C
    second = (np.arange(spec.B) + spec.B) % spec.C
    lean = unit_rows(class_protos[first] + class_protos[second])
    bg = protos[spec.C:] + BG_CLASS_BLEED * lean
    return class_protos, unit_rows(bg)


def _build_tokens(spec: SynthSpec, rng, proto: np.ndarray, bg_protos: np.ndarray,
                  curated: bool = False, foreign: np.ndarray | None = None):
    """One image: an object block on a balanced background scene, plus noise.

    id_token_fraction is the expected fraction: the block size is a binomial
    draw, so object extent varies across images, giving the ID score
    distribution its weak tail (a wild test photo may show no usable object
    patch at all). Curated images (the few-shot training pool) always carry
    at least one object token. When `foreign` is given, the object prototype
    is swapped before noise: the same scene, an alien object. Returns
    (tokens, block_start, block_size).
    """
    n_id = min(spec.N, int(rng.binomial(spec.N, spec.id_token_fraction)))
    if curated:
        n_id = max(1, n_id)
    start = int(rng.integers(0, spec.N - n_id + 1))
    # balanced scene mix: every background appears equally often per image
    # (random placement), so the global feature's noise tracks object extent
    # rather than scene composition
    bg_idx = np.tile(np.arange(spec.B), (spec.N + spec.B - 1) // spec.B)[:spec.N]
    rng.shuffle(bg_idx)
    src = bg_protos[bg_idx].copy()
    obj = proto if foreign is None else foreign
    tilt = abs(rng.normal(0.0, APPEARANCE_SPREAD * spec.noise_sigma * np.sqrt(spec.d)))
    direction = rng.standard_normal(spec.d)
    obj = obj + tilt * direction / np.linalg.norm(direction)
    src[start:start + n_id] = obj / np.linalg.norm(obj)
    tokens = src + spec.noise_sigma * rng.standard_normal((spec.N, spec.d))
    return tokens, start, n_id


def _build_ood_tokens(spec, rng, class_protos, bg_protos, foreign):
    mode = spec.ood_mode
    if mode == "far":
        proto = foreign[int(rng.integers(0, len(foreign)))]
        tokens, _, _ = _build_tokens(spec, rng, proto, bg_protos)
        return tokens
    if mode == "near":
        c = int(rng.integers(0, spec.C))
        direction = rng.standard_normal(spec.d)
        direction /= np.linalg.norm(direction)
        proto = class_protos[c] + spec.near_epsilon * direction
        proto = proto / np.linalg.norm(proto)
        tokens, _, _ = _build_tokens(spec, rng, proto, bg_protos)
        return tokens
    # local_outlier: an ID-like image whose object block went foreign
    c = int(rng.integers(0, spec.C))
    f = foreign[int(rng.integers(0, len(foreign)))]
    tokens, _, _ = _build_tokens(spec, rng, class_protos[c], bg_protos, foreign=f)
    return tokens


def _record(image_id: str, label: int, tokens: np.ndarray) -> FeatureRecord:
    return FeatureRecord(
        image_id=image_id,
        label=label,
        global_feat=tokens.mean(axis=0).astype(np.float32),
        local_feats=tokens.astype(np.float32),
    )


def _crop_set(spec: SynthSpec, rng, parent_id: str, label: int,
              tokens: np.ndarray) -> CropCandidateSet:
    """Contiguous token windows, resampled to N rows to keep the store geometry."""
    w_min = max(1, spec.N // 8)
    w_max = max(w_min, spec.N // 2)
    cands = []
    for j in range(spec.m):
        w = int(rng.integers(w_min, w_max + 1))
        s0 = int(rng.integers(0, spec.N - w + 1))
        window = tokens[s0:s0 + w]
        stretch = window[(np.arange(spec.N) * w) // spec.N]
        cands.append(FeatureRecord(
            image_id=f"{parent_id}#crop{j:02d}",
            label=label,
            global_feat=window.mean(axis=0).astype(np.float32),
            local_feats=stretch.astype(np.float32),
        ))
    return CropCandidateSet(parent_image_id=parent_id, label=label, candidates=cands)
