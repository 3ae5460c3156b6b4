"""Inference-time confidence scores and the local-aware ID classifier.

Three score functions, all "higher = more in-distribution":

  mcm     max over classes of the temperature softmax of global cosine sims
          against the frozen global prompts; in (0, 1].
  glmcm   mcm plus the best per-region class softmax, again against the
          global prompts; in (0, 2].
  rmcm    mcm plus the top-k mean over regions of each region's best ID-class
          probability, where the probability's denominator also sums the
          negative-prompt evidences; uses the trained local prompts. With
          k_eval=1, no negatives, and locals equal to globals this reduces
          to glmcm exactly.

ID classification multiplies the global cosine (frozen prompts) by the top-k
mean local evidence (trained local prompts) per class and takes the argmax.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .bank import PromptBank
from .errors import EmptyInputError, ShapeMismatchError
from .numerics import clamped_exp, softmax_rows, unit_rows
from .store import FeatureRecord, FeatureStore

SCORE_KINDS = ("mcm", "glmcm", "rmcm")


@dataclass(frozen=True)
class ScoreKind:
    kind: str
    k_eval: int = 10  # only rmcm reads it

    def __post_init__(self):
        if self.kind not in SCORE_KINDS:
            raise ValueError(f"score kind must be one of {SCORE_KINDS}, got {self.kind!r}")
        if self.k_eval < 1:
            raise ValueError(f"k_eval must be >= 1, got {self.k_eval}")


@dataclass
class ScoredSample:
    image_id: str
    score: float
    predicted_class: int
    is_id_truth: bool


# ---- batch kernels ----

def mcm_scores(global_feats, bank: PromptBank, T: float = 1.0) -> np.ndarray:
    G = _check_2d(global_feats, bank.d)
    S = unit_rows(G) @ unit_rows(bank.global_prompts).T
    return softmax_rows(S, T).max(axis=1)


def glmcm_scores(global_feats, local_feats, bank: PromptBank, T: float = 1.0) -> np.ndarray:
    Z = _check_3d(local_feats, bank.d)
    S = np.einsum("nhd,cd->nhc", unit_rows(Z), unit_rows(bank.global_prompts))
    local_term = softmax_rows(S, T).max(axis=(1, 2))
    return mcm_scores(global_feats, bank, T) + local_term


def rmcm_scores(global_feats, local_feats, bank: PromptBank, T: float = 1.0,
                k_eval: int = 10, joint_topk: bool = False) -> np.ndarray:
    """Regional score. joint_topk pools the top-k over all (region, class)
    probabilities instead of per-region maxima; off by default."""
    if k_eval < 1:
        raise ValueError(f"k_eval must be >= 1, got {k_eval}")
    Z = _check_3d(local_feats, bank.d)
    P = np.vstack([bank.local_prompts, bank.negative_prompts]) if bank.n_neg \
        else np.asarray(bank.local_prompts, dtype=np.float64)
    S = np.einsum("nhd,md->nhm", unit_rows(Z), unit_rows(P))
    E = clamped_exp(S / T)
    denom = E.sum(axis=2)
    probs = E[:, :, :bank.C] / denom[:, :, None]  # (n, N, C)
    if joint_topk:
        flat = probs.reshape(probs.shape[0], -1)
        local_term = _topk_mean_rows(flat, k_eval)
    else:
        local_term = _topk_mean_rows(probs.max(axis=2), k_eval)
    return mcm_scores(global_feats, bank, T) + local_term


def classify_id_batch(global_feats, local_feats, bank: PromptBank,
                      T: float = 1.0, k_eval: int = 10) -> np.ndarray:
    """Argmax over classes of (global cosine) * (top-k mean local evidence).

    The global part may be negative; the product is used verbatim. Argmax
    ties break toward the lowest class index.
    """
    if k_eval < 1:
        raise ValueError(f"k_eval must be >= 1, got {k_eval}")
    G = _check_2d(global_feats, bank.d)
    Z = _check_3d(local_feats, bank.d)
    hg = unit_rows(G) @ unit_rows(bank.global_prompts).T  # (n, C)
    S = np.einsum("nhd,cd->nhc", unit_rows(Z), unit_rows(bank.local_prompts))
    E = clamped_exp(S / T)
    k = min(k_eval, E.shape[1])
    hl = np.sort(E, axis=1)[:, E.shape[1] - k:, :].sum(axis=1) / k  # (n, C)
    return np.argmax(hg * hl, axis=1)


# ---- per-record operations ----

def score_mcm(rec: FeatureRecord, bank: PromptBank, T: float = 1.0) -> float:
    return float(mcm_scores(rec.global_feat[None], bank, T)[0])


def score_glmcm(rec: FeatureRecord, bank: PromptBank, T: float = 1.0) -> float:
    return float(glmcm_scores(rec.global_feat[None], rec.local_feats[None], bank, T)[0])


def score_rmcm(rec: FeatureRecord, bank: PromptBank, T: float = 1.0,
               k_eval: int = 10, joint_topk: bool = False) -> float:
    return float(rmcm_scores(
        rec.global_feat[None], rec.local_feats[None], bank, T, k_eval, joint_topk
    )[0])


def classify_id(rec: FeatureRecord, bank: PromptBank, T: float = 1.0,
                k_eval: int = 10) -> int:
    return int(classify_id_batch(rec.global_feat[None], rec.local_feats[None],
                                 bank, T, k_eval)[0])


def discriminate(scores, gamma: float) -> np.ndarray:
    """ID iff score >= gamma. Accepts ScoredSamples or raw scores."""
    vals = np.asarray(
        [s.score if isinstance(s, ScoredSample) else s for s in scores],
        dtype=np.float64,
    )
    return vals >= gamma


# ---- store-level scoring ----

def score_store(store: FeatureStore, bank: PromptBank, kind,
                T: float = 1.0, k_eval: int = 10) -> list[ScoredSample]:
    """Score every record; is_id_truth is derived from the label sentinel."""
    sk = kind if isinstance(kind, ScoreKind) else ScoreKind(kind, k_eval)
    if not store.records:
        raise EmptyInputError("cannot score an empty store")
    if store.d != bank.d:
        raise ShapeMismatchError(f"store d={store.d} != bank d={bank.d}")
    G = np.stack([r.global_feat for r in store.records]).astype(np.float64)
    Z = np.stack([r.local_feats for r in store.records]).astype(np.float64)
    if sk.kind == "mcm":
        scores = mcm_scores(G, bank, T)
    elif sk.kind == "glmcm":
        scores = glmcm_scores(G, Z, bank, T)
    else:
        scores = rmcm_scores(G, Z, bank, T, sk.k_eval)
    preds = classify_id_batch(G, Z, bank, T, sk.k_eval)
    return [
        ScoredSample(
            image_id=rec.image_id,
            score=float(s),
            predicted_class=int(p),
            is_id_truth=rec.label >= 0,
        )
        for rec, s, p in zip(store.records, scores, preds)
    ]


def scores_to_csv(samples: list[ScoredSample], kind, path) -> None:
    sk = kind if isinstance(kind, ScoreKind) else ScoreKind(kind)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "score_kind", "score", "predicted_class", "is_id_truth"])
        for s in samples:
            w.writerow([s.image_id, sk.kind, repr(s.score),
                        s.predicted_class, int(s.is_id_truth)])


def scores_from_csv(path) -> list[ScoredSample]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(ScoredSample(
                image_id=row["image_id"],
                score=float(row["score"]),
                predicted_class=int(row["predicted_class"]),
                is_id_truth=bool(int(row["is_id_truth"])),
            ))
    return out


def _topk_mean_rows(X: np.ndarray, k: int) -> np.ndarray:
    k = min(k, X.shape[1])
    return np.sort(X, axis=1)[:, X.shape[1] - k:].sum(axis=1) / k


def _check_2d(G, d: int) -> np.ndarray:
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[1] != d:
        raise ShapeMismatchError(f"expected (n, {d}) global features, got {G.shape}")
    return G


def _check_3d(Z, d: int) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 3 or Z.shape[2] != d:
        raise ShapeMismatchError(f"expected (n, N, {d}) local features, got {Z.shape}")
    return Z
