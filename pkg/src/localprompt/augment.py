"""Global-prompt-guided selection of positive and hard-negative crops.

Crop generation happens upstream (exporter or synthetic generator); this
module only ranks a candidate set against the frozen global prompt of the
true class and splits off the m1 most / m2 least similar candidates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bank import PromptBank
from .errors import InvalidLabelError, NotEnoughCandidatesError
from .numerics import cosine_sim
from .store import CropCandidateSet, FeatureRecord


@dataclass
class AugmentedBatchItem:
    """Selected crops for one training image."""

    positives: list[FeatureRecord]
    negatives: list[FeatureRecord]
    label: int


def select_augmented(crops: CropCandidateSet, bank: PromptBank,
                     m1: int, m2: int) -> AugmentedBatchItem:
    """Rank candidates by global similarity to the true class's frozen prompt.

    The top m1 become positives, the bottom m2 hard negatives. Ties keep
    candidate order (stable sort), so selection is deterministic. Only global
    features and the frozen prompt matter; local features never influence the
    ranking.
    """
    if m1 < 0 or m2 < 0:
        raise ValueError(f"m1 and m2 must be >= 0, got {m1}, {m2}")
    cands = crops.candidates
    if m1 + m2 > len(cands):
        raise NotEnoughCandidatesError(
            f"need m1+m2={m1 + m2} candidates, crop set for "
            f"{crops.parent_image_id!r} has {len(cands)}"
        )
    if not 0 <= crops.label < bank.C:
        raise InvalidLabelError(f"crop set label {crops.label} outside [0, {bank.C})")
    prompt = bank.global_prompts[crops.label]
    sims = np.array([cosine_sim(c.global_feat, prompt) for c in cands])
    order = np.argsort(-sims, kind="stable")
    positives = [cands[i] for i in order[:m1]]
    negatives = [cands[i] for i in order[len(cands) - m2:]] if m2 else []
    return AugmentedBatchItem(positives=positives, negatives=negatives, label=crops.label)
