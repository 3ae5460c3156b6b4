import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable

from localprompt.bank import PromptBank
from localprompt.numerics import unit_rows
from localprompt.store import CropCandidateSet, FeatureRecord, FeatureStore


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_record(rng, d, N, label, image_id="rec"):
    return FeatureRecord(
        image_id=image_id,
        label=label,
        global_feat=rng.standard_normal(d).astype(np.float32),
        local_feats=rng.standard_normal((N, d)).astype(np.float32),
    )


def random_store(rng, d=8, N=4, C=3, per_class=2, with_crops=False, m=5):
    records, crop_sets = [], []
    for c in range(C):
        for i in range(per_class):
            rec = random_record(rng, d, N, c, f"img_c{c}_{i}")
            records.append(rec)
            if with_crops:
                cands = [
                    random_record(rng, d, N, c, f"img_c{c}_{i}#crop{j}")
                    for j in range(m)
                ]
                crop_sets.append(CropCandidateSet(rec.image_id, c, cands))
    return FeatureStore(
        d=d, N=N, C=C,
        class_names=[f"class_{c}" for c in range(C)],
        records=records,
        crop_sets=crop_sets if with_crops else None,
    )


def random_bank(rng, C=3, d=8, n_neg=2):
    negatives = (
        unit_rows(rng.standard_normal((n_neg, d))) if n_neg
        else np.zeros((0, d))
    )
    globals_ = unit_rows(rng.standard_normal((C, d)))
    return PromptBank(
        global_prompts=globals_.copy(),
        local_prompts=unit_rows(rng.standard_normal((C, d))),
        negative_prompts=negatives,
    )
