"""sklearn-style facade over training and scoring.

LocalPromptDetector behaves like a classifier with an OOD decision function:
fit on an id_train split (records plus crop candidate sets) and the frozen
global prompt features, then predict ID class labels, produce confidence
scores, or threshold them into ID/OOD flags. Hyperparameters follow the
sklearn convention (stored verbatim in __init__, so get_params/set_params and
clone work).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .bank import PromptBank
from .errors import LocalPromptError, ShapeMismatchError
from .evaluation import id_accuracy
from .scoring import ScoreKind, classify_id_batch, discriminate, score_store
from .store import DatasetSplit, FeatureRecord, FeatureStore, validate_store
from .trainer import TrainConfig, TrainLog, run_training


class LocalPromptDetector(BaseEstimator):
    """Few-shot OOD detector built on frozen global and trained local prompts.

    Parameters mirror TrainConfig plus the score choice. After fit, the
    trained prompt bank is available as `bank_` and the per-epoch loss log as
    `train_log_`.
    """

    def __init__(self, shots=4, epochs=30, batch_size=256, lr0=2e-3,
                 lambda_neg=5.0, lambda_reg=0.5, temperature=1.0,
                 k_train=50, k_eval=10, m1=8, m2=1, n_neg=300,
                 score_kind="rmcm", seed=0):
        self.shots = shots
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr0 = lr0
        self.lambda_neg = lambda_neg
        self.lambda_reg = lambda_reg
        self.temperature = temperature
        self.k_train = k_train
        self.k_eval = k_eval
        self.m1 = m1
        self.m2 = m2
        self.n_neg = n_neg
        self.score_kind = score_kind
        self.seed = seed

    # ---- sklearn-style API ----

    def fit(self, X, global_prompts) -> "LocalPromptDetector":
        """Train on an id_train split; global_prompts is a (C, d) array, a
        prompt store, or a path to one."""
        store = _as_store(X, require_crops=True)
        config = self._config()
        self.bank_, self.train_log_ = run_training(store, global_prompts, config)
        self.classes_ = np.arange(self.bank_.C)
        return self

    def decision_function(self, X) -> np.ndarray:
        """Confidence scores, higher = more in-distribution."""
        self._check_fitted()
        store = _as_store(X)
        kind = ScoreKind(self.score_kind, self.k_eval)
        samples = score_store(store, self.bank_, kind, self.temperature, self.k_eval)
        return np.array([s.score for s in samples])

    # alias, matching sklearn outlier-detector vocabulary
    score_samples = decision_function

    def predict(self, X) -> np.ndarray:
        """Predicted ID class index for every record."""
        self._check_fitted()
        store = _as_store(X)
        G = np.stack([r.global_feat for r in store.records]).astype(np.float64)
        Z = np.stack([r.local_feats for r in store.records]).astype(np.float64)
        return classify_id_batch(G, Z, self.bank_, self.temperature, self.k_eval)

    def flag_ood(self, X, gamma: float) -> np.ndarray:
        """Boolean mask, True where the sample scores below gamma (OOD)."""
        return ~discriminate(self.decision_function(X), gamma)

    def score(self, X, y=None) -> float:
        """Mean ID classification accuracy (labels default to the store's)."""
        self._check_fitted()
        store = _as_store(X)
        if y is None:
            return id_accuracy(store, self.bank_, self.temperature, self.k_eval)
        preds = self.predict(X)
        return float(np.mean(preds == np.asarray(y)))

    # ---- plumbing ----

    def _config(self) -> TrainConfig:
        return TrainConfig(
            shots=self.shots,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr0=self.lr0,
            lambda_neg=self.lambda_neg,
            lambda_reg=self.lambda_reg,
            T=self.temperature,
            k_train=self.k_train,
            m=max(24, self.m1 + self.m2),
            m1=self.m1,
            m2=self.m2,
            n_neg=self.n_neg,
            seed=self.seed,
        )

    def _check_fitted(self) -> None:
        if not hasattr(self, "bank_") or not isinstance(self.bank_, PromptBank):
            raise LocalPromptError("this detector is not fitted yet; call fit first")


def _as_store(X, require_crops: bool = False) -> FeatureStore:
    """Input validation: accept DatasetSplit, FeatureStore, or record lists."""
    if isinstance(X, DatasetSplit):
        X = X.store
    if isinstance(X, list) and X and isinstance(X[0], FeatureRecord):
        d = int(np.asarray(X[0].global_feat).shape[0])
        N = int(np.asarray(X[0].local_feats).shape[0])
        C = max(max((r.label for r in X), default=0) + 1, 1)
        X = FeatureStore(d=d, N=N, C=C,
                         class_names=[f"class_{i:03d}" for i in range(C)],
                         records=X)
    if not isinstance(X, FeatureStore):
        raise ShapeMismatchError(
            f"expected a DatasetSplit, FeatureStore, or list of records, got {type(X)!r}"
        )
    validate_store(X)
    if require_crops and not X.crop_sets:
        raise ShapeMismatchError(
            "fit needs an id_train store with crop candidate sets"
        )
    return X
