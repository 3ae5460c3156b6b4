"""OOD detection metrics, density export, and the parameter sweep harness.

AUROC is computed exactly from rank statistics (pairwise win probability,
ties worth half), never from a binned curve. FPR@TPR picks the largest
observed ID score whose ID tail rate still meets the target; no
interpolation. Both choices make the numbers bit-reproducible.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptySetError, UnknownAxisError
from .scoring import ScoreKind, classify_id_batch, score_store
from .store import DatasetSplit, FeatureStore
from .trainer import TrainConfig, run_training


@dataclass
class EvalReport:
    auroc: float
    fpr95: float
    n_id: int
    n_ood: int
    score_kind: ScoreKind
    id_accuracy: float | None = None


def auroc(id_scores, ood_scores) -> float:
    """P(random ID score > random OOD score), ties counted 0.5."""
    a, b = _two_sets(id_scores, ood_scores)
    b_sorted = np.sort(b)
    lo = np.searchsorted(b_sorted, a, side="left")
    hi = np.searchsorted(b_sorted, a, side="right")
    wins = int(lo.sum())
    ties = int((hi - lo).sum())
    return float((wins + 0.5 * ties) / (a.size * b.size))


def fpr_at_tpr(id_scores, ood_scores, tpr_target: float = 0.95) -> float:
    """FPR of OOD at the loosest observed ID threshold meeting the TPR target.

    The threshold is the largest observed ID score gamma with
    count(ID >= gamma) / n_id >= tpr_target; the return value is
    count(OOD >= gamma) / n_ood.
    """
    if not 0 < tpr_target <= 1:
        raise ValueError(f"tpr_target must be in (0, 1], got {tpr_target}")
    a, b = _two_sets(id_scores, ood_scores)
    asc = np.sort(a)
    uniq = np.unique(asc)[::-1]  # candidate thresholds, descending
    counts = a.size - np.searchsorted(asc, uniq, side="left")
    ok = counts / a.size >= tpr_target
    gamma = uniq[int(np.argmax(ok))]  # first True = largest qualifying threshold
    return float(np.mean(b >= gamma))


def id_accuracy(split, bank, T: float = 1.0, k_eval: int = 10) -> float:
    """Fraction of labeled records whose predicted class matches the label."""
    store = split.store if isinstance(split, DatasetSplit) else split
    labeled = [r for r in store.records if r.label >= 0]
    if not labeled:
        raise EmptySetError("no labeled records to classify")
    G = np.stack([r.global_feat for r in labeled]).astype(np.float64)
    Z = np.stack([r.local_feats for r in labeled]).astype(np.float64)
    preds = classify_id_batch(G, Z, bank, T, k_eval)
    labels = np.array([r.label for r in labeled])
    return float(np.mean(preds == labels))


def density_hist(id_scores, ood_scores, bins: int) -> list[tuple[float, float, float, float]]:
    """Shared-range histograms of both score sets, each normalized to sum 1.

    Rows are (bin_lo, bin_hi, id_density, ood_density).
    """
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    a, b = _two_sets(id_scores, ood_scores)
    lo = float(min(a.min(), b.min()))
    hi = float(max(a.max(), b.max()))
    if hi == lo:
        hi = lo + 1.0  # degenerate range; all mass lands in the first bin
    id_counts, edges = np.histogram(a, bins=bins, range=(lo, hi))
    ood_counts, _ = np.histogram(b, bins=bins, range=(lo, hi))
    id_density = id_counts / id_counts.sum()
    ood_density = ood_counts / ood_counts.sum()
    return [
        (float(edges[i]), float(edges[i + 1]), float(id_density[i]), float(ood_density[i]))
        for i in range(bins)
    ]


def density_to_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "id_density", "ood_density"])
        for lo, hi, di, do in rows:
            w.writerow([repr(lo), repr(hi), repr(di), repr(do)])


def evaluate_scores(id_scores, ood_scores, score_kind: ScoreKind,
                    id_acc: float | None = None,
                    tpr_target: float = 0.95) -> EvalReport:
    a, b = _two_sets(id_scores, ood_scores)
    return EvalReport(
        auroc=auroc(a, b),
        fpr95=fpr_at_tpr(a, b, tpr_target),
        n_id=int(a.size),
        n_ood=int(b.size),
        score_kind=score_kind,
        id_accuracy=id_acc,
    )


def report_to_csv(reports, path) -> None:
    if not isinstance(reports, (list, tuple)):
        reports = [reports]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["score_kind", "k_eval", "n_id", "n_ood", "auroc", "fpr95", "id_accuracy"])
        for r in reports:
            w.writerow([
                r.score_kind.kind, r.score_kind.k_eval, r.n_id, r.n_ood,
                repr(r.auroc), repr(r.fpr95),
                "" if r.id_accuracy is None else repr(r.id_accuracy),
            ])


# ---- sweep harness ----

TRAIN_AXES = ("k_train", "lambda_neg", "lambda_reg", "n_neg", "m1", "m2", "shots")
EVAL_AXES = ("k_eval",)
_AXIS_ALIASES = {"N_neg": "n_neg", "temperature": "T"}


@dataclass
class SweepRow:
    axis: str
    value: float
    auroc: float
    fpr95: float
    id_accuracy: float


def sweep(axis: str, values, *, train_store: FeatureStore,
          id_test: FeatureStore, ood_test: FeatureStore, global_source,
          config: TrainConfig, score: str = "rmcm", k_eval: int = 10,
          tpr_target: float = 0.95, jobs: int = 1) -> list[SweepRow]:
    """Rerun train/score/eval along one parameter axis.

    Eval-only axes (k_eval) train once and rescore; training axes retrain per
    value with seed = config.seed + index so values stay independent.
    """
    axis = _AXIS_ALIASES.get(axis, axis)
    if axis not in TRAIN_AXES + EVAL_AXES:
        raise UnknownAxisError(
            f"axis {axis!r} not in {sorted(TRAIN_AXES + EVAL_AXES)}"
        )
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    id_test = id_test.store if isinstance(id_test, DatasetSplit) else id_test
    ood_test = ood_test.store if isinstance(ood_test, DatasetSplit) else ood_test
    train_store = train_store.store if isinstance(train_store, DatasetSplit) else train_store

    def _evaluate_bank(bank, kind: ScoreKind) -> tuple[float, float, float]:
        id_s = [s.score for s in score_store(id_test, bank, kind, config.T, kind.k_eval)]
        ood_s = [s.score for s in score_store(ood_test, bank, kind, config.T, kind.k_eval)]
        acc = id_accuracy(id_test, bank, config.T, kind.k_eval)
        return auroc(id_s, ood_s), fpr_at_tpr(id_s, ood_s, tpr_target), acc

    rows: list[SweepRow] = []
    if axis in EVAL_AXES:
        bank, _ = run_training(train_store, global_source, config)
        for v in values:
            a, f, acc = _evaluate_bank(bank, ScoreKind(score, int(v)))
            rows.append(SweepRow(axis, float(v), a, f, acc))
        return rows

    def _one(iv):
        i, v = iv
        caster = float if axis in ("lambda_neg", "lambda_reg") else int
        cfg = replace(config, seed=config.seed + i, **{axis: caster(v)})
        bank, _ = run_training(train_store, global_source, cfg)
        a, f, acc = _evaluate_bank(bank, ScoreKind(score, k_eval))
        return SweepRow(axis, float(v), a, f, acc)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_one, enumerate(values)))
    else:
        rows = [_one(iv) for iv in enumerate(values)]
    return rows


def sweep_to_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["axis", "value", "auroc", "fpr95", "id_accuracy"])
        for r in rows:
            w.writerow([r.axis, repr(r.value), repr(r.auroc),
                        repr(r.fpr95), repr(r.id_accuracy)])


def _two_sets(id_scores, ood_scores) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(id_scores, dtype=np.float64).ravel()
    b = np.asarray(ood_scores, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise EmptySetError(
            f"need nonempty ID and OOD score sets (got {a.size}, {b.size})"
        )
    return a, b
