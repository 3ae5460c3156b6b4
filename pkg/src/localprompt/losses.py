"""Training losses over local features and their analytic prompt gradients.

Per prompt, the evidence of a crop is the top-k sum over its regions of
exp(cos(region, prompt) / T). The positive loss is the softmax cross-entropy
of the true class's evidence against all class and negative-prompt evidences;
the negative loss credits the pooled negative-prompt evidence on hard-negative
crops; the diversity term is the mean pairwise cosine between negative
prompts. Gradients are hand derived, holding the top-k support fixed (the
standard subgradient at support boundaries), with the full cosine
normalization terms, and are checked against central finite differences in
the test suite. Global prompts never receive a gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import AugmentedBatchItem
from .bank import GradientBank, PromptBank
from .errors import (
    EmptyInputError,
    InvalidLabelError,
    NonPositiveTemperatureError,
    NoNegativePromptsError,
    TooFewNegativePromptsError,
    ZeroNormVectorError,
)
from .numerics import NORM_FLOOR, clamped_exp, topk_sum, unit_rows


@dataclass
class LossBreakdown:
    l_pos: float
    l_neg: float
    l_reg: float
    total: float
    lambda_neg: float
    lambda_reg: float


def class_evidence(local_feats, prompt, k: int, T: float) -> float:
    """Top-k sum over regions of exp(cos(region, prompt) / T); always > 0."""
    Z = np.asarray(local_feats, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise EmptyInputError("class_evidence needs a nonempty (N, d) array")
    _check_T(T)
    p = np.asarray(prompt, dtype=np.float64)
    pn = np.linalg.norm(p)
    if pn < NORM_FLOOR:
        raise ZeroNormVectorError("prompt with zero norm")
    sims = unit_rows(Z) @ (p / pn)
    return topk_sum(clamped_exp(sims / T), k)


def loss_pos(local_feats, label: int, bank: PromptBank, k: int, T: float) -> float:
    """Cross-entropy of the true class's evidence on a positive crop."""
    Z = _as_batch(local_feats)
    if not 0 <= label < bank.C:
        raise InvalidLabelError(f"label {label} outside [0, {bank.C})")
    t = _topk_terms(Z, _stack_prompts(bank), k, T)
    evid = t.evid[0]
    return float(np.log(evid.sum()) - np.log(evid[label]))


def loss_neg(local_feats, bank: PromptBank, k: int, T: float) -> float:
    """Cross-entropy of the pooled negative-prompt evidence on a hard negative."""
    if bank.n_neg < 1:
        raise NoNegativePromptsError("loss_neg needs at least one negative prompt")
    Z = _as_batch(local_feats)
    t = _topk_terms(Z, _stack_prompts(bank), k, T)
    evid = t.evid[0]
    return float(np.log(evid.sum()) - np.log(evid[bank.C:].sum()))


def loss_reg(bank: PromptBank) -> float:
    """Mean pairwise cosine between negative prompts (diversity pressure)."""
    m = bank.n_neg
    if m < 2:
        raise TooFewNegativePromptsError(
            f"diversity regularization needs >= 2 negative prompts, have {m}"
        )
    U = unit_rows(np.asarray(bank.negative_prompts, dtype=np.float64))
    G = U @ U.T
    iu = np.triu_indices(m, k=1)
    return float(G[iu].mean())


def loss_total(batch, bank: PromptBank, config) -> LossBreakdown:
    """Batch loss: mean positive-crop loss + weighted negative and diversity terms.

    l_pos averages over every positive crop in the batch, l_neg over every
    hard-negative crop; l_reg is computed once per bank. With n_neg = 0 the
    negative and diversity terms drop out.
    """
    breakdown, _ = _evaluate(batch, bank, config, with_grad=False)
    return breakdown


def grad_total(batch, bank: PromptBank, config) -> GradientBank:
    """Exact gradient of loss_total w.r.t. local and negative prompts."""
    _, grads = _evaluate(batch, bank, config, with_grad=True)
    return grads


def loss_and_grad(batch, bank: PromptBank, config) -> tuple[LossBreakdown, GradientBank]:
    """One fused pass; what the trainer calls per batch."""
    breakdown, grads = _evaluate(batch, bank, config, with_grad=True)
    return breakdown, grads


# ---- internals ----

@dataclass
class _Terms:
    Zu: np.ndarray      # (n, N, d) unit region features
    Pu: np.ndarray      # (M, d) unit prompts
    Pnorm: np.ndarray   # (M,)
    S: np.ndarray       # (n, N, M) cosine similarities
    E: np.ndarray       # (n, N, M) clamped exp(S / T)
    mask: np.ndarray    # (n, N, M) top-k support over regions
    evid: np.ndarray    # (n, M) per-prompt evidence


def _topk_terms(Z: np.ndarray, P: np.ndarray, k: int, T: float) -> _Terms:
    _check_T(T)
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    Zu = unit_rows(Z)
    Pnorm = np.linalg.norm(P, axis=1)
    if np.any(Pnorm < NORM_FLOOR):
        raise ZeroNormVectorError("prompt with zero norm")
    Pu = P / Pnorm[:, None]
    S = np.einsum("nhd,md->nhm", Zu, Pu)
    E = clamped_exp(S / T)
    N = Z.shape[1]
    if k >= N:
        mask = np.ones_like(E)
        evid = E.sum(axis=1)
    else:
        # stable argsort on -S: ties resolve toward the lowest region index
        order = np.argsort(-S, axis=1, kind="stable")[:, :k, :]
        mask = np.zeros_like(E)
        np.put_along_axis(mask, order, 1.0, axis=1)
        evid = (E * mask).sum(axis=1)
    return _Terms(Zu=Zu, Pu=Pu, Pnorm=Pnorm, S=S, E=E, mask=mask, evid=evid)


def _evaluate(batch, bank, config, with_grad):
    if not batch:
        raise EmptyInputError("loss evaluation over an empty batch")
    lam_n = float(config.lambda_neg)
    lam_r = float(config.lambda_reg)
    k, T = config.k_train, config.T
    P = _stack_prompts(bank)
    C = bank.C

    pos_Z: list[np.ndarray] = []
    pos_labels: list[int] = []
    neg_Z: list[np.ndarray] = []
    for item in batch:
        if not 0 <= item.label < C:
            raise InvalidLabelError(f"batch item label {item.label} outside [0, {C})")
        for rec in item.positives:
            pos_Z.append(np.asarray(rec.local_feats, dtype=np.float64))
            pos_labels.append(item.label)
        for rec in item.negatives:
            neg_Z.append(np.asarray(rec.local_feats, dtype=np.float64))

    dP = np.zeros_like(P) if with_grad else None

    l_pos = 0.0
    if pos_Z:
        t = _topk_terms(np.stack(pos_Z), P, k, T)
        labels = np.asarray(pos_labels)
        rows = np.arange(len(pos_Z))
        D = t.evid.sum(axis=1)
        num = t.evid[rows, labels]
        l_pos = float(np.mean(np.log(D) - np.log(num)))
        if with_grad:
            coef = np.repeat((1.0 / D)[:, None], P.shape[0], axis=1)
            coef[rows, labels] -= 1.0 / num
            coef /= len(pos_Z)
            _accumulate_grad(t, coef, T, dP)

    l_neg = 0.0
    if neg_Z and bank.n_neg >= 1:
        t = _topk_terms(np.stack(neg_Z), P, k, T)
        D = t.evid.sum(axis=1)
        nsum = t.evid[:, C:].sum(axis=1)
        l_neg = float(np.mean(np.log(D) - np.log(nsum)))
        if with_grad and lam_n != 0.0:
            coef = np.repeat((1.0 / D)[:, None], P.shape[0], axis=1)
            coef[:, C:] -= (1.0 / nsum)[:, None]
            coef *= lam_n / len(neg_Z)
            _accumulate_grad(t, coef, T, dP)

    l_reg = 0.0
    if bank.n_neg >= 2:
        l_reg = loss_reg(bank)
        if with_grad and lam_r != 0.0:
            dP[C:] += lam_r * _reg_grad(np.asarray(bank.negative_prompts, dtype=np.float64))

    total = l_pos + lam_n * l_neg + lam_r * l_reg
    breakdown = LossBreakdown(
        l_pos=l_pos, l_neg=l_neg, l_reg=l_reg, total=total,
        lambda_neg=lam_n, lambda_reg=lam_r,
    )
    grads = None
    if with_grad:
        grads = GradientBank(d_local=dP[:C], d_negative=dP[C:])
    return breakdown, grads


def _accumulate_grad(t: _Terms, coef: np.ndarray, T: float, dP: np.ndarray) -> None:
    """Chain dL/d(evidence) through exp and the cosine, support held fixed.

    d cos(z, p)/dp = (z_hat - cos * p_hat) / ||p||, so each supported region
    contributes w * z_hat to the prompt direction and -w * cos to its radial
    component, with w = coef * E / T.
    """
    W = t.mask * t.E * coef[:, None, :] / T
    A = np.einsum("nhm,nhd->md", W, t.Zu)
    b = (W * t.S).sum(axis=(0, 1))
    dP += (A - b[:, None] * t.Pu) / t.Pnorm[:, None]


def _reg_grad(neg: np.ndarray) -> np.ndarray:
    m = neg.shape[0]
    norms = np.linalg.norm(neg, axis=1)
    U = neg / norms[:, None]
    G = U @ U.T
    c = 2.0 / (m * (m - 1))
    Usum = U.sum(axis=0)
    rowsum = G.sum(axis=1)  # includes the diagonal 1
    num = (Usum[None, :] - U) - (rowsum - 1.0)[:, None] * U
    return c * num / norms[:, None]


def _stack_prompts(bank: PromptBank) -> np.ndarray:
    locals_ = np.asarray(bank.local_prompts, dtype=np.float64)
    if bank.n_neg:
        return np.vstack([locals_, np.asarray(bank.negative_prompts, dtype=np.float64)])
    return locals_.copy()


def _as_batch(local_feats) -> np.ndarray:
    Z = np.asarray(local_feats, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise EmptyInputError(f"expected a nonempty (N, d) array, got shape {Z.shape}")
    return Z[None, :, :]


def _check_T(T) -> None:
    if T <= 0:
        raise NonPositiveTemperatureError(f"temperature must be > 0, got {T}")


__all__ = [
    "AugmentedBatchItem",
    "LossBreakdown",
    "class_evidence",
    "loss_pos",
    "loss_neg",
    "loss_reg",
    "loss_total",
    "grad_total",
    "loss_and_grad",
]
