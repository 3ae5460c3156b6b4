"""Deliberately naive reference implementations used to cross-check the library.

Plain loops and stdlib math only; nothing here shares code with the package
internals, so agreement between the two paths is meaningful.
"""

import math

import numpy as np


def cos(a, b):
    num = sum(float(x) * float(y) for x, y in zip(a, b))
    na = math.sqrt(sum(float(x) ** 2 for x in a))
    nb = math.sqrt(sum(float(x) ** 2 for x in b))
    return num / (na * nb)


def topk(values, k):
    return sorted(values, reverse=True)[: max(1, min(k, len(values)))]


def evidence(local_feats, prompt, k, T):
    exps = [math.exp(cos(z, prompt) / T) for z in local_feats]
    return sum(topk(exps, k))


def loss_pos(local_feats, label, local_prompts, negative_prompts, k, T):
    num = evidence(local_feats, local_prompts[label], k, T)
    den = sum(evidence(local_feats, p, k, T) for p in local_prompts)
    den += sum(evidence(local_feats, p, k, T) for p in negative_prompts)
    return -math.log(num / den)


def loss_neg(local_feats, local_prompts, negative_prompts, k, T):
    num = sum(evidence(local_feats, p, k, T) for p in negative_prompts)
    den = num + sum(evidence(local_feats, p, k, T) for p in local_prompts)
    return -math.log(num / den)


def loss_reg(negative_prompts):
    m = len(negative_prompts)
    sims = [
        cos(negative_prompts[i], negative_prompts[j])
        for i in range(m)
        for j in range(i + 1, m)
    ]
    return sum(sims) / len(sims)


def mcm(global_feat, global_prompts, T):
    exps = [math.exp(cos(global_feat, p) / T) for p in global_prompts]
    return max(exps) / sum(exps)


def glmcm(global_feat, local_feats, global_prompts, T):
    best = -math.inf
    for z in local_feats:
        exps = [math.exp(cos(z, p) / T) for p in global_prompts]
        for e in exps:
            best = max(best, e / sum(exps))
    return mcm(global_feat, global_prompts, T) + best


def rmcm(global_feat, local_feats, global_prompts, local_prompts,
         negative_prompts, T, k_eval):
    per_region = []
    for z in local_feats:
        class_exps = [math.exp(cos(z, p) / T) for p in local_prompts]
        neg_exps = [math.exp(cos(z, p) / T) for p in negative_prompts]
        den = sum(class_exps) + sum(neg_exps)
        per_region.append(max(class_exps) / den)
    best = topk(per_region, k_eval)
    return mcm(global_feat, global_prompts, T) + sum(best) / len(best)


def classify(global_feat, local_feats, global_prompts, local_prompts, T, k_eval):
    scores = []
    for gp, lp in zip(global_prompts, local_prompts):
        hg = cos(global_feat, gp)
        exps = [math.exp(cos(z, lp) / T) for z in local_feats]
        top = topk(exps, k_eval)
        hl = sum(top) / len(top)
        scores.append(hg * hl)
    best = max(scores)
    return scores.index(best)


def auroc_pairs(id_scores, ood_scores):
    """O(n^2) pair counting: wins + half-ties over all pairs."""
    wins = 0
    ties = 0
    for a in id_scores:
        for b in ood_scores:
            if a > b:
                wins += 1
            elif a == b:
                ties += 1
    return (wins + 0.5 * ties) / (len(id_scores) * len(ood_scores))


def fpr_threshold_scan(id_scores, ood_scores, tpr_target=0.95):
    """Scan every observed ID score, largest first; first one whose ID tail
    rate meets the target becomes the threshold."""
    n = len(id_scores)
    for gamma in sorted(set(id_scores), reverse=True):
        tpr = sum(1 for s in id_scores if s >= gamma) / n
        if tpr >= tpr_target:
            return sum(1 for s in ood_scores if s >= gamma) / len(ood_scores)
    raise AssertionError("unreachable: the minimum ID score always qualifies")


def finite_difference_grad(fn, arrays, step=1e-5):
    """Central differences of fn() w.r.t. each entry of each array in-place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        if arr.size == 0:
            grads.append(g)
            continue
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            hi = fn()
            arr[idx] = orig - step
            lo = fn()
            arr[idx] = orig
            g[idx] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads
