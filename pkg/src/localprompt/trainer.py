"""SGD over the prompt bank with a per-step cosine learning-rate schedule.

Plain SGD, no momentum or weight decay; the last incomplete batch is kept
(mean reduction makes it harmless). Selection of positive/negative crops
depends only on frozen global prompts, so it is computed once per record and
reused across epochs.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .augment import select_augmented
from .bank import PromptBank, init_bank
from .errors import (
    MissingCropSetsError,
    ShapeMismatchError,
    StepOutOfRangeError,
)
from .losses import LossBreakdown, loss_and_grad
from .store import DatasetSplit, FeatureStore, few_shot_subsample


@dataclass
class TrainConfig:
    """All training hyperparameters; defaults target the full-size setting."""

    shots: int = 4
    epochs: int = 30
    batch_size: int = 256
    lr0: float = 2e-3
    lambda_neg: float = 5.0
    lambda_reg: float = 0.5
    T: float = 1.0
    k_train: int = 50
    m: int = 24
    m1: int = 8
    m2: int = 1
    n_neg: int = 300
    seed: int = 0

    def validate(self) -> None:
        if self.shots < 1:
            raise ValueError(f"shots must be >= 1, got {self.shots}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        if self.lambda_neg < 0 or self.lambda_reg < 0:
            raise ValueError("loss weights must be >= 0")
        if self.T <= 0:
            raise ValueError(f"T must be > 0, got {self.T}")
        if self.k_train < 1:
            raise ValueError(f"k_train must be >= 1, got {self.k_train}")
        if self.m1 < 0 or self.m2 < 0:
            raise ValueError("m1 and m2 must be >= 0")
        if self.m < self.m1 + self.m2:
            raise ValueError(f"m={self.m} must be >= m1+m2={self.m1 + self.m2}")
        if self.n_neg < 0:
            raise ValueError(f"n_neg must be >= 0, got {self.n_neg}")

    @classmethod
    def from_file(cls, path, base: "TrainConfig | None" = None) -> "TrainConfig":
        """Parse flat key=value lines; unknown keys are an error."""
        cfg = base if base is not None else cls()
        known = {f.name: f.type for f in fields(cls)}
        aliases = {"N_neg": "n_neg", "temperature": "T"}
        updates = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, value = (s.strip() for s in line.split("=", 1))
                key = aliases.get(key, key)
                if key not in known:
                    raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
                caster = float if key in ("lr0", "lambda_neg", "lambda_reg", "T") else int
                updates[key] = caster(value)
        return replace(cfg, **updates)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class TrainLogEntry:
    epoch: int
    loss: LossBreakdown
    lr: float
    seconds: float


@dataclass
class TrainLog:
    entries: list[TrainLogEntry] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "l_pos", "l_neg", "l_reg", "total", "lr", "seconds"])
            for e in self.entries:
                w.writerow([
                    e.epoch,
                    repr(e.loss.l_pos), repr(e.loss.l_neg), repr(e.loss.l_reg),
                    repr(e.loss.total), repr(e.lr), f"{e.seconds:.3f}",
                ])


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """lr0 * 0.5 * (1 + cos(pi * step / total_steps)); no warmup."""
    if total_steps < 1 or not 0 <= step < total_steps:
        raise StepOutOfRangeError(f"step {step} outside [0, {total_steps})")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def train(split, bank: PromptBank, config: TrainConfig) -> tuple[PromptBank, TrainLog]:
    """Train local and negative prompts; global prompts are never touched.

    Fully deterministic given (store, config, seed): epoch shuffles come from
    one seeded generator and batch gradients reduce in fixed record order.
    Returns a new bank; the input bank is left unchanged.
    """
    store = split.store if isinstance(split, DatasetSplit) else split
    config.validate()
    if not store.records:
        raise MissingCropSetsError("training store has no records")
    if store.crop_sets is None or not store.crop_sets:
        raise MissingCropSetsError("training store carries no crop candidate sets")
    if bank.d != store.d:
        raise ShapeMismatchError(f"bank d={bank.d} != store d={store.d}")
    if bank.C != store.C:
        raise ShapeMismatchError(f"bank C={bank.C} != store C={store.C}")
    if bank.n_neg != config.n_neg:
        raise ShapeMismatchError(
            f"bank has {bank.n_neg} negative prompts, config says {config.n_neg}"
        )

    by_parent = {cs.parent_image_id: cs for cs in store.crop_sets}
    missing = [r.image_id for r in store.records if r.image_id not in by_parent]
    if missing:
        raise MissingCropSetsError(
            f"{len(missing)} records lack crop sets (e.g. {missing[:3]})"
        )

    work = PromptBank(
        bank.global_prompts.copy(),
        np.asarray(bank.local_prompts, dtype=np.float64).copy(),
        np.asarray(bank.negative_prompts, dtype=np.float64).copy(),
    )

    # selection only reads frozen globals; cache it up front
    items = [
        select_augmented(by_parent[rec.image_id], work, config.m1, config.m2)
        for rec in store.records
    ]

    n = len(store.records)
    n_batches = math.ceil(n / config.batch_size)
    total_steps = max(1, config.epochs * n_batches)
    rng = np.random.default_rng(config.seed)
    log = TrainLog()
    step = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        perm = rng.permutation(n)
        lr_epoch = cosine_lr(step, total_steps, config.lr0)
        batch_stats: list[tuple[int, LossBreakdown]] = []
        for b0 in range(0, n, config.batch_size):
            batch = [items[i] for i in perm[b0:b0 + config.batch_size]]
            breakdown, grads = loss_and_grad(batch, work, config)
            lr = cosine_lr(step, total_steps, config.lr0)
            work.local_prompts -= lr * grads.d_local
            if work.n_neg:
                work.negative_prompts -= lr * grads.d_negative
            step += 1
            batch_stats.append((len(batch), breakdown))
        log.entries.append(TrainLogEntry(
            epoch=epoch,
            loss=_mean_breakdown(batch_stats),
            lr=lr_epoch,
            seconds=time.perf_counter() - t0,
        ))
    return work, log


def run_training(store: FeatureStore, global_source, config: TrainConfig,
                 ) -> tuple[PromptBank, TrainLog]:
    """Subsample to config.shots, init a bank from the globals, train.

    The one code path shared by the CLI, the sweep harness, and the
    estimator, so their results line up exactly.
    """
    sampled = few_shot_subsample(store, config.shots, config.seed)
    bank = init_bank(global_source, config.n_neg, config.seed,
                     C=sampled.C, d=sampled.d)
    return train(sampled, bank, config)


def _mean_breakdown(batch_stats) -> LossBreakdown:
    """Image-count-weighted means; total recomposed so its identity holds."""
    weights = np.array([w for w, _ in batch_stats], dtype=np.float64)
    weights /= weights.sum()
    l_pos = float(sum(w * b.l_pos for w, (_, b) in zip(weights, batch_stats)))
    l_neg = float(sum(w * b.l_neg for w, (_, b) in zip(weights, batch_stats)))
    l_reg = float(sum(w * b.l_reg for w, (_, b) in zip(weights, batch_stats)))
    lam_n = batch_stats[0][1].lambda_neg
    lam_r = batch_stats[0][1].lambda_reg
    return LossBreakdown(
        l_pos=l_pos, l_neg=l_neg, l_reg=l_reg,
        total=l_pos + lam_n * l_neg + lam_r * l_reg,
        lambda_neg=lam_n, lambda_reg=lam_r,
    )
