"""Command-line pipeline: gen, train, score, eval, sweep, validate.

Every run writes a key=value run manifest before doing heavy work (status
running / ok / failed, input CRC-32 digests, the resolved config, output
paths). All randomness flows from --seed, with the LP_SEED environment
variable as a fallback when the flag is absent.

Output CSV columns:
  scores   image_id, score_kind, score, predicted_class, is_id_truth
  report   score_kind, k_eval, n_id, n_ood, auroc, fpr95, id_accuracy
  density  bin_lo, bin_hi, id_density, ood_density
  sweep    axis, value, auroc, fpr95, id_accuracy
  log      epoch, l_pos, l_neg, l_reg, total, lr, seconds
"""

from __future__ import annotations

import argparse
import os
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .bank import load_bank, save_bank, swap_global_prompts
from .errors import EmptySetError, LocalPromptError
from .evaluation import (
    density_hist,
    density_to_csv,
    evaluate_scores,
    id_accuracy,
    report_to_csv,
    sweep,
    sweep_to_csv,
)
from .scoring import ScoreKind, score_store, scores_from_csv, scores_to_csv
from .store import FeatureStore, read_store, write_manifest, write_store
from .synthgen import OOD_MODES, SynthSpec, generate
from .trainer import TrainConfig, run_training


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LocalPromptError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="localprompt",
        description="Few-shot OOD detection over precomputed embeddings.",
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic embedding benchmark")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--classes", type=int, default=SynthSpec.C)
    g.add_argument("--dim", type=int, default=SynthSpec.d)
    g.add_argument("--tokens", type=int, default=SynthSpec.N)
    g.add_argument("--background", type=int, default=SynthSpec.B)
    g.add_argument("--shots", type=int, default=SynthSpec.shots)
    g.add_argument("--id-test-per-class", type=int, default=SynthSpec.id_test_per_class)
    g.add_argument("--ood-test", type=int, default=SynthSpec.ood_test_count)
    g.add_argument("--id-fraction", type=float, default=SynthSpec.id_token_fraction)
    g.add_argument("--noise", type=float, default=SynthSpec.noise_sigma)
    g.add_argument("--ood-mode", choices=OOD_MODES, default=SynthSpec.ood_mode)
    g.add_argument("--near-epsilon", type=float, default=SynthSpec.near_epsilon)
    g.add_argument("--crops", type=int, default=SynthSpec.m)
    g.add_argument("--seed", type=int, default=None)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train local and negative prompts")
    t.add_argument("--train", required=True, help="id_train LPFS store with crop sets")
    t.add_argument("--globals", required=True, help="global prompt store (LPFS)")
    t.add_argument("--out", required=True, help="output checkpoint (LPBANK01)")
    t.add_argument("--config", help="flat key=value config file")
    t.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    _add_config_flags(t)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("score", help="score stores with a trained bank")
    s.add_argument("--bank", required=True)
    s.add_argument("--id", required=True, help="ID store to score")
    s.add_argument("--ood", help="optional OOD store to score")
    s.add_argument("--score", choices=("mcm", "glmcm", "rmcm"), default="rmcm")
    s.add_argument("--k", type=int, default=10, help="k_eval for rmcm / classification")
    s.add_argument("--temperature", type=float, default=1.0)
    s.add_argument("--swap-globals",
                   help="prompt store whose vectors replace the bank's globals")
    s.add_argument("--out", required=True, help="scores CSV")
    s.add_argument("--jobs", type=int, default=1, help="scoring worker bound")
    s.set_defaults(func=cmd_score)

    e = sub.add_parser("eval", help="AUROC / FPR95 / ID accuracy report")
    e.add_argument("--scores", help="scores CSV produced by `score`")
    e.add_argument("--bank", help="... or recompute: bank checkpoint")
    e.add_argument("--id", help="ID store (with --bank)")
    e.add_argument("--ood", help="OOD store (with --bank)")
    e.add_argument("--score", choices=("mcm", "glmcm", "rmcm"), default="rmcm")
    e.add_argument("--k", type=int, default=10)
    e.add_argument("--temperature", type=float, default=1.0)
    e.add_argument("--tpr", type=float, default=0.95)
    e.add_argument("--bins", type=int, default=50)
    e.add_argument("--density", help="optional density histogram CSV")
    e.add_argument("--out", required=True, help="report CSV")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="rerun train/score/eval along one axis")
    w.add_argument("--axis", required=True)
    w.add_argument("--values", required=True, help="comma-separated values")
    w.add_argument("--train", required=True)
    w.add_argument("--globals", required=True)
    w.add_argument("--id", required=True)
    w.add_argument("--ood", required=True)
    w.add_argument("--config")
    w.add_argument("--score", choices=("mcm", "glmcm", "rmcm"), default="rmcm")
    w.add_argument("--k", type=int, default=10)
    w.add_argument("--jobs", type=int, default=1)
    w.add_argument("--out", required=True, help="sweep CSV")
    _add_config_flags(w)
    w.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="read and validate an LPFS store")
    v.add_argument("--store", required=True)
    v.set_defaults(func=cmd_validate)
    return p


_CONFIG_FLAGS = {
    "shots": int, "epochs": int, "batch_size": int, "lr0": float,
    "lambda_neg": float, "lambda_reg": float, "T": float, "k_train": int,
    "m": int, "m1": int, "m2": int, "n_neg": int,
}


def _add_config_flags(parser) -> None:
    for name, caster in _CONFIG_FLAGS.items():
        flag = "--" + name.replace("_", "-")
        if name == "T":
            flag = "--temperature"
        parser.add_argument(flag, dest=f"cfg_{name}", type=caster, default=None)
    parser.add_argument("--seed", type=int, default=None)


def _resolve_config(args) -> TrainConfig:
    """defaults < config file < flags; seed: flag > LP_SEED > file > default."""
    config = TrainConfig()
    if getattr(args, "config", None):
        config = TrainConfig.from_file(args.config, base=config)
    overrides = {
        name: getattr(args, f"cfg_{name}")
        for name in _CONFIG_FLAGS
        if getattr(args, f"cfg_{name}", None) is not None
    }
    if overrides:
        config = replace(config, **overrides)
    return replace(config, seed=_resolve_seed(args.seed, config.seed))


def _resolve_seed(flag_seed, fallback) -> int:
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get("LP_SEED")
    if env is not None:
        return int(env)
    return fallback


# ---- run manifests ----

def _crc_file(path) -> int:
    return zlib.crc32(Path(path).read_bytes())


class _RunManifest:
    """key=value run manifest; written first, finalized on exit."""

    def __init__(self, path, command: str, params: dict, inputs, outputs, seed):
        self.path = path
        self.entries = {"command": command, "status": "running",
                        "artifact_version": __version__, "seed": seed}
        for key, value in params.items():
            self.entries[f"config.{key}"] = value
        for ipath in inputs:
            self.entries[f"input.{Path(ipath).name}.crc32"] = _crc_file(ipath)
        for i, opath in enumerate(outputs):
            self.entries[f"output.{i}"] = opath
        write_manifest(self.path, self.entries)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None:
            self.entries["status"] = "ok"
        else:
            self.entries["status"] = "failed"
            self.entries["error"] = type(exc).__name__
        write_manifest(self.path, self.entries)
        return False


# ---- commands ----

def cmd_gen(args) -> int:
    spec = SynthSpec(
        C=args.classes, d=args.dim, N=args.tokens, B=args.background,
        shots=args.shots, id_test_per_class=args.id_test_per_class,
        ood_test_count=args.ood_test, id_token_fraction=args.id_fraction,
        noise_sigma=args.noise, ood_mode=args.ood_mode,
        near_epsilon=args.near_epsilon, m=args.crops,
        seed=_resolve_seed(args.seed, SynthSpec.seed),
    )
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {role: outdir / f"{role}.lpfs"
             for role in ("id_train", "id_test", "ood_test")}
    prompt_path = outdir / "global_prompts.lpfs"
    with _RunManifest(outdir / "run.manifest", "gen", spec.as_dict(), [],
                      [*map(str, paths.values()), str(prompt_path)], spec.seed):
        id_train, id_test, ood_test, prompts = generate(spec)
        for split in (id_train, id_test, ood_test):
            write_store(split.store, paths[split.role], role=split.role)
        write_store(prompts, prompt_path, role="global_prompts")
        write_manifest(outdir / "synthspec.manifest", spec.as_dict())
    print(f"gen: wrote {len(id_train.store.records)} train / "
          f"{len(id_test.store.records)} id_test / "
          f"{len(ood_test.store.records)} ood_test records to {outdir}")
    return 0


def cmd_train(args) -> int:
    config = _resolve_config(args)
    out = Path(args.out)
    log_path = Path(args.log) if args.log else Path(str(out) + ".log.csv")
    inputs = [args.train, args.globals] + ([args.config] if args.config else [])
    with _RunManifest(str(out) + ".run", "train", config.as_dict(), inputs,
                      [str(out), str(log_path)], config.seed):
        store = read_store(args.train)
        bank, log = run_training(store, args.globals, config)
        save_bank(bank, out)
        log.to_csv(log_path)
    print(f"train: {config.epochs} epochs over {len(store.records)} records "
          f"-> {out}")
    return 0


def cmd_score(args) -> int:
    kind = ScoreKind(args.score, args.k)
    inputs = [args.bank, args.id] + ([args.ood] if args.ood else []) \
        + ([args.swap_globals] if args.swap_globals else [])
    params = {"score": args.score, "k": args.k, "temperature": args.temperature,
              "swap_globals": args.swap_globals or ""}
    with _RunManifest(str(args.out) + ".run", "score", params, inputs,
                      [args.out], "-"):
        bank = load_bank(args.bank)
        if args.swap_globals:
            bank = swap_global_prompts(bank, args.swap_globals)
        samples = []
        for path in [args.id] + ([args.ood] if args.ood else []):
            store = read_store(path)
            samples.extend(_score_chunked(store, bank, kind, args.temperature,
                                          args.jobs))
        scores_to_csv(samples, kind, args.out)
    print(f"score: {len(samples)} rows -> {args.out}")
    return 0


def _score_chunked(store, bank, kind, T, jobs):
    if jobs <= 1 or len(store.records) < 2 * jobs:
        return score_store(store, bank, kind, T, kind.k_eval)
    chunks = []
    size = (len(store.records) + jobs - 1) // jobs
    for i in range(0, len(store.records), size):
        chunks.append(FeatureStore(
            d=store.d, N=store.N, C=store.C, class_names=store.class_names,
            records=store.records[i:i + size],
        ))
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(
            lambda s: score_store(s, bank, kind, T, kind.k_eval), chunks
        ))
    return [s for part in parts for s in part]


def cmd_eval(args) -> int:
    kind = ScoreKind(args.score, args.k)
    if args.scores:
        inputs = [args.scores]
        kind = _kind_from_scores_csv(args.scores, args.k)
    else:
        if not (args.bank and args.id and args.ood):
            print("error: UsageError: eval needs --scores or --bank/--id/--ood",
                  file=sys.stderr)
            return 2
        inputs = [args.bank, args.id, args.ood]
    outputs = [args.out] + ([args.density] if args.density else [])
    params = {"score": args.score, "k": args.k, "tpr": args.tpr, "bins": args.bins}
    with _RunManifest(str(args.out) + ".run", "eval", params, inputs, outputs, "-"):
        if args.scores:
            samples = scores_from_csv(args.scores)
            id_scores = [s.score for s in samples if s.is_id_truth]
            ood_scores = [s.score for s in samples if not s.is_id_truth]
            id_acc = None  # per-record truth labels are not in the scores CSV
        else:
            bank = load_bank(args.bank)
            id_store = read_store(args.id)
            ood_store = read_store(args.ood)
            id_scores = [s.score for s in
                         score_store(id_store, bank, kind, args.temperature, args.k)]
            ood_scores = [s.score for s in
                          score_store(ood_store, bank, kind, args.temperature, args.k)]
            id_acc = id_accuracy(id_store, bank, args.temperature, args.k)
        report = evaluate_scores(id_scores, ood_scores, kind, id_acc, args.tpr)
        report_to_csv(report, args.out)
        if args.density:
            density_to_csv(density_hist(id_scores, ood_scores, args.bins),
                           args.density)
    print(f"eval: auroc={report.auroc:.4f} fpr95={report.fpr95:.4f} "
          f"n_id={report.n_id} n_ood={report.n_ood} -> {args.out}")
    return 0


def cmd_sweep(args) -> int:
    config = _resolve_config(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        print("error: UsageError: --values is empty", file=sys.stderr)
        return 2
    values = [float(v) for v in values]
    inputs = [args.train, args.globals, args.id, args.ood] \
        + ([args.config] if args.config else [])
    params = dict(config.as_dict(), axis=args.axis, values=args.values,
                  score=args.score, k=args.k)
    with _RunManifest(str(args.out) + ".run", "sweep", params, inputs,
                      [args.out], config.seed):
        rows = sweep(
            args.axis, values,
            train_store=read_store(args.train),
            id_test=read_store(args.id),
            ood_test=read_store(args.ood),
            global_source=args.globals,
            config=config,
            score=args.score,
            k_eval=args.k,
            jobs=args.jobs,
        )
        sweep_to_csv(rows, args.out)
    print(f"sweep: {len(rows)} rows -> {args.out}")
    return 0


def _kind_from_scores_csv(path, k_eval) -> ScoreKind:
    """The CSV knows which score it holds; --k stays report metadata."""
    import csv as _csv

    with open(path, newline="", encoding="utf-8") as fh:
        for row in _csv.DictReader(fh):
            return ScoreKind(row["score_kind"], k_eval)
    raise EmptySetError(f"{path}: no score rows")


def cmd_validate(args) -> int:
    store = read_store(args.store)
    n_crops = len(store.crop_sets or [])
    print(f"ok d={store.d} N={store.N} C={store.C} "
          f"records={len(store.records)} crop_sets={n_crops}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
