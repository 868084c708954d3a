"""Implementations of the CLI verbs.

Each ``cmd_*`` takes a validated :class:`RunConfig` plus an output location
and returns a process exit code. Configuration and input problems raise
:class:`ConfigError` (exit 2); failed checks return 1.
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .. import gradcheck
from ..dpnet import build_model, models_equal
from ..fgl import FixedControls, SourceSampler, adapt, draw_few_shot, init_generator, meta_train_generator
from ..rng import make_rng
from ..synthdata import (
    FAMILIES, REAL_ID, average_spectrum, generate_corpus, load_corpus, select, separability, write_spectrum,
)
from ..train import train_detector
from . import checkpoint
from .config import ConfigError, RunConfig
from .report import evaluate, file_digest, score_dataset, write_json

log = logging.getLogger(__name__)


def _out_dir(cfg: RunConfig, out) -> Path:
    d = Path(out) if out is not None else Path(cfg.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _records(corpus) -> list:
    root = Path(corpus)
    if not root.is_dir():
        raise ConfigError(f"corpus directory not found: {root}")
    try:
        records = load_corpus(root)
    except FileNotFoundError as e:
        raise ConfigError(str(e)) from e
    except (KeyError, ValueError) as e:
        raise ConfigError(f"{root}: malformed corpus ({e})") from e
    if not records:
        raise ConfigError(f"{root}: corpus is empty")
    return records


def _require_techniques(records, split: str, techniques) -> None:
    present = {r.technique for r in records if r.split == split}
    missing = [t for t in techniques if t not in present]
    if missing:
        raise ConfigError(f"corpus has no {split!r} samples for {missing}")


def _load_model(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"model checkpoint not found: {path}")
    try:
        return checkpoint.load_model(path)
    except checkpoint.CheckpointError as e:
        raise ConfigError(f"{path}: {e}") from e


# ---------------------------------------------------------------- data
def cmd_gen_data(cfg: RunConfig, out=None) -> int:
    target = Path(out) if out is not None else Path(cfg.corpus)
    corpus_cfg = cfg.corpus_config()
    try:
        corpus_cfg.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from e
    records = generate_corpus(corpus_cfg, target)
    print(f"wrote {len(records)} images to {target}")
    return 0


def cmd_spectrum(cfg: RunConfig, out=None, corpus=None) -> int:
    """Average log-magnitude spectrum per technique (and for reals)."""
    root = Path(corpus) if corpus is not None else Path(cfg.corpus)
    if not root.is_dir() or not any(root.iterdir()):
        raise ConfigError(f"no images in {root}")
    records = _records(root)
    groups: dict[str, list] = {}
    for r in records:
        groups.setdefault(r.technique, []).append(r.image[0])
    d = _out_dir(cfg, out)
    stacks = {k: np.stack(v) for k, v in sorted(groups.items())}
    for tech, imgs in stacks.items():
        write_spectrum(average_spectrum(imgs), d / f"spectrum_{tech}")
    fakes = {k: v for k, v in stacks.items() if k != REAL_ID}
    summary = {"images": {k: len(v) for k, v in stacks.items()}}
    if len(fakes) >= 2:
        sep = separability(fakes, seed=cfg.seed)
        summary["separability"] = {
            "min_between": sep["min_between"],
            "max_within": sep["max_within"],
            "ratio": sep["ratio"],
            "between": {f"{a}|{b}": v for (a, b), v in sep["between"].items()},
            "within": sep["within"],
        }
        print(f"separability ratio {sep['ratio']:.3f}")
    write_json(d / "spectrum.json", summary)
    print(f"wrote spectra for {len(stacks)} groups to {d}")
    return 0


# ---------------------------------------------------------------- training
def cmd_train(cfg: RunConfig, out=None) -> int:
    records = _records(cfg.corpus)
    _require_techniques(records, "train", cfg.known)
    data = select(records, "train", list(cfg.known))
    model = build_model(seed=cfg.seed)
    model, hist = train_detector(model, data, cfg.train_config(), cfg.loss_weights(), seed=cfg.seed)
    d = _out_dir(cfg, out)
    path = d / "model.fglc"
    checkpoint.save(path, model=model)
    write_json(d / "train.json", {
        "epoch_loss": hist.epoch_loss,
        "train_acc": hist.train_acc,
        "val_auc": hist.val_auc,
        "best_epoch": hist.best_epoch,
        "n_samples": len(data),
        "seed": cfg.seed,
        "config_digest": cfg.digest(),
        "model_digest": file_digest(path),
    })
    print(f"saved {path} (best epoch {hist.best_epoch})")
    return 0


def cmd_meta_train(cfg: RunConfig, out=None) -> int:
    if len(set(cfg.known)) < 2:
        raise ConfigError("meta-training needs at least two known techniques")
    records = _records(cfg.corpus)
    for split in ("train", "support", "query"):
        _require_techniques(records, split, cfg.known)
    model = _load_model(cfg.model_path)
    known = list(cfg.known)
    fgl_cfg = cfg.fgl_config()
    gen = init_generator(model.n_layers, seed=cfg.seed, l_base=fgl_cfg.l_base, w_range=fgl_cfg.w_range)
    try:
        gen, hist = meta_train_generator(
            gen, model, select(records, "train", known),
            select(records, "support", known), select(records, "query", known), known,
            fgl_cfg, cfg.meta_episodes, seed=cfg.seed, weights=cfg.loss_weights(),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e
    d = _out_dir(cfg, out)
    path = d / "generator.fglc"
    checkpoint.save(path, generator=gen)
    write_json(d / "meta_train.json", {
        "episodes": len(hist.query_losses),
        "techniques": hist.techniques,
        "query_losses": hist.query_losses,
        "seed": cfg.seed,
        "config_digest": cfg.digest(),
        "generator_digest": file_digest(path),
    })
    print(f"saved {path} after {len(hist.query_losses)} episodes")
    return 0


def cmd_adapt(cfg: RunConfig, out=None) -> int:
    tech = cfg.target_technique
    if tech not in cfg.unknown:
        raise ConfigError(f"technique {tech!r} is not in the unknown list {list(cfg.unknown)}")
    records = _records(cfg.corpus)
    _require_techniques(records, "support", [tech])
    model = _load_model(cfg.model_path)
    if cfg.null_generator:
        gen = FixedControls(l=0.0, w=1.0)
    else:
        if not cfg.generator_path.is_file():
            raise ConfigError(f"generator checkpoint not found: {cfg.generator_path}")
        gen = checkpoint.load_generator(cfg.generator_path)
        if gen.n != model.n_layers:
            raise ConfigError(f"generator built for {gen.n} layers, model has {model.n_layers}")
    k = cfg.shots
    pool = select(records, "support", [tech])
    try:
        support = draw_few_shot(pool, tech, k, make_rng(cfg.seed, "adapt-support", tech, k))
    except ValueError as e:
        raise ConfigError(f"insufficient support samples: {e}") from e
    fgl_cfg = cfg.fgl_config()
    sampler = SourceSampler(select(records, "train", list(cfg.known)), fgl_cfg.source_batch,
                            seed=cfg.seed, stream="adapt-source")
    result = adapt(model, gen, support, sampler, fgl_cfg, cfg.loss_weights())
    d = _out_dir(cfg, out)
    path = d / f"adapted_{tech}_{k}shot.fglc"
    checkpoint.save(path, model=result.model)
    write_json(d / f"adapt_{tech}_{k}shot.json", {
        "technique": tech,
        "shots": k,
        "support_ids": list(result.support_ids),
        "inner_losses": [s.loss for s in result.steps],
        "null_generator": cfg.null_generator,
        "unchanged": models_equal(model, result.model),
        "seed": cfg.seed,
        "config_digest": cfg.digest(),
        "model_digest": file_digest(path),
    })
    print(f"saved {path} ({len(support)} support samples)")
    return 0


# ---------------------------------------------------------------- evaluation
def cmd_eval(cfg: RunConfig, out=None) -> int:
    records = _records(cfg.corpus)
    techniques = [cfg.technique] if cfg.technique else list(cfg.known) + list(cfg.unknown)
    present = {r.technique for r in records if r.split == "test"}
    if not present:
        raise ConfigError("test split is empty")
    techniques = [t for t in techniques if t in present]
    if not techniques:
        raise ConfigError("no test samples for the requested techniques")
    model = _load_model(cfg.model_path)
    report = evaluate(model, records, techniques, seed=cfg.seed, config_digest=cfg.digest(),
                      model_digest=file_digest(cfg.model_path))
    d = _out_dir(cfg, out)
    name = f"eval_{cfg.technique}" if cfg.technique else "eval"
    report.write(d / name)
    auc_txt = "null" if report.auc is None else f"{report.auc:.4f}"
    print(f"ACC {report.acc:.4f}  AUC {auc_txt}  ({report.n_real} real / {report.n_fake} fake)")
    return 0


def cmd_grad_check(cfg: RunConfig, out=None) -> int:
    results = gradcheck.run_all(cfg.seed)
    for r in results:
        print(f"{r.component:8s} worst_rel_error={r.worst_rel_error:.3e} coords={r.coords_checked:5d} "
              f"{'ok' if r.passed else 'FAIL'}")
    if out is not None:
        d = _out_dir(cfg, out)
        write_json(d / "grad_check.json", {
            r.component: {"worst_rel_error": r.worst_rel_error, "coords": r.coords_checked,
                          "tolerance": r.tolerance, "passed": r.passed}
            for r in results
        })
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {
    "gen-data": cmd_gen_data,
    "spectrum": cmd_spectrum,
    "train": cmd_train,
    "meta-train": cmd_meta_train,
    "adapt": cmd_adapt,
    "eval": cmd_eval,
    "grad-check": cmd_grad_check,
}

__all__ = ["COMMANDS", "FAMILIES", "score_dataset"] + [f.__name__ for f in COMMANDS.values()]
