"""Training loop, encoder pretraining and checkpoints."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import objectives, stnsr
from . import tensor as T
from .errors import CompatibilityError, ConfigError, DataError, NonFiniteError
from .layers import Linear
from .model import StarModel, TrainConfig
from .semantics import SemanticEmbeddingSet, build_embeddings
from .skeleton import SkeletonDataset, get_layout, make_strategy
from .visual import load_part_features

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "star-checkpoint-1"


class TrainingAborted(NonFiniteError):
    def __init__(self, step: int, epoch: int, detail: str = ""):
        self.step, self.epoch = step, epoch
        super().__init__(f"non-finite value at step {step} (epoch {epoch}){': ' + detail if detail else ''}")


# ---------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    path: Path
    epoch: int
    config: TrainConfig
    categories: list[str]
    known: list[str]
    d_sem: int
    params: dict[str, np.ndarray]
    layout: str = "ntu25"


def save_checkpoint(path: str | os.PathLike, model: StarModel, epoch: int, categories, known, d_sem: int,
                    layout: str = "ntu25") -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, p in sorted(model.parameters().items()):
        rel = f"{name}.stnsr"
        stnsr.save(path / rel, p.data)
        entries[name] = {"file": rel, "shape": list(p.shape)}
    doc = {
        "format": CHECKPOINT_FORMAT,
        "epoch": epoch,
        "seed": model.cfg.seed,
        "config_hash": model.cfg.structure_hash(),
        "config": model.cfg.to_dict(),
        "categories": list(categories),
        "known": list(known),
        "d_sem": d_sem,
        "layout": layout,
        "parameters": entries,
    }
    with open(path / "checkpoint.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return path


def config_from_dict(doc: dict) -> TrainConfig:
    names = set(TrainConfig.field_names())
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}")
    doc = dict(doc)
    if "lr_decay_epochs" in doc:
        doc["lr_decay_epochs"] = tuple(doc["lr_decay_epochs"])
    return TrainConfig(**doc)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    path = Path(path)
    meta = path / "checkpoint.json"
    try:
        with open(meta, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"no checkpoint.json in {path}") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CompatibilityError(f"{meta}: unsupported checkpoint format {doc.get('format')!r}")
    cfg = config_from_dict(doc["config"])
    if cfg.structure_hash() != doc.get("config_hash"):
        raise CompatibilityError(f"{meta}: config hash does not match the stored config")
    params = {name: stnsr.load(path / e["file"]) for name, e in doc["parameters"].items()}
    return Checkpoint(path, int(doc["epoch"]), cfg, list(doc["categories"]), list(doc["known"]),
                      int(doc["d_sem"]), params, doc.get("layout", "ntu25"))


def restore_model(ckpt: Checkpoint, cfg: TrainConfig | None = None) -> StarModel:
    """Rebuild the model a checkpoint was saved from and load its weights."""
    cfg = cfg or ckpt.config
    if cfg.structure_hash() != ckpt.config.structure_hash():
        raise CompatibilityError("checkpoint was trained with a different model structure")
    strategy = make_strategy(get_layout(ckpt.layout), cfg.strategy)
    dtype = next(iter(ckpt.params.values())).dtype.type
    with T.default_dtype(dtype):
        model = StarModel(cfg, strategy, len(ckpt.categories), ckpt.d_sem)
    load_params(model, ckpt.params)
    return model


def load_params(model: StarModel, params: dict[str, np.ndarray]) -> None:
    own = model.parameters()
    if set(own) != set(params):
        missing = sorted(set(own) - set(params))
        extra = sorted(set(params) - set(own))
        raise CompatibilityError(f"checkpoint parameters differ (missing {missing[:5]}, unexpected {extra[:5]})")
    for name, p in own.items():
        if params[name].shape != p.shape:
            raise CompatibilityError(f"parameter {name!r}: checkpoint shape {params[name].shape} != {p.shape}")
        p.data = np.array(params[name], dtype=p.dtype)


# ---------------------------------------------------------------- features


def feature_maps(model: StarModel, dataset: SkeletonDataset, idx: np.ndarray | None = None,
                 chunk: int = 128) -> list[np.ndarray]:
    """Part feature maps (numpy, no graph) for the selected samples."""
    idx = np.arange(len(dataset.ids)) if idx is None else np.asarray(idx)
    cfg = model.cfg
    if cfg.encoder_mode == "file":
        feats = dataset.manifest.features or {}
        if feats.get("strategy") != model.strategy.name:
            raise DataError(f"manifest features were exported for strategy {feats.get('strategy')!r}, "
                            f"not {model.strategy.name!r}")
        per_sample = [load_part_features(dataset.root, feats["files"][dataset.ids[i]]) for i in idx]
        maps = [np.stack([s[e] for s in per_sample]).astype(T.get_default_dtype()) if per_sample else None
                for e in range(model.strategy.K)]
        for e, fm in enumerate(maps):
            n_joints = len(model.strategy.joints[e])
            if fm is not None and (fm.ndim != 4 or fm.shape[2] != n_joints or fm.shape[3] != cfg.d_va):
                raise DataError(f"feature maps for part {e} have shape {fm.shape}; "
                                f"expected (N, T', {n_joints}, {cfg.d_va})")
        return maps
    out: list[list[np.ndarray]] = [[] for _ in range(model.strategy.K)]
    for start in range(0, len(idx), chunk):
        fm = model.encode(dataset.x[idx[start:start + chunk]])
        for e, f in enumerate(fm):
            out[e].append(f.data)
    return [np.concatenate(o) for o in out]


def pretrain_encoder(model: StarModel, dataset: SkeletonDataset, train_idx: np.ndarray,
                     known_idx: np.ndarray) -> list[float]:
    """Fit the toy encoder plus a throwaway linear head on known categories."""
    cfg = model.cfg
    head = Linear("encoder_head", cfg.channels, len(known_idx), np.random.default_rng([cfg.seed, 1]))
    params = model.visual.encoder.parameters() + head.parameters()
    losses = []
    for epoch in range(cfg.encoder_epochs):
        order = np.random.default_rng([cfg.seed, 2, epoch]).permutation(train_idx)
        total, steps = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            fmap = model.visual.encoder(dataset.x[batch])  # whole skeleton
            pooled = T.mean(T.reshape(fmap, (len(batch), -1, cfg.channels)), axis=1)
            loss = T.cross_entropy(head(pooled), objectives.local_labels(dataset.labels[batch], known_idx))
            T.backward(loss)
            T.sgd_step(params, cfg.encoder_lr, cfg.weight_decay)
            total += loss.item()
            steps += 1
        losses.append(total / max(steps, 1))
        log.debug("encoder epoch %d loss %.4f", epoch, losses[-1])
    return losses


# ---------------------------------------------------------------- fitting


@dataclass
class FitResult:
    model: StarModel
    checkpoints: list[Path]
    losses: list[dict]
    encoder_losses: list[float] = field(default_factory=list)

    @property
    def final_checkpoint(self) -> Path | None:
        return self.checkpoints[-1] if self.checkpoints else None


def training_indices(dataset: SkeletonDataset) -> np.ndarray:
    idx = dataset.indices("train")
    unknown = ~dataset.split.is_known()[dataset.labels[idx]]
    if unknown.any():
        bad = dataset.ids[int(idx[np.flatnonzero(unknown)[0]])]
        raise DataError(f"training-data hygiene violation: sample {bad!r} belongs to an unknown category")
    if len(idx) == 0:
        raise DataError("dataset has no training samples")
    return idx


def step_losses(model: StarModel, fmaps, labels, emb: SemanticEmbeddingSet, known_idx) -> dict:
    cfg = model.cfg
    part_lat, glob = model.visual_latents(fmaps)
    f_si, f_cn = model.semantic_latents(emb)
    kw = dict(mode=cfg.logit_mode, temperature=cfg.temperature)
    l_mpce = objectives.mpce(part_lat, f_si, labels, known_idx, **kw)
    l_sce = objectives.sce(f_si, f_cn, **kw)
    l_gce = objectives.gce(glob, labels, f_cn, known_idx, **kw)
    weights = objectives.LossWeights(cfg.alpha if cfg.use_sce else 0.0, cfg.beta if cfg.use_gce else 0.0)
    l_total = objectives.total(l_mpce if cfg.use_mpce else None, l_sce, l_gce, weights)
    return {"l_mpce": l_mpce, "l_sce": l_sce, "l_gce": l_gce, "l_total": l_total}


def fit(dataset: SkeletonDataset, cfg: TrainConfig, out_dir: str | os.PathLike | None = None,
        resume: str | os.PathLike | None = None, emb: SemanticEmbeddingSet | None = None,
        dtype=np.float32) -> FitResult:
    """Train on the known-category training samples of ``dataset``.

    A checkpoint is written to ``out_dir/checkpoints/epoch_NNN`` after every
    epoch and one JSON line per epoch is appended to ``out_dir/losses.jsonl``.
    """
    cfg.validate()
    strategy = make_strategy(dataset.layout, cfg.strategy)
    known_idx = dataset.split.known_idx
    train_idx = training_indices(dataset)
    if emb is None:
        emb = build_embeddings(dataset, strategy, cfg.provider, d_sem=cfg.d_sem)
    out_dir = Path(out_dir) if out_dir is not None else None

    with T.default_dtype(dtype):
        model = StarModel(cfg, strategy, len(dataset.categories), emb.d_sem)
        start_epoch, encoder_losses = 0, []
        if resume is not None:
            ckpt = load_checkpoint(resume)
            if ckpt.categories != list(dataset.categories):
                raise CompatibilityError("checkpoint category table differs from the dataset's")
            load_params(model, ckpt.params)
            start_epoch = ckpt.epoch
        elif cfg.encoder_mode != "file":
            model.visual.encoder.calibrate(dataset.x[train_idx])
            if cfg.encoder_mode == "pretrained":
                encoder_losses = pretrain_encoder(model, dataset, train_idx, known_idx)

        joint = cfg.encoder_mode == "joint"
        cached = None if joint else feature_maps(model, dataset, train_idx)
        params = model.trainable(include_encoder=joint)
        losses: list[dict] = []
        checkpoints: list[Path] = []
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            if start_epoch == 0:
                (out_dir / "losses.jsonl").unlink(missing_ok=True)
        step = start_epoch * -(-len(train_idx) // cfg.batch_size)
        for epoch in range(start_epoch, cfg.epochs):
            lr = cfg.lr_at(epoch)
            order = np.random.default_rng([cfg.seed, 3, epoch]).permutation(len(train_idx))
            sums = {"l_mpce": 0.0, "l_sce": 0.0, "l_gce": 0.0, "l_total": 0.0}
            n_steps = 0
            for start in range(0, len(order), cfg.batch_size):
                pos = order[start:start + cfg.batch_size]
                batch = train_idx[pos]
                try:
                    if joint:
                        fmaps = model.encode(dataset.x[batch])
                    else:
                        fmaps = [T.Tensor(c[pos]) for c in cached]
                    terms = step_losses(model, fmaps, dataset.labels[batch], emb, known_idx)
                    T.backward(terms["l_total"])
                    T.sgd_step([p for p in params if p.grad is not None], lr, cfg.weight_decay)
                except NonFiniteError as exc:
                    raise TrainingAborted(step, epoch, str(exc)) from exc
                for p in params:
                    p.grad = None
                for key in sums:
                    sums[key] += terms[key].item()
                n_steps += 1
                step += 1
            record = {"epoch": epoch + 1, **{k: v / n_steps for k, v in sums.items()}, "lr": lr}
            losses.append(record)
            log.info("epoch %d  total %.4f  mpce %.4f  sce %.4f  gce %.4f", epoch + 1, record["l_total"],
                     record["l_mpce"], record["l_sce"], record["l_gce"])
            if out_dir is not None:
                with open(out_dir / "losses.jsonl", "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record) + "\n")
                checkpoints.append(save_checkpoint(out_dir / "checkpoints" / f"epoch_{epoch + 1:03d}", model,
                                                   epoch + 1, dataset.categories, dataset.split.known, emb.d_sem,
                                                   dataset.layout.name))
    return FitResult(model, checkpoints, losses, encoder_losses)
