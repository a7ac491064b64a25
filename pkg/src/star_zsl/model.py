"""The full two-stream model and its configuration."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .semantics import SemanticEmbeddingSet, SemanticStream
from .skeleton import PartitionStrategy, SkeletonDataset, decompose_parts
from .tensor import Parameter, Tensor
from .visual import VisualStream

ENCODER_MODES = ("pretrained", "joint", "file")


@dataclass
class TrainConfig:
    # optimisation
    epochs: int = 40
    batch_size: int = 32
    lr: float = 0.001
    lr_decay_epochs: tuple[int, ...] = (20, 30)
    lr_decay: float = 0.1
    weight_decay: float = 5e-4
    alpha: float = 0.1
    beta: float = 0.1
    seed: int = 0
    # encoder
    encoder_mode: str = "pretrained"
    encoder_epochs: int = 20
    encoder_lr: float = 1.0
    # architecture
    strategy: str = "six"
    frames: int = 32
    channels: int = 64
    stride: int = 4
    d_va: int = 64
    d_ff: int = 128
    d_lat: int = 32
    d_hidden_sem: int = 64
    heads: int = 8
    m: int = 100
    per_part_projector: bool = False
    per_part_projection: bool = False
    # ablation toggles
    use_attention: bool = True
    use_visual_prompt: bool = True
    use_semantic_prompt: bool = True
    use_mpce: bool = True
    use_sce: bool = True
    use_gce: bool = True
    # logits
    logit_mode: str = "dot"
    temperature: float = 1.0
    # semantics
    provider: str = "synthetic"
    d_sem: int = 64

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not (self.lr > 0 and self.encoder_lr > 0 and self.lr_decay > 0):
            raise ConfigError("learning rates and decay factor must be positive")
        if self.weight_decay < 0 or self.alpha < 0 or self.beta < 0:
            raise ConfigError("weight_decay, alpha and beta must be nonnegative")
        decay = list(self.lr_decay_epochs)
        if any(e <= 0 for e in decay) or decay != sorted(set(decay)):
            raise ConfigError(f"lr decay epochs {decay} must be positive and strictly increasing")
        if self.encoder_mode not in ENCODER_MODES:
            raise ConfigError(f"encoder_mode must be one of {ENCODER_MODES}")
        if self.channels != self.d_va:
            raise ConfigError(f"channels ({self.channels}) must equal d_va ({self.d_va})")
        if self.d_va % self.heads:
            raise ConfigError(f"d_va ({self.d_va}) must be divisible by heads ({self.heads})")
        if self.frames % self.stride:
            raise ConfigError(f"frames ({self.frames}) must be divisible by stride ({self.stride})")
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.logit_mode not in ("dot", "cosine") or self.temperature <= 0:
            raise ConfigError("logit_mode must be 'dot' or 'cosine' with a positive temperature")
        if not (self.use_mpce or self.use_sce or self.use_gce):
            raise ConfigError("at least one loss must be enabled")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``."""
        drops = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.lr * self.lr_decay ** drops

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_decay_epochs"] = list(self.lr_decay_epochs)
        return d

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def structure_hash(self) -> str:
        """Hash of the fields that determine parameter names and shapes."""
        keys = ("strategy", "channels", "stride", "d_va", "d_ff", "d_lat", "d_hidden_sem", "heads", "m",
                "per_part_projector", "per_part_projection", "d_sem")
        doc = json.dumps({k: getattr(self, k) for k in keys}, sort_keys=True)
        return hashlib.sha256(doc.encode()).hexdigest()[:16]


class StarModel:
    def __init__(self, cfg: TrainConfig, strategy: PartitionStrategy, num_categories: int, d_sem: int):
        self.cfg = cfg
        self.strategy = strategy
        self.num_categories = num_categories
        rng = np.random.default_rng(cfg.seed)
        self.visual = VisualStream(
            strategy.part_names, cfg.channels, cfg.stride, cfg.d_va, cfg.d_ff, cfg.d_lat, cfg.heads, cfg.m, rng,
            use_attention=cfg.use_attention, use_prompt=cfg.use_visual_prompt,
            per_part_projection=cfg.per_part_projection, num_joints=strategy.num_joints,
        )
        self.semantic = SemanticStream(
            strategy.part_names, num_categories, d_sem, cfg.d_hidden_sem, cfg.d_lat, rng,
            per_part_projector=cfg.per_part_projector, use_prompt=cfg.use_semantic_prompt,
        )

    # -- parameters

    def parameters(self) -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        enc = self.visual.encoder
        for p in enc.parameters() + enc.buffers() + self.visual.head_parameters() + self.semantic.parameters():
            if p.name in out and out[p.name] is not p:
                raise ConfigError(f"duplicate parameter name {p.name!r}")
            out[p.name] = p
        return out

    def trainable(self, include_encoder: bool) -> list[Parameter]:
        params = list(self.visual.encoder.parameters()) if include_encoder else []
        params += self.visual.head_parameters(trainable_only=True)
        params += self.semantic.parameters(trainable_only=True)
        return params

    # -- forward

    def encode(self, x: np.ndarray) -> list[Tensor]:
        """Raw (B, 3, T, V, M) batch -> K part feature maps."""
        parts = decompose_parts_batch(x, self.strategy)
        return self.visual.encode(parts, self.strategy.joints)

    def visual_latents(self, fmaps: Sequence[Tensor]) -> tuple[Tensor, Tensor]:
        latents, glob = self.visual(fmaps)
        return T.stack(latents, axis=1), glob

    def semantic_latents(self, emb: SemanticEmbeddingSet) -> tuple[Tensor, Tensor]:
        return self.semantic(emb)


def decompose_parts_batch(x: np.ndarray, strategy: PartitionStrategy) -> list[np.ndarray]:
    """Batched :func:`decompose_parts`: (B, 3, T, V, M) -> K arrays (B, 3, T, V_e, M)."""
    x = np.asarray(x)
    if x.ndim == 4:
        return [p[None] for p in decompose_parts(x, strategy)]
    return [np.ascontiguousarray(x[:, :, :, list(idx), :]) for idx in strategy.joints]


def frozen_feature_maps(model: StarModel, dataset: SkeletonDataset, chunk: int = 128) -> list[np.ndarray]:
    """Encoder outputs for every sample, without building a graph."""
    maps: list[list[np.ndarray]] = [[] for _ in model.strategy.part_names]
    for start in range(0, len(dataset.ids), chunk):
        fm = model.encode(dataset.x[start:start + chunk])
        for e, f in enumerate(fm):
            maps[e].append(f.data)
    return [np.concatenate(m, axis=0) if m else np.zeros((0,)) for m in maps]
