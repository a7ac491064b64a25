"""Skeleton stream: part encoders, prompt-queried cross-attention, latent projection."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import numpy as np

from . import stnsr
from . import tensor as T
from .errors import ConfigError, ContractError, DataError, DimensionError
from .layers import MLP2, Linear, fan_in_normal, normal_init
from .tensor import Parameter, Tensor

INPUT_CHANNELS = 6  # xyz + per-frame velocity


def motion_features(part: np.ndarray) -> np.ndarray:
    """(B, 3, T, V, M) coordinates -> (B, T, V, M, 6) positions and frame deltas."""
    part = np.asarray(part)
    if part.ndim != 5 or part.shape[1] != 3:
        raise DimensionError(f"expected (B, 3, T, V, M) part tensors, got {part.shape}")
    delta = np.zeros_like(part)
    delta[:, :, 1:] = part[:, :, 1:] - part[:, :, :-1]
    return np.ascontiguousarray(np.concatenate([part, delta], axis=1).transpose(0, 2, 3, 4, 1))


class ToyEncoder:
    """Per-joint affine lift of (x, y, z, dx, dy, dz) to C channels, relu,
    then non-overlapping temporal mean pooling. Persons are summed.

    Inputs are first standardised per joint and channel with statistics of
    the training set (see :meth:`calibrate`); before calibration the
    normaliser is the identity.
    """

    def __init__(self, channels: int, stride: int, rng: np.random.Generator, num_joints: int = 25):
        if channels < 1 or stride < 1:
            raise ConfigError("encoder channels and stride must be positive")
        self.channels, self.stride = channels, stride
        self.lift = Linear("visual.encoder.lift", INPUT_CHANNELS, channels, rng, gain=2.0)
        dtype = T.get_default_dtype()
        self.in_shift = Parameter(np.zeros((num_joints, INPUT_CHANNELS)), "visual.encoder.in_shift", dtype=dtype)
        self.in_scale = Parameter(np.ones((num_joints, INPUT_CHANNELS)), "visual.encoder.in_scale", dtype=dtype)

    def calibrate(self, x: np.ndarray) -> None:
        """Fit the input normaliser to full skeletons ``x`` of shape (N, 3, T, V, M)."""
        feats = motion_features(x)
        if feats.shape[2] != self.in_shift.shape[0]:
            raise DimensionError(f"normaliser covers {self.in_shift.shape[0]} joints, data has {feats.shape[2]}")
        mean = feats.mean(axis=(0, 1, 3))
        std = feats.std(axis=(0, 1, 3))
        self.in_shift.data = mean.astype(self.in_shift.dtype)
        # joints that never move (the root after centring) keep unit scale
        self.in_scale.data = np.where(std > 1e-6, 1.0 / np.maximum(std, 1e-6), 1.0).astype(self.in_scale.dtype)

    def __call__(self, part: np.ndarray, joints: Sequence[int] | None = None) -> Tensor:
        """Return the feature map (B, T/stride, V_e, C).

        ``joints`` are the layout indices of the part's joints, used to pick
        normaliser rows; by default the part is the whole skeleton.
        """
        feats = motion_features(part)
        b, t, v, m, _ = feats.shape
        if t % self.stride:
            raise ConfigError(f"frame count {t} is not divisible by temporal stride {self.stride}")
        rows = np.arange(v) if joints is None else np.asarray(joints)
        if len(rows) != v or (len(rows) and rows.max() >= self.in_shift.shape[0]):
            raise DimensionError(f"joint indices {list(rows)} do not fit a {v}-joint part")
        feats = (feats - self.in_shift.data[rows][:, None]) * self.in_scale.data[rows][:, None]
        h = T.relu(self.lift(Tensor(feats, dtype=T.get_default_dtype())))
        h = T.reshape(h, (b, t // self.stride, self.stride, v, m, self.channels))
        h = T.mean(h, axis=2)
        return T.sum(h, axis=3)

    def parameters(self) -> list[Parameter]:
        return self.lift.parameters()

    def buffers(self) -> list[Parameter]:
        """Fitted, never-trained state that still belongs in checkpoints."""
        return [self.in_shift, self.in_scale]


def feature_path(sample_id: str, part: int) -> str:
    return f"features/{sample_id}_part{part}.stnsr"


def save_part_features(root: str | os.PathLike, sample_id: str, maps: Sequence[np.ndarray]) -> list[str]:
    rels = []
    for e, fmap in enumerate(maps):
        rel = feature_path(sample_id, e)
        stnsr.save(Path(root) / rel, np.asarray(fmap))
        rels.append(rel)
    return rels


def load_part_features(root: str | os.PathLike, files: Sequence[str]) -> list[np.ndarray]:
    out = []
    for rel in files:
        path = Path(root) / rel
        if not path.exists():
            raise DataError(f"missing feature file {path}")
        out.append(stnsr.load(path))
    return out


def tokens(fmap: Tensor) -> Tensor:
    """Flatten a (B, T', V_e, C) map to (B, T'*V_e, C) attention tokens."""
    b, t, v, c = fmap.shape
    return T.reshape(fmap, (b, t * v, c))


def cross_attend(tokens_: Tensor, prompt: Tensor, w_q, w_k, w_v, w_o, heads: int) -> Tensor:
    """Multi-head cross-attention with the prompt rows as queries.

    ``tokens_`` is (N, C) or (B, N, C); the result is (m, d_va) or (B, m, d_va).
    """
    tokens_, prompt = T.as_tensor(tokens_), T.as_tensor(prompt)
    unbatched = tokens_.ndim == 2
    if unbatched:
        tokens_ = T.reshape(tokens_, (1,) + tokens_.shape)
    b, n_tok, c = tokens_.shape
    m, d_va = prompt.shape
    if c != w_k.shape[0] or c != w_v.shape[0]:
        raise DimensionError(f"token width {c} does not match key/value weights {w_k.shape}")
    if d_va != w_q.shape[0]:
        raise DimensionError(f"prompt width {d_va} does not match query weights {w_q.shape}")
    width = w_q.shape[1]
    if width % heads:
        raise DimensionError(f"attention width {width} is not divisible by {heads} heads")
    d = width // heads
    q = T.permute(T.reshape(T.matmul(prompt, w_q), (m, heads, d)), (1, 0, 2))  # (h, m, d)
    k = T.permute(T.reshape(T.matmul(tokens_, w_k), (b, n_tok, heads, d)), (0, 2, 3, 1))  # (B, h, d, N)
    v = T.permute(T.reshape(T.matmul(tokens_, w_v), (b, n_tok, heads, d)), (0, 2, 1, 3))  # (B, h, N, d)
    att = T.softmax(T.scale(T.matmul(q, k), 1.0 / np.sqrt(d)))  # (B, h, m, N)
    out = T.reshape(T.permute(T.matmul(att, v), (0, 2, 1, 3)), (b, m, width))
    out = T.matmul(out, w_o)
    if unbatched:
        out = T.reshape(out, out.shape[1:])
    return out


def part_latent(attended: Tensor, prompt: Tensor | None, ffn: MLP2, projection) -> Tensor:
    """``W(mean_rows(FFN(attended) + prompt))`` -> (B, d_lat) or (d_lat,)."""
    h = ffn(attended)
    pooled = T.mean(h, axis=-2)
    if prompt is not None:
        if prompt.shape[-1] != h.shape[-1]:
            raise DimensionError(f"prompt width {prompt.shape} does not match FFN output {h.shape}")
        pooled = T.add(pooled, T.mean(prompt, axis=0))
    w = projection.weight if isinstance(projection, Linear) else projection
    if pooled.shape[-1] != w.shape[0]:
        raise DimensionError(f"pooled width {pooled.shape[-1]} does not match projection {w.shape}")
    return _project(pooled, w)


def _project(x: Tensor, w) -> Tensor:
    if x.ndim == 1:
        return T.reshape(T.matmul(T.reshape(x, (1, x.shape[0])), w), (w.shape[1],))
    return T.matmul(x, w)


def global_representation(part_latents: Sequence[Tensor]) -> Tensor:
    if not part_latents:
        raise ContractError("global representation needs at least one part")
    if any(p is None for p in part_latents):
        raise ContractError("a part latent is missing")
    return T.add_n(part_latents)


class AttentionBranch:
    """One part's cross-attention block, FFN and visual-attribute prompt."""

    def __init__(self, part: str, d_in: int, d_va: int, d_ff: int, heads: int, m: int,
                 rng: np.random.Generator, prompt_std: float = 0.02):
        if d_in != d_va:
            raise ConfigError(f"encoder width {d_in} must equal attention width {d_va}")
        if d_va % heads:
            raise ConfigError(f"attention width {d_va} is not divisible by {heads} heads")
        if m < 1:
            raise ConfigError("need at least one visual attribute (m >= 1)")
        dtype = T.get_default_dtype()
        pre = f"visual.{part}"
        self.heads = heads
        self.prompt = Parameter(normal_init(rng, prompt_std, (m, d_va)), f"{pre}.prompt", dtype=dtype)
        self.w_q = Parameter(fan_in_normal(rng, d_va, (d_va, d_va)), f"{pre}.w_q", dtype=dtype)
        self.w_k = Parameter(fan_in_normal(rng, d_in, (d_in, d_va)), f"{pre}.w_k", dtype=dtype)
        self.w_v = Parameter(fan_in_normal(rng, d_in, (d_in, d_va)), f"{pre}.w_v", dtype=dtype)
        self.w_o = Parameter(fan_in_normal(rng, d_va, (d_va, d_va)), f"{pre}.w_o", dtype=dtype)
        self.ffn = MLP2(f"{pre}.ffn", d_va, d_ff, d_va, rng)

    def attention_parameters(self) -> list[Parameter]:
        return [self.w_q, self.w_k, self.w_v, self.w_o]


class VisualStream:
    def __init__(self, part_names: Sequence[str], channels: int, stride: int, d_va: int, d_ff: int, d_lat: int,
                 heads: int, m: int, rng: np.random.Generator, use_attention: bool = True,
                 use_prompt: bool = True, per_part_projection: bool = False, num_joints: int = 25):
        self.part_names = tuple(part_names)
        self.use_attention = use_attention
        self.use_prompt = use_prompt
        self.encoder = ToyEncoder(channels, stride, rng, num_joints)
        self.branches = [AttentionBranch(p, channels, d_va, d_ff, heads, m, rng) for p in self.part_names]
        if per_part_projection:
            self.projections = [Parameter(fan_in_normal(rng, d_va, (d_va, d_lat)), f"visual.{p}.proj",
                                          dtype=T.get_default_dtype()) for p in self.part_names]
        else:
            shared = Parameter(fan_in_normal(rng, d_va, (d_va, d_lat)), "visual.proj", dtype=T.get_default_dtype())
            self.projections = [shared] * len(self.part_names)

    def encode(self, parts: Sequence[np.ndarray], joints: Sequence[Sequence[int]] | None = None) -> list[Tensor]:
        joints = [None] * len(parts) if joints is None else joints
        return [self.encoder(p, j) for p, j in zip(parts, joints)]

    def branch(self, e: int, fmap: Tensor) -> Tensor:
        br = self.branches[e]
        tok = tokens(fmap)
        if self.use_attention:
            attended = cross_attend(tok, br.prompt, br.w_q, br.w_k, br.w_v, br.w_o, br.heads)
        else:
            attended = T.mean(tok, axis=-2, keepdims=True)
        return part_latent(attended, br.prompt if self.use_prompt else None, br.ffn, self.projections[e])

    def __call__(self, fmaps: Sequence[Tensor]) -> tuple[list[Tensor], Tensor]:
        if len(fmaps) != len(self.branches):
            raise ContractError(f"expected {len(self.branches)} part feature maps, got {len(fmaps)}")
        latents = [self.branch(e, f) for e, f in enumerate(fmaps)]
        return latents, global_representation(latents)

    def head_parameters(self, trainable_only: bool = False) -> list[Parameter]:
        """Everything except the encoder."""
        params: list[Parameter] = []
        for br in self.branches:
            # without the prompt residual the queries stay frozen at their initial values
            if self.use_prompt or not trainable_only:
                params.append(br.prompt)
            if self.use_attention or not trainable_only:
                params += br.attention_parameters()
            params += br.ffn.parameters()
        seen = set()
        for w in self.projections:
            if id(w) not in seen:
                seen.add(id(w))
                params.append(w)
        return params
