"""Training objectives: multi-part, semantic and global cross-entropy.

All logits are raw dot products in the shared latent space unless the
optional cosine mode is selected.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, NonFiniteError
from .tensor import Tensor


@dataclass
class LossWeights:
    alpha: float = 0.1
    beta: float = 0.1

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ContractError("loss weights must be nonnegative")


def similarity(a: Tensor, b: Tensor, mode: str = "dot", temperature: float = 1.0) -> Tensor:
    """Logits ``a @ b^T`` over the last axis; ``cosine`` normalises and divides by the temperature."""
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"latent widths differ: {a.shape} vs {b.shape}")
    if mode == "cosine":
        a, b = T.l2_normalize(a), T.l2_normalize(b)
        return T.scale(T.matmul(a, T.transpose(b)), 1.0 / temperature)
    if mode != "dot":
        raise ContractError(f"unknown logit mode {mode!r}")
    return T.matmul(a, T.transpose(b))


def local_labels(labels, known_idx) -> np.ndarray:
    """Map category indices to positions within the known list."""
    known_idx = np.asarray(known_idx, dtype=np.int64)
    pos = {int(c): i for i, c in enumerate(known_idx)}
    out = []
    for lab in np.asarray(labels, dtype=np.int64).reshape(-1):
        if int(lab) not in pos:
            raise ContractError(f"label {int(lab)} is not a known category")
        out.append(pos[int(lab)])
    return np.array(out, dtype=np.int64)


def mpce(part_latents: Tensor, f_si: Tensor, labels, known_idx, mode: str = "dot", temperature: float = 1.0) -> Tensor:
    """Multi-part cross-entropy.

    ``part_latents`` is (B, K, d), ``f_si`` is (K, A, d); for every sample
    and part the candidates are the known categories' side information of
    that part. Averaged over B*K.
    """
    b, k, d = part_latents.shape
    if f_si.ndim != 3 or f_si.shape[0] != k or f_si.shape[2] != d:
        raise DimensionError(f"part latents {part_latents.shape} and side info {f_si.shape} disagree")
    if len(known_idx) < 2:
        raise ContractError("need at least two known categories")
    tgt = local_labels(labels, known_idx)
    if tgt.shape[0] != b:
        raise DimensionError(f"{tgt.shape[0]} labels for batch of {b}")
    si_known = T.permute(T.gather_rows(T.permute(f_si, (1, 0, 2)), known_idx), (1, 0, 2))  # (K, S, d)
    logits = similarity(T.permute(part_latents, (1, 0, 2)), si_known, mode, temperature)  # (K, B, S)
    logits = T.reshape(logits, (k * b, len(known_idx)))
    return T.cross_entropy(logits, np.tile(tgt, k))


def sce(f_si: Tensor, f_cn: Tensor, mode: str = "dot", temperature: float = 1.0) -> Tensor:
    """Semantic cross-entropy: each part's side information of category a
    against all category names, target a. Averaged over K*|A|."""
    if f_si.ndim != 3 or f_cn.ndim != 2 or f_si.shape[1:] != f_cn.shape:
        raise DimensionError(f"side info {f_si.shape} and names {f_cn.shape} disagree")
    k, a, _ = f_si.shape
    logits = T.reshape(similarity(f_si, f_cn, mode, temperature), (k * a, a))
    return T.cross_entropy(logits, np.tile(np.arange(a), k))


def gce(global_latent: Tensor, labels, f_cn: Tensor, known_idx, mode: str = "dot", temperature: float = 1.0) -> Tensor:
    """Global cross-entropy of F_v against the known categories' names."""
    if global_latent.ndim != 2 or f_cn.ndim != 2 or global_latent.shape[1] != f_cn.shape[1]:
        raise DimensionError(f"global latent {global_latent.shape} and names {f_cn.shape} disagree")
    tgt = local_labels(labels, known_idx)
    if tgt.shape[0] != global_latent.shape[0]:
        raise DimensionError(f"{tgt.shape[0]} labels for batch of {global_latent.shape[0]}")
    logits = similarity(global_latent, T.gather_rows(f_cn, known_idx), mode, temperature)
    return T.cross_entropy(logits, tgt)


def total(l_mpce, l_sce, l_gce, weights: LossWeights = LossWeights()) -> Tensor:
    terms = [(1.0, l_mpce), (weights.alpha, l_sce), (weights.beta, l_gce)]
    out = None
    for w, term in terms:
        if term is None or w == 0:
            continue
        term = T.as_tensor(term)
        if not np.isfinite(term.data).all():
            raise NonFiniteError("loss term is not finite")
        piece = term if w == 1.0 else T.scale(term, w)
        out = piece if out is None else T.add(out, piece)
    return out if out is not None else T.Tensor(0.0)

