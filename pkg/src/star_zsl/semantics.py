"""Category-name and side-information embeddings and the semantic stream.

The semantic stream adds a learnable per-part, per-category prompt to each
side-information embedding and maps both the augmented side information and
the category names into the shared latent space with two small MLPs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import stnsr
from . import tensor as T
from .errors import DataError, DimensionError, ValidationError
from .layers import MLP2, normal_init
from .rng import SplitMix64, fnv1a_64
from .skeleton import PartitionStrategy, SkeletonDataset
from .tensor import Parameter, Tensor

PROVIDERS = ("synthetic", "file", "pseudo")


@dataclass
class SideInfoRecord:
    name: str
    parts: dict[str, str]


def parse_side_info(doc, part_names: Sequence[str] | None = None, source: str = "<side info>") -> list[SideInfoRecord]:
    if not isinstance(doc, list):
        raise ValidationError(f"{source}: side information must be a JSON array")
    records, seen = [], set()
    for i, entry in enumerate(doc):
        if not isinstance(entry, dict) or not isinstance(entry.get("name"), str) or not isinstance(entry.get("parts"), dict):
            raise ValidationError(f"{source}: entry {i} needs a string 'name' and an object 'parts'")
        name = entry["name"]
        if name in seen:
            raise ValidationError(f"{source}: duplicate category name {name!r}")
        seen.add(name)
        parts = entry["parts"]
        for part, text in parts.items():
            if not isinstance(text, str) or not text.strip():
                raise ValidationError(f"{source}: category {name!r} has an empty description for part {part!r}")
        if part_names is not None:
            for part in part_names:
                if part not in parts:
                    raise ValidationError(f"{source}: category {name!r} is missing a description for part {part!r}")
            extra = sorted(set(parts) - set(part_names))
            if extra:
                raise ValidationError(f"{source}: category {name!r} has parts {extra} outside the active strategy")
        records.append(SideInfoRecord(name=name, parts=dict(parts)))
    return records


def load_side_info(path: str | os.PathLike, part_names: Sequence[str] | None = None) -> list[SideInfoRecord]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"side information file not found: {path}") from None
    return parse_side_info(doc, part_names, str(path))


# ---------------------------------------------------------------- providers


def pseudo_embed(texts: Sequence[str], dim: int) -> np.ndarray:
    """Unit vectors seeded by the FNV-1a hash of each UTF-8 string."""
    out = np.empty((len(texts), dim), dtype=np.float64)
    for i, text in enumerate(texts):
        v = SplitMix64(fnv1a_64(text)).normal(dim)
        out[i] = v / np.linalg.norm(v)
    return out


def file_embed(path: str | os.PathLike, expected_rows: int) -> np.ndarray:
    mat = stnsr.load(path)
    if mat.ndim != 2 or mat.shape[0] != expected_rows:
        raise DataError(f"{path}: embedding matrix of shape {mat.shape} does not have {expected_rows} rows")
    if not np.isfinite(mat).all():
        raise DataError(f"{path}: non-finite embedding values")
    return mat


def embed(provider: str, texts: Sequence[str], dim: int | None = None, path=None) -> np.ndarray:
    if provider == "pseudo":
        if dim is None:
            raise DataError("pseudo embedder needs a dimension")
        return pseudo_embed(texts, dim)
    if provider in ("file", "synthetic"):
        if path is None:
            raise DataError("file-backed embeddings need a path")
        return file_embed(path, len(texts))
    raise DataError(f"unknown embedding provider {provider!r}; choose from {PROVIDERS}")


@dataclass
class SemanticEmbeddingSet:
    f_cn: np.ndarray  # (A, d_sem)
    f_si: np.ndarray  # (K, A, d_sem)
    provenance: str

    def __post_init__(self):
        if self.f_si.ndim != 3 or self.f_cn.ndim != 2 or self.f_si.shape[1:] != self.f_cn.shape:
            raise DimensionError(f"inconsistent semantic shapes f_cn={self.f_cn.shape} f_si={self.f_si.shape}")
        if not (np.isfinite(self.f_cn).all() and np.isfinite(self.f_si).all()):
            raise DataError("semantic embeddings contain non-finite values")
        if self.provenance in ("pseudo", "synthetic"):
            for arr in (self.f_cn, self.f_si):
                norms = np.linalg.norm(arr, axis=-1)
                if np.abs(norms - 1).max() > 1e-6:
                    raise DataError(f"{self.provenance} embeddings must be unit-norm")

    @property
    def d_sem(self) -> int:
        return self.f_cn.shape[1]


def build_embeddings(dataset: SkeletonDataset, strategy: PartitionStrategy, provider: str = "synthetic",
                     side_info_path: str | os.PathLike | None = None, d_sem: int = 64) -> SemanticEmbeddingSet:
    cats = dataset.categories
    if provider in ("synthetic", "file"):
        sem = dataset.manifest.semantics or {}
        if "names" not in sem:
            raise DataError("manifest lists no semantic embedding files")
        f_cn = file_embed(dataset.root / sem["names"], len(cats))
        parts = sem.get("parts", {})
        f_si = []
        for part in strategy.part_names:
            if part not in parts:
                raise DataError(f"manifest has no side-information embedding for part {part!r}")
            f_si.append(file_embed(dataset.root / parts[part], len(cats)))
        f_si = np.stack(f_si)
        if provider == "synthetic":
            f_cn, f_si = f_cn.astype(np.float64), f_si.astype(np.float64)
        return SemanticEmbeddingSet(f_cn, f_si, provider)
    if provider == "pseudo":
        if side_info_path is None:
            side = dataset.manifest.side_info
            if isinstance(side, dict):
                side = side.get(strategy.name)
            if side is None:
                raise DataError("pseudo provider needs a side-information file")
            side_info_path = dataset.root / side
        records = {r.name: r for r in load_side_info(side_info_path, strategy.part_names)}
        missing = [c for c in cats if c not in records]
        if missing:
            raise ValidationError(f"side information lacks categories {missing}")
        f_cn = pseudo_embed(cats, d_sem)
        f_si = np.stack([pseudo_embed([records[c].parts[p] for c in cats], d_sem) for p in strategy.part_names])
        return SemanticEmbeddingSet(f_cn, f_si, "pseudo")
    raise DataError(f"unknown embedding provider {provider!r}; choose from {PROVIDERS}")


# ---------------------------------------------------------------- stream


def augment_side_info(f_si, p_sp) -> Tensor:
    """Add the semantic-part prompt to the side-information embeddings."""
    f_si, p_sp = T.as_tensor(f_si), T.as_tensor(p_sp)
    if f_si.shape != p_sp.shape:
        raise DimensionError(f"side info {f_si.shape} and prompt {p_sp.shape} differ in shape")
    return T.add(f_si, p_sp)


def project_semantic(augmented: Tensor, names: Tensor, si_projectors: Sequence[MLP2], cn_projector: MLP2):
    """Map (K, A, d_sem) side info and (A, d_sem) names to the latent space.

    One projector in ``si_projectors`` is shared by every part; K of them
    means one per part.
    """
    k = augmented.shape[0]
    if len(si_projectors) == 1:
        f_si = si_projectors[0](augmented)
    elif len(si_projectors) == k:
        f_si = T.stack([proj(T.gather_rows(augmented, e)) for e, proj in enumerate(si_projectors)])
    else:
        raise DimensionError(f"{len(si_projectors)} side-info projectors for {k} parts")
    return f_si, cn_projector(names)


class SemanticStream:
    def __init__(self, part_names: Sequence[str], num_categories: int, d_sem: int, d_hidden: int, d_lat: int,
                 rng: np.random.Generator, per_part_projector: bool = False, use_prompt: bool = True,
                 prompt_std: float = 0.02):
        self.part_names = tuple(part_names)
        self.use_prompt = use_prompt
        dtype = T.get_default_dtype()
        k = len(self.part_names)
        self.prompt = Parameter(normal_init(rng, prompt_std, (k, num_categories, d_sem)), "semantic.prompt", dtype=dtype)
        if not use_prompt:
            self.prompt.data[...] = 0
        if per_part_projector:
            self.si_projectors = [MLP2(f"semantic.si_proj.{p}", d_sem, d_hidden, d_lat, rng) for p in self.part_names]
        else:
            self.si_projectors = [MLP2("semantic.si_proj", d_sem, d_hidden, d_lat, rng)]
        self.cn_projector = MLP2("semantic.cn_proj", d_sem, d_hidden, d_lat, rng)

    def __call__(self, emb: SemanticEmbeddingSet) -> tuple[Tensor, Tensor]:
        dtype = T.get_default_dtype()
        f_si = Tensor(emb.f_si, dtype=dtype)
        augmented = augment_side_info(f_si, self.prompt) if self.use_prompt else f_si
        return project_semantic(augmented, Tensor(emb.f_cn, dtype=dtype), self.si_projectors, self.cn_projector)

    def parameters(self, trainable_only: bool = False) -> list[Parameter]:
        params = [] if (trainable_only and not self.use_prompt) else [self.prompt]
        for proj in self.si_projectors:
            params += proj.parameters()
        return params + self.cn_projector.parameters()


def load_fixture(name: str) -> Path:
    return Path(__file__).with_name("fixtures") / name
