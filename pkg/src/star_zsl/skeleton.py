"""Skeleton layouts, body-part partitions, preprocessing and dataset manifests.

Sequences are arrays of shape ``(3, T, V, M)``: xyz, frames, joints, persons.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import stnsr
from .errors import DataError, LayoutError, ValidationError

REGIONS = ("head", "hand", "arm", "hip", "leg", "foot")


@dataclass(frozen=True)
class JointLayout:
    name: str
    joint_names: tuple[str, ...]
    regions: tuple[str, ...]
    root: int
    rest_pose: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if len(set(self.joint_names)) != len(self.joint_names):
            raise LayoutError(f"layout {self.name!r}: joint names are not unique")
        if len(self.regions) != len(self.joint_names):
            raise LayoutError(f"layout {self.name!r}: every joint needs exactly one region tag")
        bad = sorted(set(self.regions) - set(REGIONS))
        if bad:
            raise LayoutError(f"layout {self.name!r}: unknown region tags {bad}")
        if not 0 <= self.root < len(self.joint_names):
            raise LayoutError(f"layout {self.name!r}: root index {self.root} out of range")

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)


# NTU RGB+D joint order (0-based). Rest pose in metres, y up, root at origin.
_NTU25 = [
    ("spine_base", "hip", (0.00, 0.00, 0.00)),
    ("spine_mid", "hip", (0.00, 0.25, 0.00)),
    ("neck", "head", (0.00, 0.55, 0.00)),
    ("head", "head", (0.00, 0.70, 0.02)),
    ("left_shoulder", "arm", (0.18, 0.48, 0.00)),
    ("left_elbow", "arm", (0.25, 0.22, 0.00)),
    ("left_wrist", "arm", (0.28, 0.00, 0.02)),
    ("left_hand", "hand", (0.29, -0.07, 0.03)),
    ("right_shoulder", "arm", (-0.18, 0.48, 0.00)),
    ("right_elbow", "arm", (-0.25, 0.22, 0.00)),
    ("right_wrist", "arm", (-0.28, 0.00, 0.02)),
    ("right_hand", "hand", (-0.29, -0.07, 0.03)),
    ("left_hip", "hip", (0.10, -0.02, 0.00)),
    ("left_knee", "leg", (0.11, -0.45, 0.02)),
    ("left_ankle", "foot", (0.11, -0.85, 0.00)),
    ("left_foot", "foot", (0.11, -0.90, 0.10)),
    ("right_hip", "hip", (-0.10, -0.02, 0.00)),
    ("right_knee", "leg", (-0.11, -0.45, 0.02)),
    ("right_ankle", "foot", (-0.11, -0.85, 0.00)),
    ("right_foot", "foot", (-0.11, -0.90, 0.10)),
    ("spine_shoulder", "head", (0.00, 0.48, 0.00)),
    ("left_hand_tip", "hand", (0.30, -0.15, 0.04)),
    ("left_thumb", "hand", (0.26, -0.10, 0.07)),
    ("right_hand_tip", "hand", (-0.30, -0.15, 0.04)),
    ("right_thumb", "hand", (-0.26, -0.10, 0.07)),
]

NTU25 = JointLayout(
    name="ntu25",
    joint_names=tuple(j[0] for j in _NTU25),
    regions=tuple(j[1] for j in _NTU25),
    root=0,
    rest_pose=np.array([j[2] for j in _NTU25], dtype=np.float64),
)

LAYOUTS = {"ntu25": NTU25}


def get_layout(name: str) -> JointLayout:
    try:
        return LAYOUTS[name]
    except KeyError:
        raise LayoutError(f"unknown joint layout {name!r}; known: {sorted(LAYOUTS)}") from None


# Each strategy lists (part name, region tags merged into that part).
STRATEGY_REGIONS: dict[str, tuple[tuple[str, tuple[str, ...]], ...]] = {
    "two": (("upper", ("head", "hand", "arm")), ("lower", ("hip", "leg", "foot"))),
    "four": (
        ("head", ("head",)),
        ("hand_arm", ("hand", "arm")),
        ("hip", ("hip",)),
        ("leg_foot", ("leg", "foot")),
    ),
    "six": tuple((r, (r,)) for r in REGIONS),
}
STRATEGY_BY_K = {2: "two", 4: "four", 6: "six"}


@dataclass(frozen=True)
class PartitionStrategy:
    name: str
    part_names: tuple[str, ...]
    part_regions: tuple[tuple[str, ...], ...]
    joints: tuple[tuple[int, ...], ...]
    num_joints: int

    @property
    def K(self) -> int:
        return len(self.part_names)

    def part_index(self, part_name: str) -> int:
        return self.part_names.index(part_name)


def make_strategy(layout: JointLayout, name: str | int) -> PartitionStrategy:
    """Derive a partition of ``layout`` from its per-joint region tags."""
    if isinstance(name, int):
        if name not in STRATEGY_BY_K:
            raise LayoutError(f"K must be one of {sorted(STRATEGY_BY_K)}, got {name}")
        name = STRATEGY_BY_K[name]
    if name not in STRATEGY_REGIONS:
        raise LayoutError(f"unknown partition strategy {name!r}; choose from {sorted(STRATEGY_REGIONS)}")
    groups = STRATEGY_REGIONS[name]
    joints = []
    for part, regions in groups:
        idx = tuple(v for v, r in enumerate(layout.regions) if r in regions)
        if not idx:
            raise LayoutError(f"strategy {name!r}: part {part!r} has no joints in layout {layout.name!r}")
        joints.append(idx)
    return PartitionStrategy(
        name=name,
        part_names=tuple(p for p, _ in groups),
        part_regions=tuple(r for _, r in groups),
        joints=tuple(joints),
        num_joints=layout.num_joints,
    )


def decompose_parts(x: np.ndarray, strategy: PartitionStrategy) -> list[np.ndarray]:
    """Split ``x`` (3, T, V, M) into K part arrays (3, T, V_e, M), joint order preserved."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise LayoutError(f"expected a (3, T, V, M) sequence, got shape {x.shape}")
    v = x.shape[2]
    for idx in strategy.joints:
        if max(idx) >= v:
            raise LayoutError(f"strategy {strategy.name!r} references joint {max(idx)} but sequence has {v}")
    return [x[:, :, list(idx), :] for idx in strategy.joints]


def reconstruct(parts: Sequence[np.ndarray], strategy: PartitionStrategy) -> np.ndarray:
    if len(parts) != strategy.K:
        raise LayoutError(f"expected {strategy.K} parts, got {len(parts)}")
    c, t, _, m = parts[0].shape
    out = np.empty((c, t, strategy.num_joints, m), dtype=parts[0].dtype)
    for idx, part in zip(strategy.joints, parts):
        out[:, :, list(idx), :] = part
    return out


def _resample(x: np.ndarray, frames: int) -> np.ndarray:
    t_in = x.shape[1]
    if t_in == frames:
        return x
    if t_in > frames:
        idx = np.round(np.linspace(0, t_in - 1, frames)).astype(np.int64)
        return x[:, idx]
    if t_in == 1:
        return np.repeat(x, frames, axis=1)
    pos = np.linspace(0.0, t_in - 1, frames)
    lo = np.minimum(np.floor(pos).astype(np.int64), t_in - 2)
    w = (pos - lo)[None, :, None, None]
    return x[:, lo] * (1.0 - w) + x[:, lo + 1] * w


def preprocess(x: np.ndarray, frames: int, root: int = 0, max_persons: int = 1) -> np.ndarray:
    """Root-centre every frame, resample to ``frames`` and pad/drop persons."""
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[0] != 3:
        raise DataError(f"expected a (3, T, V, M) sequence, got shape {x.shape}")
    if x.shape[1] == 0 or x.shape[2] == 0 or x.shape[3] == 0:
        raise DataError("cannot preprocess an empty sequence")
    if not np.isfinite(x).all():
        raise DataError("sequence contains non-finite coordinates")
    if frames < 1:
        raise DataError(f"target frame count must be >= 1, got {frames}")
    x = x - x[:, :, root:root + 1, :]
    x = _resample(x, frames)
    m = x.shape[3]
    if m > max_persons:
        x = x[..., :max_persons]
    elif m < max_persons:
        pad = np.zeros(x.shape[:3] + (max_persons - m,), dtype=x.dtype)
        x = np.concatenate([x, pad], axis=3)
    return np.ascontiguousarray(x)


# ---------------------------------------------------------------- splits & manifests


@dataclass(frozen=True)
class CategorySplit:
    categories: tuple[str, ...]
    known: tuple[str, ...]
    unknown: tuple[str, ...]

    def __post_init__(self):
        cats = set(self.categories)
        if len(cats) != len(self.categories):
            raise ValidationError("category names are not unique")
        k, u = set(self.known), set(self.unknown)
        if k & u:
            raise ValidationError(f"categories both known and unknown: {sorted(k & u)}")
        if k | u != cats:
            missing = sorted(cats - (k | u))
            extra = sorted((k | u) - cats)
            raise ValidationError(f"split does not cover the category table (missing {missing}, extra {extra})")
        if not self.unknown:
            raise ValidationError("unknown set empty")
        if not self.known:
            raise ValidationError("known set empty")

    @property
    def known_idx(self) -> np.ndarray:
        return np.array([self.categories.index(c) for c in self.categories if c in self.known], dtype=np.int64)

    @property
    def unknown_idx(self) -> np.ndarray:
        return np.array([self.categories.index(c) for c in self.categories if c in self.unknown], dtype=np.int64)

    def is_known(self) -> np.ndarray:
        return np.isin(np.arange(len(self.categories)), self.known_idx)


def load_split(path: str | os.PathLike, categories: Sequence[str]) -> CategorySplit:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "known" not in doc or "unknown" not in doc:
        raise ValidationError(f"{path}: split file needs 'known' and 'unknown' arrays")
    return CategorySplit(tuple(categories), tuple(doc["known"]), tuple(doc["unknown"]))


def write_split(path: str | os.PathLike, split: CategorySplit) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"known": list(split.known), "unknown": list(split.unknown)}, fh, indent=2)
        fh.write("\n")


@dataclass
class SampleEntry:
    id: str
    label: int
    path: str
    role: str  # "train" | "test"


@dataclass
class DatasetManifest:
    layout: str
    categories: list[str]
    split: dict
    samples: list[SampleEntry]
    frames: int = 32
    persons: int = 1
    semantics: dict | None = None
    side_info: str | None = None
    features: dict | None = None

    def to_json(self) -> dict:
        doc = {
            "layout": self.layout,
            "categories": self.categories,
            "split": self.split,
            "frames": self.frames,
            "persons": self.persons,
            "samples": [vars(s) for s in self.samples],
        }
        for key in ("semantics", "side_info", "features"):
            if getattr(self, key) is not None:
                doc[key] = getattr(self, key)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "DatasetManifest":
        allowed = {"layout", "categories", "split", "samples", "frames", "persons", "semantics", "side_info", "features"}
        extra = set(doc) - allowed
        if extra:
            raise ValidationError(f"manifest has unknown fields {sorted(extra)}")
        for key in ("layout", "categories", "split", "samples"):
            if key not in doc:
                raise ValidationError(f"manifest is missing field {key!r}")
        samples = [SampleEntry(**s) for s in doc["samples"]]
        return cls(
            layout=doc["layout"],
            categories=list(doc["categories"]),
            split=dict(doc["split"]),
            samples=samples,
            frames=int(doc.get("frames", 32)),
            persons=int(doc.get("persons", 1)),
            semantics=doc.get("semantics"),
            side_info=doc.get("side_info"),
            features=doc.get("features"),
        )

    def category_split(self) -> CategorySplit:
        return CategorySplit(tuple(self.categories), tuple(self.split.get("known", ())), tuple(self.split.get("unknown", ())))


def validate_manifest(manifest: DatasetManifest, root: str | os.PathLike, split: CategorySplit | None = None,
                      check_files: bool = True) -> CategorySplit:
    """Check labels, roles and file references; return the effective split."""
    root = Path(root)
    get_layout(manifest.layout)
    split = split or manifest.category_split()
    if tuple(manifest.categories) != split.categories:
        raise ValidationError("split category table differs from the manifest's")
    is_known = split.is_known()
    ids = set()
    for s in manifest.samples:
        if s.id in ids:
            raise ValidationError(f"duplicate sample id {s.id!r}")
        ids.add(s.id)
        if not 0 <= s.label < len(manifest.categories):
            raise ValidationError(f"sample {s.id!r}: label {s.label} not in the category table")
        if s.role not in ("train", "test"):
            raise ValidationError(f"sample {s.id!r}: role must be 'train' or 'test', got {s.role!r}")
        if s.role == "train" and not is_known[s.label]:
            raise ValidationError(
                f"sample {s.id!r} of unknown category {manifest.categories[s.label]!r} carries the training role"
            )
        if check_files:
            stnsr.load(root / s.path)
    if check_files and manifest.semantics:
        for rel in [manifest.semantics.get("names")] + list(manifest.semantics.get("parts", {}).values()):
            if rel is not None:
                stnsr.load(root / rel)
    return split


@dataclass
class SkeletonDataset:
    """A manifest plus every sample tensor loaded and preprocessed in memory."""

    root: Path
    manifest: DatasetManifest
    split: CategorySplit
    layout: JointLayout
    ids: list[str]
    x: np.ndarray  # (N, 3, T, V, M)
    labels: np.ndarray
    roles: np.ndarray

    @property
    def categories(self) -> list[str]:
        return self.manifest.categories

    def indices(self, role: str, known: bool | None = None) -> np.ndarray:
        sel = self.roles == role
        if known is not None:
            sel &= self.split.is_known()[self.labels] == known
        return np.flatnonzero(sel)


def load_manifest(root: str | os.PathLike) -> DatasetManifest:
    path = Path(root) / "manifest.json"
    try:
        with open(path, encoding="utf-8") as fh:
            return DatasetManifest.from_json(json.load(fh))
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}") from None


def load_dataset(root: str | os.PathLike, split_path: str | os.PathLike | None = None,
                 frames: int | None = None) -> SkeletonDataset:
    root = Path(root)
    manifest = load_manifest(root)
    split = load_split(split_path, manifest.categories) if split_path else None
    split = validate_manifest(manifest, root, split, check_files=False)
    layout = get_layout(manifest.layout)
    frames = frames or manifest.frames
    xs = []
    for s in manifest.samples:
        raw = stnsr.load(root / s.path)
        xs.append(preprocess(raw, frames, root=layout.root, max_persons=manifest.persons))
    x = np.stack(xs) if xs else np.zeros((0, 3, frames, layout.num_joints, manifest.persons))
    return SkeletonDataset(
        root=root,
        manifest=manifest,
        split=split,
        layout=layout,
        ids=[s.id for s in manifest.samples],
        x=x,
        labels=np.array([s.label for s in manifest.samples], dtype=np.int64),
        roles=np.array([s.role for s in manifest.samples]),
    )


def write_manifest(root: str | os.PathLike, manifest: DatasetManifest) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest.to_json(), fh, indent=2)
        fh.write("\n")
