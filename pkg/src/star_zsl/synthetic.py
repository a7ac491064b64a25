"""Synthetic skeleton actions whose semantics are a fixed function of motion.

Every category gets one oscillation per body region: frequency (cycles per
sequence), amplitude, a unit direction and a phase. Joints of that region
move as ``rest + amplitude * sin(2*pi*freq*t/T + phase) * direction``; the
root joint stays put as the anchor. Side-information embeddings are
``normalize(G_r @ theta_r)`` with one fixed Gaussian matrix per region, and
a coarse part (say ``hand_arm``) uses the sum over its regions. The name
embedding sums over all regions, i.e. ``G = [G_head, ..., G_foot]``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import stnsr
from .errors import ConfigError
from .rng import SplitMix64
from .skeleton import (
    REGIONS,
    STRATEGY_REGIONS,
    CategorySplit,
    DatasetManifest,
    SampleEntry,
    get_layout,
    write_manifest,
    write_split,
)

THETA_DIM = 6  # freq, amplitude, direction xyz, phase


@dataclass
class SynthConfig:
    num_categories: int = 12
    num_known: int = 9
    train_per_category: int = 40
    test_per_category: int = 20
    layout: str = "ntu25"
    frames: int = 32
    persons: int = 1
    noise: float = 0.05
    d_sem: int = 64
    freq_range: tuple[float, float] = (0.5, 3.0)
    amp_range: tuple[float, float] = (0.05, 0.25)

    def validate(self) -> None:
        if self.num_categories < 2:
            raise ConfigError("need at least 2 categories")
        if not 1 <= self.num_known:
            raise ConfigError("known set empty")
        if self.num_known >= self.num_categories:
            raise ConfigError("unknown set empty")
        if self.train_per_category < 1 or self.test_per_category < 1:
            raise ConfigError("samples per category must be positive")
        if self.frames < 2 or self.persons < 1:
            raise ConfigError("frames must be >= 2 and persons >= 1")
        if self.noise < 0:
            raise ConfigError("noise sigma must be nonnegative")
        if self.d_sem < 1:
            raise ConfigError("embedding dimension must be positive")
        lo, hi = self.freq_range
        if not 0 < lo <= hi:
            raise ConfigError(f"bad frequency range {self.freq_range}")
        lo, hi = self.amp_range
        if not 0 < lo <= hi:
            raise ConfigError(f"bad amplitude range {self.amp_range}")
        get_layout(self.layout)


@dataclass
class MotionParams:
    freq: np.ndarray  # (A, R)
    amp: np.ndarray  # (A, R)
    direction: np.ndarray  # (A, R, 3)
    phase: np.ndarray  # (A, R)

    def theta(self, cfg: SynthConfig) -> np.ndarray:
        """Per-region parameter vectors rescaled to roughly [-1, 1]: (A, R, 6)."""

        def unit(v, lo, hi):
            mid, half = (lo + hi) / 2, max((hi - lo) / 2, 1e-12)
            return (v - mid) / half

        return np.concatenate(
            [
                unit(self.freq, *cfg.freq_range)[..., None],
                unit(self.amp, *cfg.amp_range)[..., None],
                self.direction,
                ((self.phase - np.pi) / np.pi)[..., None],
            ],
            axis=-1,
        )


def category_names(n: int) -> list[str]:
    return [f"action_{i:02d}" for i in range(n)]


def draw_motion(cfg: SynthConfig, rng: SplitMix64) -> MotionParams:
    a, r = cfg.num_categories, len(REGIONS)
    u = rng.uniform(a * r * 3).reshape(a, r, 3)
    freq = cfg.freq_range[0] + (cfg.freq_range[1] - cfg.freq_range[0]) * u[..., 0]
    amp = cfg.amp_range[0] + (cfg.amp_range[1] - cfg.amp_range[0]) * u[..., 1]
    phase = 2.0 * np.pi * u[..., 2]
    d = rng.normal(a * r * 3).reshape(a, r, 3)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    # direction and its negation (with phase + pi) give the same motion; fix a hemisphere
    d *= np.where(d.sum(axis=-1, keepdims=True) < 0, -1.0, 1.0)
    return MotionParams(freq=freq, amp=amp, direction=d, phase=phase)


def render(cfg: SynthConfig, motion: MotionParams, label: int, noise: np.ndarray | None) -> np.ndarray:
    layout = get_layout(cfg.layout)
    t = np.arange(cfg.frames, dtype=np.float64)
    x = np.empty((3, cfg.frames, layout.num_joints, cfg.persons), dtype=np.float64)
    x[...] = layout.rest_pose.T[:, None, :, None]
    for r, region in enumerate(REGIONS):
        wave = motion.amp[label, r] * np.sin(2 * np.pi * motion.freq[label, r] * t / cfg.frames + motion.phase[label, r])
        offset = motion.direction[label, r][:, None] * wave[None, :]  # (3, T)
        for v, tag in enumerate(layout.regions):
            if tag == region and v != layout.root:
                x[:, :, v, :] += offset[:, :, None]
    if noise is not None:
        x += noise.reshape(x.shape)
    return x


def semantic_embeddings(theta: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Name embeddings (A, d) and part embeddings for every strategy's parts."""
    per_region = np.einsum("rdk,ark->ard", g, theta)  # (A, R, d)

    def normalize(v):
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    parts: dict[str, np.ndarray] = {}
    for groups in STRATEGY_REGIONS.values():
        for part, regions in groups:
            idx = [REGIONS.index(r) for r in regions]
            parts[part] = normalize(per_region[:, idx].sum(axis=1))
    names = normalize(per_region.sum(axis=1))
    return names, parts


_SPEED = ((1.0, "slowly"), (2.0, "steadily"), (np.inf, "quickly"))
_SIZE = ((0.11, "a slight"), (0.18, "a moderate"), (np.inf, "a large"))
_AXES = ("side to side", "up and down", "forward and back")


def describe_region(region: str, motion: MotionParams, a: int) -> str:
    r = REGIONS.index(region)
    speed = next(w for lim, w in _SPEED if motion.freq[a, r] < lim)
    size = next(w for lim, w in _SIZE if motion.amp[a, r] < lim)
    axis = _AXES[int(np.argmax(np.abs(motion.direction[a, r])))]
    return f"{region} moves {speed} with {size} swing {axis}"


def side_info_records(motion: MotionParams, names: list[str], strategy: str) -> list[dict]:
    records = []
    for a, name in enumerate(names):
        parts = {part: "; ".join(describe_region(r, motion, a) for r in regions)
                 for part, regions in STRATEGY_REGIONS[strategy]}
        records.append({"name": name, "parts": parts})
    return records


def generate_synthetic(cfg: SynthConfig, seed: int, out: str | os.PathLike) -> DatasetManifest:
    """Write a complete dataset directory under ``out`` and return its manifest."""
    cfg.validate()
    out = Path(out)
    rng = SplitMix64(seed)
    names = category_names(cfg.num_categories)
    split = CategorySplit(tuple(names), tuple(names[: cfg.num_known]), tuple(names[cfg.num_known:]))
    motion = draw_motion(cfg, rng)
    g = rng.normal(len(REGIONS) * cfg.d_sem * THETA_DIM).reshape(len(REGIONS), cfg.d_sem, THETA_DIM)
    layout = get_layout(cfg.layout)
    n_coords = 3 * cfg.frames * layout.num_joints * cfg.persons

    samples: list[SampleEntry] = []
    for a in range(cfg.num_categories):
        roles = (["train"] * cfg.train_per_category if a < cfg.num_known else []) + ["test"] * cfg.test_per_category
        counters = {"train": 0, "test": 0}
        for role in roles:
            noise = rng.normal(n_coords) * cfg.noise if cfg.noise > 0 else None
            x = render(cfg, motion, a, noise).astype(np.float32)
            sid = f"{a:02d}_{role}_{counters[role]:03d}"
            counters[role] += 1
            rel = f"samples/{sid}.stnsr"
            stnsr.save(out / rel, x)
            samples.append(SampleEntry(id=sid, label=a, path=rel, role=role))

    f_cn, f_parts = semantic_embeddings(motion.theta(cfg), g)
    stnsr.save(out / "semantics/names.stnsr", f_cn.astype(np.float32))
    part_files = {}
    for part, emb in f_parts.items():
        rel = f"semantics/part_{part}.stnsr"
        stnsr.save(out / rel, emb.astype(np.float32))
        part_files[part] = rel

    side_info = {}
    for strategy in STRATEGY_REGIONS:
        rel = f"side_info_{strategy}.json"
        with open(out / rel, "w", encoding="utf-8") as fh:
            json.dump(side_info_records(motion, names, strategy), fh, indent=2)
            fh.write("\n")
        side_info[strategy] = rel

    write_split(out / "split.json", split)
    with open(out / "synth_config.json", "w", encoding="utf-8") as fh:
        json.dump({"seed": seed, **asdict(cfg)}, fh, indent=2)
        fh.write("\n")

    manifest = DatasetManifest(
        layout=cfg.layout,
        categories=names,
        split={"known": list(split.known), "unknown": list(split.unknown)},
        samples=samples,
        frames=cfg.frames,
        persons=cfg.persons,
        semantics={"provider": "synthetic", "names": "semantics/names.stnsr", "parts": part_files},
        side_info=side_info,
    )
    write_manifest(out, manifest)
    return manifest
