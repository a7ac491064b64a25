"""ZSL / GZSL prediction with calibrated stacking, metrics, sweeps and dumps."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import stnsr
from . import tensor as T
from .errors import ContractError, DataError
from .model import StarModel
from .semantics import SemanticEmbeddingSet
from .skeleton import SkeletonDataset
from .train import feature_maps

MODES = ("zsl", "gzsl")


def harmonic_mean(s: float, u: float) -> float:
    if s + u <= 0:
        return 0.0
    if s == u:
        return float(s)  # keeps H(x, x) = x exact
    return 2.0 * s * u / (s + u)


def predict_from_scores(scores: np.ndarray, is_known: np.ndarray, mode: str, gamma: float = 0.0) -> np.ndarray:
    """Calibrated-stacking argmax; ties go to the lowest category index.

    ``scores`` is (N, A) or (A,). In ``zsl`` mode only unknown categories
    compete and ``gamma`` is ignored; in ``gzsl`` every category competes
    and known ones are penalised by ``gamma``.
    """
    scores = np.asarray(scores)
    is_known = np.asarray(is_known, dtype=bool)
    single = scores.ndim == 1
    scores = np.atleast_2d(scores)
    if scores.shape[1] != is_known.shape[0]:
        raise ContractError(f"{scores.shape[1]} scores per sample for {is_known.shape[0]} categories")
    if mode == "zsl":
        if is_known.all():
            raise ContractError("empty candidate set: no unknown categories")
        adjusted = np.where(is_known[None, :], -np.inf, scores)
    elif mode == "gzsl":
        if is_known.size == 0:
            raise ContractError("empty candidate set")
        adjusted = scores - np.where(is_known, gamma, 0.0)[None, :]
    else:
        raise ContractError(f"mode must be one of {MODES}, got {mode!r}")
    pred = np.argmax(adjusted, axis=1)
    return pred[0] if single else pred


def predict(f_v: np.ndarray, f_cn: np.ndarray, is_known: np.ndarray, mode: str, gamma: float = 0.0):
    """Category index for one global representation (or a batch of them)."""
    return predict_from_scores(np.asarray(f_v) @ np.asarray(f_cn).T, is_known, mode, gamma)


@dataclass
class MetricsReport:
    mode: str
    gamma: float
    acc: float | None = None
    S: float | None = None
    U: float | None = None
    H: float | None = None
    per_category: dict[str, float] = field(default_factory=dict)
    confusion_labels: list[str] = field(default_factory=list)
    confusion: list[list[int]] = field(default_factory=list)
    n_samples: int = 0

    def summary(self) -> str:
        """One line; values are printed in full so they round-trip to the report."""
        if self.mode == "zsl":
            return f"mode=zsl Acc={self.acc!r}"
        return f"mode=gzsl gamma={self.gamma!r} S={self.S!r} U={self.U!r} H={self.H!r}"

    def to_json(self) -> dict:
        return asdict(self)


def metrics_from_predictions(pred: np.ndarray, labels: np.ndarray, categories: Sequence[str],
                             is_known: np.ndarray, mode: str, gamma: float = 0.0) -> MetricsReport:
    pred, labels = np.asarray(pred), np.asarray(labels)
    is_known = np.asarray(is_known, dtype=bool)
    if labels.size == 0:
        raise DataError("empty test partition")
    if mode == "zsl":
        if is_known[labels].any():
            raise DataError("zsl evaluation received samples of known categories")
        evaluated = np.flatnonzero(~is_known)
    else:
        evaluated = np.arange(len(categories))
    pos = {int(c): i for i, c in enumerate(evaluated)}
    conf = np.zeros((len(evaluated), len(evaluated)), dtype=np.int64)
    for y, p in zip(labels, pred):
        conf[pos[int(y)], pos[int(p)]] += 1
    correct = pred == labels
    per_cat = {categories[c]: float(correct[labels == c].mean()) for c in evaluated if (labels == c).any()}
    report = MetricsReport(mode=mode, gamma=float(gamma) if mode == "gzsl" else 0.0,
                           per_category=per_cat, confusion_labels=[categories[c] for c in evaluated],
                           confusion=conf.tolist(), n_samples=int(labels.size))
    if mode == "zsl":
        report.acc = float(correct.mean())
    else:
        seen = is_known[labels]
        if not seen.any() or seen.all():
            raise DataError("gzsl evaluation needs test samples of both known and unknown categories")
        report.S = float(correct[seen].mean())
        report.U = float(correct[~seen].mean())
        report.H = harmonic_mean(report.S, report.U)
    return report


# ---------------------------------------------------------------- model-level


@dataclass
class Latents:
    ids: list[str]
    labels: np.ndarray
    f_v: np.ndarray  # (N, d_lat)
    f_v_parts: np.ndarray  # (N, K, d_lat)
    f_si: np.ndarray  # (K, A, d_lat)
    f_cn: np.ndarray  # (A, d_lat)


def test_indices(dataset: SkeletonDataset, mode: str) -> np.ndarray:
    if mode == "zsl":
        idx = dataset.indices("test", known=False)
    elif mode == "gzsl":
        idx = dataset.indices("test")
    else:
        raise ContractError(f"mode must be one of {MODES}, got {mode!r}")
    if len(idx) == 0:
        raise DataError(f"empty test partition for mode {mode}")
    return idx


def compute_latents(model: StarModel, dataset: SkeletonDataset, emb: SemanticEmbeddingSet,
                    idx: np.ndarray, chunk: int = 128) -> Latents:
    maps = feature_maps(model, dataset, idx)
    fv, fvp = [], []
    for start in range(0, len(idx), chunk):
        parts, glob = model.visual_latents([T.Tensor(m[start:start + chunk]) for m in maps])
        fv.append(glob.data)
        fvp.append(parts.data)
    f_si, f_cn = model.semantic_latents(emb)
    return Latents(ids=[dataset.ids[i] for i in idx], labels=dataset.labels[idx], f_v=np.concatenate(fv),
                   f_v_parts=np.concatenate(fvp), f_si=f_si.data, f_cn=f_cn.data)


def scores_of(lat: Latents, model: StarModel) -> np.ndarray:
    if model.cfg.logit_mode == "cosine":
        def unit(a):
            return a / np.maximum(np.linalg.norm(a, axis=-1, keepdims=True), 1e-12)
        return unit(lat.f_v) @ unit(lat.f_cn).T / model.cfg.temperature
    return lat.f_v @ lat.f_cn.T


def evaluate(model: StarModel, dataset: SkeletonDataset, emb: SemanticEmbeddingSet, mode: str,
             gamma: float = 0.0) -> MetricsReport:
    idx = test_indices(dataset, mode)
    lat = compute_latents(model, dataset, emb, idx)
    is_known = dataset.split.is_known()
    pred = predict_from_scores(scores_of(lat, model), is_known, mode, gamma)
    return metrics_from_predictions(pred, lat.labels, dataset.categories, is_known, mode, gamma)


@dataclass
class GammaSweepResult:
    rows: list[tuple[float, float, float, float]]  # (gamma, S, U, H)
    predicted_unseen: list[int]
    best_gamma: float
    best_H: float


def sweep_from_scores(scores: np.ndarray, labels: np.ndarray, is_known: np.ndarray,
                      gammas: Sequence[float]) -> GammaSweepResult:
    gammas = [float(g) for g in gammas]
    if not gammas:
        raise ContractError("empty gamma list")
    if any(b <= a for a, b in zip(gammas, gammas[1:])):
        raise ContractError("gamma list must be strictly ascending")
    is_known = np.asarray(is_known, dtype=bool)
    seen = is_known[labels]
    if not seen.any() or seen.all():
        raise DataError("gamma sweep needs test samples of both known and unknown categories")
    rows, unseen_counts = [], []
    for g in gammas:
        pred = predict_from_scores(scores, is_known, "gzsl", g)
        correct = pred == labels
        s, u = float(correct[seen].mean()), float(correct[~seen].mean())
        rows.append((g, s, u, harmonic_mean(s, u)))
        unseen_counts.append(int((~is_known[pred]).sum()))
    best = max(range(len(rows)), key=lambda i: (rows[i][3], -i))
    return GammaSweepResult(rows, unseen_counts, rows[best][0], rows[best][3])


def gamma_sweep(model: StarModel, dataset: SkeletonDataset, emb: SemanticEmbeddingSet,
                gammas: Sequence[float]) -> GammaSweepResult:
    idx = test_indices(dataset, "gzsl")
    lat = compute_latents(model, dataset, emb, idx)
    return sweep_from_scores(scores_of(lat, model), lat.labels, dataset.split.is_known(), gammas)


def default_gamma_grid(scores: np.ndarray, n: int = 41) -> list[float]:
    """0 up to the full score spread, so the last entry silences every known category."""
    spread = float(scores.max() - scores.min()) if scores.size else 1.0
    return list(np.linspace(0.0, spread * 1.01 + 1e-9, n))


# ---------------------------------------------------------------- writers


def write_report(path: str | os.PathLike, report: MetricsReport) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2)
        fh.write("\n")


def write_sweep_csv(path: str | os.PathLike, result: GammaSweepResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["gamma", "S", "U", "H"])
        for row in result.rows:
            w.writerow([f"{v:.6f}" for v in row])


def write_confusion_csv(path: str | os.PathLike, report: MetricsReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred", *report.confusion_labels])
        for name, row in zip(report.confusion_labels, report.confusion):
            w.writerow([name, *row])


def dump_embeddings(model: StarModel, dataset: SkeletonDataset, emb: SemanticEmbeddingSet,
                    out: str | os.PathLike, mode: str = "gzsl") -> dict:
    """Write F_v (per test sample), part latents, F_si and F_cn plus ``index.json``."""
    out = Path(out)
    idx = test_indices(dataset, mode)
    lat = compute_latents(model, dataset, emb, idx)
    files = {"f_v": "f_v.stnsr", "f_v_parts": "f_v_parts.stnsr", "f_si": "f_si.stnsr", "f_cn": "f_cn.stnsr"}
    try:
        out.mkdir(parents=True, exist_ok=True)
        for key, rel in files.items():
            stnsr.save(out / rel, getattr(lat, key))
        index = {
            "files": files,
            "samples": lat.ids,
            "labels": lat.labels.tolist(),
            "categories": list(dataset.categories),
            "known": dataset.split.is_known().tolist(),
            "parts": list(model.strategy.part_names),
        }
        with open(out / "index.json", "w", encoding="utf-8") as fh:
            json.dump(index, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"failed to write embeddings under {out}: {exc}") from exc
    return index
