"""Unconditional inference, test-time augmentation and ensembling."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import SchemaError
from .hierarchy import LabelHierarchy
from .model import ModelParams, Prediction, forward
from .preprocess import AffineParams, warp_affine

__all__ = [
    "UnconditionalPrediction",
    "TtaConfig",
    "to_unconditional",
    "sample_transform",
    "predict_tta",
    "ensemble_predict",
    "write_predictions",
    "read_predictions",
]


@dataclass(frozen=True)
class UnconditionalPrediction:
    probs: np.ndarray
    model_ids: tuple[str, ...] = ()
    tta_count: int = 0


@dataclass(frozen=True)
class TtaConfig:
    """Random augmentations averaged at test time.

    Each draw flips with probability ``flip_prob`` and samples rotation from
    U(-rotation, rotation) degrees, scale from U(1 - scale, 1 + scale) and
    shear from U(-shear, shear) pixels. Setting a range to 0 disables it.
    """

    count: int = 10
    flip_prob: float = 0.5
    rotation: float = 7.0
    scale: float = 0.02
    shear: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("TTA count must be >= 1")


def to_unconditional(cond, h: LabelHierarchy) -> np.ndarray:
    """Multiply conditional probabilities along each label's root path.

    Accepts a :class:`Prediction`, a vector of length L, or an (n, L) matrix.
    """
    p = cond.cond_probs if isinstance(cond, Prediction) else cond
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != len(h):
        raise SchemaError(f"expected {len(h)} probabilities, got {p.shape[-1]}")
    out = np.empty_like(p)
    for k, path in enumerate(h.paths):
        acc = p[..., path[0]].copy()
        for node in path[1:]:
            acc = acc * p[..., node]
        out[..., k] = acc
    return out


def sample_transform(rng: np.random.Generator, tta: TtaConfig) -> AffineParams:
    flip = bool(rng.random() < tta.flip_prob)
    rotation = float(rng.uniform(-tta.rotation, tta.rotation)) if tta.rotation else 0.0
    scale = 1.0 + float(rng.uniform(-tta.scale, tta.scale)) if tta.scale else 1.0
    shear = float(rng.uniform(-tta.shear, tta.shear)) if tta.shear else 0.0
    return AffineParams(flip, rotation, scale, shear)


def predict_tta(m: ModelParams, image, tta: TtaConfig,
                rng: np.random.Generator | None = None) -> Prediction:
    """Average conditional probabilities over ``tta.count`` augmented copies.

    ``image`` is the preprocessed 2-D network input; it is flattened
    row-major after each warp. Returned logits are the logits of the
    averaged probabilities.
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise SchemaError("test-time augmentation needs a 2-D image input")
    if rng is None:
        rng = np.random.default_rng(tta.seed)
    total = None
    for _ in range(tta.count):
        warped = warp_affine(image, sample_transform(rng, tta))
        probs = forward(m, warped.ravel()).cond_probs
        total = probs if total is None else total + probs
    mean = total / tta.count
    with np.errstate(divide="ignore"):
        logits = np.log(mean) - np.log1p(-mean)
    return Prediction(logits=logits, cond_probs=mean)


def ensemble_predict(models: Sequence[ModelParams], inputs, h: LabelHierarchy,
                     tta: TtaConfig | None = None, model_ids: Sequence[str] = (),
                     average: str = "conditional") -> UnconditionalPrediction:
    """Average member outputs and convert to unconditional probabilities.

    Parameters
    ----------
    models : sequence of ModelParams
    inputs : array
        Feature vector, (n, d) feature matrix, or, with ``tta``, a 2-D image
        or a stack of images shaped (n, H, W).
    h : LabelHierarchy
    tta : TtaConfig, optional
        Augment each member's input; every member sees the same transforms.
    average : {"conditional", "unconditional"}
        Average before (default) or after the root-path products.
    """
    if not models:
        raise ValueError("ensemble needs at least one model")
    if average not in ("conditional", "unconditional"):
        raise ValueError("average must be 'conditional' or 'unconditional'")
    L = models[0].n_outputs
    if any(m.n_outputs != L for m in models) or L != len(h):
        raise SchemaError("ensemble members disagree on the number of labels")

    x = np.asarray(inputs, dtype=float)
    members = []
    for m in models:
        if tta is None:
            probs = forward(m, x).cond_probs
        else:
            images = x[None] if x.ndim == 2 else x
            probs = np.stack([
                predict_tta(m, img, tta, np.random.default_rng([tta.seed, i])).cond_probs
                for i, img in enumerate(images)
            ])
            if x.ndim == 2:
                probs = probs[0]
        members.append(probs if average == "conditional" else to_unconditional(probs, h))

    total = members[0].copy()
    for probs in members[1:]:
        total = total + probs
    mean = total / len(members)
    out = to_unconditional(mean, h) if average == "conditional" else mean
    ids = tuple(model_ids) or tuple(f"model{i}" for i in range(len(models)))
    return UnconditionalPrediction(out, ids, 0 if tta is None else tta.count)


def write_predictions(path, ids: Sequence[str], probs: np.ndarray,
                      labels: Sequence[str]) -> str:
    """CSV with an ``Id`` column and one probability column per label,
    six decimals."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["Id", *labels])
    for id_value, row in zip(ids, np.atleast_2d(probs)):
        writer.writerow([id_value, *(f"{p:.6f}" for p in row)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_predictions(path, labels: Sequence[str]) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"prediction file not found: {path}")
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ["Id", *labels] if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"{path}: missing column {missing[0]!r}")
        ids, rows = [], []
        for row in reader:
            ids.append(row["Id"])
            try:
                rows.append([float(row[c]) for c in labels])
            except ValueError as exc:
                raise SchemaError(f"{path}: {exc}") from None
    return ids, np.array(rows, dtype=float).reshape(len(rows), len(labels))
