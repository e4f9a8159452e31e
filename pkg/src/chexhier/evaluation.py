"""ROC/AUC metrics, reader operating-point comparison, and the ablation grid."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset
from .exceptions import SchemaError
from .hierarchy import COMPETITION_LABELS, LabelHierarchy
from .infer import to_unconditional
from .model import Architecture, TrainConfig, forward, train_flat, train_two_phase
from .policy import LabelPolicy

__all__ = [
    "RocCurve",
    "AucReport",
    "OperatingPoint",
    "roc_auc",
    "evaluate",
    "mean_auc",
    "compare_operating_points",
    "read_operating_points",
    "AblationSpec",
    "AblationTable",
    "default_ablation_matrix",
    "parse_ablation_spec",
    "run_ablation",
]


@dataclass(frozen=True)
class RocCurve:
    """ROC vertices from (0, 0) to (1, 1), one per distinct score threshold."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float
    n_pos: int
    n_neg: int

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def tpr_at(self, fpr: float) -> float:
        """Upper envelope of the piecewise-linear curve at ``fpr``."""
        x, y = self.fpr, self.tpr
        best = -np.inf
        on_vertex = x == fpr
        if on_vertex.any():
            best = float(y[on_vertex].max())
        lo, hi = x[:-1], x[1:]
        inside = (lo < fpr) & (fpr < hi)
        for i in np.flatnonzero(inside):
            t = (fpr - lo[i]) / (hi[i] - lo[i])
            best = max(best, float(y[i] + t * (y[i + 1] - y[i])))
        return best

    def tpr_range(self, fpr: float) -> tuple[float, float]:
        """Lowest and highest curve TPR at ``fpr``; they differ only where
        the curve has a vertical segment."""
        x, y = self.fpr, self.tpr
        on_vertex = x == fpr
        if on_vertex.any():
            return float(y[on_vertex].min()), float(y[on_vertex].max())
        value = self.tpr_at(fpr)
        return value, value

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["threshold", "fpr", "tpr"])
        for th, f, t in zip(self.thresholds, self.fpr, self.tpr):
            writer.writerow([repr(float(th)), repr(float(f)), repr(float(t))])
        return buf.getvalue()


def roc_auc(scores, labels) -> RocCurve:
    """ROC curve and area with ties handled as one diagonal segment.

    The area equals P(s+ > s-) + P(s+ = s-)/2, accumulated in integer
    counts so the result is exact up to the final division.

    Examples
    --------
    >>> roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]).auc
    0.75
    """
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape or s.size == 0:
        raise ValueError("scores and labels must be non-empty and of equal length")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    if np.isnan(s).any():
        raise ValueError("scores contain NaN")
    y = y.astype(np.int64)
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined unless both classes are present")

    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    last_of_group = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    tp = np.cumsum(y_sorted)[last_of_group]
    fp = np.cumsum(1 - y_sorted)[last_of_group]
    tp = np.r_[0, tp]
    fp = np.r_[0, fp]
    twice_area = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    auc = twice_area / (2 * n_pos * n_neg)
    thresholds = np.r_[np.inf, s_sorted[last_of_group]]
    return RocCurve(fp / n_neg, tp / n_pos, thresholds, auc, n_pos, n_neg)


@dataclass(frozen=True)
class AucReport:
    labels: tuple[str, ...]
    auc: dict[str, float]
    curves: dict[str, RocCurve] = field(repr=False)
    counts: dict[str, tuple[int, int]]
    subset: tuple[str, ...] = COMPETITION_LABELS

    @property
    def mean(self) -> float:
        return mean_auc(self, self.subset)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["label", "auc", "n_pos", "n_neg"])
        for name in self.labels:
            pos, neg = self.counts[name]
            a = self.auc[name]
            writer.writerow([name, "" if np.isnan(a) else f"{a:.6f}", pos, neg])
        writer.writerow(["Mean(" + ";".join(self.subset) + ")", f"{self.mean:.6f}", "", ""])
        return buf.getvalue()

    def to_text(self) -> str:
        width = max(len(n) for n in self.labels + ("Mean",))
        lines = [f"{'label':<{width}}  {'AUC':>8}  {'pos':>6}  {'neg':>6}"]
        for name in self.labels:
            pos, neg = self.counts[name]
            a = self.auc[name]
            cell = "     n/a" if np.isnan(a) else f"{a:8.4f}"
            mark = "*" if name in self.subset else " "
            lines.append(f"{name:<{width}}{mark} {cell}  {pos:>6}  {neg:>6}")
        lines.append(f"{'Mean':<{width}}  {self.mean:8.4f}   (* = averaged labels)")
        return "\n".join(lines) + "\n"


def evaluate(y_true, scores, labels: Sequence[str],
             subset: Sequence[str] = COMPETITION_LABELS) -> AucReport:
    """Per-label ROC analysis. NaN entries in ``y_true`` are skipped; labels
    with a single class present get AUC NaN."""
    Y = np.asarray(y_true, dtype=float)
    S = np.asarray(scores, dtype=float)
    if Y.shape != S.shape or Y.shape[1] != len(labels):
        raise SchemaError("labels and scores must both be (n, L) with L matching names")
    missing = [name for name in subset if name not in labels]
    if missing:
        raise SchemaError(f"subset label {missing[0]!r} is not among the evaluated labels")
    aucs, curves, counts = {}, {}, {}
    for k, name in enumerate(labels):
        keep = ~np.isnan(Y[:, k])
        yk = Y[keep, k].astype(int)
        pos = int(yk.sum())
        counts[name] = (pos, int(yk.size - pos))
        if pos == 0 or pos == yk.size:
            aucs[name] = float("nan")
            continue
        curve = roc_auc(S[keep, k], yk)
        aucs[name] = curve.auc
        curves[name] = curve
    return AucReport(tuple(labels), aucs, curves, counts, tuple(subset))


def mean_auc(report: AucReport | dict, subset: Sequence[str]) -> float:
    """Arithmetic mean of per-label AUCs over ``subset``."""
    aucs = report.auc if isinstance(report, AucReport) else report
    subset = list(subset)
    if not subset:
        raise ValueError("subset is empty")
    values = []
    for name in subset:
        if name not in aucs:
            raise KeyError(f"no AUC for label {name!r}")
        if np.isnan(aucs[name]):
            raise ValueError(f"AUC for {name!r} is undefined")
        values.append(aucs[name])
    total = 0.0
    for v in values:
        total += v
    return total / len(values)


@dataclass(frozen=True)
class OperatingPoint:
    fpr: float
    tpr: float
    label: str | None = None
    reader: str | None = None

    def __post_init__(self):
        if not (0.0 <= self.fpr <= 1.0 and 0.0 <= self.tpr <= 1.0):
            raise ValueError("operating point coordinates must lie in [0, 1]")


def compare_operating_points(curve: RocCurve, points: Sequence[OperatingPoint]) -> int:
    """Count points strictly below the curve (linear interpolation).

    Points on the curve, including anywhere on a vertical segment, count
    for the reader.
    """
    return sum(1 for p in points if p.tpr < curve.tpr_range(p.fpr)[0])


def read_operating_points(path) -> list[OperatingPoint]:
    """CSV with columns ``label,FPR,TPR`` (optional ``reader``)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"operating-point file not found: {path}")
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        cols = {c.lower(): c for c in reader.fieldnames or []}
        for need in ("label", "fpr", "tpr"):
            if need not in cols:
                raise SchemaError(f"{path}: missing column {need!r}")
        out = []
        for row in reader:
            try:
                out.append(OperatingPoint(
                    float(row[cols["fpr"]]), float(row[cols["tpr"]]),
                    label=row[cols["label"]],
                    reader=row.get(cols.get("reader", ""), None),
                ))
            except ValueError as exc:
                raise SchemaError(f"{path}: {exc}") from None
    return out


@dataclass(frozen=True)
class AblationSpec:
    base: str
    conditional: bool = False
    lsr: bool = False

    def __post_init__(self):
        if self.base not in ("u-ignore", "u-zeros", "u-ones"):
            raise ValueError(f"unknown base policy {self.base!r}")
        if self.lsr and self.base == "u-ignore":
            raise ValueError("LSR does not apply to U-Ignore")

    @property
    def policy_kind(self) -> str:
        return self.base + "-lsr" if self.lsr else self.base

    @property
    def name(self) -> str:
        base = {"u-ignore": "U-Ignore", "u-zeros": "U-Zeros", "u-ones": "U-Ones"}[self.base]
        return base + ("+CT" if self.conditional else "") + ("+LSR" if self.lsr else "")


def default_ablation_matrix() -> list[AblationSpec]:
    rows = [AblationSpec("u-ignore"), AblationSpec("u-ignore", conditional=True)]
    for base in ("u-zeros", "u-ones"):
        rows += [
            AblationSpec(base),
            AblationSpec(base, conditional=True),
            AblationSpec(base, lsr=True),
            AblationSpec(base, conditional=True, lsr=True),
        ]
    return rows


def parse_ablation_spec(text: str) -> AblationSpec:
    """Parse names like ``U-Ones+CT+LSR``."""
    parts = [p.strip().lower() for p in text.replace("_", "-").split("+")]
    flags = set(parts[1:])
    unknown = flags - {"ct", "lsr"}
    if unknown or len(flags) != len(parts) - 1:
        raise ValueError(f"invalid ablation row {text!r}")
    return AblationSpec(parts[0], conditional="ct" in flags, lsr="lsr" in flags)


@dataclass(frozen=True)
class AblationTable:
    columns: tuple[str, ...]
    rows: tuple[tuple[str, tuple[float, ...], float], ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["Method", *self.columns, "Mean"])
        for name, values, mean in self.rows:
            writer.writerow([name, *(f"{v:.6f}" for v in values), f"{mean:.6f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        name_w = max(len("Method"), *(len(r[0]) for r in self.rows)) if self.rows else 6
        col_w = [max(len(c), 6) for c in self.columns]
        head = f"{'Method':<{name_w}}  " + "  ".join(
            f"{c:>{w}}" for c, w in zip(self.columns, col_w)) + "    Mean"
        lines = [head, "-" * len(head)]
        for name, values, mean in self.rows:
            cells = "  ".join(f"{v:>{w}.3f}" for v, w in zip(values, col_w))
            lines.append(f"{name:<{name_w}}  {cells}  {mean:6.3f}")
        return "\n".join(lines) + "\n"


def run_ablation(ds_train: Dataset, ds_val: Dataset, h: LabelHierarchy,
                 matrix: Sequence[AblationSpec], cfg: TrainConfig,
                 arch: Architecture = Architecture(),
                 subset: Sequence[str] = COMPETITION_LABELS,
                 lsr_interval: dict | None = None) -> AblationTable:
    """Train and score each row of ``matrix``.

    Every row starts from the same seed, so rows differ only in the label
    policy and whether conditional training is used.
    """
    if not matrix:
        raise ValueError("ablation matrix is empty")
    if ds_val.features is None:
        raise SchemaError("validation data needs feature vectors")
    ds_train.check_schema(h)
    ds_val.check_schema(h)
    lsr_interval = lsr_interval or {}
    y_val = ds_val.evaluation_labels()
    rows = []
    for spec in matrix:
        if not isinstance(spec, AblationSpec):
            raise ValueError(f"invalid ablation row {spec!r}")
        low, high = lsr_interval.get(spec.policy_kind, (None, None))
        policy = LabelPolicy(spec.policy_kind, low, high)
        if spec.conditional:
            params = train_two_phase(ds_train, h, policy, cfg, arch)
        else:
            params = train_flat(ds_train, policy, cfg, arch)
        probs = to_unconditional(forward(params, ds_val.features).cond_probs, h)
        report = evaluate(y_val, probs, h.labels, subset)
        values = tuple(report.auc[name] for name in subset)
        rows.append((spec.name, values, report.mean))
    return AblationTable(tuple(subset), tuple(rows))
