"""Datasets: CheXpert-style CSV ingest, the conditional-training subset, and a
synthetic hierarchical generator whose Bayes-optimal scores are known."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from ._random import derive_rng
from .exceptions import SchemaError
from .hierarchy import LabelHierarchy, default_hierarchy
from .policy import LabelPolicy, map_labels

__all__ = [
    "Sample",
    "Dataset",
    "load_csv",
    "write_csv",
    "read_features",
    "write_features",
    "conditional_indices",
    "conditional_subset",
    "GroundTruthModel",
    "SyntheticConfig",
    "generate_synthetic",
    "oracle_scores",
]

VIEW_COLUMN = "Frontal/Lateral"
ID_COLUMNS = ("Path", "Id")

_CELL_VALUES = {"1.0": 1.0, "1": 1.0, "0.0": 0.0, "0": 0.0, "-1.0": -1.0, "-1": -1.0}


class Sample(NamedTuple):
    id: str
    features: np.ndarray | None
    raw_labels: np.ndarray
    view: str | None = None


@dataclass(frozen=True)
class Dataset:
    """Ordered samples with raw labels in hierarchy column order.

    ``labels`` holds 1/0/-1 with NaN for blanks. ``truth`` is only present
    for synthetic data and holds the labels before uncertainty injection.
    """

    ids: tuple[str, ...]
    labels: np.ndarray
    schema: tuple[str, ...]
    features: np.ndarray | None = None
    views: tuple[str | None, ...] | None = None
    truth: np.ndarray | None = None
    source: str = "csv"
    id_column: str = "Path"
    extra_columns: tuple[str, ...] = ()
    extra: tuple[tuple[str, ...], ...] = field(default=(), repr=False)
    columns: tuple[str, ...] = field(default=(), repr=False)

    def __post_init__(self):
        n = len(self.ids)
        if self.labels.shape != (n, len(self.schema)):
            raise SchemaError(
                f"label matrix shape {self.labels.shape} does not match "
                f"{n} samples x {len(self.schema)} labels"
            )
        if self.features is not None and len(self.features) != n:
            raise SchemaError("feature rows do not match sample count")

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i: int) -> Sample:
        return Sample(
            id=self.ids[i],
            features=None if self.features is None else self.features[i],
            raw_labels=self.labels[i],
            view=None if self.views is None else self.views[i],
        )

    @property
    def n_features(self) -> int | None:
        return None if self.features is None else self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        pick = lambda seq: None if seq is None else tuple(seq[i] for i in idx)
        return replace(
            self,
            ids=pick(self.ids),
            labels=self.labels[idx],
            features=None if self.features is None else self.features[idx],
            views=pick(self.views),
            truth=None if self.truth is None else self.truth[idx],
            extra=pick(self.extra) if self.extra else (),
        )

    def check_schema(self, h: LabelHierarchy):
        if tuple(self.schema) != tuple(h.labels):
            raise SchemaError(
                f"dataset labels {list(self.schema)} do not match hierarchy labels "
                f"{list(h.labels)}"
            )

    def evaluation_labels(self) -> np.ndarray:
        """Labels to score against: pre-injection truth if known, else raw
        labels with uncertain entries set to NaN (excluded)."""
        if self.truth is not None:
            return self.truth.astype(float)
        return np.where(self.labels == -1.0, np.nan, self.labels)


def _parse_cell(cell: str, row: int, column: str) -> float:
    cell = cell.strip()
    if cell == "":
        return np.nan
    try:
        return _CELL_VALUES[cell]
    except KeyError:
        raise SchemaError(
            f"row {row}: cannot parse {cell!r} in column {column!r} "
            "(expected 1.0, 0.0, -1.0 or blank)"
        ) from None


def _format_cell(value: float) -> str:
    if np.isnan(value):
        return ""
    return {1.0: "1.0", 0.0: "0.0", -1.0: "-1.0"}[float(value)]


def _infer_view(row: dict, id_value: str) -> str | None:
    if VIEW_COLUMN in row:
        value = row[VIEW_COLUMN].strip().lower()
        return value or None
    lowered = id_value.lower()
    if "frontal" in lowered:
        return "frontal"
    if "lateral" in lowered:
        return "lateral"
    return None


def load_csv(path, hierarchy: LabelHierarchy, view: str | None = None,
             features=None) -> Dataset:
    """Read a CheXpert-layout label CSV.

    Parameters
    ----------
    path : path-like
        CSV with a ``Path`` or ``Id`` column and one column per label.
    hierarchy : LabelHierarchy
        Supplies the label columns and their order.
    view : {"frontal", "lateral"}, optional
        Keep only rows of this view.
    features : path-like, optional
        Sidecar feature CSV keyed by the same ids.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"label file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise SchemaError(f"{path}: file is empty")
    reader = csv.DictReader(io.StringIO(text))
    columns = tuple(reader.fieldnames or ())
    id_column = next((c for c in ID_COLUMNS if c in columns), None)
    if id_column is None:
        raise SchemaError(f"{path}: missing id column (one of {ID_COLUMNS})")
    for name in hierarchy.labels:
        if name not in columns:
            raise SchemaError(f"{path}: missing label column {name!r}")
    label_set = set(hierarchy.labels)
    extra_columns = tuple(c for c in columns if c != id_column and c not in label_set)

    ids, rows, views, extra = [], [], [], []
    for lineno, row in enumerate(reader, start=2):
        if None in row:
            raise SchemaError(f"{path}: row {lineno} has more cells than the header")
        id_value = row[id_column]
        row_view = _infer_view(row, id_value)
        if view is not None and row_view is not None and row_view != view:
            continue
        ids.append(id_value)
        rows.append([_parse_cell(row[c] or "", lineno, c) for c in hierarchy.labels])
        views.append(row_view)
        extra.append(tuple(row[c] or "" for c in extra_columns))

    labels = np.array(rows, dtype=float).reshape(len(rows), len(hierarchy))
    X = None
    if features is not None:
        feat_ids, feat = read_features(features)
        lookup = {fid: i for i, fid in enumerate(feat_ids)}
        missing = [i for i in ids if i not in lookup]
        if missing:
            raise SchemaError(f"{features}: no feature row for id {missing[0]!r}")
        X = feat[[lookup[i] for i in ids]]
    return Dataset(
        ids=tuple(ids),
        labels=labels,
        schema=tuple(hierarchy.labels),
        features=X,
        views=tuple(views),
        source="csv",
        id_column=id_column,
        extra_columns=extra_columns,
        extra=tuple(extra),
        columns=columns,
    )


def write_csv(ds: Dataset, path=None) -> str:
    """Serialize labels in CheXpert layout. Returns the text; writes it to
    ``path`` when given."""
    columns = ds.columns or (ds.id_column,) + ds.extra_columns + ds.schema
    extra_pos = {c: i for i, c in enumerate(ds.extra_columns)}
    label_pos = {c: i for i, c in enumerate(ds.schema)}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for i, id_value in enumerate(ds.ids):
        out = []
        for c in columns:
            if c == ds.id_column:
                out.append(id_value)
            elif c in label_pos:
                out.append(_format_cell(ds.labels[i, label_pos[c]]))
            else:
                out.append(ds.extra[i][extra_pos[c]] if ds.extra else "")
        writer.writerow(out)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_features(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"feature file not found: {path}")
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise SchemaError(f"{path}: file is empty")
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(f"{path}: row {lineno} has {len(row)} cells, "
                                  f"expected {len(header)}")
            ids.append(row[0])
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise SchemaError(f"{path}: row {lineno}: {exc}") from None
    X = np.array(rows, dtype=float).reshape(len(rows), len(header) - 1)
    if not np.isfinite(X).all():
        raise SchemaError(f"{path}: non-finite feature values")
    return ids, X


def write_features(path, ids: Sequence[str], X: np.ndarray):
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["Id"] + [f"f{j}" for j in range(X.shape[1])])
        for id_value, row in zip(ids, X):
            writer.writerow([id_value] + [repr(float(v)) for v in row])


def conditional_indices(targets: np.ndarray, h: LabelHierarchy) -> np.ndarray:
    """Rows whose mapped target is >= 0.5 for every parent-label of ``h``.

    Masked entries carry the ignore sentinel (0) and therefore never count
    as positive.
    """
    parents = h.parent_labels
    if not parents:
        return np.arange(len(targets))
    keep = np.all(targets[:, parents] >= 0.5, axis=1)
    return np.flatnonzero(keep)


def conditional_subset(ds: Dataset, h: LabelHierarchy, policy: LabelPolicy,
                       seed: int) -> tuple[Dataset, list[str]]:
    """Phase-one training data and the labels its loss covers.

    Targets are mapped with the same seed-derived stream the trainer uses,
    so LSR-smoothed parents are judged by the values training will see.
    """
    ds.check_schema(h)
    mapped = map_labels(ds.labels, policy, derive_rng(seed, "policy"))
    keep = conditional_indices(mapped.targets, h)
    parents = set(h.parent_labels)
    scope = [name for k, name in enumerate(h.labels) if k not in parents]
    return ds.subset(keep), scope


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


@dataclass(frozen=True)
class GroundTruthModel:
    """Logistic conditional model over a hierarchy.

    ``p(label k | parent positive, z) = sigmoid(weights[k] @ z + biases[k])``;
    a label is always negative when its parent is.
    """

    weights: np.ndarray
    biases: np.ndarray
    hierarchy: LabelHierarchy
    rho: float = 0.0
    beta: float = 0.5

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def conditional_probs(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.n_features:
            raise SchemaError(
                f"feature dimension {Z.shape[1]} does not match model dimension "
                f"{self.n_features}"
            )
        return _sigmoid(Z @ self.weights.T + self.biases)

    def unconditional_probs(self, Z) -> np.ndarray:
        cond = self.conditional_probs(Z)
        out = np.empty_like(cond)
        for k, path in enumerate(self.hierarchy.paths):
            out[:, k] = np.prod(cond[:, list(path)], axis=1)
        return out

    def sample(self, n: int, rng: np.random.Generator, rho: float | None = None,
               beta: float | None = None, id_prefix: str = "syn") -> Dataset:
        rho = self.rho if rho is None else rho
        beta = self.beta if beta is None else beta
        h = self.hierarchy
        Z = rng.standard_normal((n, self.n_features))
        cond = self.conditional_probs(Z)
        truth = np.zeros((n, len(h)), dtype=np.int8)
        draws = rng.random((n, len(h)))
        for k in h.topological_order:
            pos = draws[:, k] < cond[:, k]
            p = h.parent[k]
            if p is not None:
                pos &= truth[:, p] == 1
            truth[:, k] = pos
        labels = truth.astype(float)
        _inject_uncertainty(labels, truth, rho, beta, rng)
        return Dataset(
            ids=tuple(f"{id_prefix}{i:06d}" for i in range(n)),
            labels=labels,
            schema=h.labels,
            features=Z,
            views=None,
            truth=truth,
            source="synthetic",
            id_column="Id",
        )

    def to_dict(self) -> dict:
        return {
            "hierarchy": self.hierarchy.serialize(),
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "rho": self.rho,
            "beta": self.beta,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GroundTruthModel":
        from .hierarchy import load_hierarchy

        return cls(
            weights=np.array(doc["weights"], dtype=float),
            biases=np.array(doc["biases"], dtype=float),
            hierarchy=load_hierarchy(doc["hierarchy"]),
            rho=float(doc["rho"]),
            beta=float(doc["beta"]),
        )


def _inject_uncertainty(labels, truth, rho, beta, rng):
    """Replace entries by -1, per label column.

    The number of uncertain entries in a column is Binomial(n, rho); a
    Binomial(m, beta) share of them is drawn from the positives and the rest
    from the negatives, spilling over when one class runs out.
    """
    if rho <= 0.0:
        return
    n, L = labels.shape
    for k in range(L):
        m = rng.binomial(n, rho)
        if m == 0:
            continue
        pos = np.flatnonzero(truth[:, k] == 1)
        neg = np.flatnonzero(truth[:, k] == 0)
        want_pos = rng.binomial(m, beta)
        take_pos = min(want_pos, len(pos))
        take_neg = min(m - take_pos, len(neg))
        take_pos = min(m - take_neg, len(pos))
        chosen = np.concatenate([
            rng.choice(pos, size=take_pos, replace=False),
            rng.choice(neg, size=take_neg, replace=False),
        ])
        labels[chosen, k] = -1.0


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator settings.

    ``weight_scale`` sets the standard deviation of each label's linear
    score, so larger values give a more separable problem.
    """

    d: int = 16
    n: int = 1000
    rho: float = 0.0
    beta: float = 0.5
    seed: int = 0
    hierarchy: LabelHierarchy | None = None
    weight_scale: float = 8.0
    bias_scale: float = 1.0

    def __post_init__(self):
        if self.d < 1 or self.n < 0:
            raise ValueError("d must be >= 1 and n >= 0")
        if not (0.0 <= self.rho <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("rho and beta must lie in [0, 1]")
        if self.weight_scale < 0 or self.bias_scale < 0:
            raise ValueError("weight_scale and bias_scale must be non-negative")


def generate_synthetic(config: SyntheticConfig) -> tuple[Dataset, GroundTruthModel]:
    h = config.hierarchy or default_hierarchy()
    model_rng = derive_rng(config.seed, "synthetic-model")
    L, d = len(h), config.d
    weights = model_rng.standard_normal((L, d)) * (config.weight_scale / np.sqrt(d))
    biases = model_rng.standard_normal(L) * config.bias_scale
    gt = GroundTruthModel(weights, biases, h, rho=config.rho, beta=config.beta)
    ds = gt.sample(config.n, derive_rng(config.seed, "synthetic-data"))
    return ds, gt


def oracle_scores(gt: GroundTruthModel, sample) -> np.ndarray:
    """Bayes-optimal unconditional probabilities for a sample, a feature
    vector, or a feature matrix."""
    z = sample.features if isinstance(sample, Sample) else sample
    if z is None:
        raise SchemaError("sample has no feature vector")
    z = np.asarray(z, dtype=float)
    out = gt.unconditional_probs(z)
    return out[0] if z.ndim == 1 else out
