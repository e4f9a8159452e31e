"""Input checks for the estimator API."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import SchemaError
from .hierarchy import LabelHierarchy, default_hierarchy, load_hierarchy, read_hierarchy


def check_features(X, n_features: int | None = None) -> np.ndarray:
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(
            f"X has {X.shape[1]} features, but the estimator was fitted with {n_features}"
        )
    return X


def check_raw_labels(Y, n_samples: int, n_labels: int) -> np.ndarray:
    """Raw label matrix of 1/0/-1 with NaN blanks, shape (n_samples, n_labels)."""
    Y = check_array(Y, dtype=np.float64, ensure_2d=True, ensure_all_finite="allow-nan")
    if Y.shape != (n_samples, n_labels):
        raise ValueError(f"Y must have shape ({n_samples}, {n_labels}), got {Y.shape}")
    known = ~np.isnan(Y)
    if not np.isin(Y[known], (1.0, 0.0, -1.0)).all():
        raise ValueError("Y entries must be 1, 0, -1 or NaN")
    return Y


def resolve_hierarchy(hierarchy) -> LabelHierarchy:
    """Accept None (shipped default), a LabelHierarchy, hierarchy text, a
    path, or a sequence of label names (flat)."""
    if hierarchy is None:
        return default_hierarchy()
    if isinstance(hierarchy, LabelHierarchy):
        return hierarchy
    if isinstance(hierarchy, str):
        if "\n" in hierarchy:
            return load_hierarchy(hierarchy)
        return read_hierarchy(hierarchy)
    if hasattr(hierarchy, "__fspath__"):
        return read_hierarchy(hierarchy)
    try:
        return LabelHierarchy.flat([str(n) for n in hierarchy])
    except TypeError:
        raise SchemaError(f"cannot interpret {hierarchy!r} as a hierarchy") from None
