"""scikit-learn estimator wrapping conditional training and unconditional
inference."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import Dataset
from .evaluation import evaluate
from .hierarchy import COMPETITION_LABELS
from .infer import to_unconditional
from .model import Architecture, TrainConfig, TrainLog, forward, train_flat, train_two_phase
from .policy import LabelPolicy
from .validation import check_features, check_raw_labels, resolve_hierarchy


class HierarchicalClassifier(BaseEstimator):
    """Multi-label MLP trained with an uncertainty policy and, optionally,
    hierarchy-conditional training.

    Parameters
    ----------
    hierarchy : LabelHierarchy, str, path or sequence of str, default=None
        Label forest. ``None`` uses the shipped 14-label CheXpert hierarchy;
        a plain list of names means no edges.
    policy : str, default="u-ones-lsr"
        Uncertainty handling, one of ``u-ignore``, ``u-zeros``, ``u-ones``,
        ``u-zeros-lsr``, ``u-ones-lsr``.
    lsr_low, lsr_high : float, default=None
        Override the LSR interval of the policy.
    missing : {"negative", "ignore"}, default="negative"
        Treatment of blank labels.
    conditional : bool, default=True
        Two-phase conditional training; otherwise a single flat phase.
    hidden_layer_sizes : tuple of int, default=(64, 64)
    learning_rate : float, default=1e-4
    lr_decay : float, default=0.1
        Per-epoch learning-rate multiplier.
    batch_size : int, default=32
    epochs_phase1, epochs_phase2 : int, default=5
    lsr_resample : bool, default=False
        Redraw smoothed targets each epoch instead of once.
    random_state : int, default=0

    Attributes
    ----------
    params_ : ModelParams
    hierarchy_ : LabelHierarchy
    policy_ : LabelPolicy
    train_log_ : TrainLog
    n_features_in_ : int
    """

    def __init__(self, hierarchy=None, policy="u-ones-lsr", lsr_low=None, lsr_high=None,
                 missing="negative", conditional=True, hidden_layer_sizes=(64, 64),
                 learning_rate=1e-4, lr_decay=0.1, batch_size=32, epochs_phase1=5,
                 epochs_phase2=5, lsr_resample=False, random_state=0):
        self.hierarchy = hierarchy
        self.policy = policy
        self.lsr_low = lsr_low
        self.lsr_high = lsr_high
        self.missing = missing
        self.conditional = conditional
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.batch_size = batch_size
        self.epochs_phase1 = epochs_phase1
        self.epochs_phase2 = epochs_phase2
        self.lsr_resample = lsr_resample
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.learning_rate,
            lr_decay=self.lr_decay,
            batch_size=self.batch_size,
            epochs_phase1=self.epochs_phase1,
            epochs_phase2=self.epochs_phase2,
            seed=self.random_state,
            lsr_resample=self.lsr_resample,
        )

    def fit(self, X, Y):
        """Fit on features ``X`` (n, d) and raw labels ``Y`` (n, L) holding
        1, 0, -1 or NaN."""
        h = resolve_hierarchy(self.hierarchy)
        X = check_features(X)
        Y = check_raw_labels(Y, X.shape[0], len(h))
        policy = LabelPolicy(self.policy, self.lsr_low, self.lsr_high, self.missing)
        ds = Dataset(
            ids=tuple(str(i) for i in range(len(X))),
            labels=Y,
            schema=h.labels,
            features=X,
            source="array",
            id_column="Id",
        )
        cfg = self._train_config()
        arch = Architecture(tuple(self.hidden_layer_sizes))
        log = TrainLog()
        if self.conditional:
            params = train_two_phase(ds, h, policy, cfg, arch, log=log)
        else:
            params = train_flat(ds, policy, cfg, arch, log=log)
        self.params_ = params
        self.hierarchy_ = h
        self.policy_ = policy
        self.train_log_ = log
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array(h.labels)
        return self

    def predict_conditional(self, X) -> np.ndarray:
        """Raw sigmoid outputs, one per label."""
        check_is_fitted(self, "params_")
        X = check_features(X, self.n_features_in_)
        return forward(self.params_, X).cond_probs

    def predict_proba(self, X) -> np.ndarray:
        """Unconditional probabilities (products along root paths)."""
        return to_unconditional(self.predict_conditional(X), self.hierarchy_)

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X) >= threshold).astype(int)

    def score(self, X, Y, subset=COMPETITION_LABELS) -> float:
        """Mean AUC over ``subset``; uncertain and blank entries are skipped."""
        Y = np.asarray(Y, dtype=float)
        Y = np.where(Y == -1.0, np.nan, Y)
        names = [n for n in subset if n in self.hierarchy_.labels] or list(self.hierarchy_.labels)
        report = evaluate(Y, self.predict_proba(X), self.hierarchy_.labels, names)
        return report.mean
