"""Reference multi-label classifier: a small MLP with sigmoid heads.

Everything is plain numpy in float64. Training follows the two-phase
scheme: fit the whole network on samples whose parent labels are all
positive, then freeze everything but the output layer and fine-tune it
on the full data.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._random import derive_rng
from .data import Dataset, conditional_indices
from .exceptions import NumericError, SchemaError
from .hierarchy import LabelHierarchy
from .policy import LabelPolicy, MappedTargets, map_labels

__all__ = [
    "Layer",
    "ModelParams",
    "Prediction",
    "Architecture",
    "TrainConfig",
    "TrainLog",
    "init_params",
    "forward",
    "loss_and_gradients",
    "Adam",
    "train_flat",
    "train_two_phase",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_FORMAT",
]

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "chexhier-checkpoint"
CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "identity")


@dataclass
class Layer:
    weights: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray
    activation: str = "relu"


@dataclass
class ModelParams:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.weights.shape[1],):
                raise ValueError(f"layer {i}: bias shape does not match weights")
            if i and self.layers[i - 1].weights.shape[1] != layer.weights.shape[0]:
                raise ValueError(f"layer {i}: input size does not match previous layer")

    @property
    def n_inputs(self) -> int:
        return self.layers[0].weights.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.layers[-1].weights.shape[1]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.n_inputs] + [layer.weights.shape[1] for layer in self.layers]

    def copy(self) -> "ModelParams":
        return ModelParams([
            Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers
        ])

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order (W0, b0, W1, b1, ...)."""
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out

    def equals(self, other: "ModelParams") -> bool:
        """Bitwise equality of every parameter."""
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(
            x.shape == y.shape and x.tobytes() == y.tobytes() for x, y in zip(a, b)
        )


@dataclass(frozen=True)
class Prediction:
    logits: np.ndarray
    cond_probs: np.ndarray


@dataclass(frozen=True)
class Architecture:
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "relu"


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule.

    The learning rate for epoch ``e`` of a phase is ``lr * lr_decay**e``;
    each phase restarts the schedule and the Adam moments.
    """

    lr: float = 1e-4
    lr_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs_phase1: int = 5
    epochs_phase2: int = 5
    seed: int = 0
    lsr_resample: bool = False

    def __post_init__(self):
        if self.lr <= 0 or self.lr_decay <= 0 or self.batch_size < 1:
            raise ValueError("lr, lr_decay and batch_size must be positive")
        if self.epochs_phase1 < 0 or self.epochs_phase2 < 0:
            raise ValueError("epoch counts must be non-negative")

    def learning_rate(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** epoch


@dataclass
class TrainLog:
    """Per-epoch records plus a snapshot of the parameters after phase one."""

    entries: list[dict] = field(default_factory=list)
    phase1_params: ModelParams | None = None


def init_params(n_inputs: int, n_outputs: int, arch: Architecture,
                rng: np.random.Generator) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    sizes = [n_inputs, *arch.hidden, n_outputs]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        act = "identity" if i == len(sizes) - 2 else arch.activation
        layers.append(Layer(W, b, act))
    return ModelParams(layers)


def _sigmoid(z):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def _activate(a, activation):
    return np.maximum(a, 0.0) if activation == "relu" else a


def _forward_cache(m: ModelParams, X: np.ndarray):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != m.n_inputs:
        raise SchemaError(
            f"feature dimension {X.shape[-1]} does not match model input {m.n_inputs}"
        )
    inputs, pre = [], []
    h = X
    for layer in m.layers:
        inputs.append(h)
        a = h @ layer.weights + layer.bias
        pre.append(a)
        h = _activate(a, layer.activation)
    return h, inputs, pre


def forward(m: ModelParams, features) -> Prediction:
    """Logits and per-label sigmoid probabilities for one vector or a batch."""
    x = np.asarray(features, dtype=float)
    single = x.ndim == 1
    logits, _, _ = _forward_cache(m, np.atleast_2d(x))
    if not np.isfinite(logits).all():
        raise NumericError("non-finite logits")
    if single:
        logits = logits[0]
    return Prediction(logits=logits, cond_probs=_sigmoid(logits))


def loss_and_gradients(m: ModelParams, X, targets, mask=None):
    """Masked binary cross-entropy averaged over the batch, and its gradient.

    ``loss = -(1/B) sum_i sum_k mask_ik [t_ik log p_ik + (1-t_ik) log(1-p_ik)]``

    ``targets`` may be a :class:`MappedTargets`, in which case ``mask`` is
    taken from it (and multiplied by an explicit ``mask`` if one is given).
    Returns ``(loss, grads)`` with ``grads`` aligned to ``m.arrays()``.
    """
    if isinstance(targets, MappedTargets):
        mask = targets.mask if mask is None else targets.mask * mask
        targets = targets.targets
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T = np.atleast_2d(np.asarray(targets, dtype=float))
    M = np.ones_like(T) if mask is None else np.atleast_2d(np.asarray(mask, dtype=float))
    B = X.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    if T.shape != (B, m.n_outputs) or M.shape != T.shape:
        raise SchemaError("targets/mask shape does not match batch and model outputs")

    z, inputs, pre = _forward_cache(m, X)
    # log(sigmoid(z)) = -softplus(-z); log(1 - sigmoid(z)) = -softplus(z)
    terms = T * np.logaddexp(0.0, -z) + (1.0 - T) * np.logaddexp(0.0, z)
    loss = float(np.sum(M * terms) / B)
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")

    delta = M * (_sigmoid(z) - T) / B
    grads: list[np.ndarray] = []
    for i in range(len(m.layers) - 1, -1, -1):
        layer = m.layers[i]
        if layer.activation == "relu":
            delta = delta * (pre[i] > 0.0)
        grads.append(delta.sum(axis=0))
        grads.append(inputs[i].T @ delta)
        if i:
            delta = delta @ layer.weights.T
    grads.reverse()
    return loss, grads


class Adam:
    """Adam over a fixed list of parameter arrays, updated in place."""

    def __init__(self, arrays: Sequence[np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _check_dataset(ds: Dataset):
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    if ds.features is None:
        raise SchemaError("training requires feature vectors")


def _run_phase(params, X, raw, rows, scope_mask, policy, cfg, epochs, trainable,
               phase, log, targets):
    """Mini-batch Adam over ``rows`` for ``epochs`` epochs.

    ``trainable`` selects layer indices; other layers are never touched.
    """
    arrays = [a for i in trainable for a in (params.layers[i].weights, params.layers[i].bias)]
    opt = Adam(arrays, cfg.beta1, cfg.beta2, cfg.eps)
    shuffle_rng = derive_rng(cfg.seed, "shuffle", phase)
    n = len(rows)
    n_layers = len(params.layers)
    for epoch in range(epochs):
        if cfg.lsr_resample and policy.is_lsr and epoch > 0:
            resampled = map_labels(raw, policy, derive_rng(cfg.seed, "policy", phase, epoch))
            targets = resampled
        lr = cfg.learning_rate(epoch)
        order = rows[shuffle_rng.permutation(n)]
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            mask = targets.mask[idx] if scope_mask is None else targets.mask[idx] * scope_mask
            loss, grads = loss_and_gradients(params, X[idx], targets.targets[idx], mask)
            total += loss * len(idx)
            sel = [g for i in trainable for g in grads[2 * i:2 * i + 2]]
            opt.step(arrays, sel, lr)
        entry = {
            "phase": phase,
            "epoch": epoch,
            "lr": lr,
            "n_samples": int(n),
            "loss": total / n,
            "trainable_layers": list(trainable) if len(trainable) < n_layers else "all",
        }
        logger.info("phase %d epoch %d lr %.3g loss %.6f (%d samples)",
                    phase, epoch, lr, entry["loss"], n)
        if log is not None:
            log.entries.append(entry)
    return targets


def train_flat(ds: Dataset, policy: LabelPolicy, cfg: TrainConfig,
               arch: Architecture = Architecture(), log: TrainLog | None = None
               ) -> ModelParams:
    """Single-phase baseline over all samples and labels.

    Runs ``epochs_phase1 + epochs_phase2`` epochs under one schedule.
    """
    _check_dataset(ds)
    params = init_params(ds.features.shape[1], ds.labels.shape[1], arch,
                         derive_rng(cfg.seed, "init"))
    targets = map_labels(ds.labels, policy, derive_rng(cfg.seed, "policy"))
    epochs = cfg.epochs_phase1 + cfg.epochs_phase2
    _run_phase(params, ds.features, ds.labels, np.arange(len(ds)), None, policy, cfg,
               epochs, list(range(len(params.layers))), 0, log, targets)
    return params


def train_two_phase(ds: Dataset, h: LabelHierarchy, policy: LabelPolicy,
                    cfg: TrainConfig, arch: Architecture = Architecture(),
                    log: TrainLog | None = None) -> ModelParams:
    """Conditional training followed by output-layer fine-tuning.

    Phase one trains every layer on the rows whose mapped parent-label
    targets are all >= 0.5, with the loss restricted to labels that have
    no children. Phase two freezes all but the final layer and trains on
    every row and label.
    """
    _check_dataset(ds)
    ds.check_schema(h)
    params = init_params(ds.features.shape[1], len(h), arch, derive_rng(cfg.seed, "init"))
    targets = map_labels(ds.labels, policy, derive_rng(cfg.seed, "policy"))

    rows = conditional_indices(targets.targets, h)
    if len(rows) == 0:
        raise SchemaError(
            "conditional subset is empty: no sample has every parent label positive"
        )
    scope = np.ones(len(h))
    scope[h.parent_labels] = 0.0
    if log is not None:
        parent_t = targets.targets[np.ix_(rows, h.parent_labels)] if h.parent_labels else None
        log.entries.append({
            "phase": 1,
            "event": "conditional_subset",
            "n_samples": int(len(rows)),
            "rows": rows.tolist(),
            "n_negative_parent": 0 if parent_t is None else int(np.sum(np.any(parent_t < 0.5, axis=1))),
            "loss_scope": [h.labels[k] for k in range(len(h)) if scope[k]],
        })
    targets = _run_phase(params, ds.features, ds.labels, rows, scope, policy, cfg,
                         cfg.epochs_phase1, list(range(len(params.layers))), 1, log, targets)
    if log is not None:
        log.phase1_params = params.copy()

    last = len(params.layers) - 1
    _run_phase(params, ds.features, ds.labels, np.arange(len(ds)), None, policy, cfg,
               cfg.epochs_phase2, [last], 2, log, targets)
    return params


def save_checkpoint(params: ModelParams, path=None, *, hierarchy: LabelHierarchy | None = None,
                    policy: LabelPolicy | None = None, seed: int | None = None,
                    train_config: TrainConfig | None = None, conditional: bool | None = None
                    ) -> str:
    """Serialize to JSON text. Floats are written with ``repr`` so reading
    back reproduces every bit."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": {
            "layer_sizes": params.layer_sizes,
            "activations": [l.activation for l in params.layers],
        },
        "labels": list(hierarchy.labels) if hierarchy else None,
        "hierarchy": hierarchy.serialize() if hierarchy else None,
        "hierarchy_digest": hierarchy.digest() if hierarchy else None,
        "policy": policy.to_dict() if policy else None,
        "conditional": conditional,
        "seed": seed,
        "train_config": asdict(train_config) if train_config else None,
        "layers": [
            {"weights": l.weights.ravel().tolist(), "bias": l.bias.tolist()}
            for l in params.layers
        ],
    }
    text = json.dumps(doc, allow_nan=False) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def load_checkpoint(source) -> tuple[ModelParams, dict]:
    """Read a checkpoint from a path or JSON text. Returns params and the
    metadata document (without the weight arrays)."""
    if isinstance(source, (str, Path)) and not str(source).lstrip().startswith("{"):
        path = Path(source)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        source = path.read_text(encoding="utf-8")
    doc = json.loads(source)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise SchemaError("not a chexhier checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise SchemaError(f"unsupported checkpoint version {doc.get('version')!r}")
    sizes = doc["architecture"]["layer_sizes"]
    acts = doc["architecture"]["activations"]
    layers = []
    for i, entry in enumerate(doc.pop("layers")):
        W = np.array(entry["weights"], dtype=float).reshape(sizes[i], sizes[i + 1])
        b = np.array(entry["bias"], dtype=float)
        layers.append(Layer(W, b, acts[i]))
    return ModelParams(layers), doc
