"""Uncertainty-label policies.

Raw label matrices use ``1`` (positive), ``0`` (negative), ``-1``
(uncertain) and ``NaN`` (blank / not mentioned).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["LabelPolicy", "MappedTargets", "map_labels", "POLICY_KINDS"]

POLICY_KINDS = ("u-ignore", "u-zeros", "u-ones", "u-zeros-lsr", "u-ones-lsr")

_DEFAULT_INTERVALS = {"u-zeros-lsr": (0.0, 0.3), "u-ones-lsr": (0.55, 0.85)}

# Target written under a masked-out entry; never reaches the loss.
IGNORED_TARGET = 0.0


@dataclass(frozen=True)
class LabelPolicy:
    """How uncertain and blank labels become training targets.

    Parameters
    ----------
    kind : str
        One of ``u-ignore``, ``u-zeros``, ``u-ones``, ``u-zeros-lsr`` or
        ``u-ones-lsr``. Display names such as ``"U-Ones+LSR"`` are accepted.
    lsr_low, lsr_high : float, optional
        Interval for smoothed targets. Defaults to [0, 0.3] for
        ``u-zeros-lsr`` and [0.55, 0.85] for ``u-ones-lsr``.
    missing : {"negative", "ignore"}
        Blank labels become negatives (default) or are masked out.
    """

    kind: str = "u-ones-lsr"
    lsr_low: float | None = None
    lsr_high: float | None = None
    missing: str = "negative"

    def __post_init__(self):
        kind = _normalize_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.is_lsr:
            lo_default, hi_default = _DEFAULT_INTERVALS[kind]
            lo = lo_default if self.lsr_low is None else float(self.lsr_low)
            hi = hi_default if self.lsr_high is None else float(self.lsr_high)
            if not (0.0 <= lo <= hi <= 1.0):
                raise ValueError(
                    f"LSR interval must satisfy 0 <= low <= high <= 1, got [{lo}, {hi}]"
                )
            object.__setattr__(self, "lsr_low", lo)
            object.__setattr__(self, "lsr_high", hi)
        else:
            object.__setattr__(self, "lsr_low", None)
            object.__setattr__(self, "lsr_high", None)
        if self.missing not in ("negative", "ignore"):
            raise ValueError(f"missing must be 'negative' or 'ignore', got {self.missing!r}")

    @property
    def is_lsr(self) -> bool:
        return self.kind.endswith("-lsr")

    @property
    def display_name(self) -> str:
        base = {"u-ignore": "U-Ignore", "u-zeros": "U-Zeros", "u-ones": "U-Ones"}
        name = base[self.kind.removesuffix("-lsr")]
        return name + "+LSR" if self.is_lsr else name

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "lsr_low": self.lsr_low,
            "lsr_high": self.lsr_high,
            "missing": self.missing,
        }


def _normalize_kind(kind: str) -> str:
    key = kind.strip().lower().replace("+", "-").replace("_", "-")
    if key not in POLICY_KINDS:
        raise ValueError(f"unknown policy {kind!r}; expected one of {POLICY_KINDS}")
    return key


@dataclass(frozen=True)
class MappedTargets:
    """Soft targets in [0, 1] and 0/1 loss masks, both shaped like the input."""

    targets: np.ndarray
    mask: np.ndarray


def _check_raw(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    known = ~np.isnan(raw)
    bad = known & ~np.isin(raw, (1.0, 0.0, -1.0))
    if bad.any():
        value = raw[bad].flat[0]
        raise ValueError(f"invalid raw label value {value!r}; expected 1, 0, -1 or blank")
    return raw


def map_labels(raw, policy: LabelPolicy, rng: np.random.Generator) -> MappedTargets:
    """Apply ``policy`` to a raw label vector or matrix.

    Certain labels pass through with mask 1. Under the LSR kinds each
    uncertain entry receives its own uniform draw from
    ``[lsr_low, lsr_high]``, taken in row-major order.

    Examples
    --------
    >>> rng = np.random.default_rng(0)
    >>> m = map_labels([1, 0, -1], LabelPolicy("u-ones"), rng)
    >>> m.targets.tolist(), m.mask.tolist()
    ([1.0, 0.0, 1.0], [1.0, 1.0, 1.0])
    """
    raw = _check_raw(raw)
    targets = np.where(np.isnan(raw), 0.0, raw)
    mask = np.ones_like(targets)

    if policy.missing == "ignore":
        mask[np.isnan(raw)] = 0.0

    uncertain = raw == -1.0
    kind = policy.kind
    if kind == "u-ignore":
        targets[uncertain] = IGNORED_TARGET
        mask[uncertain] = 0.0
    elif kind == "u-zeros":
        targets[uncertain] = 0.0
    elif kind == "u-ones":
        targets[uncertain] = 1.0
    else:
        n = int(uncertain.sum())
        targets[uncertain] = rng.uniform(policy.lsr_low, policy.lsr_high, size=n)
    return MappedTargets(targets=targets, mask=mask)
