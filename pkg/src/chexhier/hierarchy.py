"""Label forest used for conditional training and unconditional inference.

A hierarchy file lists one label per line, optionally followed by
``<- parent``. Blank lines and ``#`` comments are ignored. Line order
fixes the column index of each label everywhere else in the toolkit.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .exceptions import HierarchyError

__all__ = [
    "LabelHierarchy",
    "load_hierarchy",
    "read_hierarchy",
    "default_hierarchy",
    "root_path",
    "COMPETITION_LABELS",
]

# Labels scored by the CheXpert competition protocol.
COMPETITION_LABELS = (
    "Atelectasis",
    "Cardiomegaly",
    "Consolidation",
    "Edema",
    "Pleural Effusion",
)


@dataclass(frozen=True)
class LabelHierarchy:
    """Immutable forest over an ordered list of labels.

    Parameters
    ----------
    labels : sequence of str
        Label names in canonical column order.
    parent : sequence of int or None
        ``parent[k]`` is the index of label ``k``'s parent, or ``None`` for
        a root.
    """

    labels: tuple[str, ...]
    parent: tuple[int | None, ...]
    children: tuple[tuple[int, ...], ...] = field(init=False, repr=False)
    paths: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        labels = tuple(self.labels)
        parent = tuple(None if p is None else int(p) for p in self.parent)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "parent", parent)
        if len(labels) != len(parent):
            raise HierarchyError("labels and parent must have the same length")
        seen = set()
        for name in labels:
            if name in seen:
                raise HierarchyError(f"duplicate label {name!r}", label=name)
            seen.add(name)
        L = len(labels)
        for k, p in enumerate(parent):
            if p is not None and not 0 <= p < L:
                raise HierarchyError(
                    f"label {labels[k]!r} has out-of-range parent index {p}",
                    label=labels[k],
                )

        paths = []
        for k in range(L):
            path = [k]
            node = parent[k]
            while node is not None:
                if node in path:
                    raise HierarchyError(
                        f"cycle through label {labels[k]!r}", label=labels[k]
                    )
                path.append(node)
                node = parent[node]
            paths.append(tuple(reversed(path)))

        children = [[] for _ in range(L)]
        for k, p in enumerate(parent):
            if p is not None:
                children[p].append(k)
        object.__setattr__(self, "children", tuple(tuple(c) for c in children))
        object.__setattr__(self, "paths", tuple(paths))

    def __len__(self):
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise HierarchyError(f"unknown label {label!r}", label=label) from None

    def indices(self, labels: Iterable[str]) -> list[int]:
        return [self.index(name) for name in labels]

    @property
    def edges(self) -> list[tuple[int, int]]:
        """(parent, child) index pairs in label order."""
        return [(p, k) for k, p in enumerate(self.parent) if p is not None]

    @property
    def roots(self) -> list[int]:
        return [k for k, p in enumerate(self.parent) if p is None]

    @property
    def parent_labels(self) -> list[int]:
        """Indices of labels with at least one child."""
        return [k for k, c in enumerate(self.children) if c]

    @property
    def topological_order(self) -> list[int]:
        """Label indices ordered so that every parent precedes its children."""
        return sorted(range(len(self)), key=lambda k: (len(self.paths[k]), k))

    def serialize(self) -> str:
        lines = []
        for name, p in zip(self.labels, self.parent):
            lines.append(name if p is None else f"{name} <- {self.labels[p]}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()

    @classmethod
    def flat(cls, labels: Sequence[str]) -> "LabelHierarchy":
        return cls(tuple(labels), (None,) * len(labels))


def load_hierarchy(text: str) -> LabelHierarchy:
    """Parse and validate a hierarchy document."""
    names: list[str] = []
    parents: dict[str, str | None] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "<-" in line:
            child, _, par = line.partition("<-")
            child, par = child.strip(), par.strip()
            if not child or not par or "<-" in par:
                raise HierarchyError(f"line {lineno}: malformed edge {raw.strip()!r}")
        else:
            child, par = line, None
        if child in parents:
            prev = parents[child]
            if prev is not None and par is not None and prev != par:
                raise HierarchyError(
                    f"label {child!r} has multiple parents ({prev!r}, {par!r})",
                    label=child,
                )
            raise HierarchyError(f"duplicate label {child!r}", label=child)
        parents[child] = par
        names.append(child)

    if not names:
        raise HierarchyError("hierarchy lists no labels")
    index = {name: k for k, name in enumerate(names)}
    parent_idx = []
    for name in names:
        par = parents[name]
        if par is None:
            parent_idx.append(None)
        elif par not in index:
            raise HierarchyError(
                f"label {name!r} references unknown parent {par!r}", label=name
            )
        else:
            parent_idx.append(index[par])
    return LabelHierarchy(tuple(names), tuple(parent_idx))


def read_hierarchy(path) -> LabelHierarchy:
    return load_hierarchy(Path(path).read_text(encoding="utf-8"))


def default_hierarchy() -> LabelHierarchy:
    """The shipped 14-label CheXpert hierarchy."""
    text = resources.files("chexhier.resources").joinpath("chexpert.hier").read_text(
        encoding="utf-8"
    )
    return load_hierarchy(text)


def root_path(h: LabelHierarchy, label: str) -> list[str]:
    """Labels from the root down to ``label`` (inclusive)."""
    return [h.labels[k] for k in h.paths[h.index(label)]]
