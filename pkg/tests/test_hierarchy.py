import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chexhier.exceptions import HierarchyError
from chexhier.hierarchy import (
    COMPETITION_LABELS,
    LabelHierarchy,
    load_hierarchy,
    read_hierarchy,
    root_path,
)
from oracles import random_forest


def test_default_shape(chexpert):
    assert len(chexpert) == 14
    assert len(chexpert.edges) == 6
    parents = {chexpert.labels[k] for k in chexpert.parent_labels}
    assert parents == {"Enlarged Cardiomediastinum", "Lung Opacity", "Consolidation"}
    assert set(COMPETITION_LABELS) <= set(chexpert.labels)


@pytest.mark.parametrize("label, path", [
    ("Pneumonia", ["Lung Opacity", "Consolidation", "Pneumonia"]),
    ("Fracture", ["Fracture"]),
    ("Cardiomegaly", ["Enlarged Cardiomediastinum", "Cardiomegaly"]),
])
def test_root_path_examples(chexpert, label, path):
    assert root_path(chexpert, label) == path


def test_root_path_unknown(chexpert):
    with pytest.raises(HierarchyError, match="Nope"):
        root_path(chexpert, "Nope")


def test_flat_config():
    h = load_hierarchy("a\nb\nc\n")
    assert h.roots == [0, 1, 2]
    assert all(len(p) == 1 for p in h.paths)
    assert h.parent_labels == []


def test_cycle_rejected():
    with pytest.raises(HierarchyError):
        load_hierarchy("A <- B\nB <- A\n")


def test_self_loop_rejected():
    with pytest.raises(HierarchyError):
        LabelHierarchy(("a",), (0,))


def test_multiple_parents_rejected():
    with pytest.raises(HierarchyError, match="multiple parents"):
        load_hierarchy("a\nb\nc <- a\nc <- b\n")


def test_duplicate_and_unknown_parent():
    with pytest.raises(HierarchyError, match="duplicate"):
        load_hierarchy("a\na\n")
    with pytest.raises(HierarchyError, match="unknown parent") as exc:
        load_hierarchy("a\nb <- zzz\n")
    assert exc.value.label == "b"


def test_comments_and_blank_lines():
    h = load_hierarchy("# header\n\na  # root\nb <- a\n")
    assert h.labels == ("a", "b")
    assert h.parent == (None, 0)


def test_read_hierarchy_file(tmp_path, chexpert):
    p = tmp_path / "h.hier"
    p.write_text(chexpert.serialize())
    assert read_hierarchy(p) == chexpert


def test_digest_depends_on_edges():
    a = load_hierarchy("x\ny <- x\n")
    b = load_hierarchy("x\ny\n")
    assert a.digest() != b.digest()
    assert a.digest() == load_hierarchy(a.serialize()).digest()


def _forest(seed, n):
    rng = np.random.default_rng(seed)
    return LabelHierarchy(tuple(f"l{k}" for k in range(n)), tuple(random_forest(rng, n)))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_paths_follow_parent_links(seed, n):
    h = _forest(seed, n)
    edges = set(h.edges)
    for k, path in enumerate(h.paths):
        assert h.parent[path[0]] is None
        assert path[-1] == k
        assert len(path) <= n and len(set(path)) == len(path)
        for a, b in zip(path, path[1:]):
            assert (a, b) in edges


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_serialize_round_trip(seed, n):
    h = _forest(seed, n)
    assert load_hierarchy(h.serialize()) == h


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_topological_order(seed, n):
    h = _forest(seed, n)
    pos = {k: i for i, k in enumerate(h.topological_order)}
    assert sorted(pos) == list(range(n))
    for p, c in h.edges:
        assert pos[p] < pos[c]
