import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chexhier.data import SyntheticConfig, generate_synthetic
from chexhier.evaluation import (
    AblationSpec,
    OperatingPoint,
    RocCurve,
    compare_operating_points,
    default_ablation_matrix,
    evaluate,
    mean_auc,
    parse_ablation_spec,
    read_operating_points,
    roc_auc,
    run_ablation,
)
from chexhier.exceptions import SchemaError
from chexhier.hierarchy import COMPETITION_LABELS
from chexhier.model import Architecture, TrainConfig
from oracles import pairwise_auc


def test_auc_examples():
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]).auc == 0.75
    assert pairwise_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert roc_auc([0.1, 0.2, 0.9, 0.95], [0, 0, 1, 1]).auc == 1.0
    assert roc_auc([0.3] * 6, [0, 1, 0, 1, 1, 0]).auc == 0.5


def test_auc_errors():
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        roc_auc([0.1, np.nan], [0, 1])
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [0, 2])


instances = st.integers(2, 60).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 6).map(lambda v: v / 6), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n),
)).filter(lambda t: 0 < sum(t[1]) < len(t[1]))


@settings(max_examples=300, deadline=None)
@given(instances)
def test_auc_matches_pairwise(inst):
    scores, labels = inst
    assert abs(roc_auc(scores, labels).auc - pairwise_auc(scores, labels)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(instances)
def test_monotone_invariance(inst):
    scores, labels = inst
    s = np.array(scores)
    assert roc_auc(s, labels).auc == roc_auc(np.exp(3 * s) - 7, labels).auc


@settings(max_examples=100, deadline=None)
@given(instances)
def test_curve_validity(inst):
    c = roc_auc(*inst)
    assert (c.fpr[0], c.tpr[0]) == (0.0, 0.0)
    assert (c.fpr[-1], c.tpr[-1]) == (1.0, 1.0)
    assert (np.diff(c.fpr) >= 0).all() and (np.diff(c.tpr) >= 0).all()


def test_mean_auc_examples():
    aucs = dict(zip(COMPETITION_LABELS, (0.909, 0.910, 0.957, 0.958, 0.964)))
    assert abs(mean_auc(aucs, COMPETITION_LABELS) - 0.9396) <= 5e-4
    assert round(mean_auc(aucs, COMPETITION_LABELS), 3) == 0.940
    assert mean_auc(aucs, ["Edema"]) == 0.958
    assert mean_auc({"a": 0.8, "b": 0.8}, ["a", "b"]) == 0.8
    with pytest.raises(ValueError):
        mean_auc(aucs, [])


def _diag():
    return RocCurve(np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.array([np.inf, 0.0]),
                    0.5, 1, 1)


def test_operating_points():
    assert compare_operating_points(_diag(), [OperatingPoint(0.5, 0.4)]) == 1
    curve = roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    vertex = curve.points[2]
    assert compare_operating_points(curve, [OperatingPoint(*vertex)]) == 0
    above = [OperatingPoint(0.0, 0.9), OperatingPoint(0.2, 1.0), OperatingPoint(0.6, 1.0)]
    assert compare_operating_points(curve, above) == 0


def test_vertical_segment_counts_as_curve():
    # vertical segment (0.5, 0.5) -> (0.5, 1): points on it are not below
    curve = roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    assert curve.tpr_range(0.5) == (0.5, 1.0)
    on = [OperatingPoint(0.5, 0.5), OperatingPoint(0.5, 0.75), OperatingPoint(0.5, 1.0)]
    assert compare_operating_points(curve, on) == 0
    assert compare_operating_points(curve, [OperatingPoint(0.5, 0.49)]) == 1
    assert compare_operating_points(curve, [OperatingPoint(0.25, 0.49)]) == 1


@settings(max_examples=100, deadline=None)
@given(instances, st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), max_size=10))
def test_densification_invariance(inst, pts):
    c = roc_auc(*inst)
    points = [OperatingPoint(f, t) for f, t in pts]
    mids_f = (c.fpr[:-1] + c.fpr[1:]) / 2
    mids_t = (c.tpr[:-1] + c.tpr[1:]) / 2
    fpr = np.empty(2 * len(c.fpr) - 1)
    tpr = np.empty_like(fpr)
    fpr[0::2], fpr[1::2] = c.fpr, mids_f
    tpr[0::2], tpr[1::2] = c.tpr, mids_t
    dense = RocCurve(fpr, tpr, np.zeros_like(fpr), c.auc, c.n_pos, c.n_neg)
    assert compare_operating_points(c, points) == compare_operating_points(dense, points)


def test_read_operating_points(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("label,FPR,TPR,reader\nEdema,0.1,0.7,R1\n")
    pts = read_operating_points(p)
    assert pts == [OperatingPoint(0.1, 0.7, "Edema", "R1")]
    p.write_text("label,FPR\nEdema,0.1\n")
    with pytest.raises(SchemaError):
        read_operating_points(p)


def test_evaluate_skips_nan_and_single_class():
    Y = np.array([[1, 0], [0, 0], [np.nan, 0], [1, 0]], dtype=float)
    S = np.array([[0.9, 0.1], [0.2, 0.2], [0.0, 0.3], [0.3, 0.4]])
    r = evaluate(Y, S, ["a", "b"], ["a"])
    assert r.auc["a"] == 1.0 and r.counts["a"] == (2, 1)
    assert np.isnan(r.auc["b"])
    assert r.mean == 1.0
    assert "n/a" in r.to_text()
    with pytest.raises(SchemaError):
        evaluate(Y, S, ["a", "b"], ["zzz"])


def test_ablation_matrix():
    rows = default_ablation_matrix()
    assert [r.name for r in rows] == [
        "U-Ignore", "U-Ignore+CT",
        "U-Zeros", "U-Zeros+CT", "U-Zeros+LSR", "U-Zeros+CT+LSR",
        "U-Ones", "U-Ones+CT", "U-Ones+LSR", "U-Ones+CT+LSR",
    ]
    assert parse_ablation_spec("U-Ones+CT+LSR") == AblationSpec("u-ones", True, True)
    for bad in ("U-Ignore+LSR", "U-Twos", "U-Ones+XX", "U-Ones+CT+CT"):
        with pytest.raises(ValueError):
            parse_ablation_spec(bad)


def test_run_ablation(chexpert):
    train, gt = generate_synthetic(SyntheticConfig(n=600, rho=0.2, seed=1))
    val = gt.sample(300, np.random.default_rng(9), rho=0.0)
    cfg = TrainConfig(lr=1e-2, epochs_phase1=1, epochs_phase2=1, batch_size=64)
    arch = Architecture((16,))
    one = run_ablation(train, val, chexpert, [AblationSpec("u-ones")], cfg, arch)
    assert len(one.rows) == 1 and one.columns == COMPETITION_LABELS
    matrix = default_ablation_matrix()
    a = run_ablation(train, val, chexpert, matrix, cfg, arch)
    b = run_ablation(train, val, chexpert, matrix, cfg, arch)
    assert len(a.rows) == len(matrix)
    assert a.to_csv() == b.to_csv()
    assert a.to_csv().splitlines()[0] == "Method," + ",".join(COMPETITION_LABELS) + ",Mean"
    assert a.rows[6] == one.rows[0]
    with pytest.raises(ValueError):
        run_ablation(train, val, chexpert, [], cfg, arch)
    with pytest.raises(ValueError):
        run_ablation(train, val, chexpert, ["U-Ones"], cfg, arch)
