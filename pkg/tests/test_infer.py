import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chexhier.exceptions import SchemaError
from chexhier.hierarchy import LabelHierarchy, load_hierarchy
from chexhier.infer import (
    TtaConfig,
    ensemble_predict,
    predict_tta,
    read_predictions,
    to_unconditional,
    write_predictions,
)
from chexhier.model import Architecture, Layer, ModelParams, forward, init_params
from chexhier.preprocess import warp_affine
from chexhier.infer import sample_transform
from oracles import random_forest, unconditional_by_recursion


def test_fig3_tree(tree_abcd):
    out = to_unconditional([0.9, 0.8, 0.5, 0.7], tree_abcd)
    assert np.max(np.abs(out - [0.9, 0.72, 0.36, 0.504])) <= 1e-12


def test_flat_identity():
    h = LabelHierarchy.flat(["a", "b", "c"])
    p = np.random.default_rng(0).random((5, 3))
    assert np.array_equal(to_unconditional(p, h), p)


def test_chain():
    h = load_hierarchy("a\nb <- a\nc <- b\n")
    out = to_unconditional([0.9, 0.9, 0.9], h)
    np.testing.assert_allclose(out, [0.9, 0.81, 0.729], rtol=0, atol=1e-15)
    assert out[0] >= out[1] >= out[2]


def test_wrong_width(tree_abcd):
    with pytest.raises(SchemaError):
        to_unconditional([0.5, 0.5], tree_abcd)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 15))
def test_matches_recursion(seed, n):
    rng = np.random.default_rng(seed)
    parent = random_forest(rng, n)
    h = LabelHierarchy(tuple(map(str, range(n))), tuple(parent))
    cond = rng.random(n)
    out = to_unconditional(cond, h)
    ref = unconditional_by_recursion(cond.tolist(), parent)
    np.testing.assert_allclose(out, ref, rtol=1e-14, atol=0)
    for p, c in h.edges:
        assert out[c] <= out[p]


def _image_model(side, L=3, seed=0):
    return init_params(side * side, L, Architecture((8,)), np.random.default_rng(seed))


def test_tta_identity_single():
    img = np.random.default_rng(1).standard_normal((6, 6))
    m = _image_model(6)
    tta = TtaConfig(count=1, flip_prob=0.0, rotation=0, scale=0, shear=0)
    out = predict_tta(m, img, tta)
    assert np.array_equal(out.cond_probs, forward(m, img.ravel()).cond_probs)


def test_tta_symmetric_flip():
    half = np.random.default_rng(2).standard_normal((6, 3))
    img = np.hstack([half, half[:, ::-1]])
    m = _image_model(6)
    tta = TtaConfig(count=7, flip_prob=0.5, rotation=0, scale=0, shear=0)
    np.testing.assert_allclose(predict_tta(m, img, tta).cond_probs,
                               forward(m, img.ravel()).cond_probs, rtol=1e-14)


def test_tta_is_mean_of_transforms():
    img = np.random.default_rng(3).standard_normal((8, 8))
    m = _image_model(8)
    tta = TtaConfig(count=10, seed=5)
    got = predict_tta(m, img, tta, np.random.default_rng(42)).cond_probs
    rng = np.random.default_rng(42)
    outs = [forward(m, warp_affine(img, sample_transform(rng, tta)).ravel()).cond_probs
            for _ in range(10)]
    np.testing.assert_allclose(got, np.mean(outs, axis=0), rtol=1e-14)
    assert (got >= np.min(outs, axis=0) - 1e-15).all()
    assert (got <= np.max(outs, axis=0) + 1e-15).all()
    again = predict_tta(m, img, tta, np.random.default_rng(42)).cond_probs
    assert got.tobytes() == again.tobytes()


def test_tta_rejects_features():
    with pytest.raises(SchemaError):
        predict_tta(_image_model(2), np.zeros(4), TtaConfig())


def _const_model(logit):
    return ModelParams([Layer(np.zeros((1, 1)), np.array([logit]), "identity")])


def test_ensemble_examples():
    h = LabelHierarchy.flat(["r"])
    logit = lambda p: np.log(p / (1 - p))
    single = ensemble_predict([_const_model(logit(0.2))], [[0.0]], h)
    np.testing.assert_allclose(single.probs, [[0.2]], rtol=1e-14)
    pair = ensemble_predict([_const_model(logit(0.2)), _const_model(logit(0.4))], [[0.0]], h)
    np.testing.assert_allclose(pair.probs, [[0.3]], rtol=1e-14)
    with pytest.raises(ValueError):
        ensemble_predict([], [[0.0]], h)


def test_ensemble_conditional_averaging(tree_abcd):
    rng = np.random.default_rng(0)
    models = [init_params(5, 4, Architecture((6,)), rng) for _ in range(3)]
    X = rng.standard_normal((7, 5))
    cond = np.mean([forward(m, X).cond_probs for m in models], axis=0)
    out = ensemble_predict(models, X, tree_abcd)
    np.testing.assert_allclose(out.probs, to_unconditional(cond, tree_abcd), rtol=1e-14)
    assert out.model_ids == ("model0", "model1", "model2")
    alt = ensemble_predict(models, X, tree_abcd, average="unconditional")
    uncond = np.mean([to_unconditional(forward(m, X).cond_probs, tree_abcd) for m in models], 0)
    np.testing.assert_allclose(alt.probs, uncond, rtol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_ensemble_permutation(seed, tree_abcd):
    rng = np.random.default_rng(seed)
    models = [init_params(4, 4, Architecture((5,)), rng) for _ in range(4)]
    X = rng.standard_normal((10, 4))
    a = ensemble_predict(models, X, tree_abcd).probs
    b = ensemble_predict(models[::-1], X, tree_abcd).probs
    assert np.max(np.abs(a - b)) <= 1e-15


def test_ensemble_with_tta(tree_abcd):
    rng = np.random.default_rng(1)
    imgs = rng.standard_normal((2, 5, 5))
    models = [_image_model(5, 4, s) for s in range(2)]
    out = ensemble_predict(models, imgs, tree_abcd, tta=TtaConfig(count=3))
    assert out.probs.shape == (2, 4) and out.tta_count == 3
    one = ensemble_predict(models, imgs[0], tree_abcd, tta=TtaConfig(count=3))
    np.testing.assert_allclose(one.probs, out.probs[0], rtol=1e-14)


def test_members_must_agree(tree_abcd):
    rng = np.random.default_rng(0)
    with pytest.raises(SchemaError):
        ensemble_predict([init_params(2, 4, Architecture(()), rng),
                          init_params(2, 3, Architecture(()), rng)], np.zeros(2), tree_abcd)


def test_prediction_csv(tmp_path):
    probs = np.array([[0.1234567, 1.0], [0.0, 0.5]])
    text = write_predictions(tmp_path / "p.csv", ["x", "y"], probs, ["a", "b"])
    assert text.splitlines() == ["Id,a,b", "x,0.123457,1.000000", "y,0.000000,0.500000"]
    ids, back = read_predictions(tmp_path / "p.csv", ["b", "a"])
    assert ids == ["x", "y"] and back.tolist() == [[1.0, 0.123457], [0.5, 0.0]]
    with pytest.raises(SchemaError):
        read_predictions(tmp_path / "p.csv", ["c"])
