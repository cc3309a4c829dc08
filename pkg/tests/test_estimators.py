import numpy as np
import pytest
from sklearn.base import clone

from ncl.estimators import NCLEncoder, ProbeClassifier, check_windows
from ncl.exceptions import DataError, ShapeError


def test_check_windows():
    X, s = check_windows(np.zeros((2, 5, 3)))
    assert s.shape == (2, 0)
    with pytest.raises(ShapeError):
        check_windows(np.zeros((5, 3)))
    with pytest.raises(ShapeError):
        check_windows(np.zeros((2, 5, 3)), n_channels=4)
    with pytest.raises(DataError):
        check_windows(np.full((1, 2, 2), np.nan))
    with pytest.raises(ShapeError):
        check_windows(np.zeros((2, 5, 3)), np.zeros((3, 1)))


def test_encoder_params_and_clone():
    enc = NCLEncoder(alpha=0.5, w=4, steps=3)
    assert enc.get_params()["alpha"] == 0.5
    c = clone(enc).set_params(w=8)
    assert c.w == 8 and enc.w == 4


def test_encoder_fit_transform(small_stays):
    enc = NCLEncoder(steps=3, batch_size=8, queue_size=64, filters=8, dilations=(1, 2), embed_dim=8,
                     train_options={"t_h": 12})
    enc.fit(small_stays)
    assert len(enc.history_) == 3
    Z = enc.transform(small_stays[:2])
    assert Z.shape == (small_stays[0].length + small_stays[1].length, 8)
    X = np.zeros((3, 12, enc.n_channels_))
    Zw = enc.transform(X, np.zeros((3, enc.n_static_)))
    np.testing.assert_allclose(np.linalg.norm(Zw, axis=1), 1.0)
    with pytest.raises(ShapeError):
        enc.transform(np.zeros((3, 12, enc.n_channels_ + 1)))


def test_probe_classifier_labels_and_proba():
    rng = np.random.default_rng(0)
    y = rng.choice(["neg", "pos"], size=200)
    X = rng.normal(size=(200, 3)) + (y == "pos")[:, None] * 3
    clf = ProbeClassifier(lr=1e-2, max_epochs=300).fit(X, y)
    assert list(clf.classes_) == ["neg", "pos"]
    assert clf.score(X, y) > 0.9
    np.testing.assert_allclose(clf.predict_proba(X).sum(axis=1), 1.0)
    with pytest.raises(ShapeError):
        clf.predict(X[:, :2])
