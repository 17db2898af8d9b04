import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from bpc.data import gen_blobs
from bpc.estimators import NetClassifier, PseudoCoresetDistiller


@pytest.fixture(scope="module")
def xy():
    d = gen_blobs(40, 3, seed=0)
    # string labels check that classes round trip through the encoding
    return d.inputs, np.array(["a", "b", "c"])[d.labels]


def test_classifier_params_and_clone():
    clf = NetClassifier(kind="mlp-deep", epochs=7, random_state=3)
    twin = clone(clf)
    assert twin.get_params() == clf.get_params() and twin is not clf
    assert clf.set_params(lr=0.5).lr == 0.5


def test_classifier_fit_predict(xy):
    X, y = xy
    clf = NetClassifier(epochs=30, lr=0.05, batch_size=32).fit(X, y)
    assert clf.score(X, y) >= 0.95
    proba = clf.predict_proba(X)
    assert proba.shape == (len(X), 3)
    np.testing.assert_allclose(proba.sum(axis=1), 1, atol=1e-12)
    assert set(clf.predict(X)) <= {"a", "b", "c"} and clf.n_features_in_ == 2


def test_classifier_reshapes_flat_images():
    d = gen_blobs(15, 3, dim=16, seed=1)
    clf = NetClassifier(kind="convnet-small", input_shape=(1, 4, 4), epochs=2).fit(d.inputs, d.labels)
    assert clf.spec_.input_shape == (1, 4, 4) and clf.predict(d.inputs).shape == (45,)


def test_unfitted_estimators_raise(xy):
    with pytest.raises(NotFittedError):
        NetClassifier().predict(xy[0])
    with pytest.raises(NotFittedError):
        PseudoCoresetDistiller().get_coreset()


def test_distiller_params_and_clone():
    est = PseudoCoresetDistiller(ipc=2, n_iter=9, anchors_per_step=1)
    assert clone(est).get_params() == est.get_params()
    assert est.get_params()["anchors_per_step"] == 1


def test_distiller_fit_resample(xy):
    X, y = xy
    est = PseudoCoresetDistiller(ipc=2, n_trajectories=2, trajectory_epochs=4, n_iter=3,
                                 langevin_steps=3, anchors_per_step=1)
    Xc, yc = est.fit_resample(X, y)
    assert Xc.shape == (6, 2) and sorted(yc.tolist()) == ["a", "a", "b", "b", "c", "c"]
    assert len(est.history_) == 3 and np.isfinite(Xc).all()
    Xg, yg = est.get_coreset()
    assert (Xg == Xc).all() and (yg == yc).all()
    # the distilled set trains the paired classifier
    assert NetClassifier(epochs=50, lr=0.05).fit(Xc, yc).score(X, y) > 1 / 3
