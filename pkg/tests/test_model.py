import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from hypalign.errors import UsageError
from hypalign.geometry import lorentz_inner_np
from hypalign.model import HyperbolicAligner

from test_trainer import tiny_dataset


@pytest.fixture(scope="module")
def fitted():
    est = HyperbolicAligner(epochs=3, batch_size=4, d=4, heads=2, layers=1)
    return est.fit(tiny_dataset())


def test_get_params_round_trip():
    est = HyperbolicAligner(lr=1e-3, d=16, heads=4)
    params = est.get_params()
    assert params["lr"] == 1e-3 and params["d"] == 16
    cloned = clone(est)
    assert cloned.get_params() == params


def test_set_params():
    est = HyperbolicAligner().set_params(tau=0.05, lam=0.0)
    assert est.tau == 0.05 and est.lam == 0.0


def test_unfitted_raises():
    est = HyperbolicAligner()
    with pytest.raises(NotFittedError):
        est.transform(np.ones((2, 3, 6)))
    with pytest.raises(NotFittedError):
        est.evaluate(tiny_dataset())


def test_fit_rejects_non_dataset():
    with pytest.raises(UsageError):
        HyperbolicAligner().fit(np.ones((4, 3, 6)))


def test_fit_sets_state(fitted):
    assert fitted.curvature_ > 0
    assert len(fitted.metrics_) == fitted.epochs
    assert fitted.opt_.step > 0


def test_transform_outputs_hyperboloid_points(fitted):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(5, 3, 6))
    H = fitted.transform(X, modality="text")
    assert H.shape == (5, fitted.d + 1)
    c = fitted.curvature_
    for row in H:
        assert c * lorentz_inner_np(row, row) == pytest.approx(-1.0, abs=1e-8)
        assert row[-1] > 0


def test_transform_accepts_single_sequence(fitted):
    H = fitted.transform(np.zeros((3, 6)), modality="pointcloud")
    assert H.shape == (1, fitted.d + 1)


def test_transform_validates_input(fitted):
    with pytest.raises(UsageError, match="modality"):
        fitted.transform(np.ones((2, 3, 6)), modality="audio")
    with pytest.raises(UsageError, match="width"):
        fitted.transform(np.ones((2, 3, 9)))
    with pytest.raises(UsageError, match="finite"):
        fitted.transform(np.full((2, 3, 6), np.nan))


def test_evaluate_on_dataset(fitted):
    metrics = fitted.evaluate(tiny_dataset(), ks=(1, 2))
    assert set(metrics) == {"text_to_pc", "pc_to_text", "rsum", "containment"}
    assert 0.0 <= metrics["rsum"] <= 400.0


def test_fit_accepts_data_directory(tmp_path):
    from hypalign.config import SynthSpec
    from hypalign.data import synth_dataset
    synth_dataset(SynthSpec(n_classes=2, captions_per_class=2, L_t=2, L_p=2,
                            width=4), tmp_path)
    est = HyperbolicAligner(epochs=1, batch_size=4, d=4, heads=2, layers=1)
    est.fit(str(tmp_path))
    assert est.model_.d_in == 4
