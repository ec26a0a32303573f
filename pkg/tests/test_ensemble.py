import math

import numpy as np
import pytest
from scipy.special import ndtri

from logitconf.core import EstimatorConfig, GaussianField, ValidationError, field_confidence
from logitconf.ensemble import EnsembleField, ensemble_confidence, ensemble_predict, member_confidences

from conftest import random_gaussians


def random_field(seed, h=3, w=4, c=5):
    r = np.random.default_rng(seed)
    return GaussianField(r.normal(0, 2, (h, w, c)), np.exp(r.uniform(-1, 1, (h, w, c))))


def two_class_member(conf):
    # class 0 wins with lower-bound confidence ``conf`` (exact for two classes)
    return GaussianField([[[math.sqrt(2) * ndtri(conf), 0.0]]], [[[1.0, 1.0]]])


METHODS = ["lower-bound", "quadrature", "mc-integration", "joint-sampling", "softmax-avg"]


@pytest.mark.parametrize("method", METHODS)
def test_single_member_equals_field(backend, method):
    f = random_field(1)
    cfg = EstimatorConfig(method=method, sample_count=64, seed=3)
    a, b = ensemble_confidence(EnsembleField((f,)), cfg), field_confidence(f, cfg)
    np.testing.assert_array_equal(a.prediction, b.prediction)
    np.testing.assert_array_equal(a.confidence, b.confidence)
    np.testing.assert_array_equal(a.uncertainty, b.uncertainty)


@pytest.mark.parametrize("method", METHODS)
def test_identical_members_exact(backend, method):
    f = random_field(2)
    cfg = EstimatorConfig(method=method, sample_count=32, seed=5)
    single = field_confidence(f, cfg)
    out = ensemble_confidence(EnsembleField((f, f, f)), cfg)
    np.testing.assert_array_equal(out.prediction, single.prediction)
    np.testing.assert_array_equal(out.confidence, single.confidence)


def test_two_member_mean():
    e = EnsembleField((two_class_member(0.9), two_class_member(0.7)))
    out = ensemble_confidence(e, EstimatorConfig())
    assert out.prediction[0, 0] == 0
    assert abs(out.confidence[0, 0] - 0.8) <= 1e-12
    assert abs(out.uncertainty[0, 0] - 0.2) <= 1e-12


def test_hand_class_selection():
    # member argmaxes disagree; averaged means (1.0, 1.5) pick class 1
    a = GaussianField([[[3.0, 0.0]]], [[[1.0, 1.0]]])
    b = GaussianField([[[-1.0, 3.0]]], [[[1.0, 1.0]]])
    assert ensemble_predict(EnsembleField((a, b)))[0, 0] == 1


def test_disagreeing_member_scores_ensemble_class():
    a = GaussianField([[[3.0, 0.0]]], [[[1.0, 1.0]]])
    b = GaussianField([[[-1.0, 3.0]]], [[[1.0, 1.0]]])
    confs, _ = member_confidences(EnsembleField((a, b)), EstimatorConfig())
    assert confs[0, 0, 0] == pytest.approx(1 - float(0.5 * math.erfc(-3 / 2)), abs=1e-15)
    assert confs[1, 0, 0] == pytest.approx(float(0.5 * math.erfc(-4 / 2)), abs=1e-15)


def test_permutation_invariant():
    members = [random_field(s) for s in range(4)]
    cfg = EstimatorConfig(method="quadrature")
    a = ensemble_confidence(EnsembleField(tuple(members)), cfg)
    b = ensemble_confidence(EnsembleField(tuple(members[::-1])), cfg)
    np.testing.assert_array_equal(a.prediction, b.prediction)
    np.testing.assert_array_equal(a.confidence, b.confidence)


def test_duplicating_every_member_idempotent():
    members = (random_field(7), random_field(8), random_field(9))
    cfg = EstimatorConfig()
    a = ensemble_confidence(EnsembleField(members), cfg)
    b = ensemble_confidence(EnsembleField(members + members), cfg)
    np.testing.assert_array_equal(a.prediction, b.prediction)
    np.testing.assert_allclose(a.confidence, b.confidence, rtol=0, atol=1e-15)


def test_within_member_range():
    e = EnsembleField(tuple(random_field(s) for s in range(5)))
    confs, _ = member_confidences(e, EstimatorConfig())
    out = ensemble_confidence(e, EstimatorConfig())
    assert np.all(out.confidence >= confs.min(axis=0)) and np.all(out.confidence <= confs.max(axis=0))


def test_bound_survives_averaging(rng):
    for _ in range(20):
        gs = [random_gaussians(rng, 4, 4) for _ in range(3)]
        e = EnsembleField(tuple(GaussianField([[g.means]], [[g.stds]]) for g in gs))
        lb = ensemble_confidence(e, EstimatorConfig())
        exact, _ = member_confidences(e, EstimatorConfig(method="quadrature"))
        assert lb.confidence[0, 0] <= exact.mean() + 1e-7


def test_rejects_bad_members():
    with pytest.raises(ValidationError):
        EnsembleField(())
    with pytest.raises(ValidationError):
        EnsembleField((random_field(1, c=5), random_field(2, c=4)))
    with pytest.raises(ValidationError):
        EnsembleField((random_field(1, h=2), random_field(2, h=3)))
