import math
from dataclasses import replace

import numpy as np
import pytest

from logitconf import toy
from logitconf.core import GaussianField

LOG_1E8 = math.log(1e-8)
SMALL = toy.ToySetup(n_train=300, n_test=200, train=toy.TrainConfig(epochs=3, samples=8))


def gaussian_params(seed, classes=3, dim=3, scale=1.0, bounds=(-10.0, 10.0)):
    r = np.random.default_rng(seed)
    return toy.GaussianHeadModel(scale * r.standard_normal((classes, dim)), scale * r.standard_normal(classes),
                                 0.5 * r.standard_normal((classes, dim)), 0.5 * r.standard_normal(classes),
                                 bounds)


def batch(seed, n=16, classes=3, dim=3, samples=7):
    r = np.random.default_rng(seed)
    return r.standard_normal((n, dim)), r.integers(0, classes, n), r.standard_normal((n, samples, classes))


def fd_gradients(model, x, y, noise, h=1e-5):
    out = {}
    for name, p in model.params().items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            hi, lo = p.copy(), p.copy()
            hi[idx] += h
            lo[idx] -= h
            f_hi = toy.logit_sampling_loss(model.with_params({name: hi}), x, y, noise)[0]
            f_lo = toy.logit_sampling_loss(model.with_params({name: lo}), x, y, noise)[0]
            g[idx] = (f_hi - f_lo) / (2 * h)
        out[name] = g
    return out


def max_rel_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for k in analytic:
        a, n = analytic[k], numeric[k]
        worst = max(worst, float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor))))
    return worst


class TestDataset:
    def test_deterministic_bytes(self):
        a = toy.generate_dataset(toy.DatasetSpec(), 500, 3)
        b = toy.generate_dataset(toy.DatasetSpec(), 500, 3)
        assert a.inputs.tobytes() == b.inputs.tobytes() and a.labels.tobytes() == b.labels.tobytes()

    def test_flip_rate_binomial(self):
        spec = toy.DatasetSpec()
        d = toy.generate_dataset(spec, 10**5, 11)
        n = int(d.in_overlap.sum())
        rate = d.flipped[d.in_overlap].mean()
        assert abs(rate - spec.p_flip) <= 3 * math.sqrt(spec.p_flip * (1 - spec.p_flip) / n)
        assert not d.flipped[~d.in_overlap].any()
        assert np.all(d.labels[d.flipped] != d.source[d.flipped])

    def test_no_flips_nearest_center(self):
        spec = toy.DatasetSpec(p_flip=0.0)
        d = toy.generate_dataset(spec, 2000, 1)
        np.testing.assert_array_equal(d.labels, d.source)
        centers = np.asarray(spec.centers)
        nearest = np.argmin(((d.inputs[:, :2, None] - centers.T[None]) ** 2).sum(axis=1), axis=1)
        assert (nearest == d.labels).mean() > 0.999

    def test_region_column(self):
        d = toy.generate_dataset(toy.DatasetSpec(), 300, 2)
        assert d.inputs.shape == (300, 3)
        np.testing.assert_array_equal(d.inputs[:, 2], d.in_overlap.astype(float))
        plain = toy.generate_dataset(toy.DatasetSpec(region_feature=False), 300, 2)
        assert plain.inputs.shape == (300, 2)
        np.testing.assert_array_equal(plain.inputs, d.inputs[:, :2])

    def test_labels_in_range(self):
        d = toy.generate_dataset(toy.DatasetSpec(), 1000, 4)
        assert d.labels.min() >= 0 and d.labels.max() < 3

    @pytest.mark.parametrize("kw", [dict(centers=((0.0, 0.0),), blob_stds=((1.0, 1.0),)),
                                    dict(blob_stds=((1.0, 1.0),)),
                                    dict(p_flip=1.5),
                                    dict(overlap_axis=2)])
    def test_bad_spec(self, kw):
        with pytest.raises(ValueError):
            toy.DatasetSpec(**kw)

    def test_empty(self):
        with pytest.raises(ValueError):
            toy.generate_dataset(toy.DatasetSpec(), 0, 0)


class TestLoss:
    @pytest.mark.parametrize("point", range(20))
    def test_gradients_match_central_differences(self, point):
        model = gaussian_params(100 + point)
        x, y, noise = batch(200 + point)
        _, grads = toy.logit_sampling_loss(model, x, y, noise)
        assert max_rel_error(grads, fd_gradients(model, x, y, noise)) < 1e-4

    def test_clamped_log_std_has_zero_gradient(self):
        model = gaussian_params(1, bounds=(-0.1, 0.1))
        x, y, noise = batch(2)
        _, grads = toy.logit_sampling_loss(model, x, y, noise)
        s = x @ model.w_s.T + model.b_s
        free = (s > -0.1) & (s < 0.1)
        assert not free.all()
        assert max_rel_error(grads, fd_gradients(model, x, y, noise)) < 1e-4

    def test_degenerate_sigma_is_cross_entropy(self):
        model = gaussian_params(3, bounds=(LOG_1E8, LOG_1E8))
        x, y, noise = batch(4, samples=30)
        _, sigma = model.heads(x)
        np.testing.assert_allclose(sigma, 1e-8, rtol=1e-14)
        loss, _ = toy.logit_sampling_loss(model, x, y, noise)
        ce, _ = toy.cross_entropy_loss(toy.PointEstimateModel(model.w_mu, model.b_mu), x, y)
        assert abs(loss - ce) <= 1e-6

    def test_single_zero_sample_exact(self):
        model = gaussian_params(5)
        x, y, _ = batch(6)
        loss, grads = toy.logit_sampling_loss(model, x, y, np.zeros((16, 1, 3)))
        ce, ce_grads = toy.cross_entropy_loss(toy.PointEstimateModel(model.w_mu, model.b_mu), x, y)
        assert loss == ce
        np.testing.assert_array_equal(grads["w_mu"], ce_grads["w"])
        np.testing.assert_array_equal(grads["b_mu"], ce_grads["b"])

    def test_cross_entropy_gradients(self):
        r = np.random.default_rng(7)
        model = toy.PointEstimateModel(r.standard_normal((3, 3)), r.standard_normal(3))
        x, y, _ = batch(8)
        _, grads = toy.cross_entropy_loss(model, x, y)
        h = 1e-6
        for name, p in model.params().items():
            for idx in np.ndindex(p.shape):
                hi, lo = p.copy(), p.copy()
                hi[idx] += h
                lo[idx] -= h
                num = (toy.cross_entropy_loss(model.with_params({name: hi}), x, y)[0]
                       - toy.cross_entropy_loss(model.with_params({name: lo}), x, y)[0]) / (2 * h)
                assert grads[name][idx] == pytest.approx(num, rel=1e-5, abs=1e-8)

    def test_nonnegative(self):
        for s in range(10):
            model = gaussian_params(s, scale=3.0)
            x, y, noise = batch(s + 50)
            assert toy.logit_sampling_loss(model, x, y, noise)[0] >= 0.0

    def test_non_finite_reports_index(self):
        mu = np.zeros((3, 2))
        mu[1, 0] = np.inf
        with np.errstate(invalid="ignore"), pytest.raises(toy.NonFiniteLossError) as exc:
            toy.sampled_softmax_loss(mu, np.ones((3, 2)), np.array([1, 1, 1]), np.zeros((3, 4, 2)))
        assert exc.value.index == 1


class TestTraining:
    def splits(self):
        return toy.make_splits(SMALL, 0)

    def test_zero_lr_keeps_parameters(self):
        train_set, _ = self.splits()
        cfg = replace(SMALL.train, lr=0.0)
        init = toy.GaussianHeadModel.init(3, 3, cfg.seed, cfg.init_scale)
        trained, _ = toy.train(init, train_set, cfg)
        for k in init.PARAMS:
            np.testing.assert_array_equal(getattr(init, k), getattr(trained, k))

    def test_same_seed_identical(self):
        train_set, _ = self.splits()
        a, ca = toy.fit_gaussian_head(train_set, SMALL.train)
        b, cb = toy.fit_gaussian_head(train_set, SMALL.train)
        assert ca == cb
        for k in a.PARAMS:
            assert getattr(a, k).tobytes() == getattr(b, k).tobytes()

    def test_separable_loss_decreases(self):
        spec = toy.DatasetSpec(p_flip=0.0)
        train_set = toy.generate_dataset(spec, 400, 5)
        cfg = toy.TrainConfig(lr=0.05, epochs=8, samples=8, lr_schedule="constant")
        for fit in (toy.fit_gaussian_head, toy.fit_point_estimate):
            _, curve = fit(train_set, cfg)
            assert curve[-1] < curve[0]

    def test_divergence_raises(self):
        train_set, _ = self.splits()
        # weights overflow to inf after one step, so the next logits are NaN
        huge = replace(train_set, inputs=train_set.inputs * 1e200)
        with np.errstate(all="ignore"), pytest.raises(toy.NonFiniteLossError):
            toy.fit_point_estimate(huge, replace(SMALL.train, lr=1e200))

    def test_unknown_schedule(self):
        train_set, _ = self.splits()
        with pytest.raises(ValueError):
            toy.fit_point_estimate(train_set, replace(SMALL.train, lr_schedule="cosine"))

    def test_noise_independent_of_batching(self):
        a = toy.training_noise(3, np.array([5, 9, 2]), 4, 6, 3)
        b = toy.training_noise(3, np.array([2]), 4, 6, 3)
        np.testing.assert_array_equal(a[2], b[0])
        assert not np.array_equal(a[0], toy.training_noise(3, np.array([5]), 5, 6, 3)[0])


class TestPrediction:
    def test_field_shape_and_clamp(self):
        model = gaussian_params(9, scale=50.0)
        x = np.random.default_rng(1).standard_normal((40, 3)) * 10
        f = toy.predict_field(model, x)
        assert isinstance(f, GaussianField) and f.shape == (1, 40)
        assert np.all(f.stds >= math.exp(-10)) and np.all(f.stds <= math.exp(10))

    def test_single_input(self):
        f = toy.predict_field(gaussian_params(2), np.array([0.1, -0.2, 1.0]))
        assert f.shape == (1, 1)

    def test_batch_matches_loop(self):
        model = gaussian_params(4)
        x = np.random.default_rng(2).standard_normal((10, 3))
        f = toy.predict_field(model, x)
        for i in range(10):
            g = toy.predict_field(model, x[i])
            np.testing.assert_array_equal(g.means[0, 0], f.means[0, i])
            np.testing.assert_array_equal(g.stds[0, 0], f.stds[0, i])


class TestEnsembleAndSerialization:
    def test_single_seed_reduces(self):
        train_set, test_set = toy.make_splits(SMALL, 1)
        models, ens = toy.train_ensemble(train_set, test_set.inputs, SMALL.train, [4])
        single, _ = toy.fit_gaussian_head(train_set, replace(SMALL.train, seed=4))
        np.testing.assert_array_equal(ens.members[0].means, toy.predict_field(single, test_set.inputs).means)

    def test_members_differ_and_repeat(self):
        train_set, test_set = toy.make_splits(SMALL, 1)
        _, a = toy.train_ensemble(train_set, test_set.inputs, SMALL.train, [0, 1])
        _, b = toy.train_ensemble(train_set, test_set.inputs, SMALL.train, [0, 1])
        assert not np.array_equal(a.members[0].means, a.members[1].means)
        for x, y in zip(a.members, b.members):
            np.testing.assert_array_equal(x.means, y.means)

    def test_empty_seed_list(self):
        train_set, test_set = toy.make_splits(SMALL, 1)
        with pytest.raises(ValueError):
            toy.train_ensemble(train_set, test_set.inputs, SMALL.train, [])

    def test_model_dict_round_trip(self):
        for m in (gaussian_params(3), toy.PointEstimateModel.init(3, 3, 0)):
            back = toy.model_from_dict(m.to_dict())
            for k in m.PARAMS:
                np.testing.assert_array_equal(getattr(m, k), getattr(back, k))

    def test_setup_round_trip(self):
        assert toy.ToySetup.from_dict(SMALL.to_dict()) == SMALL
