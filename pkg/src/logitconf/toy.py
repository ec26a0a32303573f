"""Desk-scale Gaussian-logit classifier on synthetic heteroscedastic data.

A linear model predicts per-class logit means and log-stds and is trained
with the logit-sampling loss ``-log mean_t softmax(mu + sigma * eps_t)[y]``
using hand-derived gradients. A plain linear softmax model trained with
cross-entropy serves as the uncalibrated point-estimate baseline.
"""

from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from . import _rng
from .core import GaussianField
from .ensemble import EnsembleField


class NonFiniteLossError(FloatingPointError):
    def __init__(self, index, message="non-finite loss"):
        super().__init__(f"{message} at sample {index}")
        self.index = index


@dataclass(frozen=True)
class DatasetSpec:
    """Gaussian blobs with label flips inside the half-plane ``x[overlap_axis] > overlap_threshold``.

    With ``region_feature`` the inputs gain a trailing 0/1 column marking the
    flip region, which lets a linear log-std head switch its noise level there.
    """

    centers: tuple = ((-3.0, 0.0), (0.0, 0.0), (3.0, 0.0))
    blob_stds: tuple = ((0.05, 1.0), (0.05, 1.0), (0.05, 1.0))
    p_flip: float = 0.3
    overlap_axis: int = 1
    overlap_threshold: float = 0.0
    region_feature: bool = True

    def __post_init__(self):
        if len(self.centers) < 2:
            raise ValueError("need at least two classes")
        if len(self.blob_stds) != len(self.centers):
            raise ValueError("one blob std per class required")
        if not 0.0 <= self.p_flip <= 1.0:
            raise ValueError("p_flip must lie in [0, 1]")
        if not 0 <= self.overlap_axis < len(self.centers[0]):
            raise ValueError("overlap_axis outside the input dimensions")

    @property
    def classes(self):
        return len(self.centers)

    @property
    def dim(self):
        """Model input width, including the region column when enabled."""
        return len(self.centers[0]) + int(self.region_feature)


@dataclass(frozen=True)
class SyntheticDataset:
    inputs: np.ndarray
    labels: np.ndarray
    source: np.ndarray  # blob each point was drawn from
    in_overlap: np.ndarray
    flipped: np.ndarray
    spec: DatasetSpec

    def __len__(self):
        return self.labels.shape[0]


def generate_dataset(spec, n, seed):
    if n < 1:
        raise ValueError("dataset needs at least one sample")
    rng = np.random.default_rng(seed)
    c = spec.classes
    centers = np.asarray(spec.centers, dtype=np.float64)
    stds = np.broadcast_to(np.asarray(spec.blob_stds, dtype=np.float64).reshape(c, -1), centers.shape)
    source = rng.integers(0, c, n)
    x = centers[source] + stds[source] * rng.standard_normal(centers[source].shape)
    in_overlap = x[:, spec.overlap_axis] > spec.overlap_threshold
    flipped = in_overlap & (rng.random(n) < spec.p_flip)
    # a flip moves the label to one of the other classes uniformly
    shift = rng.integers(1, c, n)
    labels = np.where(flipped, (source + shift) % c, source)
    if spec.region_feature:
        x = np.column_stack([x, in_overlap.astype(np.float64)])
    return SyntheticDataset(x, labels.astype(np.int64), source, in_overlap, flipped, spec)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.5
    lr_schedule: str = "linear"  # "linear" decays to zero over the run; "constant" keeps lr
    epochs: int = 200
    batch_size: int = 128
    samples: int = 30  # logit samples per input in the loss
    seed: int = 0
    log_std_bounds: tuple = (-10.0, 10.0)
    init_scale: float = 0.1


@dataclass
class GaussianHeadModel:
    w_mu: np.ndarray
    b_mu: np.ndarray
    w_s: np.ndarray
    b_s: np.ndarray
    log_std_bounds: tuple = (-10.0, 10.0)

    PARAMS = ("w_mu", "b_mu", "w_s", "b_s")

    @classmethod
    def init(cls, classes, dim, seed, scale=0.1, log_std_bounds=(-10.0, 10.0)):
        rng = np.random.default_rng(seed)
        return cls(scale * rng.standard_normal((classes, dim)), np.zeros(classes),
                   scale * rng.standard_normal((classes, dim)), np.zeros(classes),
                   tuple(log_std_bounds))

    def log_std(self, x):
        lo, hi = self.log_std_bounds
        return np.clip(_affine(x, self.w_s, self.b_s), lo, hi)

    def heads(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return _affine(x, self.w_mu, self.b_mu), np.exp(self.log_std(x))

    def params(self):
        return {k: getattr(self, k) for k in self.PARAMS}

    def with_params(self, params):
        return replace(self, **{k: np.array(v, dtype=np.float64) for k, v in params.items()})

    def to_dict(self):
        d = {k: v.tolist() for k, v in self.params().items()}
        d["log_std_bounds"] = list(self.log_std_bounds)
        d["kind"] = "gaussian-head"
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.array(d[k], dtype=np.float64) for k in cls.PARAMS),
                   tuple(d["log_std_bounds"]))


@dataclass
class PointEstimateModel:
    w: np.ndarray
    b: np.ndarray

    PARAMS = ("w", "b")

    @classmethod
    def init(cls, classes, dim, seed, scale=0.1):
        rng = np.random.default_rng(seed)
        return cls(scale * rng.standard_normal((classes, dim)), np.zeros(classes))

    def logits(self, x):
        return _affine(np.atleast_2d(np.asarray(x, dtype=np.float64)), self.w, self.b)

    def probs(self, x):
        z = self.logits(x)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def params(self):
        return {k: getattr(self, k) for k in self.PARAMS}

    def with_params(self, params):
        return replace(self, **{k: np.array(v, dtype=np.float64) for k, v in params.items()})

    def to_dict(self):
        d = {k: v.tolist() for k, v in self.params().items()}
        d["kind"] = "point-estimate"
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["w"], dtype=np.float64), np.array(d["b"], dtype=np.float64))


def model_from_dict(d):
    return {"gaussian-head": GaussianHeadModel, "point-estimate": PointEstimateModel}[d["kind"]].from_dict(d)


def _affine(x, w, b):
    # row-wise products keep each output independent of the batch it sits in
    return (x[:, None, :] * w[None]).sum(axis=2) + b


def _check_finite(per_sample):
    bad = np.flatnonzero(~np.isfinite(per_sample))
    if bad.size:
        raise NonFiniteLossError(int(bad[0]))


def sampled_softmax_loss(mu, sigma, labels, noise):
    """Mean logit-sampling loss and its gradients w.r.t. ``mu`` and ``sigma``.

    ``noise`` has shape ``(B, T, C)`` and is held fixed, so the loss is a
    deterministic function of ``mu`` and ``sigma``.
    """
    b, t, _ = noise.shape
    z = mu[:, None, :] + sigma[:, None, :] * noise
    logp = z - logsumexp(z, axis=2, keepdims=True)
    rows = np.arange(b)
    logp_y = logp[rows, :, labels]  # (B, T)
    per_sample = -(logsumexp(logp_y, axis=1) - np.log(t))
    _check_finite(per_sample)
    # weight of sample t in d/dz of -log mean_t p_t[y]
    wt = np.exp(logp_y - logsumexp(logp_y, axis=1, keepdims=True))
    dz = wt[:, :, None] * np.exp(logp)
    dz[rows, :, labels] -= wt
    dz /= b
    return per_sample.mean(), dz.sum(axis=1), (dz * noise).sum(axis=1)


def logit_sampling_loss(model, x, labels, noise):
    """Loss and gradients for all four parameter blocks of a GaussianHeadModel."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    mu, sigma = model.heads(x)
    loss, dmu, dsigma = sampled_softmax_loss(mu, sigma, labels, noise)
    lo, hi = model.log_std_bounds
    s = _affine(x, model.w_s, model.b_s)
    ds = dsigma * sigma * ((s > lo) & (s < hi))
    return loss, {"w_mu": dmu.T @ x, "b_mu": dmu.sum(axis=0), "w_s": ds.T @ x, "b_s": ds.sum(axis=0)}


def cross_entropy_loss(model, x, labels):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    z = model.logits(x)
    logp = z - logsumexp(z, axis=1, keepdims=True)
    rows = np.arange(x.shape[0])
    per_sample = -logp[rows, labels]
    _check_finite(per_sample)
    dz = np.exp(logp)
    dz[rows, labels] -= 1.0
    dz /= x.shape[0]
    return per_sample.mean(), {"w": dz.T @ x, "b": dz.sum(axis=0)}


def training_noise(seed, sample_idx, epoch, samples, classes):
    """Noise ``(B, T, C)`` for the given samples in one epoch; fixed per (seed, sample, epoch)."""
    key = _rng.stream_key(np.uint64(seed), np.asarray(sample_idx, dtype=np.uint64))
    per = samples * classes
    counters = np.uint64(epoch * per) + np.arange(per, dtype=np.uint64)
    return _rng.normals(key[:, None], counters[None, :]).reshape(len(sample_idx), samples, classes)


def train(model, dataset, config):
    """Mini-batch SGD. Returns the trained model and the per-epoch mean loss."""
    rng = np.random.default_rng(config.seed)
    x, y = dataset.inputs, dataset.labels
    n = len(dataset)
    gaussian = isinstance(model, GaussianHeadModel)
    curve = []
    if config.lr_schedule not in ("linear", "constant"):
        raise ValueError(f"unknown lr schedule {config.lr_schedule!r}")
    for epoch in range(config.epochs):
        lr = config.lr * (1.0 - epoch / config.epochs if config.lr_schedule == "linear" else 1.0)
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            if gaussian:
                noise = training_noise(config.seed, idx, epoch, config.samples, model.b_mu.shape[0])
                loss, grads = logit_sampling_loss(model, x[idx], y[idx], noise)
            else:
                loss, grads = cross_entropy_loss(model, x[idx], y[idx])
            total += loss * idx.size
            params = model.params()
            model = model.with_params({k: params[k] - lr * grads[k] for k in params})
        curve.append(total / n)
        if not np.isfinite(curve[-1]):
            raise NonFiniteLossError(-1, f"training diverged in epoch {epoch}")
    return model, curve


def predict_field(model, inputs):
    mu, sigma = model.heads(inputs)
    return GaussianField(mu[None], sigma[None])


@dataclass
class ToySetup:
    spec: DatasetSpec = field(default_factory=DatasetSpec)
    n_train: int = 4000
    n_test: int = 50000
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self):
        return {"spec": asdict(self.spec), "n_train": self.n_train, "n_test": self.n_test,
                "train": asdict(self.train)}

    @classmethod
    def from_dict(cls, d):
        spec = {k: tuple(map(tuple, v)) if k in ("centers", "blob_stds") else v for k, v in d["spec"].items()}
        train_cfg = dict(d["train"])
        train_cfg["log_std_bounds"] = tuple(train_cfg["log_std_bounds"])
        return cls(DatasetSpec(**spec), d["n_train"], d["n_test"], TrainConfig(**train_cfg))


def make_splits(setup, data_seed):
    """Train and test splits drawn from independent generator seeds."""
    return (generate_dataset(setup.spec, setup.n_train, (data_seed, 0)),
            generate_dataset(setup.spec, setup.n_test, (data_seed, 1)))


def fit_gaussian_head(train_set, config):
    model = GaussianHeadModel.init(train_set.spec.classes, train_set.spec.dim, config.seed,
                                   config.init_scale, config.log_std_bounds)
    return train(model, train_set, config)


def fit_point_estimate(train_set, config):
    model = PointEstimateModel.init(train_set.spec.classes, train_set.spec.dim, config.seed, config.init_scale)
    return train(model, train_set, config)


def train_ensemble(train_set, test_inputs, config, seeds):
    """One Gaussian-head model per seed; returns the models and their test fields."""
    if not seeds:
        raise ValueError("need at least one seed")
    models = [fit_gaussian_head(train_set, replace(config, seed=s))[0] for s in seeds]
    return models, EnsembleField(tuple(predict_field(m, test_inputs) for m in models))
