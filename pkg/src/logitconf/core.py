"""Confidence of the argmax class when every class logit is an independent Gaussian.

The confidence of a winner class ``w`` is ``P(X_w >= max_{j != w} X_j)`` with
``X_i ~ N(mu_i, sigma_i^2)``. Five estimators are provided:

``lower-bound``
    Product of pairwise win probabilities. Sampling-free, exact for two classes.
``quadrature``
    Deterministic evaluation of ``int phi_w(x) prod_j Phi_j(x) dx``; the
    reference value for everything else.
``mc-integration``
    Monte Carlo estimate of the same integral from draws of the winner only.
``joint-sampling``
    Relative frequency of the winner's draw being the largest in full C-vectors.
``softmax-avg``
    Average of softmax over reparameterized logit samples (the sampling baseline).
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _backend, _rng

METHODS = ("lower-bound", "quadrature", "mc-integration", "joint-sampling", "softmax-avg")
SAMPLING_METHODS = ("mc-integration", "joint-sampling", "softmax-avg")

QUAD_MIN_POINTS = 51
QUAD_TOL = 1e-10
QUAD_MAX_NODES = 2**18


class ValidationError(ValueError):
    """Input violates a shape or value invariant."""


def _check_params(means, stds):
    if means.ndim < 1 or means.shape != stds.shape:
        raise ValidationError(f"means/stds shape mismatch: {means.shape} vs {stds.shape}")
    if means.shape[-1] < 2:
        raise ValidationError("need at least two classes")
    if not np.all(np.isfinite(means)):
        raise ValidationError("means must be finite")
    if not (np.all(np.isfinite(stds)) and np.all(stds > 0)):
        raise ValidationError("stds must be finite and strictly positive")


@dataclass(frozen=True)
class ClassGaussians:
    """Per-class logit means and standard deviations for one sample."""

    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        means = np.array(self.means, dtype=np.float64).reshape(-1)
        stds = np.array(self.stds, dtype=np.float64).reshape(-1)
        _check_params(means, stds)
        means.flags.writeable = False
        stds.flags.writeable = False
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)

    @property
    def classes(self):
        return self.means.shape[0]

    def shifted(self, delta):
        return ClassGaussians(self.means + delta, self.stds)

    def _rows(self):
        return self.means[None, :].copy(), self.stds[None, :].copy()


@dataclass(frozen=True)
class GaussianField:
    """``height x width`` grid of ClassGaussians stored as ``(H, W, C)`` arrays."""

    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        means = np.array(self.means, dtype=np.float64)
        stds = np.array(self.stds, dtype=np.float64)
        if means.ndim == 2:
            means, stds = means[None], stds.reshape((1,) + stds.shape)
        if means.ndim != 3:
            raise ValidationError(f"field arrays must be (H, W, C), got shape {means.shape}")
        _check_params(means, stds)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)

    @property
    def height(self):
        return self.means.shape[0]

    @property
    def width(self):
        return self.means.shape[1]

    @property
    def classes(self):
        return self.means.shape[2]

    @property
    def shape(self):
        return self.means.shape[:2]

    def flat(self):
        """Contiguous ``(H*W, C)`` views in row-major pixel order."""
        c = self.classes
        return (np.ascontiguousarray(self.means.reshape(-1, c)),
                np.ascontiguousarray(self.stds.reshape(-1, c)))

    def pixel(self, row, col):
        return ClassGaussians(self.means[row, col], self.stds[row, col])


@dataclass(frozen=True)
class EstimatorConfig:
    method: str = "lower-bound"
    sample_count: int = 50
    seed: int = 0
    quadrature_points: int = QUAD_MIN_POINTS
    quadrature_max_nodes: int = QUAD_MAX_NODES
    # scale one pool of standard normals per field instead of per-pixel draws
    # (mc-integration only)
    shared_pool: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.method in SAMPLING_METHODS and self.sample_count < 1:
            raise ValidationError("sample_count must be >= 1 for sampling methods")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        if self.quadrature_points < QUAD_MIN_POINTS:
            raise ValidationError(f"quadrature_points must be >= {QUAD_MIN_POINTS}")
        if self.quadrature_max_nodes < 1:
            raise ValidationError("quadrature_max_nodes must be >= 1")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")


@dataclass(frozen=True)
class DeterministicStream:
    """Addresses draws ``counter, counter+1, ...`` of the ``(seed, stream_id)`` stream."""

    seed: int = 0
    stream_id: int = 0
    counter: int = 0

    def normals(self, count):
        key = _rng.stream_key(np.uint64(self.seed), np.uint64(self.stream_id))
        return _rng.normals(key, np.uint64(self.counter) + np.arange(count, dtype=np.uint64))

    def _ids(self):
        return np.array([self.stream_id], dtype=np.uint64)


class QuadratureEstimate(NamedTuple):
    value: float
    converged: bool


class WinProbabilities(NamedTuple):
    probs: np.ndarray
    converged: np.ndarray


class FieldConfidence(NamedTuple):
    prediction: np.ndarray
    confidence: np.ndarray
    uncertainty: np.ndarray
    nonconverged: int = 0


def select_winner(g):
    # np.argmax returns the first maximal index, i.e. smallest index on ties
    return int(np.argmax(g.means))


def winners_of(means2d):
    return np.argmax(means2d, axis=1).astype(np.int64)


def std_normal_cdf(x):
    return float(_backend.active().ndtr(np.array([x], dtype=np.float64))[0])


def pairwise_win_prob(mu_w, sigma_w, mu_j, sigma_j):
    """P(X_w >= X_j) for independent Gaussians, ``Phi((mu_w - mu_j) / sqrt(sw^2 + sj^2))``."""
    if not (sigma_w > 0 and sigma_j > 0):
        raise ValidationError("standard deviations must be positive")
    return float(_backend.active().pairwise(float(mu_w), float(sigma_w), float(mu_j), float(sigma_j)))


def _winner_arg(g, winner):
    w = select_winner(g) if winner is None else int(winner)
    if not 0 <= w < g.classes:
        raise ValidationError(f"winner {w} out of range for {g.classes} classes")
    return np.array([w], dtype=np.int64)


def confidence_lower_bound(g, winner=None):
    """Sampling-free lower bound ``prod_{j != w} P(X_w >= X_j)``.

    Never exceeds the true confidence because the factors ``Phi_j(X_w)`` are
    all increasing in the same variable and hence non-negatively correlated.
    Results below 1e-300 are flushed to 0.
    """
    means, stds = g._rows()
    return float(_backend.active().lower_bound(means, stds, _winner_arg(g, winner))[0])


def confidence_quadrature(g, winner=None, quadrature_points=QUAD_MIN_POINTS, max_nodes=QUAD_MAX_NODES):
    """Reference confidence by composite Gauss-Legendre quadrature.

    Integrates in standardized winner units over ``[-12, 12]``. Every
    challenger narrower than the winner adds panel edges around its CDF
    transition, so sharp factors never fall inside a single panel. The first
    pass uses about ``quadrature_points`` nodes; panel counts then double
    until two successive estimates agree to ``1e-10``. If the next pass would
    exceed ``max_nodes``, the last estimate comes back with ``converged=False``.
    """
    if quadrature_points < QUAD_MIN_POINTS:
        raise ValidationError(f"quadrature_points must be >= {QUAD_MIN_POINTS}")
    means, stds = g._rows()
    val, ok = _backend.active().quadrature(
        means, stds, _winner_arg(g, winner), int(quadrature_points), QUAD_TOL, int(max_nodes))
    return QuadratureEstimate(float(val[0]), bool(ok[0]))


def _check_n(n):
    if int(n) < 1:
        raise ValidationError("sample count must be >= 1")
    return int(n)


def confidence_mc(g, winner=None, n=1000, stream=DeterministicStream()):
    """Monte Carlo integration: mean of ``prod_{j != w} Phi_j(x_k)`` over winner draws ``x_k``."""
    means, stds = g._rows()
    return float(_backend.active().mc(
        means, stds, _winner_arg(g, winner), _check_n(n), stream.seed, stream._ids(), stream.counter)[0])


def confidence_joint_sampling(g, winner=None, n=1000, stream=DeterministicStream()):
    """Fraction of ``n`` joint draws in which the winner's draw is >= every other class."""
    means, stds = g._rows()
    return float(_backend.active().joint(
        means, stds, _winner_arg(g, winner), _check_n(n), stream.seed, stream._ids(), stream.counter)[0])


def softmax_avg_probs(g, n=50, stream=DeterministicStream()):
    """Mean of ``softmax(mu + sigma * eps_t)`` over ``n`` standard-normal vectors ``eps_t``."""
    means, stds = g._rows()
    return _backend.active().softmax_avg(
        means, stds, _check_n(n), stream.seed, stream._ids(), stream.counter)[0]


def win_prob_all_classes(g, quadrature_points=QUAD_MIN_POINTS):
    """Quadrature win probability of every class in turn; entries sum to 1."""
    c = g.classes
    means = np.repeat(g.means[None, :], c, axis=0)
    stds = np.repeat(g.stds[None, :], c, axis=0)
    probs, ok = _backend.active().quadrature(
        means, stds, np.arange(c, dtype=np.int64), int(quadrature_points), QUAD_TOL, QUAD_MAX_NODES)
    return WinProbabilities(probs, ok)


def shared_pool(seed, n):
    """Field-wide standard-normal pool, reused by scaling and shifting per pixel."""
    key = _rng.stream_key(np.uint64(seed), np.uint64(_rng.POOL_STREAM))
    return _rng.normals(key, np.arange(n, dtype=np.uint64))


def flat_confidence(means, stds, winners, cfg, stream_ids=None):
    """Confidence of fixed ``winners`` for flat ``(P, C)`` parameter arrays.

    Returns ``(confidence, converged)``. ``stream_ids`` default to the pixel
    index, which keeps sampling results independent of how pixels are split
    across workers.
    """
    kern = _backend.active()
    n_pix = means.shape[0]
    means = np.ascontiguousarray(means, dtype=np.float64)
    stds = np.ascontiguousarray(stds, dtype=np.float64)
    winners = np.ascontiguousarray(winners, dtype=np.int64)
    if stream_ids is None:
        stream_ids = np.arange(n_pix, dtype=np.uint64)
    ok = np.ones(n_pix, dtype=bool)
    n = cfg.sample_count
    if cfg.method == "lower-bound":
        conf = kern.lower_bound(means, stds, winners, threads=cfg.threads)
    elif cfg.method == "quadrature":
        conf, ok = kern.quadrature(means, stds, winners, cfg.quadrature_points,
                                   QUAD_TOL, cfg.quadrature_max_nodes, threads=cfg.threads)
    elif cfg.method == "mc-integration":
        pool = shared_pool(cfg.seed, n) if cfg.shared_pool else None
        conf = kern.mc(means, stds, winners, n, cfg.seed, stream_ids, 0, pool, threads=cfg.threads)
    elif cfg.method == "joint-sampling":
        conf = kern.joint(means, stds, winners, n, cfg.seed, stream_ids, 0, threads=cfg.threads)
    else:
        probs = kern.softmax_avg(means, stds, n, cfg.seed, stream_ids, 0, threads=cfg.threads)
        conf = probs[np.arange(n_pix), winners]
    return conf, ok


def field_confidence(f, cfg):
    """Prediction, confidence and uncertainty (``1 - confidence``) maps for a field.

    The prediction is the largest-mean class for every method.
    ``nonconverged`` counts pixels whose quadrature hit the node cap.
    """
    means, stds = f.flat()
    pred = winners_of(means)
    conf, ok = flat_confidence(means, stds, pred, cfg)
    shape = f.shape
    return FieldConfidence(pred.reshape(shape), conf.reshape(shape),
                           (1.0 - conf).reshape(shape), int(np.count_nonzero(~ok)))
