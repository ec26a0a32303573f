"""Confidence-stage timing on random Gaussian fields.

Only the confidence computation is timed (winner selection plus the chosen
estimator). Network inference, file I/O and metric evaluation are outside
the measured region, so speedups here are not end-to-end figures.
"""

import hashlib
import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import _backend
from .core import METHODS, EstimatorConfig, GaussianField, ValidationError, flat_confidence, winners_of

REFERENCE = "softmax-avg"
DEFAULT_METHODS = ("lower-bound", "mc-integration", "joint-sampling", "softmax-avg")


@dataclass(frozen=True)
class BenchResult:
    method: str
    backend: str
    classes: int
    pixels: int
    sample_count: int
    repeats: int
    warmup: int
    times: tuple
    median: float
    speedup_vs_reference: float
    # mc-integration scales one field-wide normal pool instead of per-pixel draws
    shared_pool: bool
    # digest of the confidence map; equal across runs with the same inputs
    checksum: str

    def to_dict(self):
        d = asdict(self)
        d["times"] = list(self.times)
        return d


def random_field(classes, pixels, seed, height=1):
    """Deterministic ``(height, pixels // height, classes)`` field of random Gaussians."""
    if classes < 2 or pixels < 1:
        raise ValidationError("bench needs classes >= 2 and pixels >= 1")
    if pixels % height:
        raise ValidationError(f"pixels={pixels} not divisible by height={height}")
    rng = np.random.default_rng(seed)
    shape = (height, pixels // height, classes)
    return GaussianField(rng.normal(0.0, 2.0, shape), np.exp(rng.uniform(-1.0, 1.0, shape)))


def _digest(values):
    return hashlib.sha256(np.ascontiguousarray(values, dtype="<f8").tobytes()).hexdigest()[:16]


def time_method(field, cfg, repeats, warmup):
    means, stds = field.flat()

    def stage():
        return flat_confidence(means, stds, winners_of(means), cfg)[0]

    for _ in range(warmup):
        stage()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        conf = stage()
        times.append(time.perf_counter() - t0)
    return tuple(times), _digest(conf)


def run_bench(classes=20, pixels=65536, methods=DEFAULT_METHODS, samples=50, repeats=10,
              warmup=2, seed=0, backends=None, threads=1, height=64,
              shared_pool=True):
    """Time ``methods`` on one random field for every backend in ``backends``.

    The softmax-avg reference at the same sample count is always timed, and
    each speedup is ``reference median / method median`` within a backend.
    """
    if repeats < 5:
        raise ValidationError("repeats must be >= 5")
    if warmup < 0:
        raise ValidationError("warmup must be >= 0")
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValidationError(f"unknown methods {unknown}")
    methods = list(dict.fromkeys(methods))
    if REFERENCE not in methods:
        methods.append(REFERENCE)
    if pixels % height:
        height = 1
    field = random_field(classes, pixels, seed, height)
    results = []
    for name in backends or [_backend.active().NAME]:
        timed = {}
        with _backend.use_backend(name):
            for m in methods:
                cfg = EstimatorConfig(method=m, sample_count=samples, seed=seed, threads=threads,
                                      shared_pool=shared_pool)
                timed[m] = time_method(field, cfg, repeats, warmup)
        ref = statistics.median(timed[REFERENCE][0])
        for m in methods:
            times, digest = timed[m]
            med = statistics.median(times)
            results.append(BenchResult(m, name, classes, pixels, samples, repeats, warmup,
                                       times, med, ref / med, shared_pool, digest))
    return results


def format_table(results):
    lines = [f"{'method':<16}{'backend':<9}{'C':>4}{'pixels':>9}{'N':>5}"
             f"{'median s':>12}{'speedup':>10}"]
    for r in results:
        n = r.sample_count if r.method in ("mc-integration", "joint-sampling", "softmax-avg") else "-"
        lines.append(f"{r.method:<16}{r.backend:<9}{r.classes:>4}{r.pixels:>9}{n!s:>5}"
                     f"{r.median:>12.5f}{r.speedup_vs_reference:>9.2f}x")
    lines.append("confidence stage only; speedup is relative to softmax-avg with the same backend")
    return "\n".join(lines)


def bench_document(results):
    return {"reference": REFERENCE, "results": [r.to_dict() for r in results]}
