import json

import numpy as np
import pytest

from logitconf import _backend, bench
from logitconf.core import ValidationError

FIELDS = {"method", "backend", "classes", "pixels", "sample_count", "repeats", "warmup", "times",
          "median", "speedup_vs_reference", "shared_pool", "checksum"}


def small(**kw):
    args = dict(classes=5, pixels=256, methods=("lower-bound",), samples=8, repeats=5, warmup=1, seed=3)
    args.update(kw)
    return bench.run_bench(**args)


def test_random_field_deterministic():
    a, b = bench.random_field(4, 64, 9, height=8), bench.random_field(4, 64, 9, height=8)
    assert a.means.shape == (8, 8, 4)
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_array_equal(a.stds, b.stds)


def test_reference_added_and_speedup():
    res = small()
    assert [r.method for r in res] == ["lower-bound", "softmax-avg"]
    ref = res[1]
    assert ref.speedup_vs_reference == 1.0
    assert res[0].speedup_vs_reference == pytest.approx(ref.median / res[0].median)


def test_schema_and_repeats():
    for r in small(methods=("lower-bound", "mc-integration")):
        d = r.to_dict()
        assert set(d) == FIELDS
        assert len(d["times"]) == d["repeats"] == 5
        assert d["median"] == float(np.median(d["times"]))
        json.dumps(d)


def test_same_seed_same_numbers():
    a = small(methods=bench.DEFAULT_METHODS)
    b = small(methods=bench.DEFAULT_METHODS)
    assert [r.checksum for r in a] == [r.checksum for r in b]
    c = small(seed=4)
    assert c[0].checksum != a[0].checksum


@pytest.mark.skipif(len(_backend.available()) < 2, reason="compiled backend not built")
def test_backends_agree_on_sampling_free_output():
    res = small(backends=["cython", "python"], methods=("lower-bound", "joint-sampling"))
    by = {(r.backend, r.method): r.checksum for r in res}
    assert by["cython", "lower-bound"] == by["python", "lower-bound"]
    assert by["cython", "joint-sampling"] == by["python", "joint-sampling"]


def test_shared_pool_default_and_switch():
    on = small(methods=("mc-integration",))
    off = small(methods=("mc-integration",), shared_pool=False)
    assert on[0].shared_pool and not off[0].shared_pool
    assert on[0].checksum != off[0].checksum


def test_table_lists_every_result():
    res = small()
    text = bench.format_table(res)
    assert len(text.splitlines()) == len(res) + 2
    assert "confidence stage only" in text


@pytest.mark.parametrize("kw", [dict(repeats=4), dict(warmup=-1), dict(methods=("exact",)),
                                dict(classes=1)])
def test_rejects(kw):
    with pytest.raises(ValidationError):
        small(**kw)
