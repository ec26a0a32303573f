"""Counter-based standard-normal draws (numpy reference implementation).

Every draw is a pure function of ``(seed, stream_id, counter)``: the stream key
is ``mix(seed ^ mix(stream_id + GAMMA))`` and the raw 64-bit word for counter
``k`` is the ``k``-th SplitMix64 output from that key. The compiled kernels
implement the same recipe, so both backends consume identical uniforms.
"""

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_M53 = 2.0 ** -53
_TWO_PI = 2.0 * np.pi

# stream id reserved for the field-wide shared sample pool
POOL_STREAM = 2**64 - 1


def _mix(z):
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def stream_key(seed, stream_id):
    seed = np.asarray(seed, dtype=np.uint64)
    stream_id = np.asarray(stream_id, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(seed ^ _mix(stream_id + GAMMA))


def raw_words(key, counters):
    """64-bit words for ``counters`` (broadcast against ``key``)."""
    key = np.asarray(key, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(key + (counters + np.uint64(1)) * GAMMA)


def uniforms(key, counters):
    """Uniform doubles in the open interval (0, 1)."""
    w = raw_words(key, counters)
    return ((w >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53


def normals(key, counters):
    """Standard normals by Box-Muller.

    Draws ``2i`` and ``2i+1`` are the cosine and sine halves of the pair built
    from uniform words ``2i`` and ``2i+1``.
    """
    counters = np.asarray(counters, dtype=np.uint64)
    key = np.asarray(key, dtype=np.uint64)
    even = counters & ~np.uint64(1)
    r = np.sqrt(-2.0 * np.log(uniforms(key, even)))
    theta = _TWO_PI * uniforms(key, even + np.uint64(1))
    return np.where((counters & np.uint64(1)) == 0, r * np.cos(theta), r * np.sin(theta))
