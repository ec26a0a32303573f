"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy kernels
take over. ``LOGITCONF_BACKEND=python`` forces the fallback.
"""

import contextlib
import os

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _fallback}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled


def available():
    return sorted(_BACKENDS)


def get(name):
    if name in (None, "auto"):
        return _BACKENDS.get("cython", _fallback)
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {available()}") from None


_active = get(os.environ.get("LOGITCONF_BACKEND", "auto"))


def active():
    return _active


def set_backend(name):
    global _active
    _active = get(name)
    return _active


@contextlib.contextmanager
def use_backend(name):
    global _active
    previous = _active
    _active = get(name)
    try:
        yield _active
    finally:
        _active = previous
