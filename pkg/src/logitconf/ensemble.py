"""Deep-ensemble aggregation of Gaussian-logit fields.

The ensemble class at each pixel is the argmax of the member-averaged means.
Every member then scores that same class, even where its own argmax differs,
and the ensemble confidence is the mean of those member confidences.
"""

from dataclasses import dataclass

import numpy as np

from .core import FieldConfidence, ValidationError, flat_confidence


@dataclass(frozen=True)
class EnsembleField:
    members: tuple

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValidationError("ensemble needs at least one member")
        ref = members[0].means.shape
        for m in members[1:]:
            if m.means.shape != ref:
                raise ValidationError(f"member shape {m.means.shape} differs from {ref}")
        object.__setattr__(self, "members", members)

    @property
    def shape(self):
        return self.members[0].shape

    @property
    def classes(self):
        return self.members[0].classes


def _member_mean(stack):
    # sorted so the result ignores member order; offsets from the minimum make
    # identical members reproduce their common value exactly
    s = np.sort(stack, axis=0)
    lo, hi = s[0], s[-1]
    mean = lo + (s - lo).sum(axis=0) / s.shape[0]
    return np.clip(mean, lo, hi)


def ensemble_predict(e):
    mean_means = _member_mean(np.stack([m.means for m in e.members]))
    return np.argmax(mean_means, axis=-1).astype(np.int64)


def member_confidences(e, cfg, prediction=None):
    """``(E, H, W)`` confidences of the ensemble class under each member."""
    pred = ensemble_predict(e) if prediction is None else prediction
    winners = pred.reshape(-1)
    out, ok = [], []
    for m in e.members:
        means, stds = m.flat()
        conf, conv = flat_confidence(means, stds, winners, cfg)
        out.append(conf.reshape(e.shape))
        ok.append(conv.reshape(e.shape))
    return np.stack(out), np.stack(ok)


def ensemble_confidence(e, cfg):
    pred = ensemble_predict(e)
    confs, ok = member_confidences(e, cfg, pred)
    conf = _member_mean(confs)
    return FieldConfidence(pred, conf, 1.0 - conf, int(np.count_nonzero(~ok.all(axis=0))))

