"""ACC at a fixed threshold and average precision with fake as the positive class."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

THRESHOLD = 0.5


def accuracy(scores, is_real, threshold: float = THRESHOLD) -> float:
    """Fraction correct when "real" is predicted iff score >= threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    is_real = np.asarray(is_real, dtype=bool)
    if scores.size == 0:
        return 0.0
    return float(np.mean((scores >= threshold) == is_real))


def average_precision(fake_scores, is_fake) -> float:
    """Area under the step-wise precision/recall curve.

    Tied scores are handled as one threshold: every sample in a tie group is
    admitted together. Without ties this is the mean of precision at the rank
    of each positive. Returns 0 when there are no positives.
    """
    s = np.asarray(fake_scores, dtype=np.float64)
    y = np.asarray(is_fake, dtype=bool)
    n_pos = int(y.sum())
    if n_pos == 0:
        return 0.0
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    # Last index of each group of equal scores.
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp_at = tp[ends]
    precision = tp_at / (ends + 1.0)
    recall_gain = np.diff(np.r_[0, tp_at]) / n_pos
    return float(np.sum(precision * recall_gain))


@dataclass
class Metrics:
    acc: float
    map: float
    per_subset: dict[str, dict[str, float]] = field(default_factory=dict)
    n_real: int = 0
    n_fake: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(scores, is_real, generators=None, threshold: float = THRESHOLD) -> Metrics:
    """ACC over everything; AP per generator tag (fakes of that tag vs. its reals,
    or vs. all reals if the tag has none), averaged into mAP.

    Scores are P(real); AP ranks by the fake-score 1 - score.
    """
    scores = np.asarray(scores, dtype=np.float64)
    is_real = np.asarray(is_real, dtype=bool)
    if generators is None:
        generators = ["all"] * scores.size
    gens = np.asarray(generators, dtype=object)
    per_subset = {}
    for tag in sorted(set(gens.tolist())):
        in_tag = gens == tag
        fakes = in_tag & ~is_real
        if not fakes.any():
            continue
        reals = in_tag & is_real
        if not reals.any():
            reals = is_real
        pick = fakes | reals
        per_subset[tag] = {
            "acc": accuracy(scores[in_tag], is_real[in_tag], threshold),
            "ap": average_precision(1.0 - scores[pick], ~is_real[pick]),
        }
    aps = [v["ap"] for v in per_subset.values()]
    return Metrics(
        acc=accuracy(scores, is_real, threshold),
        map=float(np.mean(aps)) if aps else 0.0,
        per_subset=per_subset,
        n_real=int(is_real.sum()),
        n_fake=int((~is_real).sum()),
    )
