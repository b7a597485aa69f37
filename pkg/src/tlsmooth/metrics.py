"""Step-level and event-level evaluation.

All threshold semantics are "predict positive when score >= threshold",
and thresholds only ever take values that occur as scores. Tied scores
enter and leave the predicted-positive set together, so every metric is
invariant to reordering samples with equal scores.

Step-level metrics pool every unmasked timestep of a cohort into one
:class:`ScoredSet`. Event-level recall asks a different question: for
each adverse event, did any unmasked step in the ``h`` steps before it
raise an alarm? The operating threshold for that is picked on the
pooled step-level curve (highest recall subject to a precision floor).

Curve metrics need both classes present; they raise
:class:`~tlsmooth.errors.UndefinedMetricError` otherwise, as does event
recall when no event has an observable pre-event window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, UndefinedMetricError
from .labels import LabelTrack, _as_event_track, event_starts


@dataclass(frozen=True)
class ScoredSet:
    """Pooled scores and hard labels, optionally with time-to-event."""

    scores: np.ndarray
    labels: np.ndarray
    dist: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        y = np.asarray(self.labels)
        if s.ndim != 1 or y.shape != s.shape:
            raise InvalidInputError("scores and labels must be 1-d and equal length")
        if not np.isfinite(s).all():
            raise InvalidInputError("scores must be finite")
        if not np.isin(y, (0, 1)).all():
            raise InvalidInputError("labels must be 0 or 1")
        y = y.astype(np.int8)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)
        if self.dist is not None:
            d = np.asarray(self.dist, dtype=np.float64)
            if d.shape != s.shape:
                raise InvalidInputError("dist must match scores in length")
            if np.isnan(d).any() or (d[np.isfinite(d)] <= 0).any():
                raise InvalidInputError("dist must be > 0 or inf")
            if np.isinf(d[y == 1]).any():
                raise InvalidInputError("positive steps must have a finite dist")
            object.__setattr__(self, "dist", d)

    @property
    def n_pos(self) -> int:
        return int((self.labels == 1).sum())

    @property
    def n_neg(self) -> int:
        return int((self.labels == 0).sum())


@dataclass(frozen=True)
class ScoredStay:
    """Per-stay scores plus everything needed for event-level metrics."""

    stay_id: str
    scores: np.ndarray
    event_track: np.ndarray
    dist: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        track = _as_event_track(self.event_track)
        d = np.asarray(self.dist, dtype=np.float64)
        m = np.asarray(self.mask, dtype=bool)
        if not (s.shape == track.shape == d.shape == m.shape):
            raise InvalidInputError("per-stay arrays must share one length")
        if not np.isfinite(s).all():
            raise InvalidInputError("scores must be finite")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "event_track", track)
        object.__setattr__(self, "dist", d)
        object.__setattr__(self, "mask", m)

    @classmethod
    def build(cls, stay_id: str, scores, track: LabelTrack, event_track) -> "ScoredStay":
        return cls(stay_id=stay_id, scores=scores, event_track=event_track,
                   dist=track.dist_to_event, mask=track.mask)


def pooled_set(stays, horizon_steps: int) -> ScoredSet:
    """Concatenate the unmasked steps of many stays into one scored set."""
    scores, labels, dists = [], [], []
    h = int(horizon_steps)
    for st in stays:
        m = st.mask
        d = st.dist[m]
        scores.append(st.scores[m])
        labels.append(((d > 0) & (d <= h)).astype(np.int8))
        dists.append(d)
    if not scores:
        raise InvalidInputError("no stays to pool")
    return ScoredSet(scores=np.concatenate(scores),
                     labels=np.concatenate(labels),
                     dist=np.concatenate(dists))


def _require_both_classes(s: ScoredSet, what: str):
    if s.n_pos == 0 or s.n_neg == 0:
        raise UndefinedMetricError(
            f"{what} needs at least one positive and one negative; "
            f"got {s.n_pos} positives / {s.n_neg} negatives"
        )


def _curve_points(s: ScoredSet):
    """Cumulative counts at each distinct score, descending.

    Returns (thresholds, tp, pp): predicting "score >= thresholds[i]"
    yields pp[i] positives of which tp[i] are true.
    """
    order = np.argsort(-s.scores, kind="stable")
    sc = s.scores[order]
    y = s.labels[order]
    last = np.r_[sc[1:] != sc[:-1], True]          # last index of each tie group
    tp = np.cumsum(y)[last]
    pp = np.flatnonzero(last) + 1
    return sc[last], tp.astype(np.float64), pp.astype(np.float64)


@dataclass(frozen=True)
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray


@dataclass(frozen=True)
class ROCCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray


def pr_curve(s: ScoredSet) -> PRCurve:
    """Precision and recall at every distinct score threshold."""
    _require_both_classes(s, "a precision-recall curve")
    thr, tp, pp = _curve_points(s)
    return PRCurve(thresholds=thr, precision=tp / pp, recall=tp / s.n_pos)


def auprc(s: ScoredSet) -> float:
    """Area under the PR curve, average-precision style.

    Sum of precision at each threshold weighted by the recall gained
    there; no interpolation between points.
    """
    curve = pr_curve(s)
    gains = np.diff(curve.recall, prepend=0.0)
    return float(np.sum(gains * curve.precision))


def roc_curve(s: ScoredSet) -> ROCCurve:
    _require_both_classes(s, "a ROC curve")
    thr, tp, pp = _curve_points(s)
    return ROCCurve(thresholds=thr, fpr=(pp - tp) / s.n_neg, tpr=tp / s.n_pos)


def auroc(s: ScoredSet) -> float:
    """Trapezoidal ROC area; ties contribute half, matching the
    probability that a random positive outscores a random negative."""
    curve = roc_curve(s)
    x = np.r_[0.0, curve.fpr]
    y = np.r_[0.0, curve.tpr]
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) * 0.5))


def recall_at_precision(s: ScoredSet, precision_floor: float):
    """Best recall subject to precision >= floor, and its threshold.

    Among thresholds meeting the floor, picks the highest recall,
    breaking ties by higher precision and then by the lowest qualifying
    score. Returns ``(0.0, inf)`` when no threshold qualifies.
    """
    floor = float(precision_floor)
    if not 0.0 < floor <= 1.0:
        raise InvalidInputError("precision floor must be in (0, 1]")
    curve = pr_curve(s)
    ok = curve.precision >= floor
    if not ok.any():
        return 0.0, float("inf")
    r_best = curve.recall[ok].max()
    ok &= curve.recall == r_best
    p_best = curve.precision[ok].max()
    ok &= curve.precision == p_best
    return float(r_best), float(curve.thresholds[ok].min())


@dataclass(frozen=True)
class EventRecall:
    recall: float
    detected: int
    eligible: int


def event_recall(stays, horizon_steps: int, threshold: float) -> EventRecall:
    """Fraction of events alarmed during their observable pre-event window.

    An event starting at step ``t`` owns the window ``[t - h, t)``
    clipped to the stay. It is eligible when the window contains at
    least one unmasked step, and detected when any such step scores at
    or above the threshold. Events starting at step 0 have no window
    and are skipped.
    """
    h = int(horizon_steps)
    if h < 1:
        raise InvalidInputError("horizon must be at least one step")
    eligible = detected = 0
    for st in stays:
        for start in event_starts(st.event_track):
            if start == 0:
                continue
            lo = max(0, start - h)
            window = st.mask[lo:start]
            if not window.any():
                continue
            eligible += 1
            if (st.scores[lo:start][window] >= threshold).any():
                detected += 1
    if eligible == 0:
        raise UndefinedMetricError(
            "no event has an observable pre-event window; event recall undefined"
        )
    return EventRecall(recall=detected / eligible, detected=detected,
                       eligible=eligible)


@dataclass(frozen=True)
class BinRate:
    """Detection rates for samples whose dist falls in (lo, hi]."""

    lo: float
    hi: float           # inf for the no-upcoming-event bucket
    n_pos: int
    n_neg: int
    tpr: float | None
    fpr: float | None
    tnr: float | None


def binned_rates(s: ScoredSet, threshold: float, bin_steps: int):
    """Alarm rates bucketed by time to the next event.

    Finite distances fall into right-closed bins ``(k*w, (k+1)*w]``;
    steps with no upcoming event form one final bucket. Rates are None
    (absent, not zero) for the class a bin does not contain.
    """
    if s.dist is None:
        raise InvalidInputError("binned rates need a scored set with distances")
    w = int(bin_steps)
    if w < 1:
        raise InvalidInputError("bin width must be at least one step")
    pred = s.scores >= threshold
    finite = np.isfinite(s.dist)
    idx = np.zeros(s.dist.shape, dtype=int)
    idx[finite] = np.ceil(s.dist[finite] / w).astype(int) - 1
    n_bins = int(idx[finite].max()) + 1 if finite.any() else 0

    def rate(sel) -> float | None:
        return float(pred[sel].mean()) if sel.any() else None

    bins = []
    for k in range(n_bins):
        pos = finite & (idx == k) & (s.labels == 1)
        neg = finite & (idx == k) & (s.labels == 0)
        f = rate(neg)
        bins.append(BinRate(
            lo=float(k * w), hi=float((k + 1) * w),
            n_pos=int(pos.sum()), n_neg=int(neg.sum()),
            tpr=rate(pos), fpr=f, tnr=None if f is None else 1.0 - f,
        ))
    far = ~finite
    if far.any():
        f = rate(far)
        bins.append(BinRate(
            lo=float(n_bins * w), hi=float("inf"),
            n_pos=0, n_neg=int(far.sum()),
            tpr=None, fpr=f, tnr=None if f is None else 1.0 - f,
        ))
    return tuple(bins)


@dataclass(frozen=True)
class EvalReport:
    """Everything the harness records about one model on one split."""

    horizon_steps: int
    n_steps: int
    n_pos: int
    auroc: float
    auprc: float
    precision_floor: float
    recall_at_precision: float
    threshold: float
    events_detected: int
    events_eligible: int
    event_recall: float | None
    bin_steps: int
    bins: tuple
    pr: PRCurve
    roc: ROCCurve

    def to_dict(self) -> dict:
        def clean(x):
            return None if x is None or not np.isfinite(x) else float(x)

        return {
            "horizon_steps": self.horizon_steps,
            "n_steps": self.n_steps,
            "n_pos": self.n_pos,
            "auroc": float(self.auroc),
            "auprc": float(self.auprc),
            "precision_floor": float(self.precision_floor),
            "recall_at_precision": float(self.recall_at_precision),
            "threshold": clean(self.threshold),
            "events_detected": self.events_detected,
            "events_eligible": self.events_eligible,
            "event_recall": clean(self.event_recall),
            "bin_steps": self.bin_steps,
            "bins": [
                {"lo": b.lo, "hi": (None if np.isinf(b.hi) else b.hi),
                 "n_pos": b.n_pos, "n_neg": b.n_neg,
                 "tpr": b.tpr, "fpr": b.fpr, "tnr": b.tnr}
                for b in self.bins
            ],
            "pr": {"thresholds": self.pr.thresholds.tolist(),
                   "precision": self.pr.precision.tolist(),
                   "recall": self.pr.recall.tolist()},
            "roc": {"thresholds": self.roc.thresholds.tolist(),
                    "fpr": self.roc.fpr.tolist(),
                    "tpr": self.roc.tpr.tolist()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        bins = tuple(
            BinRate(lo=b["lo"], hi=(float("inf") if b["hi"] is None else b["hi"]),
                    n_pos=b["n_pos"], n_neg=b["n_neg"],
                    tpr=b["tpr"], fpr=b["fpr"], tnr=b["tnr"])
            for b in d["bins"]
        )
        return cls(
            horizon_steps=d["horizon_steps"], n_steps=d["n_steps"],
            n_pos=d["n_pos"], auroc=d["auroc"], auprc=d["auprc"],
            precision_floor=d["precision_floor"],
            recall_at_precision=d["recall_at_precision"],
            threshold=(float("inf") if d["threshold"] is None else d["threshold"]),
            events_detected=d["events_detected"],
            events_eligible=d["events_eligible"],
            event_recall=d["event_recall"],
            bin_steps=d["bin_steps"], bins=bins,
            pr=PRCurve(thresholds=np.asarray(d["pr"]["thresholds"]),
                       precision=np.asarray(d["pr"]["precision"]),
                       recall=np.asarray(d["pr"]["recall"])),
            roc=ROCCurve(thresholds=np.asarray(d["roc"]["thresholds"]),
                         fpr=np.asarray(d["roc"]["fpr"]),
                         tpr=np.asarray(d["roc"]["tpr"])),
        )


def evaluate(stays, horizon_steps: int, precision_floor: float = 0.5,
             bin_steps: int = 2) -> EvalReport:
    """Full evaluation of per-stay scores at one horizon.

    The operating threshold is chosen on the pooled step-level PR curve
    (max recall with precision at or above the floor), then reused for
    event recall and the distance-binned rates. When no event has an
    observable window, event recall is reported absent rather than
    failing the whole evaluation.
    """
    stays = list(stays)
    pool = pooled_set(stays, horizon_steps)
    rap, threshold = recall_at_precision(pool, precision_floor)
    try:
        ev = event_recall(stays, horizon_steps, threshold)
        ev_fields = {"events_detected": ev.detected,
                     "events_eligible": ev.eligible,
                     "event_recall": ev.recall}
    except UndefinedMetricError:
        ev_fields = {"events_detected": 0, "events_eligible": 0,
                     "event_recall": None}
    return EvalReport(
        horizon_steps=int(horizon_steps),
        n_steps=pool.scores.shape[0],
        n_pos=pool.n_pos,
        auroc=auroc(pool),
        auprc=auprc(pool),
        precision_floor=float(precision_floor),
        recall_at_precision=rap,
        threshold=threshold,
        bin_steps=int(bin_steps),
        bins=binned_rates(pool, threshold, bin_steps),
        pr=pr_curve(pool),
        roc=roc_curve(pool),
        **ev_fields,
    )
