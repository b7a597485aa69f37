"""Training objectives over masked sequence predictions.

Every loss here follows the same conventions:

* predictions are probabilities, clamped to [1e-7, 1 - 1e-7] before any
  logarithm;
* a boolean mask selects the steps that carry a label, and the loss is
  the plain mean over those steps (pooled, not per-stay);
* targets may be soft (values in [0, 1]) unless a loss explicitly
  requires hard labels;
* each loss has a companion ``*_grad`` returning d(loss)/d(prediction)
  with zeros at masked positions, so a caller can backpropagate through
  any of them with the same plumbing.

An all-masked batch has no defined loss value and raises
:class:`~tlsmooth.errors.UndefinedLossError`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, UndefinedLossError

CLAMP = 1e-7


@dataclass(frozen=True)
class ClassBalance:
    """Per-class weights from the positive prevalence of the train split.

    A class with prevalence b gets weight 1 / (2b), so under the
    empirical label distribution the two classes contribute equally and
    the weights average to 1.
    """

    positive_rate: float

    def __post_init__(self):
        b = float(self.positive_rate)
        if not 0.0 < b < 1.0:
            raise InvalidInputError(
                f"positive rate must be strictly inside (0, 1); got {b!r}"
            )
        object.__setattr__(self, "positive_rate", b)

    @property
    def weight_pos(self) -> float:
        return 1.0 / (2.0 * self.positive_rate)

    @property
    def weight_neg(self) -> float:
        return 1.0 / (2.0 * (1.0 - self.positive_rate))

    @classmethod
    def from_labels(cls, labels, mask) -> "ClassBalance":
        y, m = np.asarray(labels, dtype=np.float64), np.asarray(mask, dtype=bool)
        if y.shape != m.shape:
            raise InvalidInputError("labels and mask shapes differ")
        if m.sum() == 0:
            raise InvalidInputError("cannot estimate prevalence: everything masked")
        return cls(positive_rate=float(y[m].mean()))


@dataclass(frozen=True)
class FocalSpec:
    """Focusing exponent and optional class weights for the focal loss."""

    zeta: float = 2.0
    balance: ClassBalance | None = None

    def __post_init__(self):
        if not float(self.zeta) >= 0.0:
            raise InvalidInputError("zeta must be >= 0")
        object.__setattr__(self, "zeta", float(self.zeta))

    @property
    def weights(self) -> tuple:
        if self.balance is None:
            return 1.0, 1.0
        return self.balance.weight_pos, self.balance.weight_neg


def _select(y_hat, target, mask, hard: bool):
    """Validate shapes, apply the mask, clamp predictions.

    Returns (p, t, count) with p already clamped. Raises if nothing is
    unmasked or if targets are out of range (or soft when hard labels
    are required).
    """
    p = np.asarray(y_hat, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if p.shape != t.shape:
        raise InvalidInputError("prediction and target shapes differ")
    if m.shape != p.shape:
        raise InvalidInputError("mask shape must match predictions")
    count = int(m.sum())
    if count == 0:
        raise UndefinedLossError("every step is masked; the loss has no value")
    p, t = p[m], t[m]
    if not np.isfinite(p).all() or (p < 0).any() or (p > 1).any():
        raise InvalidInputError("predictions must be probabilities in [0, 1]")
    if hard:
        if not ((t == 0.0) | (t == 1.0)).all():
            raise InvalidInputError("this loss requires hard 0/1 labels")
    else:
        if not np.isfinite(t).all() or (t < 0).any() or (t > 1).any():
            raise InvalidInputError("targets must lie in [0, 1]")
    return np.clip(p, CLAMP, 1.0 - CLAMP), t, count


def _scatter(grad_sel, y_hat, mask):
    """Place per-element gradients back into the full array shape."""
    out = np.zeros(np.shape(y_hat), dtype=np.float64)
    out[np.asarray(mask, dtype=bool)] = grad_sel
    return out


def _clamped(y_hat, mask):
    p = np.asarray(y_hat, dtype=np.float64)[np.asarray(mask, dtype=bool)]
    return (p < CLAMP) | (p > 1.0 - CLAMP)


def bce(y_hat, target, mask) -> float:
    """Cross entropy against (possibly soft) targets, mean over the mask."""
    p, t, count = _select(y_hat, target, mask, hard=False)
    loss = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    return float(loss.sum() / count)


def bce_grad(y_hat, target, mask) -> np.ndarray:
    p, t, count = _select(y_hat, target, mask, hard=False)
    g = (-t / p + (1.0 - t) / (1.0 - p)) / count
    g[_clamped(y_hat, mask)] = 0.0
    return _scatter(g, y_hat, mask)


def weighted_bce(y_hat, target, mask, balance: ClassBalance) -> float:
    """Class-weighted cross entropy; soft targets split their weight."""
    p, t, count = _select(y_hat, target, mask, hard=False)
    w1, w0 = balance.weight_pos, balance.weight_neg
    loss = -(w1 * t * np.log(p) + w0 * (1.0 - t) * np.log1p(-p))
    return float(loss.sum() / count)


def weighted_bce_grad(y_hat, target, mask, balance: ClassBalance) -> np.ndarray:
    p, t, count = _select(y_hat, target, mask, hard=False)
    w1, w0 = balance.weight_pos, balance.weight_neg
    g = (-w1 * t / p + w0 * (1.0 - t) / (1.0 - p)) / count
    g[_clamped(y_hat, mask)] = 0.0
    return _scatter(g, y_hat, mask)


def _focal_terms(p, t, spec: FocalSpec):
    w1, w0 = spec.weights
    z = spec.zeta
    pos = -w1 * (1.0 - p) ** z * t * np.log(p)
    neg = -w0 * p ** z * (1.0 - t) * np.log1p(-p)
    return pos + neg


def _focal_grad_terms(p, t, spec: FocalSpec):
    w1, w0 = spec.weights
    z = spec.zeta
    if z == 0.0:
        dpos = -w1 * t / p
        dneg = w0 * (1.0 - t) / (1.0 - p)
        return dpos + dneg
    dpos = -w1 * t * ((1.0 - p) ** z / p - z * (1.0 - p) ** (z - 1.0) * np.log(p))
    dneg = -w0 * (1.0 - t) * (z * p ** (z - 1.0) * np.log1p(-p) - p ** z / (1.0 - p))
    return dpos + dneg


def focal(y_hat, y, mask, spec: FocalSpec) -> float:
    """Focal loss: cross entropy with easy examples damped by (1-p)^zeta.

    Defined for hard labels only; soft targets are rejected.
    """
    p, t, count = _select(y_hat, y, mask, hard=True)
    return float(_focal_terms(p, t, spec).sum() / count)


def focal_grad(y_hat, y, mask, spec: FocalSpec) -> np.ndarray:
    p, t, count = _select(y_hat, y, mask, hard=True)
    g = _focal_grad_terms(p, t, spec) / count
    g[_clamped(y_hat, mask)] = 0.0
    return _scatter(g, y_hat, mask)


def focal_smoothed(y_hat, target, mask, spec: FocalSpec) -> float:
    """Focal loss generalised to soft targets. Experimental.

    The target splits each step's weight between the two focal terms.
    Exposed for combination studies; it has not shown gains over plain
    soft-target cross entropy.
    """
    p, t, count = _select(y_hat, target, mask, hard=False)
    return float(_focal_terms(p, t, spec).sum() / count)


def focal_smoothed_grad(y_hat, target, mask, spec: FocalSpec) -> np.ndarray:
    p, t, count = _select(y_hat, target, mask, hard=False)
    g = _focal_grad_terms(p, t, spec) / count
    g[_clamped(y_hat, mask)] = 0.0
    return _scatter(g, y_hat, mask)


def ls_targets(y, alpha: float) -> np.ndarray:
    """Classic label smoothing: interpolate each label toward the other.

    q = (1 - alpha) * y + alpha * (1 - y). Unlike temporal smoothing
    this ignores the distance to the event. NaN (masked) labels stay
    NaN. Alpha beyond 0.5 is legal but inverts the labels.
    """
    a = float(alpha)
    if not 0.0 <= a <= 1.0:
        raise InvalidInputError("alpha must lie in [0, 1]")
    y = np.asarray(y, dtype=np.float64)
    ok = np.isnan(y) | (y == 0.0) | (y == 1.0)
    if not ok.all():
        raise InvalidInputError("labels must be 0, 1 or NaN")
    return (1.0 - a) * y + a * (1.0 - y)


def mhp_loss(y_hat, y, mask) -> float:
    """Multi-horizon loss: per-step average of one cross entropy per horizon.

    ``y_hat`` and ``y`` are (T, H); ``mask`` is per step (T,). Labels
    must be hard. Equivalent to cross entropy against the staircase
    target when all horizon outputs of a step are equal.
    """
    p2, t2, m2 = _mhp_check(y_hat, y, mask)
    p, t = np.clip(p2[m2], CLAMP, 1.0 - CLAMP), t2[m2]
    loss = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    # every unmasked step contributes exactly H elements, so the mean
    # over steps of per-horizon means is the flat mean over elements
    return float(loss.mean())


def mhp_grad(y_hat, y, mask) -> np.ndarray:
    p2, t2, m2 = _mhp_check(y_hat, y, mask)
    p = np.clip(p2, CLAMP, 1.0 - CLAMP)
    g = (-t2 / p + (1.0 - t2) / (1.0 - p)) / m2.sum()
    g[(p2 < CLAMP) | (p2 > 1.0 - CLAMP)] = 0.0
    g[~m2] = 0.0
    return g


def _mhp_check(y_hat, y, mask):
    p = np.asarray(y_hat, dtype=np.float64)
    t = np.asarray(y, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if p.ndim != 2 or p.shape != t.shape:
        raise InvalidInputError("multi-horizon predictions and labels must share shape (T, H)")
    if m.shape != (p.shape[0],):
        raise InvalidInputError("multi-horizon mask must be per step, shape (T,)")
    if m.sum() == 0:
        raise UndefinedLossError("every step is masked; the loss has no value")
    m2 = np.broadcast_to(m[:, None], p.shape)
    sel_p, sel_t = p[m2], t[m2]
    if not np.isfinite(sel_p).all() or (sel_p < 0).any() or (sel_p > 1).any():
        raise InvalidInputError("predictions must be probabilities in [0, 1]")
    if not ((sel_t == 0.0) | (sel_t == 1.0)).all():
        raise InvalidInputError("multi-horizon labels must be hard 0/1")
    return p, t, m2


@dataclass(frozen=True)
class Objective:
    """Dispatchable loss choice used by the model's gradient routine.

    ``kind`` is one of ``bce``, ``weighted``, ``focal``,
    ``focal_smoothed`` or ``mhp``. What distinguishes temporally
    smoothed training from plain cross entropy is the targets, not the
    loss, so both use ``bce``.
    """

    kind: str
    balance: ClassBalance | None = None
    zeta: float = 2.0

    _KINDS = ("bce", "weighted", "focal", "focal_smoothed", "mhp")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise InvalidInputError(
                f"unknown objective kind {self.kind!r}; expected one of {self._KINDS}"
            )
        if self.kind in ("weighted",) and self.balance is None:
            raise InvalidInputError("weighted objective needs a ClassBalance")

    def _focal_spec(self) -> FocalSpec:
        return FocalSpec(zeta=self.zeta, balance=self.balance)

    @property
    def multi_horizon(self) -> bool:
        return self.kind == "mhp"

    def loss(self, y_hat, target, mask) -> float:
        if self.kind == "bce":
            return bce(y_hat, target, mask)
        if self.kind == "weighted":
            return weighted_bce(y_hat, target, mask, self.balance)
        if self.kind == "focal":
            return focal(y_hat, target, mask, self._focal_spec())
        if self.kind == "focal_smoothed":
            return focal_smoothed(y_hat, target, mask, self._focal_spec())
        return mhp_loss(y_hat, target, mask)

    def grad(self, y_hat, target, mask) -> np.ndarray:
        if self.kind == "bce":
            return bce_grad(y_hat, target, mask)
        if self.kind == "weighted":
            return weighted_bce_grad(y_hat, target, mask, self.balance)
        if self.kind == "focal":
            return focal_grad(y_hat, target, mask, self._focal_spec())
        if self.kind == "focal_smoothed":
            return focal_smoothed_grad(y_hat, target, mask, self._focal_spec())
        return mhp_grad(y_hat, target, mask)
