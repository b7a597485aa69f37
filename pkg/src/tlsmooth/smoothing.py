"""Temporal smoothing of hard event labels.

Hard labels switch from 0 to 1 the moment the next event enters the
prediction horizon, which forces a classifier to treat a step 11.9
hours ahead of an event exactly like one 5 minutes ahead. The functions
here replace the hard target with a soft target ``q(dist)`` that decays
from 1 (event imminent) to 0 (event far away) as the time to the next
event grows, encoding how certain the positive class really is.

Every parametrization is a non-increasing function of ``dist`` with
``q = 1`` at the near boundary and ``q = 0`` beyond the far boundary:

* ``exp``      exponential decay, rate ``gamma``, support (h_min, h_max]
* ``step``     staircase with ``count`` treads, the average of the
               per-horizon hard labels on an evenly spaced grid
* ``linear``   straight line between the boundaries
* ``sigmoid``  logistic decay centred on the true horizon, support [0, 2h]
* ``concave``  mirrored exponential, flat near the event and steep far out
* ``shift``    hard labels for a shorter horizon ``h_shift``
* ``none``     the hard labels themselves

The exponential, sigmoid and concave families are solved so that the
boundary conditions hold exactly; the solved constants are exposed for
inspection but evaluation uses equivalent rearrangements whose
exponents are never positive, so no parameter choice can overflow.

Distances are in steps, matching :mod:`tlsmooth.labels`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericFailureError
from .labels import HorizonGrid, LabelTrack, _horizon_array

_KINDS = ("exp", "step", "linear", "sigmoid", "concave", "shift", "none")


@dataclass(frozen=True)
class SmoothingConstants:
    """Solved constants of a decay parametrization.

    ``d`` shifts the decay so the curve passes through 1 at the near
    boundary; ``A`` (and ``K`` for the logistic family) rescale it so it
    reaches 0 at the far boundary.
    """

    d: float
    A: float
    K: float | None = None


@dataclass(frozen=True)
class SmoothingSpec:
    """Which smoothing to apply and with what parameters.

    ``h_true`` is the operating prediction horizon in steps. ``h_min``
    and ``h_max`` default to 0 and ``2 * h_true``; the sigmoid and
    staircase families are only defined on that default range.
    """

    kind: str
    h_true: int
    gamma: float | None = None
    step_count: int | None = None
    h_shift: int | None = None
    h_min: int | None = None
    h_max: int | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidInputError(
                f"unknown smoothing kind {self.kind!r}; expected one of {_KINDS}"
            )
        h = int(self.h_true)
        if h < 1:
            raise InvalidInputError("h_true must be at least one step")
        object.__setattr__(self, "h_true", h)
        lo = 0 if self.h_min is None else int(self.h_min)
        hi = 2 * h if self.h_max is None else int(self.h_max)
        if lo < 0 or hi <= lo:
            raise InvalidInputError("need 0 <= h_min < h_max")
        object.__setattr__(self, "h_min", lo)
        object.__setattr__(self, "h_max", hi)

        needs_gamma = self.kind in ("exp", "sigmoid", "concave")
        if needs_gamma:
            if self.gamma is None or not self.gamma > 0:
                raise InvalidInputError(f"{self.kind} smoothing needs gamma > 0")
            object.__setattr__(self, "gamma", float(self.gamma))
        elif self.gamma is not None:
            raise InvalidInputError(f"{self.kind} smoothing takes no gamma")

        if self.kind == "step":
            if self.step_count is None or int(self.step_count) < 1:
                raise InvalidInputError("step smoothing needs step_count >= 1")
            object.__setattr__(self, "step_count", int(self.step_count))
        elif self.step_count is not None:
            raise InvalidInputError(f"{self.kind} smoothing takes no step_count")

        if self.kind == "shift":
            if self.h_shift is None or int(self.h_shift) < 0:
                raise InvalidInputError("shift smoothing needs h_shift >= 0")
            object.__setattr__(self, "h_shift", int(self.h_shift))
        elif self.h_shift is not None:
            raise InvalidInputError(f"{self.kind} smoothing takes no h_shift")

        if self.kind in ("sigmoid", "step") and (lo, hi) != (0, 2 * h):
            raise InvalidInputError(
                f"{self.kind} smoothing is defined on the default range "
                f"(0, 2*h_true); got ({lo}, {hi})"
            )

    def grid(self) -> HorizonGrid:
        """The staircase's horizon grid (step smoothing only)."""
        if self.kind != "step":
            raise InvalidInputError("only step smoothing has a horizon grid")
        return HorizonGrid.evenly_spaced(self.h_true, self.step_count)


@dataclass(frozen=True)
class TargetTrack:
    """Soft targets for one stay; masked steps carry q = 0 and mask False."""

    q: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        m = np.asarray(self.mask, dtype=bool)
        if q.shape != m.shape or q.ndim != 1:
            raise InvalidInputError("q and mask must be 1-d arrays of equal length")
        if not np.isfinite(q).all() or (q < 0).any() or (q > 1).any():
            raise InvalidInputError("targets must lie in [0, 1]")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "mask", m)


def _dist_array(dist):
    """Broadcast helper: scalars in, scalar out; arrays in, array out."""
    arr = np.asarray(dist, dtype=np.float64)
    if np.isnan(arr).any() or (arr[np.isfinite(arr)] < 0).any():
        raise InvalidInputError("distances must be >= 0 or inf")
    return arr


def _scalar_like(value: np.ndarray, template) -> np.ndarray | float:
    if np.isscalar(template) or np.asarray(template).ndim == 0:
        return float(value)
    return value


def _check_range(gamma: float, h_min: int, h_max: int):
    if not gamma > 0:
        raise InvalidInputError("gamma must be positive")
    if h_min < 0 or h_max <= h_min:
        raise InvalidInputError("need 0 <= h_min < h_max")


def exp_constants(gamma: float, h_min: int, h_max: int) -> SmoothingConstants:
    """Constants of the exponential decay q = exp(-gamma*(dist - d)) + A.

    Solved so that q(h_min) = 1 and q(h_max) = 0:

        d = h_min - log(1 - exp(-gamma*W)) / gamma,   W = h_max - h_min
        A = -1 / expm1(gamma*W)

    Both are evaluated through log1p/expm1 so small gamma*W loses no
    precision and large gamma*W cannot overflow.
    """
    _check_range(gamma, h_min, h_max)
    width = float(h_max - h_min)
    d = h_min - np.log1p(-np.exp(-gamma * width)) / gamma
    A = -1.0 / np.expm1(gamma * width)
    consts = SmoothingConstants(d=float(d), A=float(A))
    _verify_boundaries(
        "exp",
        near=_q_exp_raw(np.float64(h_min), gamma, h_min, h_max),
        far=_q_exp_raw(np.float64(h_max), gamma, h_min, h_max),
        scale=max(1.0, abs(consts.A)),
    )
    return consts


def _verify_boundaries(kind: str, near, far, scale: float, tol: float = 1e-12):
    if abs(near - 1.0) > tol * scale or abs(far) > tol * scale:
        raise NumericFailureError(
            f"{kind} smoothing constants violate boundary conditions: "
            f"q(near)={near!r}, q(far)={far!r}"
        )


def _q_exp_raw(d, gamma, h_min, h_max):
    # exp(-gamma*(d - const)) + A rearranged so every exponent is <= 0:
    #   q = (exp(-gamma*(d - h_min)) - exp(-gamma*W)) / (1 - exp(-gamma*W))
    width = h_max - h_min
    ew = np.exp(-gamma * width)
    return (np.exp(-gamma * (d - h_min)) - ew) / (1.0 - ew)


def q_exp(dist, gamma: float, h_min: int = 0, h_max: int | None = None,
          h_true: int | None = None):
    """Exponentially decaying soft target.

    1 for dist <= h_min, 0 for dist > h_max, exponential decay with rate
    ``gamma`` in between, continuous at both boundaries. ``h_max``
    defaults to ``2 * h_true`` when only the horizon is given.
    """
    if h_max is None:
        if h_true is None:
            raise InvalidInputError("q_exp needs h_max or h_true")
        h_max = 2 * int(h_true)
    _check_range(gamma, h_min, h_max)
    d = _dist_array(dist)
    inside = np.clip(d, h_min, h_max)
    q = _q_exp_raw(inside, gamma, h_min, h_max)
    q = np.where(d > h_max, 0.0, q)
    return _scalar_like(np.clip(q, 0.0, 1.0), dist)


def q_step(dist, grid):
    """Staircase target: the fraction of grid horizons at or beyond dist.

    Equals the mean of the per-horizon hard labels over the grid for
    any dist > 0, dropping by 1/count as dist passes each horizon.
    ``grid`` may be a :class:`~tlsmooth.labels.HorizonGrid` or any
    ascending positive sequence.
    """
    hs = _horizon_array(grid)
    d = _dist_array(dist)
    below = np.searchsorted(hs, np.atleast_1d(d), side="left")
    q = (hs.shape[0] - below) / hs.shape[0]
    q = q.reshape(np.shape(d))
    return _scalar_like(q, dist)


def q_linear(dist, h_min: int = 0, h_max: int | None = None,
             h_true: int | None = None):
    """Straight-line target: 1 at h_min falling to 0 at h_max."""
    if h_max is None:
        if h_true is None:
            raise InvalidInputError("q_linear needs h_max or h_true")
        h_max = 2 * int(h_true)
    if h_min < 0 or h_max <= h_min:
        raise InvalidInputError("need 0 <= h_min < h_max")
    d = _dist_array(dist)
    alpha = (d - h_min) / (h_max - h_min)
    return _scalar_like(1.0 - np.clip(alpha, 0.0, 1.0), dist)


def sigmoid_constants(gamma: float, h_true: int) -> SmoothingConstants:
    """Constants of the logistic decay on [0, 2h].

    q(dist) = (K - A) / (1 + exp((dist - d)/gamma)) + A with d = h, and
    A, K solved so q(0) = 1 and q(2h) = 0. Closed forms:

        A = 1 / (1 - exp(h/gamma)),   K = 1 / (1 - exp(-h/gamma))

    For very small gamma, exp(h/gamma) overflows to inf and A correctly
    degrades to -0.0, its mathematical limit; K never overflows.
    """
    h = int(h_true)
    if h < 1 or not gamma > 0:
        raise InvalidInputError("need h_true >= 1 and gamma > 0")
    with np.errstate(over="ignore"):
        A = float(1.0 / (1.0 - np.exp(h / gamma)))
    K = float(1.0 / (1.0 - np.exp(-h / gamma)))
    mid = _q_sigmoid_raw(np.float64(h), gamma, h)
    _verify_boundaries(
        "sigmoid",
        near=_q_sigmoid_raw(np.float64(0.0), gamma, h),
        far=_q_sigmoid_raw(np.float64(2 * h), gamma, h),
        scale=1.0,
        tol=1e-9,
    )
    if abs(mid - 0.5) > 1e-9:
        raise NumericFailureError(f"sigmoid midpoint off: q(h)={mid!r}")
    return SmoothingConstants(d=float(h), A=A, K=K)


def _q_sigmoid_raw(d, gamma, h):
    # The logistic form rearranged per side of the midpoint so that all
    # exponents are <= 0; exact for every gamma > 0, no overflow guard
    # needed. For d <= h:
    #   q = expm1((d - 2h)/g) / (expm1(-h/g) * (1 + exp((d - h)/g)))
    # and for d > h, with u = exp((h - d)/g), w = exp(-h/g):
    #   q = (u - w) / ((1 - w) * (1 + u))
    d = np.atleast_1d(np.asarray(d, dtype=np.float64))
    lo = d <= h
    q = np.empty_like(d)
    den = -np.expm1(-h / gamma)
    dl = d[lo]
    q[lo] = -np.expm1((dl - 2.0 * h) / gamma) / (den * (1.0 + np.exp((dl - h) / gamma)))
    dh = d[~lo]
    u = np.exp((h - dh) / gamma)
    w = np.exp(-h / gamma)
    q[~lo] = (u - w) / (den * (1.0 + u))
    return q if q.shape != (1,) else q[0]


def q_sigmoid(dist, gamma: float, h_true: int):
    """Logistic soft target on [0, 2h], exactly 0.5 at the true horizon.

    Small gamma approaches the hard labels, large gamma approaches the
    straight line. Evaluated in a rearrangement that never produces a
    positive exponent, so any gamma > 0 is safe.
    """
    h = int(h_true)
    if h < 1 or not gamma > 0:
        raise InvalidInputError("need h_true >= 1 and gamma > 0")
    d = _dist_array(dist)
    inside = np.clip(d, 0.0, 2.0 * h)
    q = np.atleast_1d(_q_sigmoid_raw(inside, gamma, h))
    q = q.reshape(np.shape(d))
    q = np.where(d > 2.0 * h, 0.0, q)
    return _scalar_like(np.clip(q, 0.0, 1.0), dist)


def concave_constants(gamma: float, h_min: int, h_max: int) -> SmoothingConstants:
    """Constants of the mirrored exponential alpha = exp(-gamma*(d - dist)) - A.

    The uncertainty ramps up slowly near the event and steeply towards
    h_max. Solving alpha(h_min) = 0, alpha(h_max) = 1 gives

        d = h_max + log(1 - exp(-gamma*W)) / gamma,   W = h_max - h_min
        A = 1 / expm1(gamma*W)
    """
    _check_range(gamma, h_min, h_max)
    width = float(h_max - h_min)
    d = h_max + np.log1p(-np.exp(-gamma * width)) / gamma
    A = 1.0 / np.expm1(gamma * width)
    consts = SmoothingConstants(d=float(d), A=float(A))
    _verify_boundaries(
        "concave",
        near=1.0 - _alpha_concave_raw(np.float64(h_min), gamma, h_min, h_max),
        far=1.0 - _alpha_concave_raw(np.float64(h_max), gamma, h_min, h_max),
        scale=max(1.0, abs(consts.A)),
    )
    return consts


def _alpha_concave_raw(d, gamma, h_min, h_max):
    # alpha = (exp(-gamma*(h_max - d)) - exp(-gamma*W)) / (1 - exp(-gamma*W))
    width = h_max - h_min
    ew = np.exp(-gamma * width)
    return (np.exp(-gamma * (h_max - d)) - ew) / (1.0 - ew)


def q_concave(dist, gamma: float, h_min: int = 0, h_max: int | None = None,
              h_true: int | None = None):
    """Concave soft target: stays close to 1 near the event, then dives."""
    if h_max is None:
        if h_true is None:
            raise InvalidInputError("q_concave needs h_max or h_true")
        h_max = 2 * int(h_true)
    _check_range(gamma, h_min, h_max)
    d = _dist_array(dist)
    inside = np.clip(d, h_min, h_max)
    q = 1.0 - _alpha_concave_raw(inside, gamma, h_min, h_max)
    q = np.where(d > h_max, 0.0, q)
    return _scalar_like(np.clip(q, 0.0, 1.0), dist)


def q_shift(dist, h_shift: int):
    """Hard labels for a shortened horizon: 1 iff dist <= h_shift.

    With h_shift equal to the operating horizon this reproduces the
    unsmoothed targets on every step that carries a label; h_shift = 0
    degenerates to all-zero targets outside the event itself.
    """
    if int(h_shift) < 0:
        raise InvalidInputError("h_shift cannot be negative")
    d = _dist_array(dist)
    q = (d <= int(h_shift)).astype(np.float64)
    return _scalar_like(q, dist)


def smooth_targets(labels: LabelTrack, spec: SmoothingSpec) -> TargetTrack:
    """Soft targets for one stay's label track.

    The mask is carried over unchanged from the label track; masked
    steps get q = 0 and are ignored by every loss. ``spec.h_true`` must
    match the horizon the labels were built for.
    """
    if not isinstance(labels, LabelTrack):
        raise InvalidInputError("labels must be a LabelTrack")
    if spec.h_true != labels.horizon_steps:
        raise InvalidInputError(
            f"smoothing horizon {spec.h_true} does not match "
            f"label horizon {labels.horizon_steps}"
        )
    d = labels.dist_to_event
    mask = labels.mask
    if spec.kind == "none":
        q = np.where(mask, labels.hard_label, 0.0)
    elif spec.kind == "exp":
        q = q_exp(d, spec.gamma, spec.h_min, spec.h_max)
    elif spec.kind == "step":
        q = q_step(d, spec.grid())
    elif spec.kind == "linear":
        q = q_linear(d, spec.h_min, spec.h_max)
    elif spec.kind == "sigmoid":
        q = q_sigmoid(d, spec.gamma, spec.h_true)
    elif spec.kind == "concave":
        q = q_concave(d, spec.gamma, spec.h_min, spec.h_max)
    elif spec.kind == "shift":
        q = q_shift(d, spec.h_shift)
    else:  # pragma: no cover - kinds validated at construction
        raise InvalidInputError(f"unknown smoothing kind {spec.kind!r}")
    q = np.where(mask, q, 0.0)
    return TargetTrack(q=q, mask=mask)
