"""Time-to-event labelling for early warning prediction.

A stay is a regularly sampled multivariate time series together with a
binary event track. The labelling convention used throughout the
package:

* ``dist(t)`` is the number of steps until the *next* event starts,
  looking strictly forward. Steps with no later event get ``inf``.
* The hard label at step ``t`` is 1 when ``0 < dist(t) <= h`` for a
  prediction horizon of ``h`` steps, 0 when ``dist(t) > h``.
* Steps inside an ongoing event and steps where an event starts
  (``dist == 0``) carry no label; they are masked with NaN and excluded
  from every loss and metric downstream.

Distances are measured in steps. Callers working in wall-clock units
convert once at ingestion (see :mod:`tlsmooth.harness`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


def _as_event_track(event_track) -> np.ndarray:
    arr = np.asarray(event_track)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInputError("event track must be a non-empty 1-d sequence")
    if not np.isin(arr, (0, 1)).all():
        raise InvalidInputError("event track entries must be 0 or 1")
    return arr.astype(np.int8)


@dataclass(frozen=True)
class Stay:
    """One continuous monitoring episode.

    Attributes:
        stay_id: opaque identifier, unique within a cohort.
        step_minutes: wall-clock duration of one step, positive.
        features: float array of shape (T, D).
        event_track: int array of shape (T,) with entries in {0, 1};
            1 marks steps during which the adverse event is ongoing.
    """

    stay_id: str
    step_minutes: int
    features: np.ndarray
    event_track: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        track = _as_event_track(self.event_track)
        if feats.ndim != 2:
            raise InvalidInputError("features must be a 2-d array (T, D)")
        if feats.shape[0] != track.shape[0]:
            raise InvalidInputError(
                f"features have {feats.shape[0]} rows but the event track "
                f"has {track.shape[0]} steps"
            )
        if not np.isfinite(feats).all():
            raise InvalidInputError("features must be finite")
        if int(self.step_minutes) <= 0:
            raise InvalidInputError("step_minutes must be positive")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "event_track", track)
        object.__setattr__(self, "step_minutes", int(self.step_minutes))

    @property
    def n_steps(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def event_starts(event_track) -> np.ndarray:
    """Indices where a new event begins (a 0 -> 1 transition, or 1 at t=0)."""
    track = _as_event_track(event_track)
    prev = np.concatenate(([0], track[:-1]))
    return np.flatnonzero((track == 1) & (prev == 0))


def time_to_event(event_track) -> np.ndarray:
    """Steps until the next event start, strictly ahead of each position.

    Returns a float array: ``dist[t] = min{s - t : s an event start, s > t}``
    and ``inf`` when no event starts after ``t``. An event starting at
    ``t`` itself does not count; those steps are recognised by
    ``event_track[t] == 1`` and masked by :func:`hard_labels`.
    """
    track = _as_event_track(event_track)
    starts = event_starts(track)
    t = np.arange(track.shape[0])
    # first start strictly greater than t
    nxt = np.searchsorted(starts, t, side="right")
    dist = np.full(track.shape[0], np.inf)
    has_next = nxt < starts.shape[0]
    dist[has_next] = starts[nxt[has_next]] - t[has_next]
    return dist


def _as_dist(dist) -> np.ndarray:
    arr = np.asarray(dist, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidInputError("distance sequence must be 1-d")
    if arr.size and (np.isnan(arr).any() or (arr[np.isfinite(arr)] < 0).any()):
        raise InvalidInputError("distances must be >= 0 or inf")
    return arr


def hard_labels(dist, event_track, horizon_steps: int) -> np.ndarray:
    """Binary labels for a fixed horizon, NaN where the step carries none.

    A step is positive when the next event starts within ``horizon_steps``
    (boundary included), negative when it starts later or never, and
    masked (NaN) when an event is ongoing or starting at the step itself.
    """
    d = _as_dist(dist)
    track = _as_event_track(event_track)
    if d.shape[0] != track.shape[0]:
        raise InvalidInputError("dist and event track lengths differ")
    h = int(horizon_steps)
    if h < 1:
        raise InvalidInputError("horizon must be at least one step")
    y = np.where((d > 0) & (d <= h), 1.0, 0.0)
    y[(track == 1) | (d == 0)] = np.nan
    return y


@dataclass(frozen=True)
class HorizonGrid:
    """Ascending positive horizons used for multi-horizon prediction.

    ``index_of_true`` locates the operating horizon inside ``horizons``;
    multi-horizon models are scored at that column.
    """

    horizons: tuple
    index_of_true: int

    def __post_init__(self):
        hs = tuple(int(h) for h in self.horizons)
        if len(hs) == 0:
            raise InvalidInputError("horizon grid must be non-empty")
        if any(h < 1 for h in hs):
            raise InvalidInputError("horizons must be positive step counts")
        if any(b <= a for a, b in zip(hs, hs[1:])):
            raise InvalidInputError("horizons must be strictly ascending")
        if not 0 <= int(self.index_of_true) < len(hs):
            raise InvalidInputError("index_of_true out of range")
        object.__setattr__(self, "horizons", hs)
        object.__setattr__(self, "index_of_true", int(self.index_of_true))

    @property
    def h_true(self) -> int:
        return self.horizons[self.index_of_true]

    @property
    def count(self) -> int:
        return len(self.horizons)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.horizons, dtype=np.float64)

    @classmethod
    def evenly_spaced(cls, h_true: int, count: int) -> "HorizonGrid":
        """Grid of ``count`` horizons evenly spread over (0, 2*h_true).

        Spacing is ``2*h_true / (count + 1)`` so the grid sits strictly
        inside the open interval; for odd ``count`` the middle entry is
        ``h_true`` itself. Fractional horizons are rounded to the
        nearest step (ties upward); the result must stay strictly
        ascending and still contain ``h_true``.
        """
        h = int(h_true)
        n = int(count)
        if h < 1 or n < 1:
            raise InvalidInputError("need h_true >= 1 and count >= 1")
        spacing = 2.0 * h / (n + 1)
        hs = [int(np.floor(k * spacing + 0.5)) for k in range(1, n + 1)]
        if any(b <= a for a, b in zip(hs, hs[1:])) or hs[0] < 1:
            raise InvalidInputError(
                f"count {n} is too fine for horizon {h}: rounded grid collides"
            )
        if h not in hs:
            raise InvalidInputError(
                f"evenly spaced grid of {n} horizons cannot include {h}; "
                "use an odd count"
            )
        return cls(horizons=tuple(hs), index_of_true=hs.index(h))


def _horizon_array(grid) -> np.ndarray:
    if isinstance(grid, HorizonGrid):
        return grid.as_array()
    hs = np.asarray(grid, dtype=np.float64)
    if hs.ndim != 1 or hs.size == 0:
        raise InvalidInputError("horizon grid must be a non-empty 1-d sequence")
    if (hs <= 0).any() or (np.diff(hs) <= 0).any():
        raise InvalidInputError("horizons must be positive and strictly ascending")
    return hs


def horizon_labels(dist, grid, event_track=None) -> np.ndarray:
    """Per-horizon hard labels; masked steps become all-NaN rows.

    Row ``t``, column ``k`` is ``1`` iff ``0 < dist[t] <= horizons[k]``.
    Rows with ``dist == 0`` are masked; when ``event_track`` is given,
    rows with an ongoing event are masked as well.
    """
    d = _as_dist(dist)
    hs = _horizon_array(grid)
    y = ((d[:, None] > 0) & (d[:, None] <= hs[None, :])).astype(np.float64)
    masked = d == 0
    if event_track is not None:
        track = _as_event_track(event_track)
        if track.shape[0] != d.shape[0]:
            raise InvalidInputError("dist and event track lengths differ")
        masked = masked | (track == 1)
    y[masked, :] = np.nan
    return y


@dataclass(frozen=True)
class LabelTrack:
    """Distances and hard labels for one stay at a fixed horizon."""

    dist_to_event: np.ndarray
    hard_label: np.ndarray
    horizon_steps: int

    def __post_init__(self):
        d = _as_dist(self.dist_to_event)
        y = np.asarray(self.hard_label, dtype=np.float64)
        if y.shape != d.shape:
            raise InvalidInputError("dist and label shapes differ")
        ok = np.isnan(y) | (y == 0.0) | (y == 1.0)
        if not ok.all():
            raise InvalidInputError("hard labels must be 0, 1 or NaN")
        if int(self.horizon_steps) < 1:
            raise InvalidInputError("horizon must be at least one step")
        object.__setattr__(self, "dist_to_event", d)
        object.__setattr__(self, "hard_label", y)
        object.__setattr__(self, "horizon_steps", int(self.horizon_steps))

    @property
    def mask(self) -> np.ndarray:
        """Boolean array, True where the step carries a usable label."""
        return ~np.isnan(self.hard_label)

    @property
    def n_steps(self) -> int:
        return self.dist_to_event.shape[0]

    @classmethod
    def from_stay(cls, stay: Stay, horizon_steps: int) -> "LabelTrack":
        dist = time_to_event(stay.event_track)
        y = hard_labels(dist, stay.event_track, horizon_steps)
        return cls(dist_to_event=dist, hard_label=y, horizon_steps=horizon_steps)
