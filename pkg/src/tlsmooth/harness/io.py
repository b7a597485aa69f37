"""Cohort files and JSON helpers.

Cohorts are stored as plain JSON with full-precision floats. Writes go
through a temp file and an atomic rename, and key order is fixed, so
re-running the same command yields byte-identical files.
"""

from __future__ import annotations

import json
import os

import numpy as np

from ..errors import InvalidInputError
from ..ioutil import atomic_write_text
from ..labels import Stay

COHORT_VERSION = 1


def dump_json(path, obj):
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def save_cohort(path, stays):
    stays = list(stays)
    if not stays:
        raise InvalidInputError("refusing to save an empty cohort")
    payload = {
        "format_version": COHORT_VERSION,
        "stays": [
            {
                "stay_id": s.stay_id,
                "step_minutes": s.step_minutes,
                "event_track": s.event_track.tolist(),
                "features": s.features.tolist(),
            }
            for s in stays
        ],
    }
    dump_json(path, payload)


def load_cohort(path):
    try:
        payload = read_json(path)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format_version") != COHORT_VERSION:
        raise InvalidInputError(
            f"{path}: expected a cohort file with format_version {COHORT_VERSION}"
        )
    stays = []
    for entry in payload.get("stays", []):
        stays.append(Stay(
            stay_id=str(entry["stay_id"]),
            step_minutes=int(entry["step_minutes"]),
            features=np.asarray(entry["features"], dtype=np.float64),
            event_track=np.asarray(entry["event_track"]),
        ))
    if not stays:
        raise InvalidInputError(f"{path}: cohort contains no stays")
    return stays


def resolve_out(path) -> str:
    """Resolve a relative output path under TLSMOOTH_OUT (default '.')."""
    path = os.fspath(path)
    if os.path.isabs(path):
        return path
    root = os.environ.get("TLSMOOTH_OUT", "")
    return os.path.join(root, path) if root else path
