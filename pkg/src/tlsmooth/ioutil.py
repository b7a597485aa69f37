"""Small file-writing helpers shared by training and the harness."""

from __future__ import annotations

import os
import tempfile


def atomic_write_bytes(path, data: bytes):
    """Write via a temp file in the same directory, then rename.

    A crashed or interrupted run leaves either the old file or the new
    one, never a torn half-write.
    """
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))
