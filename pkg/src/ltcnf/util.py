"""Small shared helpers: seeded sub-streams and atomic file writes."""

import os
import tempfile
import zlib

import numpy as np


def named_rng(seed: int, stream: str) -> np.random.Generator:
    """Independent generator for a named sub-stream of one master seed."""
    return np.random.default_rng([int(seed), zlib.crc32(stream.encode("utf-8"))])


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file + rename, so failures leave nothing behind."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        os.chmod(tmp, 0o666 & ~_umask())
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
