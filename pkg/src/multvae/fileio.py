"""Small binary-file helpers shared by the corpus and checkpoint codecs.

All multi-byte integers in our on-disk formats are little-endian.
Writers go through :func:`atomic_write` so a crash mid-write can never
leave a truncated file at the destination path.
"""

from __future__ import annotations

import contextlib
import os
import struct
import tempfile

from .errors import DataError


@contextlib.contextmanager
def atomic_write(path, mode: str = "wb"):
    """Write to a temp file in the target directory, then rename over
    ``path``.  The rename only happens if the body completes without
    raising."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-",
                                    suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as handle:
            yield handle
        os.replace(tmp_path, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp_path)
        raise


def write_u32(handle, value: int) -> None:
    handle.write(struct.pack("<I", value))


def write_u64(handle, value: int) -> None:
    handle.write(struct.pack("<Q", value))


def read_exact(handle, n: int) -> bytes:
    data = handle.read(n)
    if len(data) != n:
        raise DataError(f"unexpected end of file (wanted {n} bytes, "
                        f"got {len(data)})")
    return data


def read_u32(handle) -> int:
    return struct.unpack("<I", read_exact(handle, 4))[0]


def read_u64(handle) -> int:
    return struct.unpack("<Q", read_exact(handle, 8))[0]


def write_string_table(handle, strings) -> None:
    """Each string as a u32 byte length followed by its UTF-8 bytes."""
    for s in strings:
        raw = s.encode("utf-8")
        write_u32(handle, len(raw))
        handle.write(raw)


def read_string_table(handle, count: int) -> list[str]:
    out = []
    for _ in range(count):
        length = read_u32(handle)
        out.append(read_exact(handle, length).decode("utf-8"))
    return out
