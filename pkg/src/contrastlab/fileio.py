"""Line-oriented text serialization shared by checkpoints, datasets, and exports.

Floats are written with `repr`, the shortest decimal that round-trips to the
same 64-bit value, so save -> load is bit-exact while files stay readable by
external tools.
"""

import numpy as np

from .errors import FormatError


def float_line(values) -> str:
    return " ".join(repr(float(v)) for v in values)


class LineReader:
    """Reads a text file line by line, tracking the byte offset of each line."""

    def __init__(self, path):
        self.path = path
        with open(path, "rb") as fh:
            self._raw = fh.read()
        self._pos = 0

    @property
    def offset(self) -> int:
        return self._pos

    def next_line(self, what: str = "line") -> str:
        if self._pos >= len(self._raw):
            raise FormatError(f"unexpected end of file, wanted {what}", self._pos)
        end = self._raw.find(b"\n", self._pos)
        if end < 0:
            end = len(self._raw)
        start = self._pos
        line = self._raw[start:end]
        self._pos = end + 1
        try:
            return line.decode("ascii").rstrip("\r")
        except UnicodeDecodeError as exc:
            raise FormatError(f"non-ascii bytes in {what}", start) from exc

    def expect(self, expected: str, what: str) -> None:
        start = self._pos
        line = self.next_line(what)
        if line != expected:
            raise FormatError(f"bad {what}: expected {expected!r}, got {line!r}", start)

    def fields(self, what: str, count: int | None = None) -> list[str]:
        start = self._pos
        parts = self.next_line(what).split()
        if count is not None and len(parts) != count:
            raise FormatError(f"bad {what}: expected {count} fields, got {len(parts)}", start)
        return parts

    def floats(self, count: int, what: str) -> np.ndarray:
        start = self._pos
        parts = self.fields(what, count)
        try:
            return np.array([float(p) for p in parts], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"bad float in {what}", start) from exc

    def int_after(self, key: str, what: str) -> int:
        start = self._pos
        parts = self.fields(what, 2)
        if parts[0] != key:
            raise FormatError(f"bad {what}: expected key {key!r}, got {parts[0]!r}", start)
        try:
            return int(parts[1])
        except ValueError as exc:
            raise FormatError(f"bad integer in {what}", start) from exc

    def float_after(self, key: str, what: str) -> float:
        start = self._pos
        parts = self.fields(what, 2)
        if parts[0] != key:
            raise FormatError(f"bad {what}: expected key {key!r}, got {parts[0]!r}", start)
        try:
            return float(parts[1])
        except ValueError as exc:
            raise FormatError(f"bad float in {what}", start) from exc

    def matrix(self, rows: int, cols: int, what: str) -> np.ndarray:
        out = np.empty((rows, cols), dtype=np.float64)
        for r in range(rows):
            out[r] = self.floats(cols, f"{what} row {r}")
        return out
