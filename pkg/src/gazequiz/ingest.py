"""Strict CSV reader for headset gaze logs.

Two layouts are accepted, chosen by the header:

* LABELED   ``t_ms,target[,valid]``
* GEOMETRIC ``t_ms,ox,oy,oz,dx,dy,dz[,valid]``

Parsed logs are held column-wise in a :class:`GazeTrace`; iterating one
yields :class:`~gazequiz.model.GazeSample` values.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import BinaryIO, Iterator

import numpy as np

from .errors import EncodingError, HeaderError, MonotonicityError, RowError
from .model import GazeSample

LABELED_COLUMNS = ("t_ms", "target")
GEOMETRIC_COLUMNS = ("t_ms", "ox", "oy", "oz", "dx", "dy", "dz")
OPTIONAL_COLUMNS = ("valid",)
_RAY_COLUMNS = GEOMETRIC_COLUMNS[1:]
# Already-unit directions are left bit-exact so CSV round trips are stable.
_RENORM_TOL = 1e-12
_MAX_T_MS = 2**53


class Mode(str, Enum):
    LABELED = "LABELED"
    GEOMETRIC = "GEOMETRIC"


@dataclass(frozen=True)
class GazeLogHeader:
    columns: tuple[str, ...]
    mode: Mode

    @property
    def has_valid(self) -> bool:
        return "valid" in self.columns

    @classmethod
    def parse(cls, row: list[str]) -> "GazeLogHeader":
        cols = tuple(c.strip() for c in row)
        if not cols or cols == ("",):
            raise HeaderError("empty header row")
        seen = set()
        for c in cols:
            if c in seen:
                raise HeaderError(f"duplicate column {c!r}", column=c)
            seen.add(c)
        known = set(LABELED_COLUMNS) | set(GEOMETRIC_COLUMNS) | set(OPTIONAL_COLUMNS)
        for c in cols:
            if c not in known:
                raise HeaderError(f"unknown column {c!r}", column=c)
        labeled = "target" in seen
        geometric = bool(seen & set(_RAY_COLUMNS))
        if labeled and geometric:
            raise HeaderError("header mixes target and ray columns", column="target")
        required = LABELED_COLUMNS if labeled else GEOMETRIC_COLUMNS
        for c in required:
            if c not in seen:
                raise HeaderError(f"missing column {c!r}", column=c)
        return cls(cols, Mode.LABELED if labeled else Mode.GEOMETRIC)


@dataclass(frozen=True)
class IngestStats:
    row_count: int
    invalid_count: int
    dropped_duplicates: int
    max_gap_ms: int


@dataclass(eq=False)
class GazeTrace:
    """Ordered gaze samples stored column-wise.

    ``origins``/``directions`` are ``(n, 3)`` float arrays in GEOMETRIC mode
    and ``None`` otherwise; ``targets`` is a tuple of labels in LABELED mode.
    """

    mode: Mode
    t_ms: np.ndarray
    valid: np.ndarray
    origins: np.ndarray | None = None
    directions: np.ndarray | None = None
    targets: tuple[str, ...] | None = None

    def __len__(self) -> int:
        return len(self.t_ms)

    def sample(self, i: int) -> GazeSample:
        if self.mode is Mode.LABELED:
            return GazeSample(int(self.t_ms[i]), target=self.targets[i], valid=bool(self.valid[i]))
        return GazeSample(
            int(self.t_ms[i]),
            origin=tuple(float(v) for v in self.origins[i]),
            direction=tuple(float(v) for v in self.directions[i]),
            valid=bool(self.valid[i]),
        )

    def __iter__(self) -> Iterator[GazeSample]:
        for i in range(len(self)):
            yield self.sample(i)

    def __eq__(self, other) -> bool:
        if not isinstance(other, GazeTrace) or self.mode is not other.mode:
            return NotImplemented if not isinstance(other, GazeTrace) else False
        same = np.array_equal(self.t_ms, other.t_ms) and np.array_equal(self.valid, other.valid)
        if self.mode is Mode.LABELED:
            return same and self.targets == other.targets
        return same and np.array_equal(self.origins, other.origins) and np.array_equal(self.directions, other.directions)

    def take(self, idx) -> "GazeTrace":
        """Subset by index array or boolean mask."""
        return GazeTrace(
            self.mode,
            self.t_ms[idx],
            self.valid[idx],
            None if self.origins is None else self.origins[idx],
            None if self.directions is None else self.directions[idx],
            None if self.targets is None else tuple(np.asarray(self.targets, dtype=object)[idx]),
        )

    @classmethod
    def from_samples(cls, samples) -> "GazeTrace":
        samples = list(samples)
        labeled = bool(samples) and samples[0].target is not None and samples[0].direction is None
        t = np.array([s.t_ms for s in samples], dtype=np.int64)
        valid = np.array([s.valid for s in samples], dtype=bool)
        if labeled:
            return cls(Mode.LABELED, t, valid, targets=tuple(s.target for s in samples))
        o = np.array([s.origin for s in samples], dtype=float).reshape(-1, 3)
        d = np.array([s.direction for s in samples], dtype=float).reshape(-1, 3)
        return cls(Mode.GEOMETRIC, t, valid, o, d)


def _parse_int(text: str, line: int, name: str) -> int:
    s = text.strip()
    if not s or not (s.isdigit() or (s[0] in "+-" and s[1:].isdigit())):
        raise RowError(line, name, f"not an integer: {text!r}")
    return int(s)


def _parse_float(text: str, line: int, name: str) -> float:
    s = text.strip()
    # float() also accepts "nan", "inf", "1_0" and non-ASCII digits; reject them.
    if not s or not s.isascii() or "_" in s:
        raise RowError(line, name, f"not a number: {text!r}")
    try:
        value = float(s)
    except ValueError:
        raise RowError(line, name, f"not a number: {text!r}") from None
    if not math.isfinite(value):
        raise RowError(line, name, f"not a finite number: {text!r}")
    return value


def _parse_valid(text: str, line: int) -> bool:
    s = text.strip()
    if s == "1":
        return True
    if s == "0":
        return False
    raise RowError(line, "valid", f"expected 0 or 1, got {text!r}")


def _decode(data: bytes) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        line = data[: exc.start].count(b"\n") + 1
        raise EncodingError(f"invalid UTF-8 at byte {exc.start}", line=line) from None


def normalize_directions(trace: GazeTrace) -> GazeTrace:
    """Rescale directions to unit length; zero or non-finite directions mark the sample invalid."""
    if trace.mode is not Mode.GEOMETRIC:
        return trace
    d = np.array(trace.directions, dtype=float, copy=True)
    norms = np.sqrt(np.einsum("ij,ij->i", d, d)) if len(d) else np.zeros(0)
    degenerate = ~(norms > 0) | ~np.isfinite(norms)
    rescale = ~degenerate & (np.abs(norms - 1.0) > _RENORM_TOL)
    d[rescale] /= norms[rescale, None]
    d[degenerate] = 0.0
    valid = trace.valid & ~degenerate
    return GazeTrace(trace.mode, trace.t_ms, valid, trace.origins, d, None)


def parse_gaze_csv(stream: bytes | BinaryIO, config=None, *, sort: bool = False) -> tuple[GazeTrace, IngestStats]:
    """Parse a gaze CSV into an ordered trace.

    Duplicate timestamps keep the later row. Decreasing timestamps raise
    :class:`MonotonicityError` unless ``sort`` is set, in which case rows are
    stably reordered first.
    """
    data = stream if isinstance(stream, (bytes, bytearray)) else stream.read()
    text = _decode(bytes(data))
    if text.startswith("\ufeff"):
        text = text[1:]
    try:
        rows = list(csv.reader(io.StringIO(text, newline=""), strict=True))
    except csv.Error as exc:
        raise RowError(0, None, f"CSV syntax error: {exc}") from None
    if not rows:
        raise HeaderError("missing header row")
    header = GazeLogHeader.parse(rows[0])
    cols = header.columns
    width = len(cols)
    pos = {c: i for i, c in enumerate(cols)}
    i_t = pos["t_ms"]
    i_valid = pos.get("valid")
    labeled = header.mode is Mode.LABELED
    i_target = pos.get("target")
    ray_idx = [pos[c] for c in _RAY_COLUMNS] if not labeled else []

    body = text.partition("\n")[2]
    fast = None if labeled or list(cols) != list(GEOMETRIC_COLUMNS) else _fast_geometric(body, sort)
    if fast is not None:
        t_arr, rays = fast
        return _finish(Mode.GEOMETRIC, t_arr, np.ones(len(t_arr), dtype=bool), rays, None, sort)

    # ASCII text without "_" lets int()/float() match the strict per-field rules
    plain = body.isascii() and "_" not in body
    times: list[int] = []
    lines: list[int] = []
    valids: list[bool] = []
    payload: list = []
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue  # blank line
            raise RowError(line, None, f"expected {width} fields, got {len(row)}")
        try:
            if not plain:
                raise ValueError
            t = int(row[i_t])
        except ValueError:
            t = _parse_int(row[i_t], line, "t_ms")
        if not 0 <= t < _MAX_T_MS:
            raise RowError(line, "t_ms", f"timestamp {t} out of range")
        if labeled:
            target = row[i_target].strip()
            if not target:
                raise RowError(line, "target", "empty target label")
            payload.append(target)
        else:
            try:
                if not plain:
                    raise ValueError
                payload.append([float(row[k]) for k in ray_idx])
            except ValueError:
                payload.append([_parse_float(row[k], line, _RAY_COLUMNS[j]) for j, k in enumerate(ray_idx)])
        valids.append(True if i_valid is None else _parse_valid(row[i_valid], line))
        times.append(t)
        lines.append(line)

    if not labeled and payload:
        rays = np.array(payload, dtype=float).reshape(-1, 6)
        bad = np.nonzero(~np.isfinite(rays).all(axis=1))[0]
        if len(bad):
            k = int(bad[0])
            col = int(np.nonzero(~np.isfinite(rays[k]))[0][0])
            raise RowError(lines[k], _RAY_COLUMNS[col], "not a finite number")
    t_arr = np.array(times, dtype=np.int64)
    valid = np.array(valids, dtype=bool)
    if labeled:
        return _finish(Mode.LABELED, t_arr, valid, payload, lines, sort)
    return _finish(Mode.GEOMETRIC, t_arr, valid, rays if payload else np.zeros((0, 6)), lines, sort)


_FIRST_FIELD_NOT_DIGITS = re.compile(r"^(?:[^,\n]*[^0-9,\n][^,\n]*)?,", re.MULTILINE)


def _fast_geometric(body: str, sort: bool):
    """Vectorized parse of a clean geometric body, or None to use the row parser.

    Only inputs the row parser would accept unchanged take this path; anything
    unusual (quotes, blank lines, odd timestamps, non-finite values, order
    violations) falls back so errors keep their line numbers.
    """
    if not body or not body.isascii() or any(c in body for c in '"_\r#') or "\n\n" in body:
        return None
    if _FIRST_FIELD_NOT_DIGITS.search(body):
        return None
    try:
        arr = np.loadtxt(io.StringIO(body), delimiter=",", dtype=float, comments=None, ndmin=2)
    except ValueError:
        return None
    if arr.shape[1] != 7 or not np.isfinite(arr).all():
        return None
    t = arr[:, 0]
    if not (t < _MAX_T_MS).all():
        return None
    t_arr = t.astype(np.int64)
    if not sort and len(t_arr) > 1 and (np.diff(t_arr) < 0).any():
        return None
    return t_arr, arr[:, 1:]


def _finish(mode: Mode, t_arr: np.ndarray, valid: np.ndarray, payload, lines, sort: bool):
    n_rows = len(t_arr)
    order = np.arange(n_rows)
    if n_rows > 1:
        drops = np.nonzero(np.diff(t_arr) < 0)[0]
        if len(drops):
            if not sort:
                k = int(drops[0]) + 1
                raise MonotonicityError(lines[k], int(t_arr[k]), int(t_arr[k - 1]))
            order = np.argsort(t_arr, kind="stable")
    t_sorted = t_arr[order]
    # keep the last row of each run of equal timestamps
    keep = np.ones(n_rows, dtype=bool)
    if n_rows > 1:
        keep[:-1] = t_sorted[1:] != t_sorted[:-1]
    idx = order[keep]
    t_final = t_arr[idx]
    valid = valid[idx]
    if mode is Mode.LABELED:
        targets = tuple(payload[i] for i in idx)
        trace = GazeTrace(Mode.LABELED, t_final, valid, targets=targets)
    else:
        rays = payload[idx]
        trace = normalize_directions(GazeTrace(Mode.GEOMETRIC, t_final, valid, rays[:, :3].copy(), rays[:, 3:].copy()))
    max_gap = int(np.max(np.diff(t_final))) if len(t_final) > 1 else 0
    stats = IngestStats(
        row_count=n_rows,
        invalid_count=int(np.count_nonzero(~trace.valid)),
        dropped_duplicates=int(n_rows - len(idx)),
        max_gap_ms=max_gap,
    )
    return trace, stats


def trace_to_csv(trace: GazeTrace, *, include_valid: bool | None = None) -> bytes:
    """Serialize a trace in the matching CSV layout (``\\n`` line endings)."""
    if include_valid is None:
        include_valid = not bool(np.all(trace.valid))
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    header = list(LABELED_COLUMNS if trace.mode is Mode.LABELED else GEOMETRIC_COLUMNS)
    if include_valid:
        header.append("valid")
    writer.writerow(header)
    for i in range(len(trace)):
        row = [str(int(trace.t_ms[i]))]
        if trace.mode is Mode.LABELED:
            row.append(trace.targets[i])
        else:
            row += [repr(float(v)) for v in trace.origins[i]]
            row += [repr(float(v)) for v in trace.directions[i]]
        if include_valid:
            row.append("1" if trace.valid[i] else "0")
        writer.writerow(row)
    return out.getvalue().encode("utf-8")
