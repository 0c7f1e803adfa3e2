"""Ray casting against AOI shapes and per-sample gaze labeling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import UnknownLabelError
from .ingest import GazeTrace, Mode
from .model import AWAY, AoiDefinition, Box, Rectangle

# Parallel-ray and on-boundary slack; scene units are meters.
EPS = 1e-9


def ray_hits_rectangle(origin, direction, rect: Rectangle) -> float | None:
    """Distance along the ray to ``rect``, or ``None`` when missed or parallel."""
    c, u, v = rect.center, rect.half_u, rect.half_v
    n = (
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    )
    nn = math.sqrt(n[0] ** 2 + n[1] ** 2 + n[2] ** 2)
    denom = sum(direction[i] * n[i] for i in range(3)) / nn
    if abs(denom) < EPS:
        return None
    t = sum((c[i] - origin[i]) * n[i] for i in range(3)) / nn / denom
    if t < 0:
        return None
    rel = [origin[i] + t * direction[i] - c[i] for i in range(3)]
    a = sum(rel[i] * u[i] for i in range(3)) / sum(x * x for x in u)
    b = sum(rel[i] * v[i] for i in range(3)) / sum(x * x for x in v)
    if abs(a) <= 1 + EPS and abs(b) <= 1 + EPS:
        return t
    return None


def ray_hits_box(origin, direction, box: Box) -> float | None:
    """Slab-method entry distance; 0 when the origin is inside the box."""
    t_near, t_far = -math.inf, math.inf
    for i in range(3):
        o, d, lo, hi = origin[i], direction[i], box.min[i], box.max[i]
        if abs(d) < EPS:
            if o < lo or o > hi:
                return None
            continue
        t1, t2 = (lo - o) / d, (hi - o) / d
        if t1 > t2:
            t1, t2 = t2, t1
        t_near = max(t_near, t1)
        t_far = min(t_far, t2)
        if t_near > t_far:
            return None
    if t_far < 0:
        return None
    return max(t_near, 0.0)


def ray_distance(origin, direction, aoi: AoiDefinition) -> float | None:
    if isinstance(aoi.shape, Rectangle):
        return ray_hits_rectangle(origin, direction, aoi.shape)
    return ray_hits_box(origin, direction, aoi.shape)


# --- vectorized variants used for whole traces ---------------------------------


def _rect_distances(o: np.ndarray, d: np.ndarray, rect: Rectangle) -> np.ndarray:
    c = np.asarray(rect.center)
    u = np.asarray(rect.half_u)
    v = np.asarray(rect.half_v)
    n = np.cross(u, v)
    n /= np.linalg.norm(n)
    denom = d @ n
    out = np.full(len(o), np.inf)
    ok = np.abs(denom) >= EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((c - o) @ n) / denom
    ok &= t >= 0
    p = o + t[:, None] * d - c
    a = (p @ u) / (u @ u)
    b = (p @ v) / (v @ v)
    ok &= (np.abs(a) <= 1 + EPS) & (np.abs(b) <= 1 + EPS)
    out[ok] = t[ok]
    return out


def _box_distances(o: np.ndarray, d: np.ndarray, box: Box) -> np.ndarray:
    lo = np.asarray(box.min)
    hi = np.asarray(box.max)
    n = len(o)
    t_near = np.full(n, -np.inf)
    t_far = np.full(n, np.inf)
    miss = np.zeros(n, dtype=bool)
    for i in range(3):
        di = d[:, i]
        oi = o[:, i]
        par = np.abs(di) < EPS
        miss |= par & ((oi < lo[i]) | (oi > hi[i]))
        safe = np.where(par, 1.0, di)
        t1 = (lo[i] - oi) / safe
        t2 = (hi[i] - oi) / safe
        t_lo = np.where(par, -np.inf, np.minimum(t1, t2))
        t_hi = np.where(par, np.inf, np.maximum(t1, t2))
        t_near = np.maximum(t_near, t_lo)
        t_far = np.minimum(t_far, t_hi)
    miss |= (t_near > t_far) | (t_far < 0)
    out = np.maximum(t_near, 0.0)
    out[miss] = np.inf
    return out


def hit_distances(origins: np.ndarray, directions: np.ndarray, aois: Sequence[AoiDefinition]) -> np.ndarray:
    """``(n, len(aois))`` hit distances, ``inf`` for misses."""
    o = np.asarray(origins, dtype=float).reshape(-1, 3)
    d = np.asarray(directions, dtype=float).reshape(-1, 3)
    cols = []
    for aoi in aois:
        if isinstance(aoi.shape, Rectangle):
            cols.append(_rect_distances(o, d, aoi.shape))
        else:
            cols.append(_box_distances(o, d, aoi.shape))
    if not cols:
        return np.full((len(o), 0), np.inf)
    return np.stack(cols, axis=1)


@dataclass(eq=False)
class LabeledTrace:
    """Per-sample AOI labels. ``directions`` is kept for fixation filtering."""

    t_ms: np.ndarray
    labels: np.ndarray  # object array of str
    valid: np.ndarray
    directions: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.t_ms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledTrace):
            return NotImplemented
        return (
            np.array_equal(self.t_ms, other.t_ms)
            and list(self.labels) == list(other.labels)
            and np.array_equal(self.valid, other.valid)
        )

    def take(self, idx) -> "LabeledTrace":
        return LabeledTrace(
            self.t_ms[idx],
            self.labels[idx],
            self.valid[idx],
            None if self.directions is None else self.directions[idx],
        )

    @classmethod
    def from_labels(cls, t_ms, labels, valid=None) -> "LabeledTrace":
        t = np.asarray(t_ms, dtype=np.int64)
        lab = np.empty(len(t), dtype=object)
        lab[:] = list(labels)
        v = np.ones(len(t), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
        return cls(t, lab, v)


def label_samples(trace: GazeTrace, aois: Sequence[AoiDefinition]) -> LabeledTrace:
    """Assign each sample the label of its nearest-hit AOI, or ``"away"``.

    Equal distances resolve to the AOI declared first. LABELED traces keep
    their labels, which must name a declared AOI (or ``"away"``).
    """
    n = len(trace)
    labels = np.empty(n, dtype=object)
    valid = np.asarray(trace.valid, dtype=bool).copy()
    if trace.mode is Mode.LABELED:
        known = {a.label for a in aois} | {AWAY}
        for i, target in enumerate(trace.targets):
            if target not in known:
                raise UnknownLabelError(i, target)
        labels[:] = list(trace.targets)
        labels[~valid] = AWAY
        return LabeledTrace(np.asarray(trace.t_ms), labels, valid)

    names = np.array([a.label for a in aois] + [AWAY], dtype=object)
    dist = hit_distances(trace.origins, trace.directions, aois)
    if dist.shape[1]:
        best = np.argmin(dist, axis=1)  # first minimum -> declaration order
        hit = np.isfinite(dist[np.arange(n), best])
        codes = np.where(hit, best, len(aois))
    else:
        codes = np.full(n, len(aois))
    codes[~valid] = len(aois)
    labels[:] = names[codes]
    return LabeledTrace(np.asarray(trace.t_ms), labels, valid, np.asarray(trace.directions))
