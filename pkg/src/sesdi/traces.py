"""Geometry-aware trace storage, spatial context queries, and acquisition subsampling."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from . import formats
from .errors import ParameterError


@dataclass(frozen=True)
class GeometryAwareTrace:
    data: np.ndarray
    src: tuple[float, float, float]
    rcv: tuple[float, float, float]
    shot_id: int
    rcv_index: int

    def D(self):
        return self.data

    def A(self):
        return (self.src, self.rcv)


class Survey:
    """Immutable trace collection, stored column-wise and sorted by ``(shot_id, rcv_index)``.

    A uniform grid over the surface (x, y) indexes traces by the cell of their
    source and of their receiver; queries intersect the two candidate sets and
    then apply the exact closed-square test.
    """

    def __init__(self, data, src, rcv, shot_id, rcv_index, record_dt, cell_size=None):
        data = np.asarray(data, dtype=np.float32)
        if data.ndim != 2 or data.shape[1] == 0:
            raise ParameterError("trace data must be (n_traces, n_samples) with n_samples > 0")
        if not np.all(np.isfinite(data)):
            raise ParameterError("trace amplitudes must be finite")
        shot_id = np.asarray(shot_id, dtype=np.int64)
        rcv_index = np.asarray(rcv_index, dtype=np.int64)
        order = np.lexsort((rcv_index, shot_id))
        self.data = data[order]
        self.src = np.asarray(src, dtype=np.float32).reshape(-1, 3)[order]
        self.rcv = np.asarray(rcv, dtype=np.float32).reshape(-1, 3)[order]
        self.shot_id = shot_id[order]
        self.rcv_index = rcv_index[order]
        n = len(self.data)
        if not (len(self.src) == len(self.rcv) == len(self.shot_id) == len(self.rcv_index) == n):
            raise ParameterError("trace arrays differ in length")
        if n > 1:
            dup = (np.diff(self.shot_id) == 0) & (np.diff(self.rcv_index) == 0)
            if dup.any():
                raise ParameterError("duplicate (shot_id, rcv_index) key in survey")
        self.record_dt = float(record_dt)
        for a in (self.data, self.src, self.rcv, self.shot_id, self.rcv_index):
            a.setflags(write=False)
        self._build_index(cell_size)

    # -- construction -------------------------------------------------------

    @classmethod
    def from_traces(cls, traces, record_dt, cell_size=None):
        traces = list(traces)
        return cls(
            np.stack([t.data for t in traces]),
            np.array([t.src for t in traces]),
            np.array([t.rcv for t in traces]),
            [t.shot_id for t in traces],
            [t.rcv_index for t in traces],
            record_dt,
            cell_size,
        )

    @classmethod
    def from_shot_records(cls, records, cell_size=None):
        data, src, rcv, sid, ridx = [], [], [], [], []
        for s, rec in enumerate(records):
            n = len(rec.receivers)
            data.append(rec.traces)
            src.append(np.tile(rec.source, (n, 1)))
            rcv.append(rec.receivers)
            sid.append(np.full(n, s))
            ridx.append(np.arange(n))
        return cls(np.concatenate(data), np.concatenate(src), np.concatenate(rcv),
                   np.concatenate(sid), np.concatenate(ridx), records[0].record_dt, cell_size)

    def save(self, path):
        formats.atomic_write(path, formats.encode_survey(
            self.data, self.src, self.rcv, self.shot_id, self.rcv_index, self.record_dt))

    @classmethod
    def load(cls, path, cell_size=None):
        d = formats.decode_survey(formats.read_bytes(path))
        return cls(d["data"], d["src"], d["rcv"], d["shot_id"], d["rcv_index"],
                   d["record_dt"], cell_size)

    def downsampled(self, out_len=400):
        factor = self.n_samples // out_len if out_len else 1
        return Survey(downsample_trace(self.data, out_len), self.src, self.rcv, self.shot_id,
                      self.rcv_index, self.record_dt * factor, self.cell_size)

    # -- access -------------------------------------------------------------

    def __len__(self):
        return len(self.data)

    @property
    def n_samples(self):
        return self.data.shape[1]

    def trace(self, i) -> GeometryAwareTrace:
        return GeometryAwareTrace(self.data[i], tuple(map(float, self.src[i])),
                                  tuple(map(float, self.rcv[i])), int(self.shot_id[i]),
                                  int(self.rcv_index[i]))

    def acquisition_geometry(self):
        return {(tuple(map(float, s)), tuple(map(float, r))) for s, r in zip(self.src, self.rcv)}

    def locations(self, members, loc_dim=4):
        """Per-trace coordinates fed to the acquisition embedding.

        ``loc_dim=4`` gives ``(src_x, src_z, rcv_x, rcv_z)``; ``6`` gives full xyz pairs.
        """
        if loc_dim == 4:
            cols = [0, 2]
        elif loc_dim == 6:
            cols = [0, 1, 2]
        else:
            raise ParameterError("loc_dim must be 4 (2D) or 6 (3D)")
        return np.concatenate([self.src[members][:, cols], self.rcv[members][:, cols]],
                              axis=1).astype(np.float64)

    def extent(self):
        pts = np.concatenate([self.src, self.rcv]).astype(np.float64)
        return pts.min(axis=0), pts.max(axis=0)

    # -- spatial index ------------------------------------------------------

    def _build_index(self, cell_size):
        lo, hi = self.extent() if len(self) else (np.zeros(3), np.zeros(3))
        if cell_size is None:
            span = float(max(hi[0] - lo[0], hi[1] - lo[1]))
            cell_size = span / 8.0 if span > 0 else 1.0
        if cell_size <= 0:
            raise ParameterError("index cell size must be positive")
        self.cell_size = float(cell_size)
        self._origin = lo[:2].copy()
        self._src_cells = self._cells(self.src)
        self._rcv_cells = self._cells(self.rcv)
        self._src_index = self._bucket(self._src_cells)
        self._rcv_index = self._bucket(self._rcv_cells)

    def _cells(self, pts):
        return np.floor((pts[:, :2].astype(np.float64) - self._origin) / self.cell_size).astype(np.int64)

    @staticmethod
    def _bucket(cells):
        buckets = defaultdict(list)
        for i, (cx, cy) in enumerate(map(tuple, cells)):
            buckets[(cx, cy)].append(i)
        return {k: np.asarray(v, dtype=np.int64) for k, v in buckets.items()}

    def _candidates(self, index, cells, lo, hi):
        c_lo = np.floor((lo - self._origin) / self.cell_size).astype(np.int64) - 1
        c_hi = np.floor((hi - self._origin) / self.cell_size).astype(np.int64) + 1
        # clamp to occupied cells so huge queries stay cheap
        if len(cells):
            c_lo = np.maximum(c_lo, cells.min(axis=0))
            c_hi = np.minimum(c_hi, cells.max(axis=0))
        if np.any(c_lo > c_hi):
            return np.zeros(0, dtype=np.int64)
        n_cells = int(np.prod(c_hi - c_lo + 1))
        if n_cells > len(index):
            keys = [k for k in index if c_lo[0] <= k[0] <= c_hi[0] and c_lo[1] <= k[1] <= c_hi[1]]
        else:
            keys = [(x, y) for x in range(c_lo[0], c_hi[0] + 1) for y in range(c_lo[1], c_hi[1] + 1)]
        parts = [index[k] for k in keys if k in index]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)

    def query(self, q, w):
        """Indices (ascending, hence canonical order) of traces with src and rcv in the square."""
        if w <= 0:
            raise ParameterError("context width must be positive")
        qx, qy = float(q[0]), float(q[1])
        lo = np.array([qx - w / 2.0, qy - w / 2.0])
        hi = np.array([qx + w / 2.0, qy + w / 2.0])
        cand = np.intersect1d(self._candidates(self._src_index, self._src_cells, lo, hi),
                              self._candidates(self._rcv_index, self._rcv_cells, lo, hi))
        return cand[in_square(self.src[cand], lo, hi) & in_square(self.rcv[cand], lo, hi)]


def in_square(pts, lo, hi):
    """Closed test ``lo <= (x, y) <= hi``; z is ignored."""
    x = pts[:, 0].astype(np.float64)
    y = pts[:, 1].astype(np.float64)
    return (x >= lo[0]) & (x <= hi[0]) & (y >= lo[1]) & (y <= hi[1])


@dataclass
class Context:
    survey: Survey
    members: np.ndarray
    center: tuple[float, float] | None = None
    width: float | None = None

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=np.int64).reshape(-1)

    def __len__(self):
        return len(self.members)

    def traces(self):
        return [self.survey.trace(int(i)) for i in self.members]

    def with_members(self, members):
        return Context(self.survey, members, self.center, self.width)

    def canonical(self):
        """Members sorted into survey order (the canonical summation order)."""
        return self.with_members(np.sort(self.members, kind="stable"))


def query_context(survey: Survey, q, w) -> Context:
    return Context(survey, survey.query(q, w), (float(q[0]), float(q[1])), float(w))


def brute_force_context(survey: Survey, q, w) -> np.ndarray:
    """Linear scan used as the oracle for the grid index."""
    lo = np.array([q[0] - w / 2.0, q[1] - w / 2.0], dtype=np.float64)
    hi = np.array([q[0] + w / 2.0, q[1] + w / 2.0], dtype=np.float64)
    return np.flatnonzero(in_square(survey.src, lo, hi) & in_square(survey.rcv, lo, hi))


def _round_half_up(x):
    return int(np.floor(x + 0.5))


def subsample_uniform(ctx: Context, fraction, seed) -> Context:
    if not 0.0 < fraction <= 1.0:
        raise ParameterError("fraction must be in (0, 1]")
    n = len(ctx)
    k = _round_half_up(fraction * n)
    if k >= n:
        return ctx.with_members(ctx.members.copy())
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(n, size=k, replace=False))
    return ctx.with_members(ctx.members[keep])


def subsample_contiguous(ctx: Context, seed, fraction=None, mean=0.7, spread=0.25) -> Context:
    """Per shot keep one contiguous receiver strip of ``round(f * n_shot)`` traces.

    ``f ~ Uniform(mean - spread, mean + spread)`` drawn per shot unless ``fraction``
    fixes it. Shots are visited in ascending ``shot_id``.
    """
    rng = np.random.default_rng(seed)
    members = ctx.members
    if len(members) == 0:
        return ctx.with_members(members.copy())
    sids = ctx.survey.shot_id[members]
    ridx = ctx.survey.rcv_index[members]
    kept = []
    for sid in np.unique(sids):
        pos = np.flatnonzero(sids == sid)
        pos = pos[np.argsort(ridx[pos], kind="stable")]
        n = len(pos)
        f = fraction if fraction is not None else rng.uniform(mean - spread, mean + spread)
        if n == 1:
            kept.append(pos)
            continue
        k = min(max(_round_half_up(f * n), 1), n)
        start = int(rng.integers(0, n - k + 1))
        kept.append(pos[start:start + k])
    keep = np.sort(np.concatenate(kept))
    return ctx.with_members(members[keep])


def downsample_trace(u, out_len=400):
    """Block-mean decimation along the last axis to ``out_len`` samples."""
    u = np.asarray(u)
    n = u.shape[-1]
    if out_len <= 0 or n % out_len:
        raise ParameterError(f"trace length {n} is not divisible into {out_len} blocks")
    factor = n // out_len
    out = u.reshape(u.shape[:-1] + (out_len, factor)).mean(axis=-1, dtype=np.float64)
    return out.astype(u.dtype) if u.dtype.kind == "f" else out
