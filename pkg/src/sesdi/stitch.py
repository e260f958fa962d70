"""Depth-binned model banks, exact block tilings, and stitched full-model inference."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import formats
from .errors import InferenceError, ParameterError, ShapeError
from .model import SesdiParams, predict_block
from .traces import Survey, query_context
from .velocity import VelocityModel


def n_bins(D, d):
    if d <= 0 or D <= 0:
        raise ParameterError("block depth d and total depth D must be positive")
    return int(math.ceil(D / d - 1e-12))


@dataclass
class ModelBank:
    """One model per depth slab of thickness ``d`` over total depth ``D``.

    Context width for bin ``i`` (1-indexed) is ``w0 * (1 + alpha * (i - 1))``.
    """

    models: list[SesdiParams]
    d: float
    D: float
    w0: float
    alpha: float = 0.0
    fill_velocity: float | None = None

    def __post_init__(self):
        if len(self.models) != n_bins(self.D, self.d):
            raise ParameterError(
                f"bank needs {n_bins(self.D, self.d)} models for D={self.D}, d={self.d}, "
                f"got {len(self.models)}")
        if self.w0 <= 0 or self.alpha < 0:
            raise ParameterError("width schedule needs w0 > 0 and alpha >= 0")
        if self.fill_velocity is None:
            self.fill_velocity = float(np.mean([m.v_mid for m in self.models]))

    @property
    def size(self):
        return len(self.models)

    def width(self, i):
        return self.w0 * (1.0 + self.alpha * (i - 1))


def select_model(bank: ModelBank, q_z) -> int:
    """1-indexed bin ``ceil(q_z / d)`` clamped to the bank; slab tops are open, bottoms closed."""
    if not 0.0 <= q_z <= bank.D:
        raise ParameterError(f"depth {q_z} outside [0, {bank.D}]")
    return min(max(int(math.ceil(q_z / bank.d - 1e-12)), 1), bank.size)


@dataclass(frozen=True)
class Tile:
    index: tuple[int, ...]
    slices: tuple[slice, ...]
    q: tuple[float, ...]  # (x, depth) or (x, y, depth) of the block's middle node
    slab_depth: float  # continuous centre of the depth slab, used for bin selection


@dataclass(frozen=True)
class Tiling:
    """Non-overlapping ``d`` x ``w_p`` tiles over a grid of shape ``(nz, [ny], nx)``."""

    shape: tuple[int, ...]
    spacing: tuple[float, ...]
    w_p: float
    d: float
    tiles: list[Tile] = field(default_factory=list, compare=False)

    def __post_init__(self):
        cells = []
        for axis, (n, s) in enumerate(zip(self.shape, self.spacing)):
            width = self.d if axis == 0 else self.w_p
            k = width / s
            if abs(k - round(k)) > 1e-9 or round(k) < 1:
                raise ParameterError(f"tile size {width} m is not a whole number of {s} m cells")
            k = int(round(k))
            if n % k:
                raise ParameterError(f"axis of {n} nodes does not split into {k}-node tiles")
            cells.append(k)
        object.__setattr__(self, "tiles", self._build(cells))

    def _build(self, cells):
        counts = [n // k for n, k in zip(self.shape, cells)]
        out = []
        for index in np.ndindex(*counts):
            slices = tuple(slice(i * k, (i + 1) * k) for i, k in zip(index, cells))
            mid = [(i * k + (k - 1) / 2.0) * s for i, k, s in zip(index, cells, self.spacing)]
            q = tuple(mid[1:][::-1]) + (mid[0],)  # grid order (z, [y], x) -> (x, [y], z)
            out.append(Tile(tuple(index), slices, q, (index[0] + 0.5) * self.d))
        return out

    @property
    def tile_shape(self):
        return tuple(s.stop - s.start for s in self.tiles[0].slices)

    def surface_center(self, tile: Tile):
        return (tile.q[0], tile.q[1]) if len(tile.q) == 3 else (tile.q[0], 0.0)


@dataclass
class StitchResult:
    values: np.ndarray  # float64, grid order
    mask: np.ndarray  # True where the tile had an empty context
    spacing: tuple[float, ...]

    def velocity_model(self) -> VelocityModel:
        return VelocityModel(self.values.astype(np.float32), self.spacing)


def predict_full(survey: Survey, bank: ModelBank, tiling: Tiling, order=None,
                 crossfade=0) -> StitchResult:
    """Fill every tile with its bin's block prediction; empty tiles get the fill velocity.

    ``order`` permutes tile processing (results do not depend on it). ``crossfade``
    is the half-width in cells of an optional cosine seam blend; 0 keeps hard tiles.
    """
    values = np.empty(tiling.shape, dtype=np.float64)
    mask = np.zeros(tiling.shape, dtype=bool)
    tiles = tiling.tiles
    order = range(len(tiles)) if order is None else order
    n_empty = 0
    for t in order:
        tile = tiles[t]
        b = select_model(bank, tile.slab_depth)
        ctx = query_context(survey, tiling.surface_center(tile), bank.width(b))
        if len(ctx) == 0:
            values[tile.slices] = bank.fill_velocity
            mask[tile.slices] = True
            n_empty += 1
            continue
        block = predict_block(bank.models[b - 1], ctx)
        if block.shape != tiling.tile_shape:
            raise ShapeError(f"model output {block.shape} does not match tile {tiling.tile_shape}")
        values[tile.slices] = block
    if n_empty == len(tiles):
        raise InferenceError("every tile has an empty context")
    if crossfade:
        values = crossfade_seams(values, tiling, crossfade)
    return StitchResult(values, mask, tuple(tiling.spacing))


def crossfade_seams(values, tiling: Tiling, half_width):
    """Cosine blend of the ``half_width`` cells either side of every internal seam."""
    out = values.copy()
    k = np.arange(half_width)
    alpha = 0.5 * (1.0 + np.cos(np.pi * (k + 0.5) / half_width))
    for axis, size in enumerate(tiling.tile_shape):
        if 2 * half_width > size:
            raise ParameterError("crossfade wider than half a tile")
        for seam in range(size, tiling.shape[axis], size):
            src = out.copy()
            for j, a in zip(k, alpha):
                left = np.take(src, seam - 1 - j, axis=axis)
                right = np.take(src, seam + j, axis=axis)
                idx_l = [slice(None)] * out.ndim
                idx_r = [slice(None)] * out.ndim
                idx_l[axis], idx_r[axis] = seam - 1 - j, seam + j
                out[tuple(idx_l)] = left + 0.5 * a * (right - left)
                out[tuple(idx_r)] = right + 0.5 * a * (left - right)
    return out


def write_mask_pgm(path, mask):
    """Binary PGM; empty-context cells are 255. 3D masks are written as stacked depth rows."""
    m = np.asarray(mask)
    img = m.reshape(m.shape[0], -1) if m.ndim == 3 else m
    h, w = img.shape
    header = f"P5\n{w} {h}\n255\n".encode()
    formats.atomic_write(path, header + (img.astype(np.uint8) * 255).tobytes())


def write_mask_csv(path, mask):
    m = np.asarray(mask)
    img = m.reshape(m.shape[0], -1) if m.ndim == 3 else m
    text = "\n".join(",".join(str(int(v)) for v in row) for row in img) + "\n"
    formats.atomic_write(path, text.encode())
