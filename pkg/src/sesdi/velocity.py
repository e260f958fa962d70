"""Procedural 2D/3D velocity models: layered backgrounds plus a perturbed-ellipse salt body.

Grids are indexed depth first, ``(nz, nx)`` or ``(nz, ny, nx)``. Node ``i`` on an
axis sits at ``i * spacing``; each node owns the cell ``[(i - 1/2) s, (i + 1/2) s)``.
Values are float32 so that VEL1 files round-trip bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import formats
from .errors import ParameterError

V_MIN = 2000.0
V_MAX = 4500.0
V_SALT = 4500.0
V_BACKGROUND_MAX = 4000.0


@dataclass
class VelocityModel:
    values: np.ndarray
    spacing: tuple[float, ...]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim not in (2, 3):
            raise ParameterError(f"velocity grids are 2D or 3D, got {self.values.ndim}D")
        sp = np.broadcast_to(np.asarray(self.spacing, dtype=np.float64), (self.values.ndim,))
        self.spacing = tuple(float(s) for s in sp)

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def shape(self):
        return self.values.shape

    @property
    def extent(self):
        """Physical size per axis (depth first)."""
        return tuple(n * s for n, s in zip(self.shape, self.spacing))

    def copy(self):
        return VelocityModel(self.values.copy(), self.spacing)

    def save(self, path):
        formats.atomic_write(path, formats.encode_velocity(self.values, self.spacing))

    @classmethod
    def load(cls, path):
        values, spacing = formats.decode_velocity(formats.read_bytes(path))
        return cls(values, spacing)


def gen_layered_background(dims, spacing, n_layers, seed) -> VelocityModel:
    """Horizontal layers, random thicknesses, velocities rising with depth from 2000 m/s.

    The top layer is always 2000 m/s; the deepest is drawn in [3000, 4000] m/s.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) not in (2, 3):
        raise ParameterError("dims must be (nz, nx) or (nz, ny, nx)")
    nz = dims[0]
    if n_layers < 1:
        raise ParameterError("n_layers must be at least 1")
    if n_layers > nz:
        raise ParameterError(f"{n_layers} layers do not fit in {nz} depth samples")
    rng = np.random.default_rng(seed)
    if n_layers == 1:
        return VelocityModel(np.full(dims, V_MIN, dtype=np.float32), spacing)

    cuts = np.sort(rng.choice(np.arange(1, nz), size=n_layers - 1, replace=False))
    bottom = rng.uniform(3000.0, V_BACKGROUND_MAX)
    inner = np.sort(rng.uniform(V_MIN, bottom, size=n_layers - 2))
    layer_v = np.concatenate([[V_MIN], inner, [bottom]])
    # enforce strict increase after float32 rounding
    layer_v = layer_v.astype(np.float32)
    for k in range(1, n_layers):
        if layer_v[k] <= layer_v[k - 1]:
            layer_v[k] = np.nextafter(layer_v[k - 1], np.float32(np.inf))
    layer_of_depth = np.searchsorted(cuts, np.arange(nz), side="right")
    column = layer_v[layer_of_depth]
    shape = (nz,) + (1,) * (len(dims) - 1)
    values = np.broadcast_to(column.reshape(shape), dims).copy()
    return VelocityModel(values, spacing)


@dataclass
class SaltBodySpec:
    """Ellipse (ellipsoid in 3D) with a harmonic boundary perturbation.

    ``center`` is in grid-index units and ``radii`` in metres, both in array axis
    order (depth first). The relative radius is ``1 + amplitude * sum_k a_k cos(k theta + p_k)``
    with ``sum a_k = 1``, so ``amplitude < 1`` keeps it positive.
    """

    center: tuple[float, ...]
    radii: tuple[float, ...]
    amplitude: float = 0.15
    harmonics: int = 3
    velocity: float = V_SALT

    def __post_init__(self):
        if not 0.0 <= self.amplitude < 1.0:
            raise ParameterError("perturbation amplitude must be in [0, 1)")
        if self.velocity != V_SALT:
            raise ParameterError("salt velocity is fixed at 4500 m/s")


def salt_mask(shape, spacing, spec: SaltBodySpec, seed) -> np.ndarray:
    ndim = len(shape)
    if len(spec.center) != ndim or len(spec.radii) != ndim:
        raise ParameterError(f"salt center/radii need {ndim} components")
    if min(spec.radii) <= 0:
        return np.zeros(shape, dtype=bool)
    for axis in range(ndim):
        reach = spec.radii[axis] * (1.0 + spec.amplitude) / spacing[axis]
        lo, hi = spec.center[axis] - reach, spec.center[axis] + reach
        if lo < 0 or hi > shape[axis] - 1:
            raise ParameterError(
                f"salt body spans [{lo:.1f}, {hi:.1f}] on axis {axis}, grid is [0, {shape[axis] - 1}]"
            )
    rng = np.random.default_rng(seed)
    weights = rng.uniform(0.0, 1.0, size=spec.harmonics) if spec.harmonics else np.zeros(0)
    if weights.sum() > 0:
        weights /= weights.sum()
    phases = rng.uniform(0.0, 2 * np.pi, size=spec.harmonics)

    axes = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in shape], indexing="ij")
    normed = [
        (a - c) * s / r for a, c, s, r in zip(axes, spec.center, spacing, spec.radii)
    ]
    rho = np.sqrt(sum(u * u for u in normed))
    theta = np.arctan2(normed[0], normed[-1])
    boundary = np.ones(shape)
    for k, (a, p) in enumerate(zip(weights, phases), start=1):
        boundary += spec.amplitude * a * np.cos(k * theta + p)
    return rho <= boundary


def add_salt_body(model: VelocityModel, spec: SaltBodySpec, seed) -> VelocityModel:
    mask = salt_mask(model.shape, model.spacing, spec, seed)
    out = model.copy()
    out.values[mask] = np.float32(spec.velocity)
    return out


def random_salt_spec(shape, spacing, rng: np.random.Generator, radius_range=(60.0, 200.0),
                     amplitude=0.15, harmonics=3) -> SaltBodySpec:
    """Random salt body guaranteed to fit in the lower part of the grid."""
    ndim = len(shape)
    radii, center = [], []
    for axis in range(ndim):
        max_r = (shape[axis] - 1) * spacing[axis] / (2.0 * (1.0 + amplitude)) * 0.9
        hi = min(radius_range[1], max_r)
        lo = min(radius_range[0], hi)
        r = rng.uniform(lo, hi)
        reach = r * (1.0 + amplitude) / spacing[axis]
        lo_c, hi_c = reach, shape[axis] - 1 - reach
        if axis == 0:
            lo_c = max(lo_c, min(hi_c, 0.35 * (shape[0] - 1)))
        radii.append(r)
        center.append(rng.uniform(lo_c, hi_c))
    return SaltBodySpec(tuple(center), tuple(radii), amplitude, harmonics)


def gen_salt_model(dims, spacing, seed, n_layers=(3, 6), salt=True) -> VelocityModel:
    """Layered background with (optionally) one salt body; everything derives from ``seed``."""
    ss = np.random.SeedSequence(seed)
    bg_seed, salt_seed, shape_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    rng = np.random.default_rng(bg_seed)
    nl = int(rng.integers(n_layers[0], n_layers[1] + 1))
    model = gen_layered_background(dims, spacing, nl, bg_seed)
    if salt:
        spec = random_salt_spec(model.shape, model.spacing, np.random.default_rng(shape_seed))
        model = add_salt_body(model, spec, salt_seed)
    return model


def _axis_slice(q, width, spacing, n, axis_name):
    # nodes i with i * spacing in [q - width/2, q + width/2)
    start = int(np.ceil((q - width / 2.0) / spacing - 1e-9))
    count = int(np.floor(width / spacing + 0.5))
    if count <= 0:
        raise ParameterError(f"block width {width} m is below one cell on {axis_name}")
    if start < 0 or start + count > n:
        raise ParameterError(
            f"block [{start}, {start + count}) leaves the grid [0, {n}) on {axis_name}"
        )
    return slice(start, start + count)


def block_slices(model_shape, spacing, q, w_p, d):
    """Index slices of the block of width ``w_p`` and depth ``d`` centred at ``q``.

    ``q`` is ``(x, depth)`` for 2D grids and ``(x, y, depth)`` for 3D grids, in metres
    with node 0 at the origin.
    """
    ndim = len(model_shape)
    if len(q) != ndim:
        raise ParameterError(f"q needs {ndim} coordinates for a {ndim}D model")
    depth = q[-1]
    horizontal = list(q[:-1])  # x or (x, y); grid order is (z, [y], x)
    slices = [_axis_slice(depth, d, spacing[0], model_shape[0], "depth")]
    names = ["y", "x"] if ndim == 3 else ["x"]
    for axis, name in zip(range(1, ndim), names):
        coord = horizontal[0] if name == "x" else horizontal[1]
        slices.append(_axis_slice(coord, w_p, spacing[axis], model_shape[axis], name))
    return tuple(slices)


def grid_center(model: VelocityModel):
    """``q`` of the block covering the whole model: ``(x, [y,] depth)``."""
    mids = [(n * s) / 2.0 - s / 2.0 for n, s in zip(model.shape, model.spacing)]
    depth, rest = mids[0], mids[1:]
    if model.ndim == 2:
        return (rest[0], depth)
    return (rest[1], rest[0], depth)


def extract_block(model: VelocityModel, q, w_p, d) -> np.ndarray:
    return model.values[block_slices(model.shape, model.spacing, q, w_p, d)].copy()
