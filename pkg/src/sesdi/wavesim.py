"""2D constant-density acoustic forward modelling.

Solves ``m u_tt - lap(u) + eta u_t = q`` on a collocated grid: second order in
time, central ``space_order`` Laplacian in space, and a Cerjan-style sponge in which
the damping term is integrated semi-implicitly. The model is padded on every side
by ``boundary_width`` cells; outside the padded grid the field is held at zero.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import CFLViolation, ParameterError, PlacementError
from .velocity import VelocityModel

# one-sided coefficients of the central second-derivative stencil, centre first
LAPLACIAN_COEFFS = {
    2: (-2.0, 1.0),
    4: (-5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0),
    8: (-205.0 / 72.0, 8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0),
}


def ricker(t, f0, t0):
    if f0 <= 0:
        raise ParameterError("peak frequency must be positive")
    a = (np.pi * f0 * (np.asarray(t, dtype=np.float64) - t0)) ** 2
    return (1.0 - 2.0 * a) * np.exp(-a)


def cfl_constant(space_order):
    """``2 / sqrt(S)`` with ``S`` the sum of absolute stencil coefficients."""
    c = LAPLACIAN_COEFFS[space_order]
    s = abs(c[0]) + 2.0 * sum(abs(ck) for ck in c[1:])
    return 2.0 / math.sqrt(s)


@dataclass(frozen=True)
class CflResult:
    ok: bool
    limit: float


def cfl_check(v_max, dx, dt, space_order=8) -> CflResult:
    if min(v_max, dx, dt) <= 0:
        raise ParameterError("v_max, dx and dt must be positive")
    if space_order not in LAPLACIAN_COEFFS:
        raise ParameterError(f"space_order must be one of {sorted(LAPLACIAN_COEFFS)}")
    limit = cfl_constant(space_order) * dx / (v_max * math.sqrt(2.0))
    return CflResult(dt <= limit, limit)


@dataclass(frozen=True)
class SimConfig:
    dx: float = 10.0
    dt_sim: float = 1e-3
    record_dt: float = 1e-3
    total_time: float = 2.0
    f0: float = 25.0
    t0: float | None = None  # None -> 1 / f0
    boundary_width: int = 20
    damping_coeff: float = 150.0
    space_order: int = 8
    source_amplitude: float = 1.0

    def __post_init__(self):
        if self.boundary_width < 10:
            raise ParameterError("boundary_width must be at least 10 cells")
        if self.space_order not in LAPLACIAN_COEFFS:
            raise ParameterError(f"space_order must be one of {sorted(LAPLACIAN_COEFFS)}")
        if min(self.dx, self.dt_sim, self.record_dt, self.total_time, self.f0) <= 0:
            raise ParameterError("dx, dt_sim, record_dt, total_time and f0 must be positive")
        if self.damping_coeff < 0:
            raise ParameterError("damping_coeff must be non-negative")
        self.record_stride  # validates the ratio
        self.n_samples

    @property
    def record_stride(self):
        ratio = self.record_dt / self.dt_sim
        stride = int(round(ratio))
        if stride < 1 or abs(ratio - stride) > 1e-9 * max(1.0, ratio):
            raise ParameterError("record_dt must be an integer multiple of dt_sim")
        return stride

    @property
    def n_samples(self):
        ratio = self.total_time / self.record_dt
        n = int(round(ratio))
        if n < 1 or abs(ratio - n) > 1e-6:
            raise ParameterError("total_time must be an integer multiple of record_dt")
        return n

    @property
    def source_delay(self):
        return 1.0 / self.f0 if self.t0 is None else self.t0


@dataclass
class Shot:
    source: tuple[float, float, float]
    receivers: np.ndarray  # (n, 3) metres

    def __post_init__(self):
        self.source = tuple(float(c) for c in self.source)
        self.receivers = np.atleast_2d(np.asarray(self.receivers, dtype=np.float64))
        if self.receivers.shape[1] != 3:
            raise ParameterError("receivers must be (n, 3) positions")


@dataclass
class ShotRecord:
    source: tuple[float, float, float]
    receivers: np.ndarray
    traces: np.ndarray  # (n_receivers, n_samples)
    record_dt: float


@dataclass
class Wavefield:
    """Pressure at two time levels on the padded grid, plus its zero halo."""

    u_prev: np.ndarray
    u_curr: np.ndarray
    halo: int = field(default=0)

    def interior(self, level="curr"):
        u = self.u_curr if level == "curr" else self.u_prev
        h = self.halo
        return u[h:u.shape[0] - h, h:u.shape[1] - h]


def sponge_profile(shape, width, peak):
    """Damping (1/s): zero inside, cosine taper up to ``peak`` at the outer edge."""
    nz, nx = shape
    eta = np.zeros(shape)
    ramp = peak * 0.5 * (1.0 - np.cos(np.pi * np.arange(1, width + 1) / width))
    for axis, n in ((0, nz), (1, nx)):
        prof = np.zeros(n)
        prof[:width] = ramp[::-1]
        prof[n - width:] = ramp
        eta += prof[:, None] if axis == 0 else prof[None, :]
    return eta


def _snap(pos, dx, shape, what):
    x, _, z = pos
    ix, iz = int(round(x / dx)), int(round(z / dx))
    nz, nx = shape
    if not (0 <= ix < nx and 0 <= iz < nz):
        raise PlacementError(f"{what} at (x={x}, z={z}) m is outside the model interior")
    return iz, ix


class _Stepper:
    def __init__(self, model: VelocityModel, cfg: SimConfig, damping=True):
        if model.ndim != 2:
            raise ParameterError("wave simulation is 2D only")
        sz, sx = model.spacing
        if not (math.isclose(sz, cfg.dx) and math.isclose(sx, cfg.dx)):
            raise ParameterError(f"model spacing {model.spacing} differs from cfg.dx={cfg.dx}")
        v_max = float(model.values.max())
        res = cfl_check(v_max, cfg.dx, cfg.dt_sim, cfg.space_order)
        if not res.ok:
            raise CFLViolation(cfg.dt_sim, res.limit)
        self.cfg = cfg
        bw = cfg.boundary_width
        vel = np.pad(model.values.astype(np.float64), bw, mode="edge")
        self.shape = vel.shape
        self.h = len(LAPLACIAN_COEFFS[cfg.space_order]) - 1
        self.coeffs = LAPLACIAN_COEFFS[cfg.space_order]
        self.v2dt2 = vel**2 * cfg.dt_sim**2
        self.c2 = self.v2dt2 / cfg.dx**2
        eta = sponge_profile(self.shape, bw, cfg.damping_coeff if damping else 0.0)
        a = eta * cfg.dt_sim / 2.0
        self.inv_den = 1.0 / (1.0 + a)
        self.prev_coeff = 1.0 - a
        nzp, nxp = self.shape
        h = self.h
        self.field = Wavefield(np.zeros((nzp + 2 * h, nxp + 2 * h)),
                               np.zeros((nzp + 2 * h, nxp + 2 * h)), h)
        self._lap = np.empty(self.shape)
        self._tmp = np.empty(self.shape)

    def laplacian_scaled(self, u=None):
        """``c^2 dt^2 lap(u)`` on the padded (non-halo) grid; ``u`` defaults to the current level."""
        u = self.field.u_curr if u is None else u
        h = self.h
        nz, nx = self.shape
        lap, tmp = self._lap, self._tmp
        np.multiply(u[h:h + nz, h:h + nx], 2.0 * self.coeffs[0], out=lap)
        for k, ck in enumerate(self.coeffs[1:], start=1):
            np.add(u[h + k:h + k + nz, h:h + nx], u[h - k:h - k + nz, h:h + nx], out=tmp)
            tmp += u[h:h + nz, h + k:h + k + nx]
            tmp += u[h:h + nz, h - k:h - k + nx]
            tmp *= ck
            lap += tmp
        lap *= self.c2
        return lap

    def step(self, src_node=None, src_value=0.0):
        h = self.h
        nz, nx = self.shape
        cur = self.field.u_curr[h:h + nz, h:h + nx]
        prev = self.field.u_prev[h:h + nz, h:h + nx]
        nxt = self.laplacian_scaled()
        nxt += 2.0 * cur
        nxt -= self.prev_coeff * prev
        if src_node is not None:
            nxt[src_node] += self.v2dt2[src_node] * src_value
        nxt *= self.inv_den
        # rotate: prev <- cur, cur <- next (prev storage is reused)
        prev[...] = nxt
        self.field.u_prev, self.field.u_curr = self.field.u_curr, self.field.u_prev

    def interior_node(self, iz, ix):
        bw = self.cfg.boundary_width
        return iz + bw, ix + bw

    def energy(self):
        u = self.field.interior()
        return float(np.sum(u * u))

    def discrete_energy(self):
        """Energy the undamped leapfrog scheme conserves exactly, up to rounding.

        ``sum m ((u1 - u0) / dt)^2 - sum u1 * lap(u0)`` between the two stored levels.
        """
        u1, u0 = self.field.interior("curr"), self.field.interior("prev")
        kinetic = np.sum((u1 - u0) ** 2 / self.v2dt2)
        lap0 = self.laplacian_scaled(self.field.u_prev) / self.v2dt2
        return float(kinetic - np.sum(u1 * lap0))


def simulate_shot(model: VelocityModel, shot: Shot, cfg: SimConfig, *, energy_log=None,
                  monitor=None, damping=True) -> ShotRecord:
    """Traces at each receiver, sampled every ``record_dt`` starting at t = 0.

    ``energy_log`` (a list) receives ``sum(u^2)`` over the padded grid after
    every time step; ``monitor(step, stepper)`` is called after every step.
    """
    stepper = _Stepper(model, cfg, damping=damping)
    src_iz, src_ix = _snap(shot.source, cfg.dx, model.shape, "source")
    rcv_nodes = [_snap(r, cfg.dx, model.shape, "receiver") for r in shot.receivers]
    src_node = stepper.interior_node(src_iz, src_ix)
    rz = np.array([stepper.interior_node(*n)[0] for n in rcv_nodes], dtype=np.intp) + stepper.h
    rx = np.array([stepper.interior_node(*n)[1] for n in rcv_nodes], dtype=np.intp) + stepper.h

    stride = cfg.record_stride
    n_samples = cfg.n_samples
    n_steps = (n_samples - 1) * stride
    times = np.arange(n_steps) * cfg.dt_sim
    wavelet = cfg.source_amplitude * ricker(times, cfg.f0, cfg.source_delay)
    traces = np.zeros((len(rcv_nodes), n_samples))
    for n in range(n_steps):
        if n % stride == 0:
            traces[:, n // stride] = stepper.field.u_curr[rz, rx]
        stepper.step(src_node, wavelet[n])
        if energy_log is not None:
            energy_log.append(stepper.energy())
        if monitor is not None:
            monitor(n, stepper)
    traces[:, n_samples - 1] = stepper.field.u_curr[rz, rx]
    return ShotRecord(shot.source, shot.receivers.copy(), traces, cfg.record_dt)


def _simulate_one(args):
    model, shot, cfg = args
    return simulate_shot(model, shot, cfg)


def simulate_survey(model: VelocityModel, shots, cfg: SimConfig, workers=1):
    """One record per shot, in input order. ``workers > 1`` runs shots in processes."""
    shots = list(shots)
    if workers <= 1 or len(shots) <= 1:
        return [simulate_shot(model, s, cfg) for s in shots]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_simulate_one, [(model, s, cfg) for s in shots]))


def regular_acquisition(width, n_shots, n_receivers, src_depth=0.0, rcv_depth=0.0):
    """Sources and receivers spread uniformly over ``[0, width]``; all receivers listen to every shot."""
    xs = np.linspace(0.0, width, n_shots) if n_shots > 1 else np.array([width / 2.0])
    xr = np.linspace(0.0, width, n_receivers)
    receivers = np.column_stack([xr, np.zeros_like(xr), np.full_like(xr, rcv_depth)])
    return [Shot((x, 0.0, src_depth), receivers) for x in xs]
