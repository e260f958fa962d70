"""Set-embedding network over geometry-aware traces.

Per trace: ``phi(t) = F_t([F_aq(loc(t)), F_d(data(t))])``. Per context: the mean of
``phi`` over members, then ``rho``. Network outputs ``z`` map to velocity as
``v = v_mid + v_half * z``.

In canonical mode members are sorted into survey order before anything is computed,
so any permutation of a context produces bit-identical input matrices and outputs.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import formats
from .errors import EmptyContextError, FormatError, ParameterError, ShapeError
from .nn import (
    IDENTITY, MlpParams, MlpSpec, finite_difference_grads, init_mlp, mlp_backward,
    mlp_forward, relative_error,
)
from .traces import Context, GeometryAwareTrace

V_MID = 3250.0
V_HALF = 1250.0


@dataclass(frozen=True)
class SesdiSpec:
    trace_len: int
    loc_dim: int
    f_d: MlpSpec
    f_aq: MlpSpec
    f_t: MlpSpec
    rho: MlpSpec
    output_dims: tuple[int, ...]
    aggregation: str = "mean"

    def __post_init__(self):
        object.__setattr__(self, "output_dims", tuple(int(d) for d in self.output_dims))
        if self.f_d.in_dim != self.trace_len:
            raise ParameterError(f"F_d expects {self.f_d.in_dim} samples, trace_len is {self.trace_len}")
        if self.f_aq.in_dim != self.loc_dim:
            raise ParameterError(f"F_aq expects {self.f_aq.in_dim} coords, loc_dim is {self.loc_dim}")
        if self.f_t.in_dim != self.f_d.out_dim + self.f_aq.out_dim:
            raise ParameterError("F_t input must equal F_d output + F_aq output")
        if self.rho.in_dim != self.f_t.out_dim:
            raise ParameterError("rho input must equal F_t output")
        if self.rho.out_dim != int(np.prod(self.output_dims)):
            raise ParameterError(f"rho output {self.rho.out_dim} != prod{self.output_dims}")
        if self.aggregation not in ("mean", "sum"):
            raise ParameterError("aggregation must be 'mean' or 'sum'")

    @classmethod
    def from_widths(cls, trace_len, loc_dim, d_widths, aq_widths, t_widths, rho_widths,
                    output_dims, aggregation="mean"):
        f_d = MlpSpec.build((trace_len,) + tuple(d_widths))
        f_aq = MlpSpec.build((loc_dim,) + tuple(aq_widths))
        f_t = MlpSpec.build((f_d.out_dim + f_aq.out_dim,) + tuple(t_widths))
        out = int(np.prod(output_dims))
        rho = MlpSpec.build((f_t.out_dim,) + tuple(rho_widths) + (out,), final=IDENTITY)
        return cls(trace_len, loc_dim, f_d, f_aq, f_t, rho, tuple(output_dims), aggregation)

    @classmethod
    def desk(cls, output_dims=(51, 76), loc_dim=4, trace_len=400):
        return cls.from_widths(trace_len, loc_dim, (512, 256), (64, 64), (256, 256), (512,),
                               output_dims)

    @classmethod
    def tiny(cls, output_dims=(3, 4), loc_dim=4, trace_len=8):
        return cls.from_widths(trace_len, loc_dim, (16, 12), (8, 8), (16, 16), (16,), output_dims)

    @classmethod
    def paper(cls, output_dims=(201, 301), loc_dim=4, trace_len=400):
        """Sizing from the published 2D architecture table (large: ~400M weights)."""
        return cls.from_widths(trace_len, loc_dim, (10240, 4096, 4096, 4096), (512,) * 4,
                               (4096,) * 5, (), output_dims)


@dataclass
class SesdiParams:
    spec: SesdiSpec
    f_d: MlpParams
    f_aq: MlpParams
    f_t: MlpParams
    rho: MlpParams
    loc_center: np.ndarray
    loc_half: np.ndarray
    data_scale: float = 1.0
    v_mid: float = V_MID
    v_half: float = V_HALF

    def blocks(self):
        return (self.f_d, self.f_aq, self.f_t, self.rho)

    def arrays(self):
        """Every learnable array, in a fixed order (F_d, F_aq, F_t, rho)."""
        out = []
        for b in self.blocks():
            out.extend(b.arrays())
        return out

    def copy(self):
        return replace(self, f_d=self.f_d.copy(), f_aq=self.f_aq.copy(), f_t=self.f_t.copy(),
                       rho=self.rho.copy(), loc_center=self.loc_center.copy(),
                       loc_half=self.loc_half.copy())

    def n_params(self):
        return sum(b.n_params() for b in self.blocks())


@dataclass
class SesdiGrads:
    f_d: MlpParams
    f_aq: MlpParams
    f_t: MlpParams
    rho: MlpParams

    def arrays(self):
        out = []
        for b in (self.f_d, self.f_aq, self.f_t, self.rho):
            out.extend(b.arrays())
        return out


def init_sesdi(spec: SesdiSpec, rng: np.random.Generator, loc_center=None, loc_half=None,
               data_scale=1.0) -> SesdiParams:
    loc_center = np.zeros(spec.loc_dim) if loc_center is None else np.asarray(loc_center, float)
    loc_half = np.ones(spec.loc_dim) if loc_half is None else np.asarray(loc_half, float)
    return SesdiParams(spec, init_mlp(spec.f_d, rng), init_mlp(spec.f_aq, rng),
                       init_mlp(spec.f_t, rng), init_mlp(spec.rho, rng),
                       loc_center, loc_half, float(data_scale))


def fit_normalization(surveys, loc_dim=4):
    """Coordinate centre/half-range and a 1/RMS amplitude scale over ``surveys``.

    Coordinates with zero spread get half-range 1 so they map to 0.
    """
    surveys = list(surveys)
    locs = np.concatenate([s.locations(np.arange(len(s)), loc_dim) for s in surveys])
    lo, hi = locs.min(axis=0), locs.max(axis=0)
    center = (lo + hi) / 2.0
    half = (hi - lo) / 2.0
    half[half <= 0] = 1.0
    sq = sum(float(np.sum(s.data.astype(np.float64) ** 2)) for s in surveys)
    count = sum(s.data.size for s in surveys)
    rms = np.sqrt(sq / count)
    return center, half, (1.0 / rms if rms > 0 else 1.0)


@dataclass
class ContextCache:
    n: int
    members: np.ndarray
    f_d: object
    f_aq: object
    f_t: object
    rho: object
    aq_width: int
    embedding: np.ndarray = field(repr=False)


def _member_inputs(params: SesdiParams, data, locs):
    spec = params.spec
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != spec.trace_len:
        raise ShapeError(f"traces have {data.shape[-1]} samples, model expects {spec.trace_len}")
    X = data * params.data_scale
    L = (np.asarray(locs, dtype=np.float64) - params.loc_center) / params.loc_half
    return X, L


def _member_embeddings(params: SesdiParams, X, L):
    hd, cd = mlp_forward(params.f_d, X)
    ha, ca = mlp_forward(params.f_aq, L)
    E, ct = mlp_forward(params.f_t, np.concatenate([ha, hd], axis=1))
    return E, (cd, ca, ct)


def context_inputs(params: SesdiParams, ctx: Context, canonical=True):
    members = np.sort(ctx.members, kind="stable") if canonical else ctx.members
    if len(members) == 0:
        raise EmptyContextError("context has no traces")
    survey = ctx.survey
    X, L = _member_inputs(params, survey.data[members], survey.locations(members, params.spec.loc_dim))
    return members, X, L


def embed_trace(params: SesdiParams, trace: GeometryAwareTrace) -> np.ndarray:
    src, rcv = np.asarray(trace.src, float), np.asarray(trace.rcv, float)
    if params.spec.loc_dim == 4:
        loc = np.array([src[0], src[2], rcv[0], rcv[2]])
    else:
        loc = np.concatenate([src, rcv])
    X, L = _member_inputs(params, np.asarray(trace.data)[None, :], loc[None, :])
    E, _ = _member_embeddings(params, X, L)
    return E[0]


def _aggregate(params, E):
    return E.mean(axis=0) if params.spec.aggregation == "mean" else E.sum(axis=0)


def embed_context(params: SesdiParams, ctx: Context, canonical=True) -> np.ndarray:
    _, X, L = context_inputs(params, ctx, canonical)
    E, _ = _member_embeddings(params, X, L)
    return _aggregate(params, E)


def forward_context(params: SesdiParams, ctx: Context, canonical=True):
    """Return ``(block in m/s, cache)``."""
    members, X, L = context_inputs(params, ctx, canonical)
    return forward_arrays(params, X, L, members)


def forward_arrays(params: SesdiParams, X, L, members=None):
    E, (cd, ca, ct) = _member_embeddings(params, X, L)
    e = _aggregate(params, E)
    z, cr = mlp_forward(params.rho, e)
    block = (params.v_mid + params.v_half * z).reshape(params.spec.output_dims)
    cache = ContextCache(len(X), members, cd, ca, ct, cr, params.spec.f_aq.out_dim, e)
    return block, cache


def predict_block(params: SesdiParams, ctx: Context, canonical=True) -> np.ndarray:
    block, _ = forward_context(params, ctx, canonical)
    return block


def backward_context(params: SesdiParams, cache: ContextCache, grad_block) -> SesdiGrads:
    """Exact gradients of a scalar loss given its gradient w.r.t. the block (per m/s)."""
    grad_block = np.asarray(grad_block, dtype=np.float64)
    if grad_block.shape != params.spec.output_dims and grad_block.size != params.spec.rho.out_dim:
        raise ShapeError(f"grad_block {grad_block.shape} vs output {params.spec.output_dims}")
    g_z = grad_block.reshape(-1) * params.v_half
    g_rho, g_e = mlp_backward(params.rho, cache.rho, g_z)
    scale = 1.0 / cache.n if params.spec.aggregation == "mean" else 1.0
    g_E = np.broadcast_to(g_e * scale, (cache.n, g_e.size))
    g_t, g_H = mlp_backward(params.f_t, cache.f_t, g_E)
    w = cache.aq_width
    g_aq, _ = mlp_backward(params.f_aq, cache.f_aq, g_H[:, :w])
    g_d, _ = mlp_backward(params.f_d, cache.f_d, g_H[:, w:])
    return SesdiGrads(g_d, g_aq, g_t, g_rho)


def grad_check_sesdi(spec: SesdiSpec, seed: int, n_members=3, epsilon=1e-5, floor=1e-5,
                     kink_margin=1e-3):
    """Max relative error of ``backward_context`` vs central differences.

    The probe is ``sum(c * z)`` with ``z`` the normalised network output, over a
    random context of ``n_members`` traces. Inputs are redrawn until every
    pre-activation is at least ``kink_margin`` from the ReLU kink. The default
    ``floor`` sits just above the round-off of a central difference at
    ``epsilon = 1e-5`` on an O(1) probe (about 1e-10 absolute).
    """
    rng = np.random.default_rng(seed)
    params = init_sesdi(spec, rng)
    for b in params.blocks():
        for bias in b.biases:
            bias[:] = rng.uniform(-0.1, 0.1, size=bias.shape)
    for _ in range(100):
        X = rng.normal(size=(n_members, spec.trace_len))
        L = rng.uniform(-1.0, 1.0, size=(n_members, spec.loc_dim))
        _, cache = forward_arrays(params, X, L)
        nearest = min(np.abs(z).min() for c in (cache.f_d, cache.f_aq, cache.f_t, cache.rho)
                      for z in c.preacts)
        if nearest >= kink_margin:
            break
    c = rng.normal(size=spec.output_dims)

    def probe():
        block, _ = forward_arrays(params, X, L)
        return float(np.sum(c * (block - params.v_mid) / params.v_half))

    analytic = backward_context(params, cache, c / params.v_half).arrays()
    numeric = finite_difference_grads(probe, params.arrays(), epsilon)
    return max(float(relative_error(a, n, floor).max()) for a, n in zip(analytic, numeric))


# --- checkpoint -------------------------------------------------------------

_HEADER = b"SESDI-CKPT\n"
_END = b"end\n"


def _fmt_floats(a):
    return ",".join(repr(float(v)) for v in np.asarray(a).reshape(-1))


def _parse_floats(s):
    return np.array([float(v) for v in s.split(",")]) if s else np.zeros(0)


def encode_params(params: SesdiParams) -> bytes:
    spec = params.spec
    kv = {
        "version": "1",
        "trace_len": str(spec.trace_len),
        "loc_dim": str(spec.loc_dim),
        "output_dims": "x".join(map(str, spec.output_dims)),
        "aggregation": spec.aggregation,
        "loc_center": _fmt_floats(params.loc_center),
        "loc_half": _fmt_floats(params.loc_half),
        "data_scale": repr(float(params.data_scale)),
        "v_mid": repr(float(params.v_mid)),
        "v_half": repr(float(params.v_half)),
    }
    for name in ("f_d", "f_aq", "f_t", "rho"):
        s = getattr(spec, name)
        kv[f"{name}_dims"] = ",".join(map(str, s.layer_dims))
        kv[f"{name}_act"] = ",".join(s.activations)
    text = "".join(f"{k}={v}\n" for k, v in kv.items()).encode()
    text += f"header_crc={zlib.crc32(text) & 0xFFFFFFFF:08x}\n".encode()
    header = _HEADER + text + _END
    blobs = [formats.encode_mlp(b.weights, b.biases) for b in params.blocks()]
    return header + b"".join(blobs)


def decode_params(buf: bytes) -> SesdiParams:
    if not buf.startswith(_HEADER):
        raise FormatError("not a SESDI checkpoint (bad header)", 0)
    end = buf.find(b"\n" + _END)
    if end < 0:
        raise FormatError("checkpoint header is not terminated", len(_HEADER))
    try:
        text = buf[len(_HEADER):end + 1].decode("ascii")
    except UnicodeDecodeError as exc:
        raise FormatError("checkpoint header is not ASCII", len(_HEADER) + exc.start) from None
    lines = text.splitlines(keepends=True)
    if not lines or not lines[-1].startswith("header_crc="):
        raise FormatError("checkpoint header has no CRC line", len(_HEADER))
    body = "".join(lines[:-1]).encode()
    if f"{zlib.crc32(body) & 0xFFFFFFFF:08x}" != lines[-1].strip().split("=", 1)[1]:
        raise FormatError("checkpoint header CRC mismatch", len(_HEADER) + len(body))
    kv = {}
    for line in text.splitlines()[:-1]:
        if "=" not in line:
            raise FormatError(f"malformed header line {line!r}", len(_HEADER))
        k, v = line.split("=", 1)
        kv[k] = v
    try:
        specs = {
            name: MlpSpec(tuple(int(d) for d in kv[f"{name}_dims"].split(",")),
                          tuple(kv[f"{name}_act"].split(",")))
            for name in ("f_d", "f_aq", "f_t", "rho")
        }
        spec = SesdiSpec(int(kv["trace_len"]), int(kv["loc_dim"]), specs["f_d"], specs["f_aq"],
                         specs["f_t"], specs["rho"],
                         tuple(int(d) for d in kv["output_dims"].split("x")), kv["aggregation"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad checkpoint header: {exc}", len(_HEADER)) from None
    pos = end + 1 + len(_END)
    blocks = []
    for name in ("f_d", "f_aq", "f_t", "rho"):
        weights, biases, pos = formats.decode_mlp(buf, pos)
        mlp = MlpParams(weights, biases, specs[name].activations)
        if mlp.spec != specs[name]:
            raise FormatError(f"{name} weights do not match the header dims", pos)
        blocks.append(mlp)
    if pos != len(buf):
        raise FormatError("trailing bytes after checkpoint", pos)
    return SesdiParams(spec, *blocks, _parse_floats(kv["loc_center"]), _parse_floats(kv["loc_half"]),
                       float(kv["data_scale"]), float(kv["v_mid"]), float(kv["v_half"]))


def save_params(path, params: SesdiParams):
    formats.atomic_write(path, encode_params(params))


def load_params(path) -> SesdiParams:
    return decode_params(formats.read_bytes(path))

