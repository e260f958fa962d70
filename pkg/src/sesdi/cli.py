"""``sesdi`` command line: velocity generation through stitched inference.

Exit codes: 0 success, 1 usage, 2 data/format error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import formats, metrics
from .config import format_config, load_config, module_seed
from .errors import NumericError, ParameterError, SesdiError
from .velocity import VelocityModel, gen_salt_model, grid_center

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("sesdi")


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Key:
    type: type
    default: object
    help: str


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


COMMON = {
    "seed": Key(int, 0, "root seed; module seeds derive from it by fixed labels"),
    "threads": Key(int, 0, "thread/worker cap (0 = SESDI_THREADS or 1)"),
}

SIM_KEYS = {
    "n_shots": Key(int, 8, "sources spread evenly across the model surface"),
    "n_receivers": Key(int, 60, "receivers spread evenly across the surface, shared by all shots"),
    "dt_sim": Key(float, 1e-3, "simulation time step (s)"),
    "record_dt": Key(float, 1e-3, "recording interval (s), a multiple of dt_sim"),
    "total_time": Key(float, 2.0, "record length (s)"),
    "f0": Key(float, 25.0, "Ricker peak frequency (Hz)"),
    "boundary_width": Key(int, 20, "absorbing layer width in cells (>= 10)"),
    "damping_coeff": Key(float, 150.0, "peak sponge damping (1/s)"),
    "space_order": Key(int, 8, "Laplacian accuracy order: 2, 4 or 8"),
}

TRAIN_KEYS = {
    "lr": Key(float, 1e-3, "Adam learning rate"),
    "beta1": Key(float, 0.9, "Adam first-moment decay"),
    "beta2": Key(float, 0.999, "Adam second-moment decay"),
    "epochs": Key(int, 300, "training epochs"),
    "batch_size": Key(int, 4, "samples per Adam step"),
    "subsample_mode": Key(str, "uniform", "none, uniform or contiguous"),
    "fraction": Key(float, 0.8, "uniform subsampling fraction"),
    "spread": Key(float, 0.0, "uniform fraction drawn from fraction +- spread"),
    "eval_every": Key(int, 10, "epochs between test evaluations and checkpoints"),
    "arch": Key(str, "desk", "layer widths: desk, tiny or paper"),
    "trace_len": Key(int, 400, "samples per trace after block-mean downsampling"),
}

COMMAND_KEYS = {
    "gen-velocity": {
        "count": Key(int, 1, "number of models"),
        "nz": Key(int, 51, "depth nodes"),
        "nx": Key(int, 76, "horizontal nodes"),
        "spacing": Key(float, 10.0, "grid spacing (m)"),
        "n_layers_min": Key(int, 3, "fewest background layers"),
        "n_layers_max": Key(int, 6, "most background layers"),
        "salt": Key(_bool, True, "insert one salt body"),
        "prefix": Key(str, "model", "output file name prefix"),
    },
    "simulate": dict(SIM_KEYS),
    "make-dataset": {
        "w": Key(float, 0.0, "context width (m); 0 covers the whole survey"),
        "w_p": Key(float, 0.0, "block width (m); 0 uses the full model width"),
        "d": Key(float, 0.0, "block depth (m); 0 uses the full model depth"),
        "test_count": Key(int, 0, "last N (survey, model) pairs go to the test split"),
    },
    "train": dict(TRAIN_KEYS),
    "evaluate": {
        "peak": Key(float, metrics.DEFAULT_PEAK, "PSNR/SSIM dynamic range (m/s)"),
    },
    "predict": {
        "qx": Key(float, float("nan"), "block centre x (m); default: survey centre"),
        "qy": Key(float, 0.0, "block centre y (m)"),
        "w": Key(float, 0.0, "context width (m); 0 covers the whole survey"),
        "spacing": Key(float, 10.0, "output grid spacing (m)"),
    },
    "stitch": {
        "nz": Key(int, 51, "region depth nodes"),
        "nx": Key(int, 76, "region horizontal nodes"),
        "spacing": Key(float, 10.0, "region grid spacing (m)"),
        "w_p": Key(float, 760.0, "tile width (m)"),
        "d": Key(float, 510.0, "tile depth (m)"),
        "w0": Key(float, 2000.0, "context width of the first depth bin (m)"),
        "alpha": Key(float, 0.0, "linear width growth per depth bin"),
        "fill_velocity": Key(float, float("nan"), "velocity for empty tiles; default bank mean"),
        "crossfade": Key(int, 0, "cosine seam blend half-width in cells (0 = hard tiles)"),
    },
    "gradcheck": {
        "epsilon": Key(float, 1e-5, "central-difference step"),
        "tolerance": Key(float, 1e-5, "pass threshold on max relative error"),
    },
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_keys(p, keys):
    g = p.add_argument_group("config keys (also settable as key=value in --config)")
    for name, k in keys.items():
        default = "" if k.default != k.default else k.default  # hide NaN sentinels
        g.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, metavar="V",
                       help=f"{k.help} [default: {default}]")


def build_parser():
    parser = _Parser(prog="sesdi", description="Set-embedding seismic velocity inversion.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    specs = {
        "gen-velocity": [("--out", dict(required=True, help="output directory"))],
        "simulate": [("--velocity", dict(required=True, help="VEL1 input model")),
                     ("--out", dict(required=True, help="SDI1 output survey"))],
        "make-dataset": [("--survey", dict(required=True, nargs="+", help="SDI1 surveys")),
                         ("--velocity", dict(required=True, nargs="+",
                                             help="VEL1 label models, paired with --survey")),
                         ("--out", dict(required=True, help="manifest CSV"))],
        "train": [("--manifest", dict(required=True, help="dataset manifest CSV")),
                  ("--out", dict(required=True, help="checkpoint and log directory"))],
        "evaluate": [("--pred", dict(required=True, help="VEL1 file or directory")),
                     ("--label", dict(required=True, help="VEL1 file or directory")),
                     ("--out", dict(default=None, help="metric report CSV (default stdout)"))],
        "predict": [("--checkpoint", dict(required=True, help="model checkpoint")),
                    ("--survey", dict(required=True, help="SDI1 survey")),
                    ("--out", dict(required=True, help="VEL1 output block"))],
        "stitch": [("--checkpoint", dict(required=True, nargs="+",
                                         help="one checkpoint per depth bin, shallow first")),
                   ("--survey", dict(required=True, help="SDI1 survey")),
                   ("--out", dict(required=True, help="VEL1 output model")),
                   ("--mask", dict(default=None, help="coverage mask, .pgm or .csv"))],
        "gradcheck": [],
    }
    for name, args in specs.items():
        keys = {**COMMON, **COMMAND_KEYS[name]}
        p = sub.add_parser(name, help=(_COMMANDS[name].__doc__ or "").strip().splitlines()[0])
        p.add_argument("--config", default=None, help="key=value file; flags override it")
        for flag, kw in args:
            p.add_argument(flag, **kw)
        _add_keys(p, keys)
    return parser


def resolve(ns, keys) -> dict:
    """Defaults, then config file, then explicit flags."""
    values = {k: v.default for k, v in keys.items()}
    raw = load_config(ns.config, allowed=set(keys)) if ns.config else {}
    raw.update({k: getattr(ns, k) for k in keys if getattr(ns, k, None) is not None})
    for k, v in raw.items():
        try:
            values[k] = keys[k].type(v)
        except ValueError as e:
            raise UsageError(f"bad value for {k}: {v!r} ({e})") from None
    return values


def _threads(cfg):
    n = cfg.get("threads") or int(os.environ.get("SESDI_THREADS", "1") or 1)
    return max(1, int(n))


def _thread_limit(n):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(limits=n)


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    if path is None:
        sys.stdout.write(buf.getvalue())
    else:
        formats.atomic_write(path, buf.getvalue().encode())


def _require(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"no such file: {path}")
    return path


# --- subcommands ------------------------------------------------------------

def cmd_gen_velocity(ns, cfg):
    """Generate layered salt velocity models as VEL1 files."""
    if cfg["count"] < 1:
        raise ParameterError("count must be at least 1")
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    base = module_seed(cfg["seed"], "velocity-gen")
    for i in range(cfg["count"]):
        m = gen_salt_model((cfg["nz"], cfg["nx"]), (cfg["spacing"],) * 2, base + i,
                           n_layers=(cfg["n_layers_min"], cfg["n_layers_max"]), salt=cfg["salt"])
        m.save(out / f"{cfg['prefix']}_{i:04d}.vel")
    print(f"wrote {cfg['count']} models to {out}")


def _sim_config(cfg, spacing):
    from .wavesim import SimConfig
    return SimConfig(dx=spacing, dt_sim=cfg["dt_sim"], record_dt=cfg["record_dt"],
                     total_time=cfg["total_time"], f0=cfg["f0"],
                     boundary_width=cfg["boundary_width"], damping_coeff=cfg["damping_coeff"],
                     space_order=cfg["space_order"])


def cmd_simulate(ns, cfg):
    """Simulate a surface survey over a VEL1 model into an SDI1 file."""
    from .traces import Survey
    from .wavesim import regular_acquisition, simulate_survey

    model = VelocityModel.load(_require(ns.velocity))
    if model.ndim != 2 or model.spacing[0] != model.spacing[1]:
        raise ParameterError("simulate needs a 2D model with equal spacing")
    sim = _sim_config(cfg, model.spacing[0])
    width = (model.shape[1] - 1) * model.spacing[1]
    shots = regular_acquisition(width, cfg["n_shots"], cfg["n_receivers"])
    records = simulate_survey(model, shots, sim, workers=_threads(cfg))
    Survey.from_shot_records(records).save(ns.out)
    print(f"wrote {len(shots) * cfg['n_receivers']} traces to {ns.out}")


def cmd_make_dataset(ns, cfg):
    """Pair surveys with label models into a sample manifest."""
    from .stitch import Tiling
    from .traces import Survey
    from .trainer import depth_bin, write_manifest

    if len(ns.survey) != len(ns.velocity):
        raise UsageError("--survey and --velocity need the same number of files")
    out = Path(ns.out).resolve()
    rows, n = [], len(ns.survey)
    if not 0 <= cfg["test_count"] <= n:
        raise ParameterError("test_count must be between 0 and the number of pairs")
    for i, (sp, vp) in enumerate(zip(ns.survey, ns.velocity)):
        survey, model = Survey.load(_require(sp)), VelocityModel.load(_require(vp))
        w_p = cfg["w_p"] or model.shape[-1] * model.spacing[-1]
        d = cfg["d"] or model.shape[0] * model.spacing[0]
        lo, hi = survey.extent()
        w = cfg["w"] or 2.0 * float(max(hi[:2] - lo[:2])) + 1.0
        if cfg["w_p"] or cfg["d"]:
            centers = [t.q for t in Tiling(model.shape, model.spacing, w_p, d).tiles]
        else:
            centers = [grid_center(model)]
        split = "test" if i >= n - cfg["test_count"] else "train"
        for j, q in enumerate(centers):
            sq = (q[0], q[1]) if len(q) == 3 else (q[0], 0.0)
            if len(survey.query(sq, w)) == 0:
                log.warning("dropping empty context at %s", q)
                continue
            rows.append({"sample_id": f"{i}-{j}",
                         "survey": os.path.relpath(Path(sp).resolve(), out.parent),
                         "velocity": os.path.relpath(Path(vp).resolve(), out.parent),
                         "qx": q[0], "qy": q[1] if len(q) == 3 else 0.0, "qz": q[-1],
                         "w": w, "w_p": w_p, "d": d, "depth_bin": depth_bin(q[-1], d),
                         "split": split})
    if not rows:
        from .errors import DatasetError
        raise DatasetError("every centre produced an empty context")
    write_manifest(out, rows)
    print(f"wrote {len(rows)} samples to {out}")


def _arch(name, output_dims, loc_dim, trace_len):
    from .model import SesdiSpec
    builders = {"desk": SesdiSpec.desk, "tiny": SesdiSpec.tiny, "paper": SesdiSpec.paper}
    if name not in builders:
        raise ParameterError(f"arch must be one of {sorted(builders)}")
    return builders[name](output_dims=output_dims, loc_dim=loc_dim, trace_len=trace_len)


def cmd_train(ns, cfg):
    """Train a model on a manifest; writes checkpoints, metrics.csv and config.txt."""
    from .trainer import TrainConfig, train, read_manifest

    splits = read_manifest(_require(ns.manifest), trace_len=cfg["trace_len"])
    if "train" not in splits:
        from .errors import DatasetError
        raise DatasetError("manifest has no train split")
    tr, te = splits["train"], splits.get("test")
    dims = tr.samples[0].label.shape
    loc_dim = 4 if len(dims) == 2 else 6
    spec = _arch(cfg["arch"], dims, loc_dim, cfg["trace_len"])
    tc = TrainConfig(lr=cfg["lr"], beta1=cfg["beta1"], beta2=cfg["beta2"], epochs=cfg["epochs"],
                     batch_size=cfg["batch_size"], subsample_mode=cfg["subsample_mode"],
                     fraction=cfg["fraction"], spread=cfg["spread"],
                     seed=module_seed(cfg["seed"], "trainer"), eval_every=cfg["eval_every"])
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    formats.atomic_write(out / "config.txt", format_config(cfg).encode())
    res = train(tr, spec, tc, test=te, log_path=out / "metrics.csv", checkpoint_dir=out)
    if res.best_params is None:
        from .model import save_params
        save_params(out / "best.ckpt", res.params)
    final = [r for r in res.log if r["split"] == "train"][-1]
    print(f"trained {tc.epochs} epochs, final train l1 {final['l1']:.2f} m/s")


def _vel_files(path):
    p = Path(_require(path))
    if p.is_dir():
        return {f.name: f for f in sorted(p.glob("*.vel"))}
    return {p.name: p}


def cmd_evaluate(ns, cfg):
    """Score predicted VEL1 models against labels (l1, PSNR, SSIM)."""
    preds, labels = _vel_files(ns.pred), _vel_files(ns.label)
    if len(preds) == 1 and len(labels) == 1:
        pairs = [(next(iter(preds.values())), next(iter(labels.values())))]
    else:
        missing = sorted(set(preds) ^ set(labels))
        if missing:
            raise ParameterError(f"unpaired files: {', '.join(missing)}")
        pairs = [(preds[k], labels[k]) for k in sorted(preds)]
    rows = []
    for p, t in pairs:
        a, b = VelocityModel.load(p).values, VelocityModel.load(t).values
        r = metrics.evaluate([a], [b], cfg["peak"])
        rows.append([p.name, r.l1, r.psnr, r.ssim])
    mean = [float(np.mean([r[i] for r in rows])) for i in (1, 2, 3)]
    rows.append(["mean", *mean])
    _write_csv(ns.out, ["name", "l1", "psnr", "ssim"], rows)


def cmd_predict(ns, cfg):
    """Predict one block from a survey's context with a trained checkpoint."""
    from .model import load_params, predict_block
    from .traces import Survey, query_context

    params = load_params(_require(ns.checkpoint))
    survey = Survey.load(_require(ns.survey))
    if survey.n_samples != params.spec.trace_len:
        survey = survey.downsampled(params.spec.trace_len)
    lo, hi = survey.extent()
    qx = cfg["qx"] if cfg["qx"] == cfg["qx"] else float(lo[0] + hi[0]) / 2.0
    w = cfg["w"] or 2.0 * float(max(hi[:2] - lo[:2])) + 1.0
    ctx = query_context(survey, (qx, cfg["qy"]), w)
    if len(ctx) == 0:
        from .errors import InferenceError
        raise InferenceError(f"empty context at ({qx}, {cfg['qy']}) with w={w}")
    block = predict_block(params, ctx)
    VelocityModel(block.astype(np.float32), (cfg["spacing"],) * block.ndim).save(ns.out)
    print(f"wrote block {block.shape} from {len(ctx)} traces to {ns.out}")


def cmd_stitch(ns, cfg):
    """Tile a region, predict every tile with its depth bin's model, and stitch."""
    from .model import load_params
    from .stitch import ModelBank, Tiling, predict_full, write_mask_csv, write_mask_pgm
    from .traces import Survey

    models = [load_params(_require(c)) for c in ns.checkpoint]
    survey = Survey.load(_require(ns.survey))
    if survey.n_samples != models[0].spec.trace_len:
        survey = survey.downsampled(models[0].spec.trace_len)
    D = cfg["nz"] * cfg["spacing"]
    fill = cfg["fill_velocity"] if cfg["fill_velocity"] == cfg["fill_velocity"] else None
    bank = ModelBank(models, cfg["d"], D, cfg["w0"], cfg["alpha"], fill)
    tiling = Tiling((cfg["nz"], cfg["nx"]), (cfg["spacing"],) * 2, cfg["w_p"], cfg["d"])
    res = predict_full(survey, bank, tiling, crossfade=cfg["crossfade"])
    res.velocity_model().save(ns.out)
    if ns.mask:
        (write_mask_csv if ns.mask.endswith(".csv") else write_mask_pgm)(ns.mask, res.mask)
    print(f"stitched {len(tiling.tiles)} tiles ({int(res.mask.sum())} empty cells) to {ns.out}")


def cmd_gradcheck(ns, cfg):
    """Backprop vs finite differences on small MLPs and the tiny set model."""
    from .model import SesdiSpec, grad_check_sesdi
    from .nn import IDENTITY, MlpSpec, grad_check

    seed, eps = cfg["seed"], cfg["epsilon"]
    checks = [
        ("mlp linear 5-3", grad_check(MlpSpec.build([5, 3], final=IDENTITY), seed, eps)),
        ("mlp relu 6-8-8-4", grad_check(MlpSpec.build([6, 8, 8, 4], final=IDENTITY), seed, eps)),
        ("sesdi tiny n=3", grad_check_sesdi(SesdiSpec.tiny(), seed, 3, eps)),
    ]
    worst = max(e for _, e in checks)
    for name, err in checks:
        print(f"{name}: max rel err {err:.3e}")
    ok = worst < cfg["tolerance"]
    print(f"{'PASS' if ok else 'FAIL'} max rel err {worst:.3e} (tolerance {cfg['tolerance']:.0e})")
    if not ok:
        raise NumericError(f"gradient check failed: {worst:.3e}")


_COMMANDS = {
    "gen-velocity": cmd_gen_velocity,
    "simulate": cmd_simulate,
    "make-dataset": cmd_make_dataset,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "stitch": cmd_stitch,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        parser = build_parser()
        try:
            ns = parser.parse_args(argv)
        except SystemExit as e:  # --help
            return int(e.code or 0)
        if ns.command is None:
            parser.print_help()
            return EXIT_USAGE
        cfg = resolve(ns, {**COMMON, **COMMAND_KEYS[ns.command]})
        with _thread_limit(_threads(cfg)):
            _COMMANDS[ns.command](ns, cfg)
        return EXIT_OK
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ParameterError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SesdiError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
