"""(context, block) datasets, per-visit subsampling, and the L1 + Adam training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .errors import DatasetError, DivergenceError, ParameterError
from .model import (
    SesdiParams, SesdiSpec, backward_context, fit_normalization, forward_context, init_sesdi,
    predict_block, save_params,
)
from .nn import AdamState, adam_step
from .traces import Context, Survey, query_context, subsample_contiguous, subsample_uniform
from .velocity import VelocityModel, extract_block

log = logging.getLogger(__name__)

SUBSAMPLE_MODES = ("none", "uniform", "contiguous")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 300
    batch_size: int = 1
    subsample_mode: str = "uniform"
    fraction: float = 0.8
    spread: float = 0.0
    seed: int = 0
    eval_every: int = 10

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be at least 1")
        if self.subsample_mode not in SUBSAMPLE_MODES:
            raise ParameterError(f"subsample_mode must be one of {SUBSAMPLE_MODES}")
        if not 0.0 < self.fraction <= 1.0:
            raise ParameterError("fraction must be in (0, 1]")
        if self.spread < 0 or self.fraction - self.spread <= 0:
            raise ParameterError("fraction - spread must stay above 0")
        if self.eval_every < 1:
            raise ParameterError("eval_every must be at least 1")


@dataclass
class Sample:
    survey_id: str
    q: tuple[float, ...]
    w: float
    label: np.ndarray
    depth_bin: int
    w_p: float = 0.0
    d: float = 0.0

    def context_center(self):
        """Surface (x, y) of the block centre; 2D blocks sit at y = 0."""
        return (self.q[0], self.q[1]) if len(self.q) == 3 else (self.q[0], 0.0)


@dataclass
class Dataset:
    samples: list[Sample]
    surveys: dict[str, Survey]
    _contexts: dict[int, Context] = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.samples)

    def context(self, i) -> Context:
        if i not in self._contexts:
            s = self.samples[i]
            self._contexts[i] = query_context(self.surveys[s.survey_id], s.context_center(), s.w)
        return self._contexts[i]

    def subset(self, indices):
        return Dataset([self.samples[i] for i in indices], self.surveys)

    def labels(self):
        return [s.label for s in self.samples]


def depth_bin(q_z, d):
    """1-indexed bin ``ceil(q_z / d)``, with depth 0 in bin 1."""
    return max(1, int(math.ceil(q_z / d - 1e-12)))


def make_training_pairs(survey: Survey, model: VelocityModel, q_grid, w, w_p, d,
                        survey_id="0") -> list[Sample]:
    """One sample per centre; centres with empty contexts are dropped (and counted)."""
    samples, dropped = [], 0
    for q in q_grid:
        q = tuple(float(c) for c in q)
        s = Sample(survey_id, q, float(w), None, depth_bin(q[-1], d), float(w_p), float(d))
        if len(survey.query(s.context_center(), w)) == 0:
            dropped += 1
            continue
        s.label = extract_block(model, q, w_p, d).astype(np.float64)
        samples.append(s)
    if dropped:
        log.warning("dropped %d of %d centres with empty contexts", dropped, len(q_grid))
    if not samples:
        raise DatasetError("every centre produced an empty context")
    return samples


def l1_loss(pred, label):
    return metrics.l1(pred, label)


def l1_loss_grad(pred, label):
    """Gradient of the mean absolute error w.r.t. ``pred`` (0 at ties)."""
    pred = np.asarray(pred, dtype=np.float64)
    return np.sign(pred - np.asarray(label, dtype=np.float64)) / pred.size


def draw_context(ctx: Context, cfg: TrainConfig, rng: np.random.Generator) -> Context:
    seed = int(rng.integers(2**63))
    if cfg.subsample_mode == "none":
        return ctx
    if cfg.subsample_mode == "uniform":
        f = cfg.fraction
        if cfg.spread:
            f = float(np.clip(rng.uniform(f - cfg.spread, f + cfg.spread), 1e-9, 1.0))
        sub = subsample_uniform(ctx, f, seed)
    else:
        sub = subsample_contiguous(ctx, seed)
    return sub if len(sub) else ctx


@dataclass
class TrainResult:
    params: SesdiParams
    log: list[dict]
    best_params: SesdiParams | None = None
    steps: int = 0
    context_hashes: list[list[int]] = field(default_factory=list)


def _normalized_l1(params, block, label):
    """(loss in m/s, grad w.r.t. block) for the loss computed on normalised outputs."""
    diff = (block - label) / params.v_half
    loss = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / (diff.size * params.v_half)
    return loss * params.v_half, grad


def evaluate_params(params, dataset: Dataset, subsample=None, seed=0):
    """Metrics over ``dataset``, optionally subsampling each context with ``subsample(ctx, seed)``."""
    preds = predict_dataset(params, dataset, subsample, seed)
    return metrics.evaluate(preds, dataset.labels())


def predict_dataset(params, dataset: Dataset, subsample=None, seed=0):
    preds = []
    for i in range(len(dataset)):
        ctx = dataset.context(i)
        if subsample is not None:
            ctx = subsample(ctx, seed + i)
        preds.append(predict_block(params, ctx))
    return preds


def train(dataset: Dataset, spec: SesdiSpec, cfg: TrainConfig, test: Dataset | None = None,
          params: SesdiParams | None = None, log_path=None, checkpoint_dir=None,
          record_hashes=False, epochs=None) -> TrainResult:
    """Seeded L1 + Adam training; ``epochs`` overrides ``cfg.epochs`` (0 allowed)."""
    n_epochs = cfg.epochs if epochs is None else int(epochs)
    if len(dataset) == 0:
        raise DatasetError("training set is empty")
    for s in dataset.samples:
        if s.label.shape != spec.output_dims:
            raise DatasetError(f"label shape {s.label.shape} != output dims {spec.output_dims}")
    ss = np.random.SeedSequence(cfg.seed)
    init_ss, order_ss, sub_ss = ss.spawn(3)
    if params is None:
        center, half, scale = fit_normalization(dataset.surveys.values(), spec.loc_dim)
        params = init_sesdi(spec, np.random.default_rng(init_ss), center, half, scale)
    order_rng = np.random.default_rng(order_ss)
    sub_rng = np.random.default_rng(sub_ss)
    arrays = params.arrays()
    state = AdamState.for_params(arrays, cfg.lr, cfg.beta1, cfg.beta2)
    rows, hashes = [], []
    best, best_l1 = None, math.inf

    def record(epoch):
        nonlocal best, best_l1
        if test is None or len(test) == 0:
            return
        rep = evaluate_params(params, test)
        rows.append({"epoch": epoch, "split": "test", "l1": rep.l1, "psnr": rep.psnr,
                     "ssim": rep.ssim})
        if rep.l1 < best_l1:
            best_l1, best = rep.l1, params.copy()
            if checkpoint_dir is not None:
                save_params(Path(checkpoint_dir) / "best.ckpt", params)

    init_rep = evaluate_params(params, dataset)
    rows.append({"epoch": 0, "split": "train", "l1": init_rep.l1, "psnr": init_rep.psnr,
                 "ssim": init_rep.ssim})
    record(0)

    steps = 0
    for epoch in range(1, n_epochs + 1):
        order = order_rng.permutation(len(dataset))
        epoch_loss, epoch_hashes = 0.0, []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            acc = None
            for i in batch:
                ctx = draw_context(dataset.context(int(i)), cfg, sub_rng)
                if record_hashes:
                    epoch_hashes.append(hash(np.sort(ctx.members).tobytes()))
                block, cache = forward_context(params, ctx)
                loss, grad_block = _normalized_l1(params, block, dataset.samples[int(i)].label)
                if not math.isfinite(loss):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}")
                epoch_loss += loss
                grads = backward_context(params, cache, grad_block).arrays()
                if acc is None:
                    acc = [g.copy() for g in grads]
                else:
                    for a, g in zip(acc, grads):
                        a += g
            for a in acc:
                a /= len(batch)
            adam_step(state, arrays, acc)
            steps += 1
        mean_loss = epoch_loss / len(dataset)
        if not math.isfinite(mean_loss) or not all(np.isfinite(a).all() for a in arrays[-2:]):
            raise DivergenceError(f"training diverged at epoch {epoch}")
        rows.append({"epoch": epoch, "split": "train", "l1": mean_loss, "psnr": "", "ssim": ""})
        if record_hashes:
            hashes.append(epoch_hashes)
        if epoch % cfg.eval_every == 0 or epoch == n_epochs:
            record(epoch)
            if checkpoint_dir is not None:
                save_params(Path(checkpoint_dir) / "last.ckpt", params)
        log.debug("epoch %d train l1 %.2f", epoch, mean_loss)

    if log_path is not None:
        write_metric_log(log_path, rows)
    return TrainResult(params, rows, best, steps, hashes)


def write_metric_log(path, rows):
    from .formats import atomic_write
    import io

    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["epoch", "split", "l1", "psnr", "ssim"], lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    atomic_write(path, buf.getvalue().encode())


def constant_baseline(train_set: Dataset):
    """Scalar mean velocity over all training labels."""
    return float(np.mean([s.label.mean() for s in train_set.samples]))


# --- manifest ---------------------------------------------------------------

MANIFEST_FIELDS = ["sample_id", "survey", "velocity", "qx", "qy", "qz", "w", "w_p", "d",
                   "depth_bin", "split"]


def write_manifest(path, rows):
    import io

    from .formats import atomic_write

    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    atomic_write(path, buf.getvalue().encode())


def read_manifest(path, trace_len=None):
    """Load ``{split: Dataset}``; relative paths resolve against the manifest's directory.

    With ``trace_len`` set, surveys are block-mean downsampled to that length.
    """
    path = Path(path)
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows or set(MANIFEST_FIELDS) - set(rows[0]):
        raise DatasetError(f"{path} is not a dataset manifest")
    surveys, models, splits = {}, {}, {}
    for r in rows:
        sp = (path.parent / r["survey"]).resolve()
        vp = (path.parent / r["velocity"]).resolve()
        if str(sp) not in surveys:
            s = Survey.load(sp)
            if trace_len and s.n_samples != trace_len:
                s = s.downsampled(trace_len)
            surveys[str(sp)] = s
        if str(vp) not in models:
            models[str(vp)] = VelocityModel.load(vp)
        model = models[str(vp)]
        q = (float(r["qx"]), float(r["qz"])) if model.ndim == 2 else (
            float(r["qx"]), float(r["qy"]), float(r["qz"]))
        label = extract_block(model, q, float(r["w_p"]), float(r["d"])).astype(np.float64)
        sample = Sample(str(sp), q, float(r["w"]), label, int(r["depth_bin"]),
                        float(r["w_p"]), float(r["d"]))
        splits.setdefault(r["split"], []).append(sample)
    return {k: Dataset(v, surveys) for k, v in splits.items()}
