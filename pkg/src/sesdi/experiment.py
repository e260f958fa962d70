"""Desk-scale synthetic benchmark: 2D salt models, simulated surveys, one full-grid block each."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np

from . import metrics
from .config import module_seed
from .model import SesdiSpec
from .trainer import (
    Dataset, TrainConfig, TrainResult, constant_baseline, evaluate_params, make_training_pairs,
    train,
)
from .traces import Survey, subsample_contiguous, subsample_uniform
from .velocity import VelocityModel, gen_salt_model, grid_center
from .wavesim import SimConfig, regular_acquisition, simulate_survey


@dataclass(frozen=True)
class DeskConfig:
    n_train: int = 24
    n_test: int = 4
    nz: int = 51
    nx: int = 76
    spacing: float = 10.0
    n_shots: int = 8
    n_receivers: int = 60
    trace_len: int = 400
    seed: int = 0
    sim: SimConfig = SimConfig()

    @property
    def dims(self):
        return (self.nz, self.nx)

    @property
    def width(self):
        return (self.nx - 1) * self.spacing

    @property
    def block(self):
        """(w_p, d) of the single block covering the whole grid."""
        w_p = self.nx * self.spacing
        d = self.nz * self.spacing
        return w_p, d

    def scaled(self, **kw):
        return replace(self, **kw)


def desk_survey(model: VelocityModel, cfg: DeskConfig, workers=1) -> Survey:
    shots = regular_acquisition(cfg.width, cfg.n_shots, cfg.n_receivers)
    records = simulate_survey(model, shots, replace(cfg.sim, dx=cfg.spacing), workers)
    return Survey.from_shot_records(records).downsampled(cfg.trace_len)


def desk_models(cfg: DeskConfig):
    base = module_seed(cfg.seed, "velocity-gen")
    return [gen_salt_model(cfg.dims, (cfg.spacing, cfg.spacing), base + i)
            for i in range(cfg.n_train + cfg.n_test)]


def build_desk_datasets(cfg: DeskConfig = DeskConfig(), workers=1):
    """``(train, test, models)`` with one (full survey, full grid) sample per model."""
    models = desk_models(cfg)
    w_p, d = cfg.block
    samples, surveys = [], {}
    for i, model in enumerate(models):
        survey = desk_survey(model, cfg, workers)
        sid = f"desk-{i}"
        surveys[sid] = survey
        q = grid_center(model)
        # context width spans the whole acquisition
        w = 2.0 * cfg.width + cfg.spacing
        samples.extend(make_training_pairs(survey, model, [q], w, w_p, d, survey_id=sid))
    train = Dataset(samples[:cfg.n_train], {f"desk-{i}": surveys[f"desk-{i}"]
                                            for i in range(cfg.n_train)})
    test = Dataset(samples[cfg.n_train:], {f"desk-{i}": surveys[f"desk-{i}"]
                                           for i in range(cfg.n_train, len(models))})
    return train, test, models


# lr, batch size and epochs are our own desk choices
DESK_TRAIN = TrainConfig(lr=1e-3, batch_size=4, epochs=300, subsample_mode="uniform",
                         fraction=0.8, seed=module_seed(0, "trainer"), eval_every=10)

# irregular acquisition at inference: per-shot strips averaging half the receivers
contiguous_half = partial(subsample_contiguous, mean=0.5, spread=0.25)


def uniform_half(ctx, seed):
    return subsample_uniform(ctx, 0.5, seed)


@dataclass
class DeskRun:
    train_set: Dataset
    test_set: Dataset
    result: TrainResult
    baseline_velocity: float
    baseline: metrics.MetricReport
    trained: metrics.MetricReport
    timings: dict = field(default_factory=dict)


def run_desk(cfg: DeskConfig = DeskConfig(), train_cfg: TrainConfig = DESK_TRAIN, workers=1,
             log_path=None, checkpoint_dir=None) -> DeskRun:
    """Simulate, train, and score the trained model and the constant baseline on the test split."""
    t0 = time.perf_counter()
    tr, te, _ = build_desk_datasets(cfg, workers)
    t1 = time.perf_counter()
    spec = SesdiSpec.desk(output_dims=cfg.dims, loc_dim=4, trace_len=cfg.trace_len)
    res = train(tr, spec, train_cfg, test=te, log_path=log_path, checkpoint_dir=checkpoint_dir)
    t2 = time.perf_counter()
    v0 = constant_baseline(tr)
    labels = te.labels()
    base = metrics.evaluate([np.full_like(y, v0) for y in labels], labels)
    trained = evaluate_params(res.params, te)
    return DeskRun(tr, te, res, v0, base, trained,
                   {"simulate": t1 - t0, "train": t2 - t1, "total": time.perf_counter() - t0})
