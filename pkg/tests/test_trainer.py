import logging
import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sesdi.errors import DatasetError, DivergenceError, ParameterError
from sesdi.model import SesdiSpec, encode_params, fit_normalization, init_sesdi
from sesdi.stitch import Tiling
from sesdi.trainer import (
    Dataset, TrainConfig, depth_bin, l1_loss, l1_loss_grad, make_training_pairs, read_manifest,
    train, write_manifest,
)
from sesdi.traces import Survey
from sesdi.velocity import VelocityModel, gen_layered_background, grid_center

SPEC = SesdiSpec.tiny()


def tiny_pair(seed, n_shots=3, n_rcv=5, length=8):
    rng = np.random.default_rng(seed)
    xs = np.linspace(0, 30, n_rcv)
    src = np.repeat(np.column_stack([np.linspace(0, 30, n_shots), np.zeros(n_shots), np.zeros(n_shots)]),
                    n_rcv, axis=0)
    rcv = np.tile(np.column_stack([xs, 0 * xs, 0 * xs]), (n_shots, 1))
    survey = Survey(rng.normal(size=(n_shots * n_rcv, length)), src, rcv,
                    np.repeat(np.arange(n_shots), n_rcv), np.tile(np.arange(n_rcv), n_shots), 1e-3)
    model = VelocityModel(rng.uniform(2000, 4500, size=(3, 4)).astype(np.float32), (10.0, 10.0))
    return survey, model


def tiny_dataset(n=4, seed=0):
    samples, surveys = [], {}
    for i in range(n):
        s, m = tiny_pair(seed + i)
        surveys[str(i)] = s
        samples += make_training_pairs(s, m, [grid_center(m)], 100.0, 40.0, 30.0, survey_id=str(i))
    return Dataset(samples, surveys)


def test_l1_examples():
    x = np.full((3, 4), 3000.0)
    assert l1_loss(x, x) == 0.0
    assert l1_loss(x + 100.0, x) == 100.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_l1_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    pred, label = rng.normal(size=6), rng.normal(size=6)
    if np.abs(pred - label).min() < 1e-3:
        return
    g = l1_loss_grad(pred, label)
    eps = 1e-7
    for i in range(6):
        e = np.zeros(6)
        e[i] = eps
        fd = (l1_loss(pred + e, label) - l1_loss(pred - e, label)) / (2 * eps)
        assert abs(fd - g[i]) <= 1e-6 * max(abs(g[i]), 1.0)


def test_config_invariants():
    with pytest.raises(ParameterError):
        TrainConfig(epochs=0)
    with pytest.raises(ParameterError):
        TrainConfig(fraction=1.5)
    with pytest.raises(ParameterError):
        TrainConfig(subsample_mode="random")


def test_single_centre_covering_survey():
    s, m = tiny_pair(0)
    [sample] = make_training_pairs(s, m, [grid_center(m)], 1000.0, 40.0, 30.0)
    ds = Dataset([sample], {"0": s})
    assert len(ds.context(0)) == len(s)
    assert sample.label.shape == (3, 4) and sample.depth_bin == 1
    assert sample.label.tobytes() == m.values.astype(np.float64).tobytes()


def test_empty_centres_dropped_and_counted(caplog):
    s, m = tiny_pair(0)
    far = VelocityModel(np.full((3, 400), 3000, np.float32), (10.0, 10.0))
    with caplog.at_level(logging.WARNING):
        out = make_training_pairs(s, far, [(15.0, 10.0), (3000.0, 10.0)], 40.0, 40.0, 30.0)
    assert len(out) == 1
    assert "dropped 1 of 2" in caplog.text
    with pytest.raises(DatasetError):
        make_training_pairs(s, far, [(3000.0, 10.0)], 40.0, 40.0, 30.0)


def test_3d_tiling_covers_all_depth_bins():
    dims, sp = (20, 6, 6), (10.0, 10.0, 10.0)
    model = gen_layered_background(dims, sp, 4, 0)
    rng = np.random.default_rng(1)
    n = 40
    pos = np.column_stack([rng.uniform(0, 50, n), rng.uniform(0, 50, n), np.zeros(n)])
    survey = Survey(rng.normal(size=(n, 8)), pos, pos[::-1], np.arange(n), np.zeros(n), 1e-3)
    D, d = dims[0] * sp[0], 50.0
    tiles = Tiling(dims, sp, 30.0, d).tiles
    samples = make_training_pairs(survey, model, [t.q for t in tiles], 1000.0, 30.0, d)
    assert {s.depth_bin for s in samples} == set(range(1, math.ceil(D / d) + 1))
    assert all(s.label.shape == (5, 3, 3) for s in samples)


def test_depth_bin_ceiling():
    assert depth_bin(0.0, 20.0) == 1
    assert depth_bin(10.0, 20.0) == 1
    assert depth_bin(20.0, 20.0) == 1
    assert depth_bin(20.5, 20.0) == 2


def test_zero_epochs_returns_initialisation():
    ds = tiny_dataset()
    cfg = TrainConfig(seed=5, epochs=3)
    res = train(ds, SPEC, cfg, epochs=0)
    center, half, scale = fit_normalization(ds.surveys.values(), SPEC.loc_dim)
    init = init_sesdi(SPEC, np.random.default_rng(np.random.SeedSequence(5).spawn(3)[0]),
                      center, half, scale)
    assert encode_params(res.params) == encode_params(init)
    assert res.steps == 0


def test_fixed_seed_runs_are_bit_identical(tmp_path):
    ds = tiny_dataset()
    cfg = TrainConfig(lr=1e-2, epochs=4, batch_size=2, seed=3, eval_every=2)
    a = train(ds, SPEC, cfg, test=tiny_dataset(2, 10), checkpoint_dir=tmp_path / "a")
    b = train(ds, SPEC, cfg, test=tiny_dataset(2, 10), checkpoint_dir=tmp_path / "b")
    assert encode_params(a.params) == encode_params(b.params)
    for name in ("best.ckpt", "last.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_one_epoch_without_subsampling_takes_one_step_per_sample():
    ds = tiny_dataset(5)
    res = train(ds, SPEC, TrainConfig(epochs=1, batch_size=1, subsample_mode="none"))
    assert res.steps == 5
    res = train(ds, SPEC, TrainConfig(epochs=2, batch_size=2, subsample_mode="none"))
    assert res.steps == 6


def test_fresh_subsets_each_epoch():
    ds = tiny_dataset(3)
    res = train(ds, SPEC, TrainConfig(epochs=12, subsample_mode="uniform", fraction=0.8),
                record_hashes=True)
    sets = [frozenset(h) for h in res.context_hashes]
    pairs = list(combinations(sets, 2))
    assert sum(a != b for a, b in pairs) >= 0.9 * len(pairs)


def test_training_reduces_loss():
    ds = tiny_dataset(3)
    res = train(ds, SPEC, TrainConfig(lr=1e-2, epochs=150, subsample_mode="none"))
    train_rows = [r for r in res.log if r["split"] == "train"]
    assert train_rows[-1]["l1"] < 0.3 * train_rows[0]["l1"]


def test_divergence_guard():
    ds = tiny_dataset(2)
    center, half, _ = fit_normalization(ds.surveys.values(), SPEC.loc_dim)
    bad = init_sesdi(SPEC, np.random.default_rng(0), center, half, math.nan)
    with pytest.raises(DivergenceError):
        train(ds, SPEC, TrainConfig(epochs=1), params=bad)


def test_label_shape_mismatch_rejected():
    with pytest.raises(DatasetError):
        train(tiny_dataset(1), SesdiSpec.tiny(output_dims=(2, 2)), TrainConfig(epochs=1))
    with pytest.raises(DatasetError):
        train(Dataset([], {}), SPEC, TrainConfig(epochs=1))


def test_metric_log_csv(tmp_path):
    ds = tiny_dataset(2)
    train(ds, SPEC, TrainConfig(epochs=4, eval_every=2), test=tiny_dataset(1, 7),
          log_path=tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "epoch,split,l1,psnr,ssim"
    splits = [ln.split(",")[1] for ln in lines[1:]]
    assert splits.count("train") == 5 and splits.count("test") == 3


def test_manifest_round_trip(tmp_path):
    s, m = tiny_pair(0)
    s.save(tmp_path / "s.sdi")
    m.save(tmp_path / "m.vel")
    q = grid_center(m)
    write_manifest(tmp_path / "man.csv", [
        {"sample_id": "0", "survey": "s.sdi", "velocity": "m.vel", "qx": q[0], "qy": 0.0,
         "qz": q[1], "w": 100.0, "w_p": 40.0, "d": 30.0, "depth_bin": 1, "split": "train"}])
    splits = read_manifest(tmp_path / "man.csv")
    [sample] = splits["train"].samples
    assert sample.label.tobytes() == m.values.astype(np.float64).tobytes()
    assert len(splits["train"].context(0)) == len(s)
