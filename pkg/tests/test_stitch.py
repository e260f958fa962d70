import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sesdi.errors import InferenceError, ParameterError, ShapeError
from sesdi.model import SesdiSpec, init_sesdi, predict_block
from sesdi.stitch import (
    ModelBank, Tiling, crossfade_seams, n_bins, predict_full, select_model, write_mask_csv,
    write_mask_pgm,
)
from sesdi.traces import Survey, query_context

SPEC = SesdiSpec.tiny(output_dims=(3, 4))


def survey_over(x_lo, x_hi, n=12, seed=0):
    rng = np.random.default_rng(seed)
    xs = np.linspace(x_lo, x_hi, n)
    pos = np.column_stack([xs, 0 * xs, 0 * xs])
    return Survey(rng.normal(size=(n, 8)), pos, pos + [2.0, 0, 0], np.zeros(n), np.arange(n), 1e-3)


def bank(n, d=30.0, w0=40.0, **kw):
    models = [init_sesdi(SPEC, np.random.default_rng(i), np.full(4, 35.0), np.full(4, 35.0))
              for i in range(n)]
    for i, m in enumerate(models):
        m.v_mid += 100.0 * i  # make bins distinguishable
    return ModelBank(models, d, n * d, w0, **kw)


def test_bin_count_and_selection():
    b = bank(5, d=20.0)
    assert n_bins(100.0, 20.0) == 5 and b.size == 5
    assert select_model(b, 10.0) == 1
    assert select_model(b, 20.0) == 1
    assert select_model(b, 20.1) == 2
    assert select_model(b, 0.0) == 1 and select_model(b, 100.0) == 5
    for q in (-1.0, 100.5):
        with pytest.raises(ParameterError):
            select_model(b, q)


def test_bank_size_must_match_depth():
    with pytest.raises(ParameterError):
        ModelBank(bank(2).models, 20.0, 100.0, 40.0)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(0, 100), b=st.floats(0, 100))
def test_selection_monotone_in_depth(a, b):
    bk = bank(5, d=20.0)
    lo, hi = sorted((a, b))
    assert select_model(bk, lo) <= select_model(bk, hi)


def test_width_schedule():
    b = bank(3, alpha=0.5)
    assert [b.width(i) for i in (1, 2, 3)] == [40.0, 60.0, 80.0]
    assert bank(3).width(3) == 40.0


@pytest.mark.parametrize("shape", [(6, 8), (6, 4, 8)])
def test_tiles_partition_region(shape):
    tiling = Tiling(shape, (10.0,) * len(shape), 40.0, 30.0)
    count = np.zeros(shape, int)
    for t in tiling.tiles:
        count[t.slices] += 1
    assert (count == 1).all()


def test_tiling_rejects_fractional_tiles():
    with pytest.raises(ParameterError):
        Tiling((6, 8), (10.0, 10.0), 30.0, 30.0)
    with pytest.raises(ParameterError):
        Tiling((6, 8), (10.0, 10.0), 45.0, 30.0)


def test_tile_centres_and_slabs():
    tiling = Tiling((6, 8), (10.0, 10.0), 40.0, 30.0)
    t = tiling.tiles[3]
    assert t.index == (1, 1)
    assert t.q == (55.0, 40.0)
    assert t.slab_depth == 45.0


def test_single_tile_equals_block_prediction():
    s = survey_over(0, 30)
    tiling = Tiling((3, 4), (10.0, 10.0), 40.0, 30.0)
    b = bank(1)
    out = predict_full(s, b, tiling)
    ctx = query_context(s, (15.0, 0.0), 40.0)
    assert out.values.tobytes() == predict_block(b.models[0], ctx).tobytes()
    assert not out.mask.any()


def test_tile_order_does_not_matter():
    s = survey_over(0, 70)
    tiling = Tiling((6, 8), (10.0, 10.0), 40.0, 30.0)
    b = bank(2)
    ref = predict_full(s, b, tiling)
    perm = np.random.default_rng(0).permutation(len(tiling.tiles))
    assert predict_full(s, b, tiling, order=perm).values.tobytes() == ref.values.tobytes()


def test_deeper_tiles_use_deeper_model():
    s = survey_over(0, 70)
    tiling = Tiling((6, 8), (10.0, 10.0), 40.0, 30.0)
    b = bank(2)
    out = predict_full(s, b, tiling)
    ctx = query_context(s, (15.0, 0.0), 40.0)
    assert out.values[3:, :4].tobytes() == predict_block(b.models[1], ctx).tobytes()


def test_mask_marks_exactly_empty_tiles(tmp_path):
    s = survey_over(0, 30)  # only covers the left tile column
    tiling = Tiling((6, 8), (10.0, 10.0), 40.0, 30.0)
    b = bank(2)
    out = predict_full(s, b, tiling)
    expect = np.zeros((6, 8), bool)
    expect[:, 4:] = True
    assert (out.mask == expect).all()
    assert (out.values[out.mask] == b.fill_velocity).all()
    write_mask_pgm(tmp_path / "m.pgm", out.mask)
    raw = (tmp_path / "m.pgm").read_bytes()
    assert raw.startswith(b"P5\n8 6\n255\n")
    assert np.frombuffer(raw[-48:], np.uint8).reshape(6, 8).tolist() == (expect * 255).tolist()
    write_mask_csv(tmp_path / "m.csv", out.mask)
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "0,0,0,0,1,1,1,1"


def test_all_empty_raises():
    s = survey_over(1000, 1100)
    with pytest.raises(InferenceError):
        predict_full(s, bank(2), Tiling((6, 8), (10.0, 10.0), 40.0, 30.0))


def test_output_shape_mismatch_raises():
    s = survey_over(0, 70)
    with pytest.raises(ShapeError):
        predict_full(s, bank(1, d=20.0), Tiling((2, 8), (10.0, 10.0), 40.0, 20.0))


def test_crossfade_is_off_by_default_and_smooths_seams():
    s = survey_over(0, 70)
    tiling = Tiling((6, 8), (10.0, 10.0), 40.0, 30.0)
    b = bank(2)
    hard = predict_full(s, b, tiling)
    assert predict_full(s, b, tiling, crossfade=0).values.tobytes() == hard.values.tobytes()
    soft = predict_full(s, b, tiling, crossfade=1)
    jump = lambda v: np.abs(v[3] - v[2]).sum()
    assert jump(soft.values) < jump(hard.values)
    flat = np.full((6, 8), 3000.0)
    assert np.array_equal(crossfade_seams(flat, tiling, 1), flat)
