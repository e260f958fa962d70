import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sesdi.errors import ParameterError
from sesdi.traces import (
    Context, GeometryAwareTrace, Survey, brute_force_context, downsample_trace, query_context,
    subsample_contiguous, subsample_uniform,
)
from sesdi.wavesim import ShotRecord


def random_survey(rng, n_shots, n_rcv, span=1000.0, length=4, cell_size=None, three_d=False):
    src = rng.uniform(0, span, size=(n_shots, 3))
    rcv = rng.uniform(0, span, size=(n_shots, n_rcv, 3))
    if not three_d:
        src[:, 1] = 0
        rcv[..., 1] = 0
    data = rng.normal(size=(n_shots * n_rcv, length))
    return Survey(data, np.repeat(src, n_rcv, axis=0), rcv.reshape(-1, 3),
                  np.repeat(np.arange(n_shots), n_rcv), np.tile(np.arange(n_rcv), n_shots),
                  1e-3, cell_size)


def line_survey(n_shots=4, n_rcv=20):
    xs = np.linspace(0, 950, n_rcv)
    recs = [ShotRecord((float(x), 0.0, 0.0), np.column_stack([xs, 0 * xs, 0 * xs]),
                       np.full((n_rcv, 5), float(s)), 1e-3)
            for s, x in enumerate(np.linspace(0, 950, n_shots))]
    return Survey.from_shot_records(recs)


def test_trace_accessors():
    t = GeometryAwareTrace(np.arange(3.0), (1, 2, 3), (4, 5, 6), 0, 1)
    assert t.D().tolist() == [0, 1, 2] and t.A() == ((1, 2, 3), (4, 5, 6))


def test_survey_sorted_and_read_only():
    s = Survey(np.arange(6.0).reshape(3, 2), np.zeros((3, 3)), np.zeros((3, 3)), [1, 0, 0], [0, 1, 0], 1e-3)
    assert s.shot_id.tolist() == [0, 0, 1] and s.rcv_index.tolist() == [0, 1, 0]
    assert s.data[:, 0].tolist() == [4.0, 2.0, 0.0]
    with pytest.raises(ValueError):
        s.data[0, 0] = 1.0


def test_survey_rejects_duplicates_and_nan():
    with pytest.raises(ParameterError):
        Survey(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 3)), [0, 0], [1, 1], 1e-3)
    with pytest.raises(ParameterError):
        Survey([[np.nan, 0]], np.zeros((1, 3)), np.zeros((1, 3)), [0], [0], 1e-3)


def test_acquisition_geometry_is_set_of_pairs():
    s = line_survey(2, 3)
    geo = s.acquisition_geometry()
    assert len(geo) == 6
    assert ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0)) in geo


def test_query_includes_trace_at_centre_and_closed_edge():
    s = Survey(np.ones((2, 3)), [[100, 0, 0], [100, 0, 0]], [[100, 0, 0], [150, 0, 0]], [0, 0], [0, 1], 1e-3)
    assert query_context(s, (100.0, 0.0), 1.0).members.tolist() == [0]
    assert query_context(s, (100.0, 0.0), 100.0).members.tolist() == [0, 1]  # rcv on the edge


def test_query_excludes_receiver_one_metre_out():
    s = Survey(np.ones((1, 3)), [[100, 0, 0]], [[151, 0, 0]], [0], [0], 1e-3)
    assert len(query_context(s, (100.0, 0.0), 100.0)) == 0


def test_query_ignores_depth():
    s = Survey(np.ones((1, 3)), [[100, 0, 5000]], [[100, 0, -300]], [0], [0], 1e-3)
    assert len(query_context(s, (100.0, 0.0), 10.0)) == 1


def test_universal_query():
    s = line_survey()
    assert len(query_context(s, (475.0, 0.0), 1e5)) == len(s)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_shots=st.integers(1, 30), n_rcv=st.integers(1, 40),
       w=st.floats(1.0, 2000.0), three_d=st.booleans(), cell=st.sampled_from([None, 7.0, 400.0]))
def test_index_query_equals_brute_force(seed, n_shots, n_rcv, w, three_d, cell):
    rng = np.random.default_rng(seed)
    s = random_survey(rng, n_shots, n_rcv, cell_size=cell, three_d=three_d)
    q = tuple(rng.uniform(-100, 1100, size=2))
    assert query_context(s, q, w).members.tolist() == brute_force_context(s, q, w).tolist()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), w1=st.floats(1, 1000), extra=st.floats(0, 1000))
def test_nested_queries(seed, w1, extra):
    s = random_survey(np.random.default_rng(seed), 10, 10)
    a = set(s.query((500, 0), w1).tolist())
    b = set(s.query((500, 0), w1 + extra).tolist())
    assert a <= b


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_query_invariant_to_insertion_order(seed):
    rng = np.random.default_rng(seed)
    s = random_survey(rng, 6, 8)
    perm = rng.permutation(len(s))
    t = Survey(s.data[perm], s.src[perm], s.rcv[perm], s.shot_id[perm], s.rcv_index[perm], 1e-3)
    q, w = (500.0, 0.0), 700.0
    assert query_context(s, q, w).members.tolist() == query_context(t, q, w).members.tolist()
    assert s.data.tobytes() == t.data.tobytes()


def test_query_rejects_non_positive_width():
    with pytest.raises(ParameterError):
        line_survey().query((0, 0), 0.0)


def _ctx(n):
    s = random_survey(np.random.default_rng(n), 1, n)
    return Context(s, np.arange(n))


def test_uniform_fraction_one_is_identity():
    c = _ctx(37)
    assert subsample_uniform(c, 1.0, 3).members.tolist() == c.members.tolist()


def test_uniform_eighty_percent_of_hundred():
    c = _ctx(100)
    sub = subsample_uniform(c, 0.8, 11)
    assert len(sub) == 80 and set(sub.members) <= set(c.members)
    assert (np.diff(sub.members) > 0).all()
    assert subsample_uniform(c, 0.8, 11).members.tolist() == sub.members.tolist()


def test_uniform_rounds_half_up_and_handles_empty():
    assert len(subsample_uniform(_ctx(5), 0.5, 0)) == 3
    empty = Context(line_survey(), np.zeros(0, dtype=np.int64))
    assert len(subsample_uniform(empty, 0.5, 0)) == 0
    with pytest.raises(ParameterError):
        subsample_uniform(_ctx(5), 0.0, 0)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(0, 60), f=st.floats(0.01, 1.0), seed=st.integers(0, 2**32 - 1))
def test_uniform_subset_and_count(n, f, seed):
    c = _ctx(max(n, 1))
    sub = subsample_uniform(c, f, seed)
    assert set(sub.members) <= set(c.members)
    assert len(sub) == int(np.floor(f * len(c) + 0.5))


def test_contiguous_forced_fraction_gives_run():
    s = line_survey(1, 20)
    sub = subsample_contiguous(query_context(s, (475.0, 0.0), 1e4), seed=5, fraction=0.95)
    idx = s.rcv_index[sub.members]
    assert len(idx) == 19 and (np.diff(idx) == 1).all()


def test_contiguous_single_receiver_kept():
    s = line_survey(3, 1)
    ctx = query_context(s, (475.0, 0.0), 1e4)
    assert subsample_contiguous(ctx, seed=0).members.tolist() == ctx.members.tolist()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_shots=st.integers(1, 6), n_rcv=st.integers(1, 30))
def test_contiguous_runs_per_shot(seed, n_shots, n_rcv):
    s = line_survey(n_shots, n_rcv)
    ctx = query_context(s, (475.0, 0.0), 1e4)
    sub = subsample_contiguous(ctx, seed)
    assert set(sub.members) <= set(ctx.members)
    for sid in range(n_shots):
        idx = np.sort(s.rcv_index[sub.members][s.shot_id[sub.members] == sid])
        assert len(idx) >= 1
        assert (np.diff(idx) == 1).all()
        if n_rcv > 1:
            assert int(np.floor(0.45 * n_rcv + 0.5)) <= len(idx) <= int(np.floor(0.95 * n_rcv + 0.5))


def test_downsample_examples():
    assert downsample_trace(np.arange(2000.0)).tolist() == [5 * k + 2 for k in range(400)]
    assert (downsample_trace(np.full(2000, 3.5)) == 3.5).all()
    assert not downsample_trace(np.zeros(2000)).any()
    with pytest.raises(ParameterError):
        downsample_trace(np.zeros(1999))


def test_survey_downsampled_and_file_round_trip(tmp_path):
    s = random_survey(np.random.default_rng(0), 3, 4, length=2000)
    d = s.downsampled(400)
    assert d.n_samples == 400 and d.record_dt == pytest.approx(5e-3)
    s.save(tmp_path / "s.sdi")
    back = Survey.load(tmp_path / "s.sdi")
    assert back.data.tobytes() == s.data.tobytes()
    assert back.src.tobytes() == s.src.tobytes()
    assert back.shot_id.tolist() == s.shot_id.tolist()


def test_locations_layout():
    s = Survey(np.ones((1, 2)), [[1, 2, 3]], [[4, 5, 6]], [0], [0], 1e-3)
    assert s.locations([0], 4).tolist() == [[1, 3, 4, 6]]
    assert s.locations([0], 6).tolist() == [[1, 2, 3, 4, 5, 6]]
