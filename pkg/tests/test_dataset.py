import math

import numpy as np
import pytest

from quadgc import dataset as D
from quadgc import ocp


@pytest.fixture(scope="module")
def small():
    """Three converged trajectories from a handful of draws."""
    spec = D.SampleSpec(num_requested=3, seed=11)
    ds, rep = D.generate(spec, eps=0.2)
    return ds, rep


def test_default_box():
    s = D.SampleSpec()
    assert s.lower == (-10, -10, -5, -5, -math.pi / 3, -0.01)
    assert s.upper == (10, 10, 5, 5, math.pi / 3, 0.01)
    assert s.num_requested == 2000


def test_degenerate_box():
    spec = D.SampleSpec.point((1, 2, 3, 4, 0.5, 0.0), num_requested=5)
    for i in range(5):
        assert np.array_equal(D.sample_initial(spec, i), [1, 2, 3, 4, 0.5, 0.0])


def test_sampling_deterministic_and_in_box():
    spec = D.SampleSpec(num_requested=50, seed=3)
    a = np.array([D.sample_initial(spec, i) for i in range(50)])
    b = np.array([D.sample_initial(spec, i) for i in range(50)])
    assert np.array_equal(a, b)
    assert np.all(a >= spec.lower) and np.all(a <= spec.upper)
    other = D.SampleSpec(num_requested=50, seed=4)
    assert not np.array_equal(a[0], D.sample_initial(other, 0))
    with pytest.raises(IndexError):
        D.sample_initial(spec, 50)


def test_sampling_statistics():
    n = 100_000
    spec = D.SampleSpec(num_requested=n, seed=0)
    xs = np.array([D.sample_initial(spec, i)[0] for i in range(n)])
    # standard error of a U(-10, 10) mean: 20 / sqrt(12 n); allow 10 of them
    assert abs(xs.mean()) < 10 * 20 / math.sqrt(12 * n)
    assert xs.var() == pytest.approx(400 / 12, rel=0.02)


def test_invalid_box():
    with pytest.raises(ValueError):
        D.SampleSpec(lower=(1,) * 6, upper=(0,) * 6)


def test_trivial_generation():
    ds, rep = D.generate(D.SampleSpec.point((0,) * 6), eps=0.2)
    assert rep.attempted == 1 and rep.converged == 1 and rep.rate == 1.0
    assert len(ds) == 1


def test_generation_report(small):
    ds, rep = small
    assert rep.attempted == 3
    assert rep.converged == len(ds) == len(ds.records)
    assert rep.rate == rep.converged / 3
    assert rep.wall_time > 0 and rep.seed == 11 and rep.epsilon == 0.2
    assert [r.id for r in ds.records] == sorted(r.id for r in ds.records)


def test_records_are_sound(small):
    ds, _ = small
    spec = D.SampleSpec(num_requested=3, seed=11)
    for r in ds.records:
        sol = r.solution
        assert sol.converged and r.epsilon == 0.2
        assert np.allclose(sol.states[0], D.sample_initial(spec, r.id), atol=1e-8)
        assert np.max(np.abs(sol.states[-1])) < 1e-8
        assert sol.controls.min() >= 0 and sol.controls.max() <= 1
        assert ocp.verify(sol).ok()


def test_pair_counts(small):
    ds, _ = small
    S, U = ds.pairs()
    assert S.shape == (81 * len(ds), 6) and U.shape == (81 * len(ds), 2)
    assert sum(ds.pair_counts().values()) == 81 * len(ds)


def _fake(n, K=81, eps=0.2):
    recs = []
    for i in range(n):
        t = np.linspace(0, 1 + i, K)
        sol = ocp.OcpSolution(t, np.full((K, 6), float(i)), np.full((K, 2), 0.5), None,
                              float(t[-1]), float("nan"), True, float("nan"), eps)
        recs.append(D.TrajectoryRecord(i, eps, sol))
    return D.Dataset(recs)


def test_split_eight_one_one():
    ds = D.split(_fake(10), seed=0)
    counts = {s: len(ds.split_records(s)) for s in D.SPLITS}
    assert counts == {"train": 8, "val": 1, "test": 1}
    assert set(ds.split_of) == set(range(10))
    assert D.split(_fake(10), seed=0).split_of == ds.split_of
    assert ds.pair_counts() == {"train": 8 * 81, "val": 81, "test": 81}


def test_split_disjoint_and_rounding():
    ds = D.split(_fake(37), (0.7, 0.2, 0.1), seed=5)
    names = [ds.split_of[r.id] for r in ds.records]
    assert len(names) == 37
    assert sorted(len(ds.split_records(s)) for s in D.SPLITS) == sorted([26, 7, 4])


def test_split_rejects_bad_fractions():
    with pytest.raises(ValueError):
        D.split(_fake(3), (0.5, 0.5, 0.5))


def test_round_trip(tmp_path, small):
    ds = D.split(small[0], seed=1)
    path = tmp_path / "ds.csv"
    D.save(ds, path)
    back = D.load(path)
    assert back.split_of == ds.split_of
    for a, b in zip(ds.records, back.records):
        assert a.id == b.id and a.epsilon == b.epsilon
        assert np.array_equal(a.solution.states, b.solution.states)
        assert np.array_equal(a.solution.controls, b.solution.controls)
        assert np.array_equal(a.solution.times, b.solution.times)
    D.save(back, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


def test_mixed_epsilon_round_trip(tmp_path):
    a, b = _fake(2, eps=0.2), _fake(1, eps=0.5)
    b.records[0].id = 7
    ds = D.Dataset(a.records + b.records)
    D.save(ds, tmp_path / "mix.csv")
    back = D.load(tmp_path / "mix.csv")
    assert [r.epsilon for r in back.records] == [0.2, 0.2, 0.5]


def test_truncated_file_names_row(tmp_path):
    path = tmp_path / "ds.csv"
    D.save(_fake(2, K=4), path)
    lines = path.read_text().splitlines()
    lines[5] = ",".join(lines[5].split(",")[:7])
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(D.SchemaError, match="row 6"):
        D.load(path)


def test_bad_header(tmp_path):
    path = tmp_path / "ds.csv"
    path.write_text("a,b,c\n")
    with pytest.raises(D.SchemaError, match="row 1"):
        D.load(path)


def test_non_contiguous_nodes(tmp_path):
    path = tmp_path / "ds.csv"
    D.save(_fake(1, K=4), path)
    lines = path.read_text().splitlines()
    del lines[2]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(D.SchemaError, match="node_idx"):
        D.load(path)


def test_regeneration_is_bit_identical(tmp_path):
    spec = D.SampleSpec(num_requested=2, seed=21)
    D.save(D.generate(spec)[0], tmp_path / "a.csv")
    D.save(D.generate(spec)[0], tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_parallel_matches_serial(tmp_path):
    spec = D.SampleSpec(num_requested=2, seed=21)
    D.save(D.generate(spec, workers=1)[0], tmp_path / "a.csv")
    D.save(D.generate(spec, workers=2)[0], tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_extension_matches_full_batch(small):
    ds, _ = small
    tail, rep = D.generate(D.SampleSpec(num_requested=3, seed=11), eps=0.2, start=2)
    assert rep.attempted == 1
    want = [r for r in ds.records if r.id == 2]
    assert [r.id for r in tail.records] == [r.id for r in want]
    for a, b in zip(tail.records, want):
        np.testing.assert_array_equal(a.solution.states, b.solution.states)
    with pytest.raises(ValueError):
        D.generate(D.SampleSpec(num_requested=3), start=4)
