import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sddelab.brownian import (DRIVING, HISTORY, BrownianLattice, RatioMismatch, audit, coarsen, generate,
                              increments, quantum, standard_normals, sum_blocks)


def test_regeneration_is_bit_exact():
    a = generate(7, 3, 0.01, 500)
    b = generate(7, 3, 0.01, 500)
    assert a == b
    assert a.increments.tobytes() == b.increments.tobytes()


def test_single_step_lattice():
    lat = generate(1, 0, 0.5, 1)
    assert lat.n_steps == 1 and np.isfinite(lat.increments).all()


def test_different_paths_and_streams_differ():
    a = generate(7, 3, 0.01, 100)
    assert not np.array_equal(a.increments, generate(7, 4, 0.01, 100).increments)
    assert not np.array_equal(a.increments, generate(8, 3, 0.01, 100).increments)
    assert not np.array_equal(a.increments, generate(7, 3, 0.01, 100, stream=HISTORY).increments)


@given(st.integers(0, 40), st.integers(1, 40), st.integers(0, 40))
def test_chunked_generation_matches_whole(split, tail, start):
    whole = standard_normals(11, 5, start, split + tail)
    head = standard_normals(11, 5, start, split)
    rest = standard_normals(11, 5, start + split, tail)
    np.testing.assert_array_equal(whole, np.concatenate([head, rest]))


def test_pooled_variance_oracle():
    # 10^6 increments with delta 0.01: variance 0.01 within 3 standard errors
    pooled = np.concatenate([generate(2024, pid, 0.01, 100_000).increments.ravel() for pid in range(10)])
    se = math.sqrt(2) * 0.01 / 1000
    assert abs(pooled.var() - 0.01) <= 3 * se


def test_audit_mean_within_five_standard_errors():
    stats = audit(generate(99, 1, 0.001, 200_000))
    assert abs(stats["mean_z"]) < 5
    assert abs(stats["variance_ratio"] - 1) < 0.02


def test_independence_across_paths():
    a = generate(5, 10, 1.0, 100_000).increments[:, 0]
    b = generate(5, 11, 1.0, 100_000).increments[:, 0]
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.01


def test_increments_are_quantized():
    delta = 0.0001
    inc = increments(1, 2, delta, 0, 1000, 1)
    unit = quantum(delta)
    assert np.all(inc / unit == np.rint(inc / unit))
    assert unit < math.sqrt(delta) * 2.0 ** -28


def test_coarsen_identity_and_total():
    lat = generate(3, 1, 0.001, 64, 2)
    assert coarsen(lat, 1) is lat
    total = coarsen(lat, 64)
    assert total.n_steps == 1
    np.testing.assert_array_equal(total.increments[0], lat.increments.sum(axis=0))
    assert total.delta == pytest.approx(0.064)
    assert (total.seed, total.path_id) == (lat.seed, lat.path_id)


def test_coarsen_example_one_ratio():
    lat = generate(20250101, 0, 0.0001, 10_000)
    coarse = coarsen(lat, 100)
    assert coarse.delta == pytest.approx(0.01)
    for j in (0, 17, 99):
        block = lat.increments[100 * j:100 * (j + 1), 0]
        acc = 0.0
        for v in block:
            acc += v
        assert coarse.increments[j, 0] == acc


def test_coarsen_rejects_non_divisor():
    with pytest.raises(RatioMismatch):
        coarsen(generate(1, 1, 0.1, 10), 3)
    with pytest.raises(RatioMismatch):
        coarsen(generate(1, 1, 0.1, 10), 0)


@given(st.integers(0, 2 ** 32), st.integers(0, 1000), st.sampled_from([1, 2, 3, 4, 5, 10]),
       st.sampled_from([1, 2, 3, 5, 8]), st.integers(1, 6), st.integers(1, 2))
def test_coarsen_composes_exactly(seed, pid, r1, r2, blocks, m):
    lat = generate(seed, pid, 1e-4, r1 * r2 * blocks, m)
    two_stage = coarsen(coarsen(lat, r1), r2)
    one_stage = coarsen(lat, r1 * r2)
    assert two_stage.increments.tobytes() == one_stage.increments.tobytes()


@given(st.lists(st.integers(-2 ** 40, 2 ** 40), min_size=6, max_size=6))
def test_block_sums_order_free_for_quantized(ints):
    fine = np.array(ints, dtype=float)[:, None] * 2.0 ** -40
    fwd = sum_blocks(fine, 3)
    rev = sum_blocks(fine[::-1], 3)[::-1]
    np.testing.assert_array_equal(fwd, rev)


def test_values_and_window():
    lat = generate(4, 4, 0.01, 20)
    vals = lat.values()
    assert vals.shape == (21, 1) and vals[0, 0] == 0.0
    win = lat.window(5, 15)
    assert win.start == 5 and win.n_steps == 10
    np.testing.assert_array_equal(win.increments, lat.increments[5:15])
    with pytest.raises(IndexError):
        lat.window(5, 30)


def test_window_matches_offset_generation():
    lat = generate(4, 4, 0.01, 20)
    direct = generate(4, 4, 0.01, 10, start=5)
    np.testing.assert_array_equal(direct.increments, lat.window(5, 15).increments)


def test_lattice_is_read_only():
    lat = generate(1, 1, 0.1, 5)
    with pytest.raises(ValueError):
        lat.increments[0, 0] = 1.0


def test_binary_dump_round_trip(tmp_path):
    lat = generate(2 ** 63 + 5, 17, 0.001, 33, 2)
    path = tmp_path / "lat.bin"
    lat.dump(path)
    blob = path.read_bytes()
    assert len(blob) == 40 + 33 * 2 * 8
    back = BrownianLattice.load(path)
    assert back == lat
    assert back.to_bytes() == blob


def test_bad_seed_rejected():
    with pytest.raises(ValueError):
        standard_normals(-1, 0, 0, 3)
    assert standard_normals(1, 1, 0, 0).size == 0
    assert DRIVING != HISTORY
