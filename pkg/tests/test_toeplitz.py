import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import toeplitz

from qhrx.errors import ExtractionError
from qhrx.toeplitz import (
    DEFAULT_M,
    DEFAULT_N,
    StreamExtractor,
    ToeplitzExtractor,
    epsilon_ledger,
    measure_throughput,
    output_length,
    required_entropy_per_bit,
    seed_from_first_col_row,
    toeplitz_extract,
)


def gf2_oracle(col, row, x):
    """Dense ``T @ x mod 2`` with the matrix built by scipy from its first column and row."""
    t = toeplitz(np.asarray(col, dtype=np.int64), np.asarray(row, dtype=np.int64))
    return (t @ np.asarray(x, dtype=np.int64)) % 2


def test_small_worked_example():
    ext = ToeplitzExtractor.from_first_col_row([1, 0], [1, 1, 0])
    np.testing.assert_array_equal(ext.matrix(), [[1, 1, 0], [0, 1, 1]])
    np.testing.assert_array_equal(ext.extract([1, 1, 0]), [0, 1])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(2, 80), st.integers(0, 2**32 - 1))
def test_matches_dense_oracle(n, m, seed):
    if n >= m:
        n, m = m - 1, m
    n = max(n, 1)
    rng = np.random.default_rng(seed)
    row = rng.integers(0, 2, m)
    col = np.concatenate([[row[0]], rng.integers(0, 2, n - 1)])
    x = rng.integers(0, 2, m)
    ext = ToeplitzExtractor.from_first_col_row(col, row)
    np.testing.assert_array_equal(ext.matrix(), toeplitz(col, row))
    np.testing.assert_array_equal(ext.extract(x), gf2_oracle(col, row, x))


def test_linearity_over_gf2():
    rng = np.random.default_rng(1)
    ext = ToeplitzExtractor.from_rng(300, 700, rng)
    a = rng.integers(0, 2, 700, dtype=np.uint8)
    b = rng.integers(0, 2, 700, dtype=np.uint8)
    np.testing.assert_array_equal(ext.extract(a ^ b), ext.extract(a) ^ ext.extract(b))


def test_zero_input_gives_zero_output():
    ext = ToeplitzExtractor.from_rng(100, 250, 2)
    assert not np.any(ext.extract(np.zeros(250, np.uint8)))


def test_default_size_against_oracle():
    rng = np.random.default_rng(3)
    ext = ToeplitzExtractor.from_rng(DEFAULT_N, DEFAULT_M, rng)
    x = rng.integers(0, 2, DEFAULT_M, dtype=np.uint8)
    col = ext.seed_bits[DEFAULT_M - 1 :]
    row = ext.seed_bits[: DEFAULT_M][::-1]
    idx = rng.choice(DEFAULT_N, 500, replace=False)
    expected = (toeplitz(col, row)[idx].astype(np.int64) @ x) % 2
    np.testing.assert_array_equal(ext.extract(x)[idx], expected)


def test_seed_layout_roundtrip():
    rng = np.random.default_rng(4)
    ext = ToeplitzExtractor.from_rng(5, 9, rng)
    t = ext.matrix()
    np.testing.assert_array_equal(seed_from_first_col_row(t[:, 0], t[0, :]), ext.seed_bits)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n=5, m=9, seed_bits=np.zeros(12, np.uint8)),
        dict(n=9, m=9, seed_bits=np.zeros(17, np.uint8)),
        dict(n=5, m=9, seed_bits=np.full(13, 2, np.uint8)),
        dict(n=5, m=9, seed_bits=np.zeros(13, np.uint8), epsilon_per_run=0.0),
    ],
)
def test_construction_errors(kwargs):
    with pytest.raises(ExtractionError):
        ToeplitzExtractor(**kwargs)


def test_corner_mismatch_rejected():
    with pytest.raises(ExtractionError):
        seed_from_first_col_row([1, 0], [0, 1, 1])


def test_block_length_enforced():
    ext = ToeplitzExtractor.from_rng(4, 10, 0)
    with pytest.raises(ExtractionError):
        ext.extract(np.zeros(9, np.uint8))


# -- security accounting --------------------------------------------------


def test_epsilon_for_default_hash():
    eps, _ = epsilon_ledger(DEFAULT_N, DEFAULT_M, 0.7537)
    assert eps == pytest.approx(2 ** (-(DEFAULT_M * 0.7537 - DEFAULT_N) / 2), rel=1e-12)
    assert 1e-41 < eps < 1e-39


def test_epsilon_union_bound():
    eps, total = epsilon_ledger(DEFAULT_N, DEFAULT_M, 0.7537, blocks=1.35e7)
    assert total == pytest.approx(1.35e7 * eps)
    assert 1e-34 < total < 1e-32


def test_zero_margin_gives_unit_epsilon():
    assert epsilon_ledger(50, 100, 0.5) == (1.0, 1.0)


def test_negative_margin_raises():
    with pytest.raises(ExtractionError):
        epsilon_ledger(60, 100, 0.5)


@given(st.integers(10, 5000), st.floats(1e-30, 0.1))
def test_required_entropy_inverts_output_length(n, eps):
    m = 2 * n
    h = required_entropy_per_bit(n, m, eps)
    assert output_length(m, h + 1e-9, eps) >= n


def test_ledger_accumulates_over_blocks():
    ext = ToeplitzExtractor.from_rng(10, 30, 0, epsilon_per_run=1e-6)
    ext.extract(np.ones(30, np.uint8))
    ext.extract_stream(np.ones(95, np.uint8))
    assert ext.blocks_processed == 4
    assert ext.epsilon_total == pytest.approx(4e-6)


# -- streaming ------------------------------------------------------------


def test_stream_matches_blockwise():
    rng = np.random.default_rng(5)
    ext = ToeplitzExtractor.from_rng(40, 100, rng, batch=3)
    x = rng.integers(0, 2, 1050, dtype=np.uint8)
    out = ext.extract_stream(x)
    assert out.size == 10 * 40
    ref = ToeplitzExtractor(40, 100, ext.seed_bits)
    np.testing.assert_array_equal(out, np.concatenate([toeplitz_extract(b, ref) for b in x[:1000].reshape(10, 100)]))


def test_stream_extractor_framing_is_chunking_invariant():
    rng = np.random.default_rng(6)
    seed = rng.integers(0, 2, 40 + 100 - 1, dtype=np.uint8)
    x = rng.integers(0, 2, 1234, dtype=np.uint8)
    whole = ToeplitzExtractor(40, 100, seed).extract_stream(x)
    se = StreamExtractor(ToeplitzExtractor(40, 100, seed))
    cuts = np.sort(rng.choice(np.arange(1, x.size), 17, replace=False))
    pieces = [se.feed(c) for c in np.split(x, cuts)]
    np.testing.assert_array_equal(np.concatenate(pieces), whole)
    assert se.pending_bits == 34


def test_short_stream_yields_nothing():
    ext = ToeplitzExtractor.from_rng(4, 10, 0)
    assert ext.extract_stream(np.ones(9, np.uint8)).size == 0
    assert ext.blocks_processed == 0


def test_seeded_construction_is_deterministic():
    a = ToeplitzExtractor.from_rng(30, 80, 11)
    b = ToeplitzExtractor.from_rng(30, 80, 11)
    np.testing.assert_array_equal(a.seed_bits, b.seed_bits)


def test_throughput_leaves_ledger_untouched():
    ext = ToeplitzExtractor.from_rng(200, 500, 0, epsilon_per_run=1e-9)
    res = measure_throughput(ext, n_blocks=8)
    assert ext.blocks_processed == 0 and ext.epsilon_total == 0
    assert res["output_bits_per_s"] == pytest.approx(res["input_bits_per_s"] * 200 / 500)
    assert math.isfinite(res["seconds"]) and res["seconds"] > 0
