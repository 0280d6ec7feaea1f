"""Toeplitz hashing over GF(2) with leftover-hash-lemma accounting.

The ``n x m`` matrix is defined by ``n + m - 1`` seed bits ``s`` through
``T[i, j] = s[i - j + m - 1]``, so row ``i`` of ``T @ x`` is entry
``i + m - 1`` of the full convolution ``s * x``. The product is evaluated with
real FFTs in float64; every convolution value is an integer not larger than
``m``, far inside the range where rounding is exact.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import fft

from .errors import ExtractionError

#: Hash dimensions used for the default extractor.
DEFAULT_N = 28532
DEFAULT_M = 38208


def epsilon_ledger(n: int, m: int, h_min_per_bit: float, blocks: float = 1) -> tuple[float, float]:
    """Security parameters of hashing ``m`` bits with per-bit min-entropy ``h`` down to ``n``.

    Returns ``(2 ** (-(m * h - n) / 2), blocks * that)``.

    Raises
    ------
    ExtractionError
        If ``m * h < n``. Zero margin is allowed and gives ``epsilon = 1``.
    """
    margin = m * h_min_per_bit - n
    if margin < -1e-9 * n:
        raise ExtractionError(f"non-positive entropy margin {margin:.3f} bits")
    margin = max(margin, 0.0)
    eps = 2.0 ** (-margin / 2)
    return eps, min(1.0, blocks * eps)


def required_entropy_per_bit(n: int, m: int, epsilon: float) -> float:
    """Per-bit min-entropy needed for a target per-run ``epsilon``."""
    return (n - 2 * math.log2(epsilon)) / m


def output_length(m: int, h_min_per_bit: float, epsilon: float) -> int:
    """Largest ``n`` achieving ``epsilon`` from ``m`` input bits."""
    return int(math.floor(m * h_min_per_bit + 2 * math.log2(epsilon)))


def seed_from_first_col_row(first_col, first_row) -> np.ndarray:
    """Seed bits for a matrix given its first column (length n) and first row (length m)."""
    col = np.asarray(first_col, dtype=np.uint8)
    row = np.asarray(first_row, dtype=np.uint8)
    if col[0] != row[0]:
        raise ExtractionError("first column and first row disagree on T[0, 0]")
    return np.concatenate([row[::-1], col[1:]])


@dataclass
class ToeplitzExtractor:
    """Toeplitz hash with a running epsilon ledger.

    ``epsilon_total`` grows by ``epsilon_per_run`` for every block processed
    (union bound). ``epsilon_per_run`` is taken as given; use
    :func:`epsilon_ledger` to derive it from an entropy bound.
    """

    n: int
    m: int
    seed_bits: np.ndarray
    epsilon_per_run: float = 0.5
    epsilon_total: float = 0.0
    blocks_processed: int = 0
    batch: int = 16
    workers: int | None = None
    _spectrum: np.ndarray = field(default=None, init=False, repr=False)
    _fft_len: int = field(default=0, init=False, repr=False)

    def __post_init__(self):
        self.seed_bits = np.asarray(self.seed_bits, dtype=np.uint8)
        if not 0 < self.n < self.m:
            raise ExtractionError("need 0 < n < m")
        if self.seed_bits.size != self.n + self.m - 1:
            raise ExtractionError(f"seed must have n + m - 1 = {self.n + self.m - 1} bits")
        if np.any(self.seed_bits > 1):
            raise ExtractionError("seed must be 0/1")
        if not 0 < self.epsilon_per_run < 1:
            raise ExtractionError("epsilon_per_run must lie in (0, 1)")
        self._fft_len = fft.next_fast_len(self.n + self.m - 1, real=True)
        self._spectrum = fft.rfft(self.seed_bits.astype(np.float64), self._fft_len)

    @classmethod
    def from_rng(cls, n: int, m: int, rng, **kw) -> "ToeplitzExtractor":
        rng = np.random.default_rng(rng)
        return cls(n, m, rng.integers(0, 2, n + m - 1, dtype=np.uint8), **kw)

    @classmethod
    def from_first_col_row(cls, first_col, first_row, **kw) -> "ToeplitzExtractor":
        s = seed_from_first_col_row(first_col, first_row)
        return cls(len(first_col), len(first_row), s, **kw)

    def matrix(self) -> np.ndarray:
        """Dense matrix (for small instances and tests)."""
        i = np.arange(self.n)[:, None]
        j = np.arange(self.m)[None, :]
        return self.seed_bits[i - j + self.m - 1]

    def _hash_rows(self, x: np.ndarray) -> np.ndarray:
        spec = fft.rfft(x.astype(np.float64), self._fft_len, axis=-1, workers=self.workers)
        conv = fft.irfft(spec * self._spectrum, self._fft_len, axis=-1, workers=self.workers)
        y = conv[..., self.m - 1 : self.m - 1 + self.n]
        return (np.rint(y).astype(np.int64) & 1).astype(np.uint8)

    def _account(self, blocks: int) -> None:
        self.blocks_processed += blocks
        self.epsilon_total = self.blocks_processed * self.epsilon_per_run

    def extract(self, bits) -> np.ndarray:
        """Hash exactly one block of ``m`` bits into ``n`` bits."""
        x = np.asarray(bits, dtype=np.uint8)
        if x.shape != (self.m,):
            raise ExtractionError(f"input block must have exactly {self.m} bits")
        out = self._hash_rows(x[None, :])[0]
        self._account(1)
        return out

    def extract_stream(self, bits) -> np.ndarray:
        """Hash all complete blocks of ``bits``; a trailing partial block is dropped."""
        x = np.asarray(bits, dtype=np.uint8)
        nblk = x.size // self.m
        if nblk == 0:
            return np.zeros(0, dtype=np.uint8)
        blocks = x[: nblk * self.m].reshape(nblk, self.m)
        out = np.empty((nblk, self.n), dtype=np.uint8)
        for start in range(0, nblk, self.batch):
            out[start : start + self.batch] = self._hash_rows(blocks[start : start + self.batch])
        self._account(nblk)
        return out.reshape(-1)


def toeplitz_extract(bits, ext: ToeplitzExtractor) -> np.ndarray:
    """``T @ bits`` over GF(2) for one block; updates the extractor's ledger."""
    return ext.extract(bits)


class StreamExtractor:
    """Buffers input until full blocks are available, then hashes them."""

    def __init__(self, ext: ToeplitzExtractor):
        self.ext = ext
        self._pending = np.zeros(0, dtype=np.uint8)

    def feed(self, bits) -> np.ndarray:
        buf = np.concatenate([self._pending, np.asarray(bits, dtype=np.uint8)])
        nblk = buf.size // self.ext.m
        self._pending = buf[nblk * self.ext.m :]
        return self.ext.extract_stream(buf[: nblk * self.ext.m])

    @property
    def pending_bits(self) -> int:
        return int(self._pending.size)


def measure_throughput(ext: ToeplitzExtractor, n_blocks: int = 64, rng=0) -> dict:
    """Time :meth:`ToeplitzExtractor.extract_stream` on random input.

    The ledger of ``ext`` is left unchanged.
    """
    rng = np.random.default_rng(rng)
    x = rng.integers(0, 2, n_blocks * ext.m, dtype=np.uint8)
    saved = (ext.blocks_processed, ext.epsilon_total)
    t0 = time.perf_counter()
    ext.extract_stream(x)
    dt = time.perf_counter() - t0
    ext.blocks_processed, ext.epsilon_total = saved
    return {"blocks": n_blocks, "seconds": dt, "input_bits_per_s": x.size / dt, "output_bits_per_s": n_blocks * ext.n / dt}
