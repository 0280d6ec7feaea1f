"""Subset of the NIST SP 800-22 statistical tests with file-level pass criteria.

A bit stream is split into substrings; every test yields one p-value per
substring (two for cumulative sums and serial). A test passes when the
fraction of p-values at or above ``alpha`` clears the binomial threshold
``0.99 - 3 sqrt(0.99 * 0.01 / k)`` and a 10-bin chi-square on the p-values
gives at least ``1e-4``.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import fft, special, stats

from .errors import InsufficientDataError

ALPHA = 0.01
UNIFORMITY_ALPHA = 1e-4


def _pm1_sum(x: np.ndarray) -> int:
    return 2 * int(np.count_nonzero(x)) - x.size


def monobit(x: np.ndarray) -> float:
    s = _pm1_sum(x)
    return float(special.erfc(abs(s) / math.sqrt(2 * x.size)))


def block_frequency(x: np.ndarray, block: int = 128) -> float:
    nb = x.size // block
    if nb == 0:
        raise InsufficientDataError("sequence shorter than one block")
    pi = x[: nb * block].reshape(nb, block).mean(axis=1)
    chi2 = 4 * block * float(np.sum((pi - 0.5) ** 2))
    return float(special.gammaincc(nb / 2, chi2 / 2))


def runs(x: np.ndarray) -> float:
    n = x.size
    pi = np.count_nonzero(x) / n
    if abs(pi - 0.5) >= 2 / math.sqrt(n):
        return 0.0
    v = 1 + int(np.count_nonzero(x[1:] != x[:-1]))
    num = abs(v - 2 * n * pi * (1 - pi))
    return float(special.erfc(num / (2 * math.sqrt(2 * n) * pi * (1 - pi))))


# (block length, lowest class, highest class, class probabilities)
_LONGEST_RUN_TABLE = (
    (750000, 10000, 10, 16, (0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727)),
    (6272, 128, 4, 9, (0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124)),
    (128, 8, 1, 4, (0.21484375, 0.3671875, 0.23046875, 0.1875)),
)


def _longest_runs(blocks: np.ndarray) -> np.ndarray:
    nb, m = blocks.shape
    padded = np.zeros((nb, m + 2), dtype=np.int8)
    padded[:, 1:-1] = blocks
    d = np.diff(padded.ravel())
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    out = np.zeros(nb, dtype=np.int64)
    if starts.size:
        np.maximum.at(out, starts // (m + 2), ends - starts)
    return out


def longest_run(x: np.ndarray) -> float:
    n = x.size
    for n_min, m, lo, hi, pi in _LONGEST_RUN_TABLE:
        if n >= n_min:
            break
    else:
        raise InsufficientDataError("longest-run test needs at least 128 bits")
    nb = n // m
    longest = np.clip(_longest_runs(x[: nb * m].reshape(nb, m)), lo, hi)
    counts = np.bincount(longest - lo, minlength=hi - lo + 1)
    expected = nb * np.asarray(pi)
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    return float(special.gammaincc((len(pi) - 1) / 2, chi2 / 2))


def _trunc_div(a: int, b: int) -> int:
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b > 0) else -q


def _cusum_p(z: int, n: int) -> float:
    # Integer arithmetic mirrors the reference implementation's loop bounds.
    sq = math.sqrt(n)
    nz = _trunc_div(n, z)
    k1 = np.arange(_trunc_div(-nz + 1, 4), _trunc_div(nz - 1, 4) + 1)
    k2 = np.arange(_trunc_div(-nz - 3, 4), _trunc_div(nz - 1, 4) + 1)
    cdf = stats.norm.cdf
    s1 = np.sum(cdf((4 * k1 + 1) * z / sq) - cdf((4 * k1 - 1) * z / sq))
    s2 = np.sum(cdf((4 * k2 + 3) * z / sq) - cdf((4 * k2 + 1) * z / sq))
    return float(min(1.0, max(0.0, 1.0 - s1 + s2)))


def cumulative_sums(x: np.ndarray) -> tuple[float, float]:
    """Forward and reverse cumulative-sums p-values."""
    s = np.cumsum(2 * x.astype(np.int64) - 1)
    total = int(s[-1])
    z_fwd = int(np.max(np.abs(s)))
    # Reverse partial sums are total - s[k-1], plus the full sum itself.
    z_rev = max(abs(total), int(np.max(np.abs(total - s[:-1])))) if s.size > 1 else abs(total)
    return _cusum_p(max(z_fwd, 1), x.size), _cusum_p(max(z_rev, 1), x.size)


def dft(x: np.ndarray) -> float:
    n = x.size
    mag = np.abs(fft.rfft(2.0 * x - 1.0)[: n // 2])
    thresh = math.sqrt(math.log(1 / 0.05) * n)
    n0 = 0.95 * n / 2
    n1 = int(np.count_nonzero(mag < thresh))
    d = (n1 - n0) / math.sqrt(n * 0.95 * 0.05 / 4)
    return float(special.erfc(abs(d) / math.sqrt(2)))


def _pattern_counts(x: np.ndarray, m: int) -> np.ndarray:
    """Overlapping circular counts of all ``m``-bit patterns."""
    if m == 0:
        return np.array([x.size])
    ext = np.concatenate([x, x[: m - 1]]).astype(np.int64)
    n = x.size
    idx = np.zeros(n, dtype=np.int64)
    for j in range(m):
        idx = (idx << 1) | ext[j : j + n]
    return np.bincount(idx, minlength=1 << m)


def approximate_entropy(x: np.ndarray, m: int = 10) -> float:
    n = x.size

    def phi(k):
        c = _pattern_counts(x, k) / n
        c = c[c > 0]
        return float(np.sum(c * np.log(c)))

    apen = phi(m) - phi(m + 1)
    chi2 = 2 * n * (math.log(2) - apen)
    return float(special.gammaincc(2 ** (m - 1), chi2 / 2))


def serial(x: np.ndarray, m: int = 16) -> tuple[float, float]:
    n = x.size

    def psi2(k):
        if k <= 0:
            return 0.0
        c = _pattern_counts(x, k).astype(np.float64)
        return float((1 << k) / n * np.sum(c * c) - n)

    p0, p1, p2 = psi2(m), psi2(m - 1), psi2(m - 2)
    d1 = p0 - p1
    d2 = p0 - 2 * p1 + p2
    return float(special.gammaincc(2 ** (m - 2), d1 / 2)), float(special.gammaincc(2 ** (m - 3), d2 / 2))


def default_parameters(n: int) -> dict:
    """Per-length parameters inside the standard recommended ranges."""
    lg = int(math.floor(math.log2(n)))
    return {"block": 128, "apen_m": max(2, min(10, lg - 7)), "serial_m": max(3, min(16, lg - 3))}


def _substring_pvalues(x: np.ndarray, params: Mapping) -> dict[str, float]:
    fwd, rev = cumulative_sums(x)
    s1, s2 = serial(x, params["serial_m"])
    return {
        "monobit": monobit(x),
        "block_frequency": block_frequency(x, params["block"]),
        "runs": runs(x),
        "longest_run": longest_run(x),
        "cusum_forward": fwd,
        "cusum_reverse": rev,
        "dft": dft(x),
        "approximate_entropy": approximate_entropy(x, params["apen_m"]),
        "serial_1": s1,
        "serial_2": s2,
    }


TEST_NAMES = tuple(_substring_pvalues(np.tile([0, 1, 1, 0], 256).astype(np.uint8), default_parameters(1024)))


def proportion_threshold(k: int, p_hat: float = 1 - ALPHA) -> float:
    return p_hat - 3 * math.sqrt(p_hat * (1 - p_hat) / k)


def uniformity_pvalue(pvalues) -> float:
    """Chi-square p-value of the p-value histogram over 10 equal bins."""
    p = np.asarray(pvalues, dtype=float)
    if p.size < 10:
        raise InsufficientDataError("uniformity check needs at least 10 p-values")
    counts = np.histogram(np.clip(p, 0, 1), bins=10, range=(0, 1))[0]
    expected = p.size / 10
    chi2 = float(np.sum((counts - expected) ** 2) / expected)
    return float(special.gammaincc(9 / 2, chi2 / 2))


@dataclass(frozen=True)
class TestResult:
    __test__ = False

    name: str
    pvalues: np.ndarray
    pass_proportion: float
    proportion_threshold: float
    uniformity_p: float | None

    @property
    def passed(self) -> bool:
        ok_u = self.uniformity_p is None or self.uniformity_p >= UNIFORMITY_ALPHA
        return self.pass_proportion >= self.proportion_threshold and ok_u


@dataclass(frozen=True)
class TestReport:
    __test__ = False

    results: tuple[TestResult, ...]
    substring_len: int
    n_substrings: int

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def result(self, name: str) -> TestResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "substring_len": self.substring_len,
            "n_substrings": self.n_substrings,
            "passed": self.passed,
            "tests": [
                {
                    "name": r.name,
                    "pass_proportion": r.pass_proportion,
                    "proportion_threshold": r.proportion_threshold,
                    "uniformity_p": r.uniformity_p,
                    "passed": r.passed,
                }
                for r in self.results
            ],
        }


def run_suite(
    bits,
    substring_len: int = 1_000_000,
    workers: int = 1,
    params: Mapping | None = None,
    progress: Callable | None = None,
    packed: bool = False,
) -> TestReport:
    """Run the test subset on every complete substring of ``bits``.

    With ``packed`` the input is a byte buffer (MSB first) unpacked one
    substring at a time, so ``substring_len`` must be a multiple of 8. A
    trailing partial substring is ignored. With fewer than 10 substrings the
    uniformity check is skipped.
    """
    if packed:
        if substring_len % 8:
            raise ValueError("packed input needs substring_len divisible by 8")
        raw = np.frombuffer(bits, dtype=np.uint8) if not isinstance(bits, np.ndarray) else bits.ravel()
        step = substring_len // 8
        k = raw.size // step

        def chunk(i):
            return np.unpackbits(raw[i * step : (i + 1) * step])

    else:
        x = np.asarray(bits, dtype=np.uint8).ravel()
        k = x.size // substring_len

        def chunk(i):
            return x[i * substring_len : (i + 1) * substring_len]

    if k == 0:
        raise InsufficientDataError(f"need at least {substring_len} bits")
    par = dict(default_parameters(substring_len))
    if params:
        par.update(params)

    def job(i):
        out = _substring_pvalues(chunk(i), par)
        if progress is not None:
            progress()
        return out

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            rows = list(ex.map(job, range(k)))
    else:
        rows = [job(i) for i in range(k)]
    thr = proportion_threshold(k)
    results = []
    for name in rows[0]:
        pv = np.array([r[name] for r in rows])
        results.append(TestResult(name, pv, float(np.mean(pv >= ALPHA)), thr, uniformity_pvalue(pv) if k >= 10 else None))
    return TestReport(tuple(results), substring_len, k)


def heatmap_rows(reports: Mapping[str, TestReport]) -> list[dict]:
    """Rows of ``file, test, pass_ratio, passed`` for a file-by-test heatmap."""
    rows = []
    for fname, rep in reports.items():
        for r in rep.results:
            rows.append({"file": fname, "test": r.name, "pass_ratio": r.pass_proportion, "uniformity_p": r.uniformity_p, "passed": r.passed})
    return rows
