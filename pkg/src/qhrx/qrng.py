"""Source-device-independent heterodyne QRNG.

Calibration fits the band-limited output variance of each channel against LO
power, ``var = m * P_LO + q``. The phase-space resolution in shot-noise units
follows from the digitizer bin ``delta_vu``::

    trusted electronics : delta = delta_vu / sqrt(2 m P_LO + 2 q)
    untrusted (default) : delta = delta_vu / sqrt(2 m P_LO)

and ``-log2(delta_x * delta_p / pi)`` lower-bounds the conditional
min-entropy per heterodyne outcome.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .detector import DetectorModel, quantize
from .dsp import spectral_isolate
from .errors import CalibrationError, FitError, InsufficientDataError
from .pic_optics import PicState
from .receiver import QRNG_BAND, simulate_receiver, synthesize_band

N_BIT = 16


class EntropyWarning(UserWarning):
    """Entropy bound clamped or estimated from too few samples."""


# ---------------------------------------------------------------------------
# Calibration


def fit_variance_vs_power(points) -> tuple[float, float, float]:
    """Ordinary least-squares affine fit of variance against LO power.

    Parameters
    ----------
    points : sequence of (P_LO [W], variance [V^2])

    Returns
    -------
    m, q, r2

    Raises
    ------
    FitError
        Fewer than three points or fewer than two distinct powers.
    CalibrationError
        Negative fitted slope.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise FitError("points must be (power, variance) pairs")
    p, v = pts[:, 0], pts[:, 1]
    if np.unique(p).size < 2:
        raise FitError("rank-deficient fit: need at least two distinct powers")
    if p.size < 3:
        raise FitError("need at least three points")
    (m, q), *_ = np.linalg.lstsq(np.column_stack([p, np.ones_like(p)]), v, rcond=None)
    ss_res = float(np.sum((v - (m * p + q)) ** 2))
    ss_tot = float(np.sum((v - v.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    if m <= 0:
        raise CalibrationError(f"negative variance slope {m:.3g}")
    return float(m), float(q), float(r2)


def find_linear_region(points, rel_tol: float = 0.02, min_points: int = 3) -> int:
    """Number of leading (lowest-power) points consistent with one affine law.

    Points are taken in increasing power. The region grows while each new
    point stays within ``rel_tol`` of the fit through all points before it.
    """
    pts = np.asarray(sorted(map(tuple, np.asarray(points, dtype=float))), dtype=float)
    if pts.shape[0] < min_points:
        raise FitError("not enough points for a linear-region search")
    k = min_points
    while k < pts.shape[0]:
        m, q, _ = fit_variance_vs_power(pts[:k])
        pred = m * pts[k, 0] + q
        if abs(pts[k, 1] - pred) > rel_tol * pred:
            break
        k += 1
    return k


@dataclass(frozen=True)
class CalibrationRecord:
    """Fitted receiver coefficients and derived phase-space resolutions."""

    m_x: float
    m_p: float
    q_x: float
    q_p: float
    delta_vu: float
    p_lo: float
    trusted_electronics: bool = False
    r2: tuple[float, float] = (1.0, 1.0)
    delta_x: float = field(init=False)
    delta_p: float = field(init=False)

    def __post_init__(self):
        if self.m_x <= 0 or self.m_p <= 0:
            raise CalibrationError("variance slopes must be positive")
        if self.q_x < 0 or self.q_p < 0:
            raise CalibrationError("electronic offsets must be non-negative")
        if min(self.r2) <= 0.99:
            raise CalibrationError(f"calibration fit R^2 {min(self.r2):.4f} not above 0.99")
        dx, dp = resolution_snu(self, self.trusted_electronics)
        object.__setattr__(self, "delta_x", dx)
        object.__setattr__(self, "delta_p", dp)

    def to_dict(self) -> dict:
        return {
            "m_x_v2_per_w": self.m_x,
            "m_p_v2_per_w": self.m_p,
            "q_x_v2": self.q_x,
            "q_p_v2": self.q_p,
            "delta_vu_v": self.delta_vu,
            "p_lo_w": self.p_lo,
            "trusted_electronics": self.trusted_electronics,
            "r2": list(self.r2),
            "delta_x_snu": self.delta_x,
            "delta_p_snu": self.delta_p,
        }


def resolution_snu(cal, trusted: bool | None = None) -> tuple[float, float]:
    """Phase-space resolutions ``(delta_x, delta_p)`` in shot-noise units."""
    if cal.p_lo <= 0:
        raise CalibrationError("LO power must be positive")
    if trusted is None:
        trusted = cal.trusted_electronics
    qx, qp = (cal.q_x, cal.q_p) if trusted else (0.0, 0.0)
    dx = cal.delta_vu / math.sqrt(2 * cal.m_x * cal.p_lo + 2 * qx)
    dp = cal.delta_vu / math.sqrt(2 * cal.m_p * cal.p_lo + 2 * qp)
    return dx, dp


# ---------------------------------------------------------------------------
# Entropy


def min_entropy_conditional(delta_x: float, delta_p: float, n_bit: int = N_BIT) -> float:
    """Lower bound ``-log2(delta_x delta_p / pi)`` per outcome pair, clamped to ``[0, n_bit]``."""
    if delta_x <= 0 or delta_p <= 0:
        raise ValueError("resolutions must be positive")
    prod = delta_x * delta_p / math.pi
    if prod >= 1:
        if prod > 1:
            warnings.warn("resolution cell exceeds pi; no certifiable entropy", EntropyWarning, stacklevel=2)
        return 0.0
    h = -math.log2(prod)
    if h > n_bit:
        warnings.warn(f"bound {h:.3f} exceeds {n_bit} bits; clamped", EntropyWarning, stacklevel=2)
        h = float(n_bit)
    return h


def min_entropy_classical(codes) -> float:
    """Empirical min-entropy ``-log2 max_k p_k`` over the joint 16-bit alphabet."""
    c = np.asarray(codes).ravel()
    if c.size == 0:
        raise InsufficientDataError("empty outcome sequence")
    if c.size < 2**16:
        warnings.warn("fewer than 2**16 outcomes; estimate is coarse", EntropyWarning, stacklevel=2)
    counts = np.bincount(c.astype(np.int64) & 0xFFFF, minlength=2**16)
    return float(-math.log2(counts.max() / c.size))


def secure_rate(h_min: float, r_raw: float) -> float:
    """Secure bit rate (bit/s) for ``h_min`` bits per sample at ``r_raw`` samples/s."""
    if h_min < 0 or r_raw < 0:
        raise ValueError("inputs must be non-negative")
    return h_min * r_raw


def extraction_rate(n: int, m: int, n_bit: int, r_raw: float) -> float:
    """Output rate of an ``n x m`` hash fed with ``n_bit`` bits per sample."""
    return n / m * n_bit * r_raw


@dataclass(frozen=True)
class EntropyReport:
    h_min_conditional: float
    h_min_classical: float
    n_bit: int
    r_raw: float
    r_secure: float

    def __post_init__(self):
        if not 0 <= self.h_min_conditional <= self.n_bit:
            raise ValueError("conditional min-entropy outside [0, n_bit]")
        if self.h_min_classical + 1e-9 < self.h_min_conditional:
            # Finite-sample max-bin estimates are biased low; flag rather than refuse.
            warnings.warn("classical min-entropy below the conditional bound", EntropyWarning, stacklevel=3)

    def to_dict(self) -> dict:
        return {
            "h_min_conditional_bits": self.h_min_conditional,
            "h_min_classical_bits": self.h_min_classical,
            "n_bit": self.n_bit,
            "r_raw_sa_per_s": self.r_raw,
            "r_secure_bit_per_s": self.r_secure,
        }


# ---------------------------------------------------------------------------
# Outcomes


def combine_outcomes(x_codes, p_codes, bits: int = 8) -> np.ndarray:
    """Pack signed per-channel codes into unsigned joint outcomes (x in the high byte)."""
    off = 1 << (bits - 1)
    x = np.asarray(x_codes, dtype=np.int32) + off
    p = np.asarray(p_codes, dtype=np.int32) + off
    return ((x << bits) | p).astype(np.uint16 if 2 * bits <= 16 else np.uint32)


def outcome_bits(outcomes) -> np.ndarray:
    """Bit stream of 16-bit outcomes, most significant bit first."""
    o = np.asarray(outcomes, dtype=">u2")
    return np.unpackbits(o.view(np.uint8))


# ---------------------------------------------------------------------------
# Simulated pipeline


@dataclass(frozen=True)
class CalibrationSweep:
    powers: np.ndarray
    variances: np.ndarray  # (n_powers, 2)
    linear_points: int
    record: CalibrationRecord
    saturated: np.ndarray  # (n_powers,) any channel flagged

    @property
    def p_max(self) -> float:
        return float(self.powers[self.linear_points - 1])


def simulate_calibration(
    state: PicState,
    model: DetectorModel,
    powers: Sequence[float],
    n_samples: int = 1 << 18,
    seed: int = 0,
    band=QRNG_BAND,
    delta_vu: float | None = None,
    trusted: bool = False,
    rel_tol: float | None = None,
) -> CalibrationSweep:
    """Variance-vs-power sweep on simulated frames, linear-region search and fit.

    The record is evaluated at the largest power of the linear region.
    ``rel_tol`` defaults to five standard errors of a variance estimate from
    the isolated sample count.
    """
    powers = np.sort(np.asarray(powers, dtype=float))
    ss = np.random.SeedSequence(seed)
    child = ss.spawn(len(powers))
    var = np.empty((len(powers), 2))
    sat = np.zeros(len(powers), bool)
    for i, (p, s) in enumerate(zip(powers, child)):
        frame = simulate_receiver(state, model, float(p), n_samples, np.random.default_rng(s))
        iso, _ = spectral_isolate(frame, band)
        var[i] = np.var(iso.volts(), axis=1)
        sat[i] = any(frame.saturated)
    if rel_tol is None:
        rel_tol = 5 * math.sqrt(2.0 / iso.n_samples)
    k = min(find_linear_region(np.column_stack([powers, var[:, c]]), rel_tol) for c in range(2))
    fits = [fit_variance_vs_power(np.column_stack([powers[:k], var[:k, c]])) for c in range(2)]
    if delta_vu is None:
        if model.adc_fullscale_v is None:
            raise CalibrationError("a fixed digitizer range is required for security accounting")
        delta_vu = model.adc_fullscale_v / 2**model.adc_bits
    rec = CalibrationRecord(
        m_x=fits[0][0],
        m_p=fits[1][0],
        q_x=max(fits[0][1], 0.0),
        q_p=max(fits[1][1], 0.0),
        delta_vu=delta_vu,
        p_lo=float(powers[k - 1]),
        trusted_electronics=trusted,
        r2=(fits[0][2], fits[1][2]),
    )
    return CalibrationSweep(powers, var, k, rec, sat)


def generate_outcomes(state: PicState, model: DetectorModel, p_lo: float, n: int, rng, band=QRNG_BAND) -> tuple[np.ndarray, int]:
    """Digitized joint outcomes from band-isolated samples.

    Returns the 16-bit outcomes and the count of clipped channel samples.
    """
    rng = np.random.default_rng(rng)
    v = synthesize_band(state, model, p_lo, band, n, rng)
    fs = model.adc_fullscale_v
    codes_x, _, cx = quantize(v[0], model.adc_bits, fs)
    codes_p, _, cp = quantize(v[1], model.adc_bits, fs)
    return combine_outcomes(codes_x, codes_p, model.adc_bits), cx + cp
