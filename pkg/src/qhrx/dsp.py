"""Signal processing shared by the QRNG and CV-QKD chains."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft, signal

from .detector import QuadratureFrame
from .errors import ConfigError, FitError, InsufficientDataError, RangeError


@dataclass(frozen=True)
class DspConfig:
    """Receiver DSP settings.

    Parameters
    ----------
    hpf_cutoff_hz : float
        Digital high-pass corner.
    band : (float, float)
        Spectral window kept by :func:`spectral_isolate`, in Hz.
    rrc_rolloff : float
    samples_per_symbol : int
    filter_span_symbols : int
        RRC length in symbols (taps = span * sps + 1).
    modulation_depth : float or None
        Peak value the transmitted waveform is scaled to; ``None`` keeps the
        shaped symbols unscaled.
    pilot_fraction : float
        Leading fraction of symbols used for gain and phase alignment.
    """

    hpf_cutoff_hz: float = 50e6
    band: tuple[float, float] = (0.5e9, 2.3e9)
    rrc_rolloff: float = 0.3
    samples_per_symbol: int = 100
    filter_span_symbols: int = 16
    modulation_depth: float | None = None
    pilot_fraction: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "band", tuple(float(b) for b in self.band))
        if not 0.0 <= self.rrc_rolloff <= 1.0:
            raise ConfigError("roll-off must lie in [0, 1]")
        if not 0 <= self.band[0] < self.band[1]:
            raise ConfigError("band must satisfy 0 <= f_lo < f_hi")
        if self.samples_per_symbol < 1 or self.filter_span_symbols < 4:
            raise ConfigError("need samples_per_symbol >= 1 and span >= 4")
        if not 0 < self.pilot_fraction <= 1:
            raise ConfigError("pilot fraction must lie in (0, 1]")


def _map_channels(frame, fn):
    if isinstance(frame, QuadratureFrame):
        return frame.replace(data=np.vstack([fn(c) for c in frame.volts()]), bit_depth=None, lsb_v=None)
    return fn(np.asarray(frame, dtype=float))


def highpass(frame, cutoff_hz: float, sample_rate_hz: float | None = None):
    """First-order bilinear high-pass (corner pre-warped to ``cutoff_hz``).

    Accepts a :class:`QuadratureFrame` (rate taken from it) or a 1-D array
    together with ``sample_rate_hz``.
    """
    fs = frame.sample_rate_hz if isinstance(frame, QuadratureFrame) else sample_rate_hz
    if fs is None:
        raise ValueError("sample_rate_hz required for array input")
    if not 0 < cutoff_hz < fs / 2:
        raise RangeError("cutoff must lie below Nyquist")
    b, a = signal.butter(1, cutoff_hz, btype="highpass", fs=fs)
    return _map_channels(frame, lambda x: signal.lfilter(b, a, x))


def spectral_isolate(frame, band: tuple[float, float], sample_rate_hz: float | None = None):
    """Keep ``band``, shift it to baseband and resample at ``2 * (f_hi - f_lo)``.

    The band is cut in the frequency domain; output bin ``j`` holds the input
    component at ``f_lo + j * df``, scaled so band power is preserved.

    Returns
    -------
    out : QuadratureFrame or ndarray
    r_raw : float
        Output sample rate per channel.
    """
    fs = frame.sample_rate_hz if isinstance(frame, QuadratureFrame) else sample_rate_hz
    if fs is None:
        raise ValueError("sample_rate_hz required for array input")
    f_lo, f_hi = map(float, band)
    if not 0 <= f_lo < f_hi or f_hi > fs / 2 * (1 + 1e-12):
        raise RangeError("band must lie inside the original Nyquist range")
    width = f_hi - f_lo
    r_raw = 2.0 * width
    n = frame.n_samples if isinstance(frame, QuadratureFrame) else np.asarray(frame).shape[-1]
    if n < 4:
        raise InsufficientDataError("frame too short")
    df = fs / n
    k_lo = int(round(f_lo / df))
    k_count = int(round(width / df))
    if k_count < 2:
        raise RangeError("band narrower than the frequency resolution")
    n_out = 2 * k_count
    scale = n_out / n

    def iso(x):
        spec = fft.rfft(x)
        out = np.zeros(k_count + 1, dtype=complex)
        seg = spec[k_lo + 1 : k_lo + k_count]
        out[1 : 1 + seg.size] = seg * scale
        return fft.irfft(out, n_out)

    if isinstance(frame, QuadratureFrame):
        out = QuadratureFrame(np.vstack([iso(c) for c in frame.volts()]), r_raw, provenance=frame.provenance, saturated=frame.saturated)
    else:
        out = iso(np.asarray(frame, dtype=float))
    return out, r_raw


def rrc_taps(rolloff: float, samples_per_symbol: int, span_symbols: int) -> np.ndarray:
    """Unit-energy root-raised-cosine impulse response.

    Length ``span_symbols * samples_per_symbol + 1``; exactly symmetric.
    """
    if not 0.0 <= rolloff <= 1.0:
        raise RangeError("roll-off must lie in [0, 1]")
    if span_symbols < 4:
        raise RangeError("span must be at least 4 symbols")
    sps = int(samples_per_symbol)
    n = span_symbols * sps + 1
    t = np.abs(np.arange(n) - (n - 1) / 2) / sps
    b = rolloff
    h = np.empty(n)
    at_zero = t == 0
    at_sing = np.isclose(4 * b * t, 1.0, rtol=0, atol=1e-12)
    rest = ~(at_zero | at_sing)
    tr = t[rest]
    h[rest] = (np.sin(np.pi * tr * (1 - b)) + 4 * b * tr * np.cos(np.pi * tr * (1 + b))) / (np.pi * tr * (1 - (4 * b * tr) ** 2))
    h[at_zero] = 1 - b + 4 * b / np.pi
    if at_sing.any():
        h[at_sing] = b / math.sqrt(2) * ((1 + 2 / np.pi) * math.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * math.cos(np.pi / (4 * b)))
    return h / math.sqrt(np.sum(h * h))


def modulate(symbols, config: DspConfig) -> np.ndarray:
    """Upsample and RRC-shape complex symbols into a complex baseband waveform."""
    s = np.asarray(symbols, dtype=complex)
    if not np.all(np.isfinite(s)):
        raise ValueError("symbols must be finite")
    sps = config.samples_per_symbol
    up = np.zeros(s.size * sps, dtype=complex)
    up[::sps] = s
    taps = rrc_taps(config.rrc_rolloff, sps, config.filter_span_symbols)
    wave = signal.fftconvolve(up, taps) if up.size else np.zeros(taps.size - 1, complex)
    if config.modulation_depth is not None:
        peak = np.max(np.abs(wave)) if wave.size else 0.0
        if peak > 0:
            wave = wave * (config.modulation_depth / peak)
    return wave


def _as_complex(frame) -> np.ndarray:
    if isinstance(frame, QuadratureFrame):
        v = frame.volts()
        return v[0] + 1j * v[1]
    return np.asarray(frame, dtype=complex)


def matched_filter(frame, config: DspConfig) -> np.ndarray:
    taps = rrc_taps(config.rrc_rolloff, config.samples_per_symbol, config.filter_span_symbols)
    return signal.fftconvolve(_as_complex(frame), taps)


def timing_phase(filtered: np.ndarray, samples_per_symbol: int) -> int:
    """Decimation phase with the largest output variance.

    Raises
    ------
    FitError
        If no phase stands out from the others by more than the statistical
        spread expected for structureless input.
    """
    sps = samples_per_symbol
    var = np.array([np.mean(np.abs(filtered[p::sps]) ** 2) for p in range(sps)])
    if var.max() <= 0:
        raise FitError("timing recovery failed: zero-energy input")
    if sps == 1:
        return 0
    n_dec = filtered.size // sps
    contrast = (var.max() - var.min()) / var.max()
    # Per-phase variance estimates scatter by about 1/sqrt(n_dec) on noise.
    if contrast < 3 / math.sqrt(max(n_dec, 1)):
        raise FitError("timing recovery failed: no dominant decimation phase")
    return int(np.argmax(var))


def demodulate(frame, config: DspConfig, n_symbols: int | None = None, phase: int | None = None) -> np.ndarray:
    """Matched-filter, pick the timing phase and decimate to symbols.

    Parameters
    ----------
    frame : QuadratureFrame or complex ndarray
        Channel 0 carries the in-phase and channel 1 the quadrature component.
    n_symbols : int, optional
        Number of transmitted symbols; defaults to what the frame length implies.
    phase : int, optional
        Calibrated decimation phase; searched when omitted.

    Returns
    -------
    complex ndarray, in the frame's units
    """
    x = _as_complex(frame)
    if x.size == 0:
        raise InsufficientDataError("empty frame")
    sps, span = config.samples_per_symbol, config.filter_span_symbols
    y = matched_filter(x, config)
    p = timing_phase(y, sps) if phase is None else int(phase)
    d = y[p::sps]
    if n_symbols is None:
        n_symbols = d.size - 2 * span
    if n_symbols <= 0 or span + n_symbols > d.size:
        raise InsufficientDataError("frame shorter than the filter transients")
    return d[span : span + n_symbols]


def estimate_gain(reference, received, fraction: float = 0.01) -> complex:
    """Least-squares complex gain ``g`` with ``received ~ g * reference`` on a pilot prefix."""
    x = np.asarray(reference, dtype=complex)
    y = np.asarray(received, dtype=complex)
    n = max(1, int(math.ceil(fraction * x.size)))
    xp, yp = x[:n], y[:n]
    den = np.vdot(xp, xp).real
    if den == 0:
        raise FitError("pilot prefix has zero energy")
    return complex(np.vdot(xp, yp) / den)
