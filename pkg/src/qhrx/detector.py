"""Balanced photodetectors, amplifier, digitizer and noise calibration.

Spectral densities are one-sided and output-referred (V^2/Hz). A channel's
analog output is

    v(t) = G * (i_plus(t) - i_minus(t)) + electronic noise,

where each photocurrent carries its own shot noise of density ``2 e I``, the
photodiode response rolls off as a Butterworth magnitude of the configured
order, and the electronic noise density rises as ``1 + (f / f_c)^2`` above a
white floor. The result is clipped at the amplifier swing and passed through a
first-order analog high-pass before digitization.
"""

from __future__ import annotations

import dataclasses
import math
import struct
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate, signal

from .constants import ELEMENTARY_CHARGE, WAVELENGTH_M, max_responsivity
from .errors import CalibrationError, ConfigError, InsufficientDataError, PhysicalityError, RangeError

TRACE_MAGIC = b"QHRX"
TRACE_VERSION = 1
_HEADER = struct.Struct("<4sHBBdQ")


# ---------------------------------------------------------------------------
# Detector model


@dataclass(frozen=True)
class DetectorModel:
    """Balanced receiver with two channels (vBS1 -> channel 0, vBS2 -> channel 1).

    Parameters
    ----------
    responsivities : 4 floats, A/W
        Photodiodes in output-port order ``[BPD1+, BPD1-, BPD2+, BPD2-]``.
    tia_gain : 2 floats, V/A
        Transimpedance gain per channel.
    bandwidth_hz : float
        -3 dB frequency of the photodiode response.
    electronic_noise_density : 2 floats, V^2/Hz
        White floor of the output electronic noise per channel.
    electronic_noise_corner_hz : float
        Frequency at which the electronic density has doubled; ``inf`` for white.
    saturation_power_w : float
        Optical power per photodiode at which the photocurrent clips.
    adc_bits : int
    adc_fullscale_v : float or None
        Peak-to-peak digitizer range; ``None`` auto-ranges to +-4 sigma.
    sample_rate_hz : float
    response_order : int
        Order of the Butterworth photodiode roll-off.
    hpf_corner_hz : float
        First-order analog high-pass corner; 0 disables it.
    tia_swing_v : float
        Linear output swing of the amplifier (+-); ``inf`` disables clipping.
    rin_per_hz : float
        One-sided relative intensity noise density of the laser (1/Hz).
    """

    responsivities: tuple[float, float, float, float] = (0.9, 0.9, 0.9, 0.9)
    tia_gain: tuple[float, float] = (5e3, 5e3)
    bandwidth_hz: float = 2.5e9
    electronic_noise_density: tuple[float, float] = (0.0, 0.0)
    electronic_noise_corner_hz: float = math.inf
    saturation_power_w: float = 1.0
    adc_bits: int = 8
    adc_fullscale_v: float | None = None
    sample_rate_hz: float = 25e9
    response_order: int = 4
    hpf_corner_hz: float = 1e6
    tia_swing_v: float = math.inf
    rin_per_hz: float = 0.0
    wavelength_m: float = WAVELENGTH_M

    def __post_init__(self):
        for name in ("responsivities", "tia_gain", "electronic_noise_density"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        if len(self.responsivities) != 4 or len(self.tia_gain) != 2 or len(self.electronic_noise_density) != 2:
            raise ConfigError("need 4 responsivities, 2 gains and 2 noise densities")
        rmax = max_responsivity(self.wavelength_m)
        if any(not 0 < r <= rmax * (1 + 1e-12) for r in self.responsivities):
            raise ConfigError(f"responsivities must lie in (0, {rmax:.4f}] A/W")
        if self.adc_bits < 1:
            raise ConfigError("adc_bits must be >= 1")
        if self.saturation_power_w <= 0:
            raise ConfigError("saturation power must be positive")
        if any(x < 0 for x in self.electronic_noise_density) or self.rin_per_hz < 0:
            raise ConfigError("noise densities must be non-negative")
        if self.sample_rate_hz <= 0 or self.bandwidth_hz <= 0:
            raise ConfigError("rates must be positive")

    # -- spectral shapes -------------------------------------------------

    def response_power(self, f) -> np.ndarray:
        """``|H(f)|^2`` of photodiode roll-off times analog high-pass."""
        f = np.asarray(f, dtype=float)
        h = 1.0 / (1.0 + (f / self.bandwidth_hz) ** (2 * self.response_order))
        if self.hpf_corner_hz > 0:
            x = (f / self.hpf_corner_hz) ** 2
            h = h * x / (1.0 + x)
        return h

    def electronic_shape(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if math.isinf(self.electronic_noise_corner_hz):
            return np.ones_like(f)
        return 1.0 + (f / self.electronic_noise_corner_hz) ** 2

    def shot_psd(self, f, current: float, channel: int) -> np.ndarray:
        """Output shot-noise density for total photocurrent ``current``."""
        return 2 * ELEMENTARY_CHARGE * current * self.tia_gain[channel] ** 2 * np.ones_like(np.asarray(f, float))

    def electronic_psd(self, f, channel: int) -> np.ndarray:
        return self.electronic_noise_density[channel] * self.electronic_shape(f)

    def band_integrals(self, band: tuple[float, float]) -> tuple[float, float]:
        """``(int |H|^2 df, int |H|^2 * electronic_shape df)`` over ``band``."""
        lo, hi = band
        a = integrate.quad(lambda f: float(self.response_power(f)), lo, hi, limit=400, points=[self.bandwidth_hz] if lo < self.bandwidth_hz < hi else None)[0]
        b = integrate.quad(lambda f: float(self.response_power(f) * self.electronic_shape(f)), lo, hi, limit=400, points=[self.bandwidth_hz] if lo < self.bandwidth_hz < hi else None)[0]
        return a, b

    def channel_currents(self, diode_powers: Sequence[float]) -> np.ndarray:
        """Photocurrents ``[[i+, i-], [i+, i-]]`` for the four diode powers."""
        p = np.minimum(np.asarray(diode_powers, dtype=float), self.saturation_power_w)
        return (np.asarray(self.responsivities) * p).reshape(2, 2)

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
            elif isinstance(v, float) and math.isinf(v):
                d[k] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorModel":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown detector fields {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            if isinstance(v, str) and v.lower() in ("inf", "infinity"):
                v = math.inf
            elif isinstance(v, list):
                v = tuple(v)
            kw[k] = v
        return cls(**kw)


def quantum_efficiency(responsivity: float, wavelength: float = WAVELENGTH_M) -> float:
    """Photodiode quantum efficiency ``h c R / (lambda e)``.

    Raises
    ------
    PhysicalityError
        If the efficiency would exceed 1.
    """
    if responsivity < 0 or wavelength <= 0:
        raise RangeError("responsivity must be >= 0 and wavelength > 0")
    eta = responsivity / max_responsivity(wavelength)
    if eta > 1 + 1e-12:
        raise PhysicalityError(f"quantum efficiency {eta:.4f} exceeds 1")
    return float(eta)


def responsivity_from_efficiency(eta: float, wavelength: float = WAVELENGTH_M) -> float:
    """Inverse of :func:`quantum_efficiency`."""
    return float(eta * max_responsivity(wavelength))


# ---------------------------------------------------------------------------
# Frames


@dataclass(frozen=True)
class QuadratureFrame:
    """Two simultaneously sampled channels.

    ``data`` has shape ``(2, n)``. For digitized frames it holds integer
    codes and ``lsb_v`` gives volts per code.
    """

    data: np.ndarray
    sample_rate_hz: float
    bit_depth: int | None = None
    lsb_v: float | None = None
    provenance: str = "simulated"
    saturated: tuple[bool, bool] = (False, False)
    clipped_samples: int = 0

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 2 or d.shape[0] != 2:
            raise ValueError("frame data must have shape (2, n)")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    def volts(self) -> np.ndarray:
        """Channel data in volts (codes are scaled by ``lsb_v``)."""
        if self.bit_depth is None:
            return np.asarray(self.data, dtype=float)
        if self.lsb_v is None:
            raise ValueError("digitized frame has no lsb_v")
        return self.data.astype(float) * self.lsb_v

    def replace(self, **kw) -> "QuadratureFrame":
        return dataclasses.replace(self, **kw)


def _shaped_noise(rng, n: int, fs: float, psd_fn) -> np.ndarray:
    """Zero-mean Gaussian noise of length ``n`` with one-sided density ``psd_fn(f)``."""
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    f = np.fft.rfftfreq(n, 1.0 / fs)
    spec *= np.sqrt(np.maximum(psd_fn(f), 0.0) * fs / 2.0)
    return np.fft.irfft(spec, n)


def _analog_highpass(x: np.ndarray, fs: float, corner: float) -> np.ndarray:
    if corner <= 0:
        return x
    b, a = signal.butter(1, corner, btype="highpass", fs=fs)
    # Start in the steady state of the mean so the frame edge carries no step.
    zi = signal.lfilter_zi(b, a) * 0.0
    y, _ = signal.lfilter(b, a, x - x[0], zi=zi)
    return y


def bpd_output(fields, model: DetectorModel, seed=None, channel: int = 0, n_samples: int | None = None, rin=None):
    """Analog output of one balanced detector.

    Parameters
    ----------
    fields : array_like, shape (2,) or (2, n)
        Complex optical amplitudes (sqrt(W)) at the ``+`` and ``-`` diodes,
        constant or sampled at ``model.sample_rate_hz``.
    model : DetectorModel
    seed : int or numpy Generator
    channel : int
        Which of the two channels (selects gain, responsivities, noise).
    n_samples : int, optional
        Required when ``fields`` is constant.
    rin : ndarray, optional
        Common relative intensity fluctuation to apply (shared between
        channels by :func:`simulate_frame`).

    Returns
    -------
    volts : ndarray
    saturated : bool
        True if a photodiode reached its saturation power.
    """
    rng = np.random.default_rng(seed)
    e = np.asarray(fields, dtype=complex)
    if e.ndim == 1:
        if n_samples is None:
            raise ValueError("n_samples required for constant fields")
        n = int(n_samples)
        powers = np.abs(e)[:, None] ** 2 * np.ones((1, n))
    else:
        n = e.shape[1]
        powers = np.abs(e) ** 2
    if n == 0:
        return np.zeros(0), False
    fs = model.sample_rate_hz
    if rin is not None:
        powers = powers * (1.0 + rin[None, :n])
    resp = np.asarray(model.responsivities[2 * channel : 2 * channel + 2])
    sat = bool(np.any(powers >= model.saturation_power_w))
    currents = resp[:, None] * powers
    for k in range(2):
        mean_i = float(np.mean(currents[k]))
        if mean_i > 0:
            currents[k] = currents[k] + _shaped_noise(rng, n, fs, lambda f: 2 * ELEMENTARY_CHARGE * mean_i * _rolloff(model, f))
        currents[k] = np.minimum(currents[k], resp[k] * model.saturation_power_w)
    v = model.tia_gain[channel] * (currents[0] - currents[1])
    if model.electronic_noise_density[channel] > 0:
        v = v + _shaped_noise(rng, n, fs, lambda f: model.electronic_noise_density[channel] * model.electronic_shape(f) * _rolloff(model, f))
    if math.isfinite(model.tia_swing_v):
        v = np.clip(v, -model.tia_swing_v, model.tia_swing_v)
    return _analog_highpass(v, fs, model.hpf_corner_hz), sat


def _rolloff(model: DetectorModel, f):
    return 1.0 / (1.0 + (np.asarray(f) / model.bandwidth_hz) ** (2 * model.response_order))


def simulate_frame(diode_fields, model: DetectorModel, n_samples: int, seed=None) -> QuadratureFrame:
    """Analog two-channel frame for the four photodiode fields.

    ``diode_fields`` has shape ``(4,)`` (CW) or ``(4, n)``.
    """
    rng = np.random.default_rng(seed)
    e = np.asarray(diode_fields, dtype=complex)
    rin = None
    if model.rin_per_hz > 0:
        rin = _shaped_noise(rng, n_samples, model.sample_rate_hz, lambda f: model.rin_per_hz * _rolloff(model, f))
    chans, sats = [], []
    for c in range(2):
        sub = e[2 * c : 2 * c + 2]
        v, s = bpd_output(sub, model, rng, channel=c, n_samples=n_samples, rin=rin)
        chans.append(v)
        sats.append(s)
    return QuadratureFrame(np.vstack(chans), model.sample_rate_hz, saturated=tuple(sats))


# ---------------------------------------------------------------------------
# Digitizer


def quantize(samples, bits: int = 8, fullscale: float | None = None):
    """Uniform mid-rise quantizer.

    Parameters
    ----------
    samples : array_like
        Voltages.
    bits : int
    fullscale : float, optional
        Peak-to-peak range. ``None`` auto-ranges to +-4 sigma of the input.

    Returns
    -------
    codes : ndarray of int
        Signed codes in ``[-2**(bits-1), 2**(bits-1) - 1]``; code ``k``
        represents the voltage ``(k + 1/2) * delta``.
    delta : float
        Bin width ``fullscale / 2**bits``.
    clipped : int
        Number of samples beyond the range.
    """
    if bits < 1:
        raise ConfigError("bits must be >= 1")
    x = np.asarray(samples, dtype=float)
    if fullscale is None:
        sd = float(np.std(x))
        fullscale = 8.0 * sd if sd > 0 else 1.0
    delta = fullscale / 2**bits
    lo, hi = -(2 ** (bits - 1)), 2 ** (bits - 1) - 1
    raw = np.floor(x / delta)
    clipped = int(np.count_nonzero((raw < lo) | (raw > hi)))
    dtype = np.int8 if bits <= 8 else np.int16 if bits <= 16 else np.int32
    return np.clip(raw, lo, hi).astype(dtype), float(delta), clipped


def dequantize(codes, delta: float) -> np.ndarray:
    """Bin-centre voltages of mid-rise codes."""
    return (np.asarray(codes, dtype=float) + 0.5) * delta


def digitize_frame(frame: QuadratureFrame, bits: int = 8, fullscale: float | None = None) -> QuadratureFrame:
    """Quantize both channels with a common range."""
    x = frame.volts()
    if fullscale is None:
        sd = float(np.std(x))
        fullscale = 8.0 * sd if sd > 0 else 1.0
    codes, delta, clipped = quantize(x, bits, fullscale)
    return frame.replace(data=codes, bit_depth=bits, lsb_v=delta, clipped_samples=clipped)


# ---------------------------------------------------------------------------
# Spectra and calibration


def welch_psd(x, sample_rate_hz: float, segment_len: int = 4096, overlap: float = 0.5):
    """One-sided Welch PSD with a Hann window.

    Returns
    -------
    f : ndarray (Hz)
    psd : ndarray (V^2/Hz)
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise InsufficientDataError("empty frame")
    if segment_len > x.size:
        raise RangeError("segment longer than the record")
    f, p = signal.welch(x, fs=sample_rate_hz, window="hann", nperseg=segment_len, noverlap=int(segment_len * overlap), detrend="constant", scaling="density")
    return f, p


def band_power(f, psd, band: tuple[float, float]) -> float:
    """Integral of a PSD over ``band`` (trapezoid on the bins inside it)."""
    f = np.asarray(f)
    lo, hi = band
    if lo < f[0] - 1e-9 or hi > f[-1] + 1e-9 or not lo < hi:
        raise RangeError("band outside PSD support")
    m = (f >= lo) & (f <= hi)
    if np.count_nonzero(m) < 2:
        raise RangeError("band narrower than two PSD bins")
    return float(integrate.trapezoid(np.asarray(psd)[m], f[m]))


def clearance(psd_lo, psd_el, band: tuple[float, float]) -> float:
    """Shot-plus-electronic over electronic band power, in dB.

    ``psd_lo`` and ``psd_el`` are ``(f, psd)`` pairs.
    """
    num = band_power(*psd_lo, band)
    den = band_power(*psd_el, band)
    if den <= 0:
        raise CalibrationError("zero electronic noise in band")
    return 10 * math.log10(num / den)


@dataclass(frozen=True)
class NoiseCalibration:
    """Electronic and shot-noise variances of one channel."""

    var_total: float
    var_electronic: float
    var_shot: float
    v_el_snu: float
    band: tuple[float, float] | None = None

    @property
    def snu_factor(self) -> float:
        """Multiply volts by this to obtain shot-noise units."""
        return 1.0 / math.sqrt(self.var_shot)


def noise_calibration(frame_dark: QuadratureFrame, frame_lo_only: QuadratureFrame, channel: int = 0, band=None) -> NoiseCalibration:
    """Separate electronic and shot noise from a dark and an LO-only frame.

    Both frames must already have been through the same DSP chain.
    """
    var_el = float(np.var(frame_dark.volts()[channel]))
    var = float(np.var(frame_lo_only.volts()[channel]))
    if var <= var_el:
        raise CalibrationError("LO-only variance does not exceed the dark variance")
    shot = var - var_el
    return NoiseCalibration(var, var_el, shot, var_el / shot, band)


# ---------------------------------------------------------------------------
# Trace files


def write_trace(path: str | Path, frame: QuadratureFrame) -> None:
    """Write a digitized frame as a little-endian interleaved trace."""
    if frame.bit_depth is None:
        raise ValueError("only digitized frames can be written")
    dtype = "<i1" if frame.bit_depth <= 8 else "<i2" if frame.bit_depth <= 16 else "<i4"
    header = _HEADER.pack(TRACE_MAGIC, TRACE_VERSION, 2, frame.bit_depth, float(frame.sample_rate_hz), frame.n_samples)
    body = np.ascontiguousarray(frame.data.T).astype(dtype).tobytes()
    from .io import atomic_write_bytes

    atomic_write_bytes(path, header + body)


def read_trace(path: str | Path, lsb_v: float | None = None) -> QuadratureFrame:
    """Read a trace written by :func:`write_trace`."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("truncated trace header")
    magic, version, channels, bits, fs, count = _HEADER.unpack_from(raw)
    if magic != TRACE_MAGIC:
        raise ValueError("not a trace file")
    if version != TRACE_VERSION:
        raise ValueError(f"unsupported trace version {version}")
    dtype = "<i1" if bits <= 8 else "<i2" if bits <= 16 else "<i4"
    data = np.frombuffer(raw, dtype=dtype, offset=_HEADER.size)
    if data.size != channels * count:
        raise ValueError("trace length does not match its header")
    data = data.reshape(count, channels).T.copy()
    if channels != 2:
        raise ValueError("quadrature traces carry two channels")
    return QuadratureFrame(data, fs, int(bits), lsb_v, provenance="loaded")
