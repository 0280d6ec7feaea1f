"""End-to-end receiver: hybrid routing feeding the balanced detectors.

Also derives the default detector parameters from a small set of
operating-point targets (variance slopes, electronic noise, clearance), so the
numbers stored in ``data/default_scenario.yaml`` can be regenerated.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .constants import ELEMENTARY_CHARGE
from .detector import DetectorModel, QuadratureFrame, _shaped_noise, responsivity_from_efficiency, simulate_frame
from .pic_optics import PicState, TopsPoly, balance_voltage, hybrid_transfer, voltage_for_cmrr

#: Measured photodiode efficiencies, port order [BPD1+, BPD1-, BPD2+, BPD2-].
PD_EFFICIENCIES = (0.8512, 0.7168, 0.7812, 0.7110)

QRNG_BAND = (0.5e9, 2.3e9)
QKD_BAND = (50e6, 162.5e6)


def diode_fields(state: PicState, p_lo: float, signal=None) -> np.ndarray:
    """Complex fields at the four photodiodes.

    ``signal`` is the complex amplitude (sqrt(W)) at IN1, scalar or sampled.
    Returns shape ``(4,)`` for CW inputs and ``(4, n)`` otherwise.
    """
    t = hybrid_transfer(state)
    lo = math.sqrt(p_lo) * t[:, 2]
    if signal is None:
        return lo
    s = np.asarray(signal, dtype=complex)
    if s.ndim == 0:
        return lo + t[:, 0] * s
    return lo[:, None] + t[:, 0][:, None] * s[None, :]


def simulate_receiver(state: PicState, model: DetectorModel, p_lo: float, n_samples: int, seed=None, signal=None) -> QuadratureFrame:
    """Analog frame of both channels for LO power ``p_lo`` and optional signal."""
    return simulate_frame(diode_fields(state, p_lo, signal), model, n_samples, seed)


@dataclass(frozen=True)
class ChannelOperatingPoint:
    """Analytic per-channel densities at one LO power."""

    current_a: float
    shot_density: float
    electronic_density: float
    dc_offset_v: float


def operating_point(state: PicState, model: DetectorModel, p_lo: float) -> list[ChannelOperatingPoint]:
    p = np.abs(diode_fields(state, p_lo)) ** 2
    i = model.channel_currents(p)
    out = []
    for c in range(2):
        tot = float(i[c].sum())
        g = model.tia_gain[c]
        out.append(ChannelOperatingPoint(tot, 2 * ELEMENTARY_CHARGE * tot * g * g, model.electronic_noise_density[c], g * float(i[c, 0] - i[c, 1])))
    return out


def band_psd(state: PicState, model: DetectorModel, p_lo: float, channel: int, f) -> np.ndarray:
    """Model output PSD of one channel (shot plus electronic) at frequencies ``f``."""
    op = operating_point(state, model, p_lo)[channel]
    f = np.asarray(f, dtype=float)
    h = model.response_power(f)
    return h * (op.shot_density + op.electronic_density * model.electronic_shape(f))


def band_variances(state: PicState, model: DetectorModel, p_lo: float, band) -> np.ndarray:
    """Expected ``[[shot, electronic], ...]`` variances per channel in ``band``."""
    a, b = model.band_integrals(band)
    ops = operating_point(state, model, p_lo)
    return np.array([[op.shot_density * a, op.electronic_density * b] for op in ops])


def synthesize_band(state: PicState, model: DetectorModel, p_lo: float, band, n: int, rng, chunk: int = 1 << 22) -> np.ndarray:
    """Band-isolated samples (volts, shape ``(2, n)``) drawn directly from the model PSD.

    Statistically equivalent to running :func:`simulate_receiver` followed by
    spectral isolation, without synthesizing the full-rate frame. Valid in the
    linear region (no clipping).
    """
    f_lo, f_hi = band
    r_raw = 2.0 * (f_hi - f_lo)
    out = np.empty((2, n))
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        for c in range(2):
            out[c, start : start + m] = _shaped_noise(rng, m, r_raw, lambda f, c=c: band_psd(state, model, p_lo, c, f + f_lo) * (f > 0))
    return out


def set_cmrr(state: PicState, model: DetectorModel, target_db: float) -> PicState:
    """Detune both vBS shifters so each detector has CMRR ``target_db``."""
    v1 = voltage_for_cmrr(state, model.responsivities, 1, target_db)
    s = state.with_voltages(v_r1=v1)
    v2 = voltage_for_cmrr(s, model.responsivities, 2, target_db)
    return s.with_voltages(v_r2=v2)


# ---------------------------------------------------------------------------
# Default device


@dataclass(frozen=True)
class DeviceTargets:
    """Operating-point figures the default device is tuned to reproduce."""

    m_x: float = 5.68e-3
    m_p: float = 6.95e-3
    p_lo_max: float = 22.5e-3
    v_el: float = 0.029
    qrng_clearance_db: float = 12.0
    saturation_margin: float = 1.02
    swing_onset_cmrr_db: float = 40.0
    swing_onset_p_lo: float = 28e-3
    rin_per_hz: float = 1e-15
    imbalance_floor: float = 1.35e-5
    lo_phase_slope_deg_per_mv: float = 0.14
    vbs_fwhm_v: float = 2.0e-3
    power_2pi_w: float = 0.070
    heater_ohms: float = 100.0
    adc_fullscale_v: float = 0.1203


def default_pic_state(targets: DeviceTargets = DeviceTargets(), responsivities=None, polarization: str = "H") -> PicState:
    """Hybrid with shifters calibrated to the target slopes and both vBS balanced."""
    if responsivities is None:
        responsivities = [responsivity_from_efficiency(e) for e in PD_EFFICIENCIES]
    r_ohm = targets.heater_ohms
    shift = 2 * math.pi
    p2 = targets.power_2pi_w
    # 5 % compression: linear term slightly above 2 pi / P, quadratic pulls it back.
    a1 = shift * 1.05 / p2
    a2 = -shift * 0.05 / p2**2
    vmax = math.sqrt(p2 * r_ohm)

    def slope(v):
        p = v * v / r_ohm
        return (a1 + 2 * a2 * p) * 2 * v / r_ohm

    def phase(v, a0):
        p = v * v / r_ohm
        return a0 + a1 * p + a2 * p * p

    s_lo = math.radians(targets.lo_phase_slope_deg_per_mv) * 1e3
    v3 = optimize.brentq(lambda v: slope(v) - s_lo, 1e-3, vmax)
    a03 = math.pi / 2 - phase(v3, 0.0)
    # Fitted model slope equals the internal slope times two near balance.
    d = targets.imbalance_floor
    s_vbs = math.asin(math.sqrt(d) - d) / targets.vbs_fwhm_v
    v_b = optimize.brentq(lambda v: slope(v) - s_vbs, 1e-3, vmax)
    a0 = [math.pi / 2 - phase(v_b, 0.0)] * 2
    dc1, dc2 = {"H": (0.502, 0.506), "V": (0.502, 0.502)}[polarization.upper()]
    state = None
    for _ in range(6):
        polys = tuple(TopsPoly((a0[k], a1, a2), r_ohm, (0.0, vmax)) for k in range(2)) + (TopsPoly((a03, a1, a2), r_ohm, (0.0, vmax)),)
        state = PicState((dc1, dc2, 0.5, 0.5), (v_b, v_b, v3), polys, d, (1.05, 1.28))
        for k in range(2):
            vb = balance_voltage(state, responsivities, k + 1, near=v_b)
            a0[k] += polys[k].slope(v_b) * (vb - v_b)
    v1 = balance_voltage(state, responsivities, 1, near=v_b)
    v2 = balance_voltage(state, responsivities, 2, near=v_b)
    return state.with_voltages(v_r1=v1, v_r2=v2)


def tune_detector(state: PicState, targets: DeviceTargets = DeviceTargets(), base: DetectorModel | None = None) -> DetectorModel:
    """Detector parameters reproducing the target slopes, V_el and clearance."""
    if base is None:
        base = DetectorModel(
            responsivities=tuple(responsivity_from_efficiency(e) for e in PD_EFFICIENCIES),
            bandwidth_hz=2.5e9,
            response_order=4,
            sample_rate_hz=25e9,
            hpf_corner_hz=1e6,
            adc_bits=8,
            adc_fullscale_v=targets.adc_fullscale_v,
            rin_per_hz=targets.rin_per_hz,
        )
    p = np.abs(diode_fields(state, 1.0)) ** 2
    i_per_w = (np.asarray(base.responsivities) * p).reshape(2, 2).sum(axis=1)
    a_q, _ = base.band_integrals(QRNG_BAND)
    gains = tuple(math.sqrt(m / (2 * ELEMENTARY_CHARGE * i * a_q)) for m, i in zip((targets.m_x, targets.m_p), i_per_w))
    model = dataclasses.replace(base, tia_gain=gains, saturation_power_w=targets.saturation_margin * float(p.max()) * targets.p_lo_max)

    def el_for(fc):
        m = dataclasses.replace(model, electronic_noise_corner_hz=fc, electronic_noise_density=(1.0, 1.0))
        ak, bk = m.band_integrals(QKD_BAND)
        aq, bq = m.band_integrals(QRNG_BAND)
        dens = tuple(targets.v_el * 2 * ELEMENTARY_CHARGE * i * targets.p_lo_max * g * g * ak / bk for i, g in zip(i_per_w, gains))
        shot_q = 2 * ELEMENTARY_CHARGE * i_per_w[0] * targets.p_lo_max * gains[0] ** 2 * aq
        clr = 10 * math.log10(1 + shot_q / (dens[0] * bq))
        return dens, clr

    fc = optimize.brentq(lambda fc: el_for(fc)[1] - targets.qrng_clearance_db, 0.2e9, 20e9, xtol=1.0)
    dens, _ = el_for(fc)
    model = dataclasses.replace(model, electronic_noise_corner_hz=fc, electronic_noise_density=dens)
    model = dataclasses.replace(model, tia_swing_v=_swing_for_onset(state, model, targets))
    return model


def full_band_sigma(state: PicState, model: DetectorModel, p_lo: float, channel: int) -> float:
    """Standard deviation of the amplifier output over the simulated bandwidth."""
    op = operating_point(state, model, p_lo)[channel]
    nyq = model.sample_rate_hz / 2

    def psd(f):
        ro = 1.0 / (1.0 + (f / model.bandwidth_hz) ** (2 * model.response_order))
        return ro * (op.shot_density + op.electronic_density * float(model.electronic_shape(f)))

    var = integrate.quad(psd, 0, nyq, limit=400, points=[model.bandwidth_hz])[0]
    return math.sqrt(var)


def _swing_for_onset(state: PicState, model: DetectorModel, t: DeviceTargets) -> float:
    """Swing at which clipping starts at ``swing_onset_p_lo`` for ``swing_onset_cmrr_db``."""
    d = t.imbalance_floor
    err = 10 ** (-t.swing_onset_cmrr_db / 20) - d
    worst = 0.0
    for c in range(2):
        op = operating_point(state, model, t.swing_onset_p_lo)[c]
        v_dc = model.tia_gain[c] * op.current_a * err / 2
        worst = max(worst, v_dc + 5 * full_band_sigma(state, model, t.swing_onset_p_lo, c))
    return worst


def default_device(targets: DeviceTargets = DeviceTargets()) -> tuple[PicState, DetectorModel]:
    state = default_pic_state(targets)
    return state, tune_detector(state, targets)

