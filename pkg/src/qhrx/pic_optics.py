"""Tunable integrated 90-degree hybrid: transfer model and characterization.

The circuit has two inputs (signal on ``IN1``, local oscillator on ``IN2``).
Each input is split by a directional coupler. A 3-D crossing swaps the two
central arms, and a thermo-optic phase shifter (``R3``) sets the LO phase
difference between the two halves. Each half ends in a variable beam splitter:
a Mach-Zehnder interferometer whose internal phase (``R1`` / ``R2``) sets the
split ratio into its balanced photodiode pair.

Port order used throughout::

    inputs  : [IN1 (signal), aux of DC1, IN2 (LO), aux of DC2]
    outputs : [BPD1 +, BPD1 -, BPD2 +, BPD2 -]
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, sparse

from .errors import ConfigError, FitError, RangeError

#: Ceiling returned for perfectly balanced inputs, in dB.
CMRR_CEILING_DB = 200.0

#: Splitting ratios of (DC1, DC2) for the two input polarizations.
DC_REFLECTIVITY_SETS = {"H": (0.502, 0.506), "V": (0.502, 0.502)}


class CmrrLowerBoundWarning(UserWarning):
    """Balanced power at or below the noise floor; the CMRR is a lower bound."""


# ---------------------------------------------------------------------------
# Thermo-optic phase shifters


@dataclass(frozen=True)
class TopsPoly:
    """Voltage-to-phase response of one thermo-optic phase shifter.

    The phase is a polynomial in the dissipated power ``P = V**2 / heater_ohms``.

    Parameters
    ----------
    power_coeffs : sequence of float
        Ascending coefficients, ``phase = sum(c[k] * P**k)`` in radians.
    heater_ohms : float
        Heater resistance.
    voltage_range : (float, float)
        Calibrated voltage interval; evaluation outside it raises.
    """

    power_coeffs: tuple[float, ...]
    heater_ohms: float
    voltage_range: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "power_coeffs", tuple(float(c) for c in self.power_coeffs))
        object.__setattr__(self, "voltage_range", tuple(float(v) for v in self.voltage_range))
        if self.heater_ohms <= 0:
            raise ConfigError("heater resistance must be positive")
        lo, hi = self.voltage_range
        if not lo < hi:
            raise ConfigError("voltage range must be increasing")
        v = np.linspace(lo, hi, 513)
        d = np.diff(self._phase(v))
        if not (np.all(d > 0) or np.all(d < 0)):
            raise ConfigError("phase polynomial is not monotone over its voltage range")

    def _phase(self, voltage):
        power = np.asarray(voltage, dtype=float) ** 2 / self.heater_ohms
        return np.polynomial.polynomial.polyval(power, self.power_coeffs)

    def slope(self, voltage: float) -> float:
        """Local phase sensitivity in rad/V."""
        power = voltage**2 / self.heater_ohms
        dp = np.polynomial.polynomial.polyder(self.power_coeffs)
        return float(np.polynomial.polynomial.polyval(power, dp) * 2.0 * voltage / self.heater_ohms)

    def power_for_phase_shift(self, shift: float = 2 * math.pi) -> float:
        """Electrical power (W) producing ``shift`` radians above the zero-power phase."""
        def f(p):
            return np.polynomial.polynomial.polyval(p, self.power_coeffs) - self.power_coeffs[0] - shift

        hi = 1e-3
        while f(hi) < 0:
            hi *= 2
            if hi > 1e3:
                raise RangeError("phase shift not reachable")
        return float(optimize.brentq(f, 0.0, hi, xtol=1e-15))


def tops_phase(voltage, poly) -> np.ndarray | float:
    """Phase (rad) produced by a thermo-optic shifter at ``voltage``.

    Parameters
    ----------
    voltage : float or array_like
        Applied voltage in volts.
    poly : TopsPoly or sequence of float
        Either a calibrated power-domain response, or plain ascending
        coefficients of a polynomial in volts (no range check).

    Raises
    ------
    RangeError
        If a voltage lies outside the calibrated range of a ``TopsPoly``.
    """
    v = np.asarray(voltage, dtype=float)
    if isinstance(poly, TopsPoly):
        lo, hi = poly.voltage_range
        if np.any(v < lo - 1e-12) or np.any(v > hi + 1e-12):
            raise RangeError(f"voltage outside calibrated range [{lo}, {hi}] V")
        out = poly._phase(v)
    else:
        out = np.polynomial.polynomial.polyval(v, np.asarray(poly, dtype=float)) * np.ones_like(v)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Circuit state


@dataclass(frozen=True)
class PicState:
    """Physical parameters of the hybrid.

    ``dc_reflectivities`` holds the bar-port power fractions of DC1, DC2 and
    the couplers inside vBS1 and vBS2 (both couplers of one vBS are taken as
    identical). ``tops_voltages`` and ``phase_polys`` are ordered R1, R2, R3.
    """

    dc_reflectivities: tuple[float, float, float, float] = (0.5, 0.5, 0.5, 0.5)
    tops_voltages: tuple[float, float, float] = (0.0, 0.0, 0.0)
    phase_polys: tuple = ((math.pi / 2,), (math.pi / 2,), (math.pi / 2,))
    imbalance_floor: float = 0.0
    insertion_loss_db: tuple[float, float] = (0.0, 0.0)
    crosstalk: float = field(default=0.0)

    def __post_init__(self):
        object.__setattr__(self, "dc_reflectivities", tuple(float(r) for r in self.dc_reflectivities))
        object.__setattr__(self, "tops_voltages", tuple(float(v) for v in self.tops_voltages))
        object.__setattr__(self, "insertion_loss_db", tuple(float(x) for x in self.insertion_loss_db))
        object.__setattr__(self, "phase_polys", tuple(p if isinstance(p, TopsPoly) else tuple(p) for p in self.phase_polys))
        if len(self.dc_reflectivities) != 4 or any(not 0.0 <= r <= 1.0 for r in self.dc_reflectivities):
            raise ConfigError("need four reflectivities in [0, 1]")
        if len(self.tops_voltages) != 3 or len(self.phase_polys) != 3:
            raise ConfigError("need three TOPS voltages and three phase polynomials")
        if self.imbalance_floor < 0:
            raise ConfigError("imbalance floor must be non-negative")
        if len(self.insertion_loss_db) != 2 or any(x < 0 for x in self.insertion_loss_db):
            raise ConfigError("need two non-negative insertion losses")
        if self.crosstalk != 0.0:
            raise ConfigError("crosstalk is fixed at 0 for the 3-D crossing")

    def phases(self) -> tuple[float, float, float]:
        """Phases (rad) of R1, R2, R3 at the stored voltages."""
        return tuple(float(tops_phase(v, p)) for v, p in zip(self.tops_voltages, self.phase_polys))

    def with_voltages(self, **kw) -> "PicState":
        """Copy with some of ``v_r1``, ``v_r2``, ``v_r3`` replaced."""
        v = list(self.tops_voltages)
        for i, key in enumerate(("v_r1", "v_r2", "v_r3")):
            if key in kw:
                v[i] = kw.pop(key)
        if kw:
            raise TypeError(f"unknown voltages {sorted(kw)}")
        return dataclasses.replace(self, tops_voltages=tuple(v))

    def with_polarization(self, polarization: str) -> "PicState":
        """Copy with the DC1/DC2 reflectivities of the given input polarization."""
        try:
            dc1, dc2 = DC_REFLECTIVITY_SETS[polarization.upper()]
        except KeyError:
            raise ConfigError(f"unknown polarization {polarization!r}") from None
        r = self.dc_reflectivities
        return dataclasses.replace(self, dc_reflectivities=(dc1, dc2, r[2], r[3]))

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        tops = {}
        for name, v, p in zip(("r1", "r2", "r3"), self.tops_voltages, self.phase_polys):
            entry = {"voltage_v": v}
            if isinstance(p, TopsPoly):
                entry["heater_ohms"] = p.heater_ohms
                entry["power_coeffs_rad_per_w_pow"] = list(p.power_coeffs)
                entry["voltage_range_v"] = list(p.voltage_range)
            else:
                entry["voltage_coeffs_rad_per_v_pow"] = list(p)
            tops[name] = entry
        r = self.dc_reflectivities
        return {
            "dc_reflectivities": {"dc1": r[0], "dc2": r[1], "vbs1": r[2], "vbs2": r[3]},
            "tops": tops,
            "imbalance_floor": self.imbalance_floor,
            "insertion_loss_db": {"in1": self.insertion_loss_db[0], "in2": self.insertion_loss_db[1]},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PicState":
        try:
            r = d["dc_reflectivities"]
            refl = (r["dc1"], r["dc2"], r["vbs1"], r["vbs2"])
            volts, polys = [], []
            for name in ("r1", "r2", "r3"):
                t = d["tops"][name]
                volts.append(float(t["voltage_v"]))
                if "power_coeffs_rad_per_w_pow" in t:
                    polys.append(
                        TopsPoly(
                            tuple(t["power_coeffs_rad_per_w_pow"]),
                            float(t["heater_ohms"]),
                            tuple(t["voltage_range_v"]),
                        )
                    )
                else:
                    polys.append(tuple(float(c) for c in t["voltage_coeffs_rad_per_v_pow"]))
            il = d.get("insertion_loss_db", {"in1": 0.0, "in2": 0.0})
            return cls(
                dc_reflectivities=refl,
                tops_voltages=tuple(volts),
                phase_polys=tuple(polys),
                imbalance_floor=float(d.get("imbalance_floor", 0.0)),
                insertion_loss_db=(float(il["in1"]), float(il["in2"])),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed PIC state: {exc}") from exc


def load_pic_state(path: str | Path) -> PicState:
    """Read a :class:`PicState` from a YAML file (see ``data/default_pic.yaml``)."""
    import yaml

    with open(path) as fh:
        data = yaml.safe_load(fh)
    return PicState.from_dict(data.get("pic", data))


# ---------------------------------------------------------------------------
# Transfer matrix


def _coupler(r: float) -> np.ndarray:
    t = math.sqrt(1.0 - r)
    s = math.sqrt(r)
    return np.array([[s, 1j * t], [1j * t, s]])


def _embed(m2: np.ndarray, modes: tuple[int, int]) -> np.ndarray:
    out = np.eye(4, dtype=complex)
    idx = np.ix_(modes, modes)
    out[idx] = m2
    return out


def mzi(theta: float, r: float = 0.5) -> np.ndarray:
    """2x2 transfer of a Mach-Zehnder with internal phase ``theta`` on its upper arm."""
    c = _coupler(r)
    return c @ np.diag([np.exp(1j * theta), 1.0]) @ c


def hybrid_transfer(state: PicState) -> np.ndarray:
    """4x4 field transfer matrix from inputs to photodiodes (see module docstring)."""
    r_dc1, r_dc2, r_v1, r_v2 = state.dc_reflectivities
    th1, th2, th_lo = state.phases()
    splitters = _embed(_coupler(r_dc1), (0, 1)) @ _embed(_coupler(r_dc2), (2, 3))
    crossing = np.eye(4, dtype=complex)[[0, 2, 1, 3]]
    lo_phase = np.diag([1.0, 1.0, 1.0, np.exp(1j * th_lo)])
    vbs = _embed(mzi(th1, r_v1), (0, 1)) @ _embed(mzi(th2, r_v2), (2, 3))
    loss = np.ones(4)
    loss[0] = 10 ** (-state.insertion_loss_db[0] / 20)
    loss[2] = 10 ** (-state.insertion_loss_db[1] / 20)
    return vbs @ lo_phase @ crossing @ splitters @ np.diag(loss)


def photodiode_powers(state: PicState, p_signal: float = 0.0, p_lo: float = 1.0, signal_phase: float = 0.0) -> np.ndarray:
    """Optical power (W) at the four photodiodes for CW inputs."""
    fields_in = np.array([math.sqrt(p_signal) * np.exp(1j * signal_phase), 0.0, math.sqrt(p_lo), 0.0])
    return np.abs(hybrid_transfer(state) @ fields_in) ** 2


# ---------------------------------------------------------------------------
# CMRR


def cmrr_from_currents(i1, i2):
    """Common-mode rejection in dB from two photocurrents.

    ``20 log10(((i1 + i2) / 2) / |i1 - i2|)``, returning :data:`CMRR_CEILING_DB`
    for exact balance.
    """
    i1 = np.asarray(i1, dtype=float)
    i2 = np.asarray(i2, dtype=float)
    if np.any(i1 < 0) or np.any(i2 < 0):
        raise RangeError("photocurrents must be non-negative")
    total = i1 + i2
    if np.any(total <= 0):
        raise RangeError("CMRR undefined for zero total current")
    diff = np.abs(i1 - i2)
    with np.errstate(divide="ignore"):
        out = np.where(diff > 0, 20 * np.log10(0.5 * total / np.where(diff > 0, diff, 1.0)), CMRR_CEILING_DB)
    out = np.minimum(out, CMRR_CEILING_DB)
    return float(out) if out.ndim == 0 else out


def cmrr_from_ratio(r):
    """CMRR in dB for splitting ratio ``r = i1 / (i1 + i2)``."""
    r = np.asarray(r, dtype=float)
    return cmrr_from_currents(r, 1.0 - r)


def cmrr_model(phi, delta: float = 0.0):
    """Interferometric CMRR model ``-20 log10(|sin phi| + delta)`` in dB."""
    if delta < 0:
        raise RangeError("delta must be non-negative")
    amp = np.abs(np.sin(np.asarray(phi, dtype=float))) + delta
    with np.errstate(divide="ignore"):
        out = np.where(amp > 0, -20 * np.log10(np.where(amp > 0, amp, 1.0)), CMRR_CEILING_DB)
    out = np.minimum(out, CMRR_CEILING_DB)
    return float(out) if out.ndim == 0 else out


def cmrr_from_powers(p_un_quarter: float, p_bal: float, noise_floor_dbm: float | None = None) -> float:
    """CMRR (dB) from spectral tone powers in dBm.

    Parameters
    ----------
    p_un_quarter : float
        Tone power with one photodiode blocked, already divided by four.
    p_bal : float
        Tone power with both photodiodes illuminated.
    noise_floor_dbm : float, optional
        If ``p_bal`` is at or below this floor a :class:`CmrrLowerBoundWarning`
        is issued and the floor is used, so the result is a lower bound.
    """
    if not (math.isfinite(p_un_quarter) and math.isfinite(p_bal)):
        raise RangeError("tone powers must be finite")
    if noise_floor_dbm is not None and p_bal <= noise_floor_dbm:
        if p_bal < noise_floor_dbm:
            warnings.warn("balanced power below noise floor; CMRR is a lower bound", CmrrLowerBoundWarning, stacklevel=2)
        p_bal = noise_floor_dbm
    return float(p_un_quarter - p_bal)


def imbalance_floor_from_noise(p_un_quarter: float, noise_floor_dbm: float) -> float:
    """Residual imbalance ``delta`` implied by the largest measurable CMRR."""
    return 10 ** (-(p_un_quarter - noise_floor_dbm) / 20)


@dataclass(frozen=True)
class CmrrMeasurement:
    """One CMRR measurement with the quantities recorded alongside it."""

    i1: float
    i2: float
    p_un_dbm: float
    p_bal_dbm: float
    noise_floor_dbm: float
    f_mod: float = 500e3
    tia_gain: float = 1.0
    load_ohms: float = 50.0

    def __post_init__(self):
        if self.i1 < 0 or self.i2 < 0:
            raise RangeError("photocurrents must be non-negative")

    @property
    def r(self) -> float:
        return self.i1 / (self.i1 + self.i2)

    def cmrr_currents_db(self) -> float:
        return cmrr_from_currents(self.i1, self.i2)

    def cmrr_powers_db(self) -> float:
        return cmrr_from_powers(self.p_un_dbm - 10 * math.log10(4), self.p_bal_dbm, self.noise_floor_dbm)


def bpd_cmrr(state: PicState, responsivities: Sequence[float] = (1.0, 1.0, 1.0, 1.0), channel: int = 1) -> float:
    """CMRR (dB) of one balanced detector under LO-only illumination.

    The residual imbalance floor of ``state`` is added to the ratio error, so
    the result saturates at ``-20 log10(delta)``.
    """
    p = photodiode_powers(state, p_lo=1.0)
    i = np.asarray(responsivities, dtype=float) * p
    i1, i2 = (i[0], i[1]) if channel == 1 else (i[2], i[3])
    err = 2 * abs(i1 - i2) / (i1 + i2) + state.imbalance_floor
    return float(min(-20 * math.log10(err) if err > 0 else CMRR_CEILING_DB, CMRR_CEILING_DB))


def balance_voltage(state: PicState, responsivities: Sequence[float], channel: int, near: float | None = None) -> float:
    """Voltage of the vBS shifter that equalizes the two photocurrents of ``channel``."""
    k = channel - 1
    poly = state.phase_polys[k]
    if not isinstance(poly, TopsPoly):
        raise ConfigError("balancing requires a calibrated TopsPoly")
    resp = np.asarray(responsivities, dtype=float)

    def imbalance(v):
        s = state.with_voltages(**{f"v_r{channel}": v})
        i = resp * photodiode_powers(s, p_lo=1.0)
        return i[2 * k] - i[2 * k + 1]

    lo, hi = poly.voltage_range
    v0 = state.tops_voltages[k] if near is None else near
    grid = np.linspace(lo, hi, 257)
    vals = np.array([imbalance(v) for v in grid])
    roots = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
    if roots.size == 0:
        raise RangeError("no balance point inside the voltage range")
    j = roots[np.argmin(np.abs(grid[roots] - v0))]
    return float(optimize.brentq(imbalance, grid[j], grid[j + 1], xtol=1e-15))


def voltage_for_cmrr(state: PicState, responsivities: Sequence[float], channel: int, target_db: float) -> float:
    """vBS voltage just above the balance point where the CMRR equals ``target_db``."""
    v_bal = balance_voltage(state, responsivities, channel)
    k = channel - 1
    hi = state.phase_polys[k].voltage_range[1]

    def f(v):
        return bpd_cmrr(state.with_voltages(**{f"v_r{channel}": v}), responsivities, channel) - target_db

    if f(v_bal + 1e-12) < 0:
        raise RangeError("target CMRR above what the imbalance floor allows")
    prev, step = v_bal + 1e-12, 1e-6
    while f(v_bal + step) > 0:
        prev = v_bal + step
        step *= 2
        if v_bal + step > hi:
            raise RangeError("target CMRR not reachable inside the voltage range")
    return float(optimize.brentq(f, prev, v_bal + step, xtol=1e-15))


# ---------------------------------------------------------------------------
# LO phase estimation


@dataclass(frozen=True)
class EllipseFit:
    """Result of :func:`estimate_lo_phase`.

    ``coeffs`` are ``A, B, C, D, E`` of ``A x^2 + B y^2 + C xy + D x + E y = 1``
    in the input frame; they are ``nan`` when the ellipse passes through the
    origin, where that normalization does not exist.
    """

    coeffs: tuple[float, float, float, float, float]
    v1: float
    v2: float
    delta_theta_lo: float
    residual: float
    center: tuple[float, float] = (0.0, 0.0)


def estimate_lo_phase(samples, refine: bool = True) -> EllipseFit:
    """Estimate the quadrature phase difference from a phase sweep.

    Fits the conic ``A x^2 + B y^2 + C xy + D x + E y = 1`` by linear least
    squares and returns ``arccos(-C / (2 sqrt(AB)))`` in degrees. The fit is
    done about the sample mean, which keeps the normalization well
    conditioned for any offset, and mapped back to the input frame.

    Parameters
    ----------
    samples : array_like, shape (n, 2)
        Simultaneous channel voltages recorded while the relative
        signal/LO phase is swept.
    refine : bool
        Polish the algebraic solution by orthogonal-distance least squares
        over ``(x0 + V1 cos t, y0 + V2 cos(t + dtheta))``. Additive noise
        biases the algebraic fit toward 90 degrees (about 0.9 degree at 30
        degrees for 3 % noise); the geometric fit removes most of that.

    Raises
    ------
    FitError
        For fewer than six samples, collinear or degenerate data, a conic that
        is not an ellipse, or points covering less than half of it.
    """
    xy = np.asarray(samples, dtype=float)
    if xy.ndim != 2 or xy.shape[1] != 2:
        raise FitError("samples must have shape (n, 2)")
    if xy.shape[0] < 6:
        raise FitError("need at least 6 samples")
    xm, ym = xy.mean(axis=0)
    x, y = xy[:, 0] - xm, xy[:, 1] - ym
    sx = math.sqrt(np.mean(x**2))
    sy = math.sqrt(np.mean(y**2))
    if sx == 0 or sy == 0:
        raise FitError("a channel has zero amplitude")
    u, v = x / sx, y / sy
    design = np.column_stack([u * u, v * v, u * v, u, v])
    sv = np.linalg.svd(design, compute_uv=False)
    if sv[-1] <= 1e-9 * sv[0]:
        raise FitError("degenerate sample set")
    coef, *_ = np.linalg.lstsq(design, np.ones(len(u)), rcond=None)
    residual = float(np.sqrt(np.mean((design @ coef - 1.0) ** 2)))
    au, bu, cu, du, eu = coef
    a, b, c, d, e = au / sx**2, bu / sy**2, cu / (sx * sy), du / sx, eu / sy
    if not (4 * au * bu - cu * cu > 0 and au > 0):
        raise FitError("fitted conic is not an ellipse")

    # Centre of the conic and its right-hand side after centring.
    x0, y0 = np.linalg.solve([[2 * a, c], [c, 2 * b]], [-d, -e])
    scale = 1.0 - (a * x0 * x0 + b * y0 * y0 + c * x0 * y0 + d * x0 + e * y0)
    if scale <= 0:
        raise FitError("fitted conic is not an ellipse")
    cos_dt = -cu / (2 * math.sqrt(au * bu))
    dtheta = math.acos(max(-1.0, min(1.0, cos_dt)))
    sin_dt = math.sin(dtheta)
    if sin_dt < 1e-9:
        raise FitError("degenerate ellipse")
    v1 = 1.0 / (sin_dt * math.sqrt(a / scale))
    v2 = 1.0 / (sin_dt * math.sqrt(b / scale))

    # Sweep coverage on the fitted ellipse.
    xc, yc = x - x0, y - y0
    cos_t = xc / v1
    sin_t = (xc * cos_dt / v1 - yc / v2) / sin_dt
    t = np.sort(np.mod(np.arctan2(sin_t, cos_t), 2 * np.pi))
    gaps = np.diff(np.concatenate([t, [t[0] + 2 * np.pi]]))
    if 2 * np.pi - gaps.max() <= np.pi:
        raise FitError("samples cover less than half of the ellipse")

    if refine and residual > 1e-9:
        # One common scale keeps the solver tolerances scale-free and the noise isotropic.
        g = math.hypot(sx, sy)
        x0, y0, v1, v2, dtheta = _refine_ellipse(x / g, y / g, np.arctan2(sin_t, cos_t), x0 / g, y0 / g, v1 / g, v2 / g, dtheta)
        x0, y0, v1, v2 = x0 * g, y0 * g, v1 * g, v2 * g
        s2 = math.sin(dtheta) ** 2
        a, b, c = 1 / (v1 * v1 * s2), 1 / (v2 * v2 * s2), -2 * math.cos(dtheta) / (v1 * v2 * s2)
        k0 = 1.0 - (a * x0 * x0 + b * y0 * y0 + c * x0 * y0)
        d, e = -(2 * a * x0 + c * y0), -(2 * b * y0 + c * x0)
        a, b, c, d, e = (q / k0 for q in (a, b, c, d, e))

    # Back to the input frame: shift by the mean, then renormalize to "= 1".
    d_in = d - 2 * a * xm - c * ym
    e_in = e - 2 * b * ym - c * xm
    k = 1.0 - (a * xm * xm + b * ym * ym + c * xm * ym - d * xm - e * ym)
    if abs(k) > 1e-12:
        coeffs = tuple(float(q / k) for q in (a, b, c, d_in, e_in))
    else:
        coeffs = (float("nan"),) * 5
    return EllipseFit(coeffs, float(v1), float(v2), math.degrees(dtheta), residual, (float(x0 + xm), float(y0 + ym)))


def _refine_ellipse(x, y, t, x0, y0, v1, v2, dtheta):
    """Orthogonal-distance fit of the parametric ellipse, one phase per sample."""
    n = x.size

    def resid(p):
        cx, cy, a1, a2, dt = p[:5]
        tt = p[5:]
        return np.concatenate([x - cx - a1 * np.cos(tt), y - cy - a2 * np.cos(tt + dt)])

    pattern = sparse.lil_matrix((2 * n, 5 + n), dtype=np.int8)
    pattern[:, :5] = 1
    i = np.arange(n)
    pattern[i, 5 + i] = 1
    pattern[n + i, 5 + i] = 1
    sol = optimize.least_squares(resid, np.concatenate([[x0, y0, v1, v2, dtheta], t]), jac_sparsity=pattern, x_scale="jac")
    cx, cy, a1, a2, dt = sol.x[:5]
    # Fold the sign and branch freedom back to positive amplitudes and dtheta in (0, pi).
    if a1 < 0:
        a1, dt = -a1, dt + math.pi
    if a2 < 0:
        a2, dt = -a2, dt + math.pi
    dt = math.remainder(dt, 2 * math.pi)
    # (V1 cos t, V2 cos(t - d)) traces the same ellipse as (V1 cos t, V2 cos(t + d)).
    dt = abs(dt)
    if not 0 < dt < math.pi:
        raise FitError("degenerate ellipse")
    return float(cx), float(cy), float(a1), float(a2), dt


def synthesize_sweep(v1: float, v2: float, delta_theta_deg: float, n: int = 1000, noise: float = 0.0, rng=None, offset=(0.0, 0.0)) -> np.ndarray:
    """Channel voltages ``(V1 cos t, V2 cos(t + dtheta))`` over one full sweep."""
    t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    dt = math.radians(delta_theta_deg)
    xy = np.column_stack([v1 * np.cos(t) + offset[0], v2 * np.cos(t + dt) + offset[1]])
    if noise > 0:
        rng = np.random.default_rng(rng)
        xy = xy + rng.normal(0.0, noise, xy.shape)
    return xy


# ---------------------------------------------------------------------------
# Drift


@dataclass(frozen=True)
class PhaseDrift:
    """Thermal phase wander of the three shifters.

    Each shifter carries an Ornstein-Uhlenbeck phase offset with stationary
    standard deviation ``sigma_deg[k]`` and correlation time ``tau_s``.
    """

    sigma_deg: tuple[float, float, float] = (0.1, 0.1, 0.25)
    tau_s: float = 900.0
    step_s: float = 10.0

    def __post_init__(self):
        if self.tau_s <= 0 or self.step_s <= 0:
            raise ConfigError("drift time constants must be positive")


@dataclass(frozen=True)
class DriftSeries:
    time_s: np.ndarray
    cmrr_db: np.ndarray  # shape (n, 2): vBS1, vBS2
    delta_theta_lo_deg: np.ndarray


def simulate_drift(
    state: PicState,
    drift: PhaseDrift,
    duration: float,
    seed: int = 0,
    balance_phases: Sequence[float] | None = None,
) -> DriftSeries:
    """Time series of CMRR and LO phase under thermal drift.

    Parameters
    ----------
    balance_phases : (float, float), optional
        Internal phases of vBS1 and vBS2 at which their detectors are
        balanced. Defaults to the phases at the stored voltages, which is
        correct for a state produced by :func:`balance_voltage`.
    """
    if duration <= 0:
        raise RangeError("duration must be positive")
    n = int(math.floor(duration / drift.step_s)) + 1
    t = np.arange(n) * drift.step_s
    rng = np.random.default_rng(seed)
    a = math.exp(-drift.step_s / drift.tau_s)
    sig = np.radians(np.asarray(drift.sigma_deg, dtype=float))
    off = np.zeros((n, 3))
    kicks = rng.standard_normal((n, 3)) * sig * math.sqrt(1 - a * a)
    off[0] = rng.standard_normal(3) * sig
    for k in range(1, n):
        off[k] = a * off[k - 1] + kicks[k]
    th = np.array(state.phases())
    if balance_phases is None:
        balance_phases = th[:2]
    phi = th[:2] + off[:, :2] - np.asarray(balance_phases)
    cm = cmrr_model(phi, state.imbalance_floor)
    lo = np.degrees(th[2] + off[:, 2])
    return DriftSeries(t, np.asarray(cm).reshape(n, 2), lo)


# ---------------------------------------------------------------------------
# Voltage scans


@dataclass(frozen=True)
class CmrrModelFit:
    """Overlay of the interferometric CMRR model on a voltage scan."""

    v_balance: float
    slope_rad_per_v: float
    delta: float

    def __call__(self, v):
        return cmrr_model(self.slope_rad_per_v * (np.asarray(v) - self.v_balance), self.delta)

    @property
    def peak_db(self) -> float:
        return cmrr_model(0.0, self.delta)

    @property
    def fwhm_v(self) -> float:
        """Full width where the model stays above half of its peak value in dB."""
        half = math.sqrt(self.delta) - self.delta
        return 2 * math.asin(min(1.0, half)) / abs(self.slope_rad_per_v)


def fit_cmrr_scan(voltages, cmrr_db) -> CmrrModelFit:
    """Least-squares fit of the CMRR model to a scan around one balance point."""
    v = np.asarray(voltages, dtype=float)
    y = np.asarray(cmrr_db, dtype=float)
    if v.size < 4:
        raise FitError("need at least 4 scan points")
    i0 = int(np.argmax(y))
    # Initial slope from the half-peak crossing nearest the maximum.
    amp = 10 ** (-y / 20)
    delta0 = float(amp.min()) * 0.5
    hw = v[np.argmin(np.abs(amp - 0.1))] - v[i0]
    s0 = math.asin(0.1) / hw if hw != 0 else 1.0

    def resid(p):
        vb, s, ld = p
        return -20 * np.log10(np.abs(np.sin(s * (v - vb))) + 10**ld) - y

    sol = optimize.least_squares(resid, [v[i0], abs(s0), math.log10(max(delta0, 1e-12))], x_scale=[abs(hw) + 1e-6, abs(s0), 1.0])
    vb, s, ld = sol.x
    return CmrrModelFit(float(vb), float(abs(s)), float(10**ld))


def scan_vbs(state: PicState, responsivities, channel: int, voltages) -> np.ndarray:
    """CMRR (dB) of ``channel`` for each vBS voltage in ``voltages``."""
    key = f"v_r{channel}"
    return np.array([bpd_cmrr(state.with_voltages(**{key: float(v)}), responsivities, channel) for v in voltages])


def scan_lo_phase(state: PicState, voltages) -> np.ndarray:
    """LO phase difference (deg) for each R3 voltage."""
    return np.degrees(np.asarray(tops_phase(np.asarray(voltages, dtype=float), state.phase_polys[2])))
