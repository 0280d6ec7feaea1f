"""Discrete-modulation CV-QKD: link model, parameter estimation and key rate.

Conventions
-----------
Variances are in shot-noise units (SNU): vacuum quadrature variance is 1.
Alice's modulation variance per quadrature is ``V_A = 2 <n>``. A symbol is
stored as the complex quadrature pair ``x_A + i p_A``. Bob's heterodyne
outcome in each quadrature is::

    y = sqrt(eta T / 2) x_A + noise,   Var(noise) = 1 + V_el + (eta T / 2) xi_A

so that ``<x_A y> = sqrt(eta T / 2) V_A`` and
``V_B = 1 + V_el + (eta T / 2)(V_A + xi_A)``.

The key rate is ``beta I_AB - chi_BE``. The Holevo term is evaluated on the
Gaussian state with the covariance set by the effective correlation ``Z``,
with the detector loss and electronic noise trusted (beam splitter of
transmissivity ``eta`` fed by one arm of a thermal EPR pair).
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .constants import WAVELENGTH_M, photon_energy
from .errors import CutoffError, FitError, NumericalInstabilityError, PhysicalityError

_SIGMA_Z = np.diag([1.0, -1.0])
_I2 = np.eye(2)


# ---------------------------------------------------------------------------
# Constellations


@dataclass(frozen=True)
class Constellation:
    """Symbol alphabet with unit average energy.

    ``symbols`` is empty for the Gaussian (continuous) modulation.
    """

    name: str
    symbols: np.ndarray
    probabilities: np.ndarray
    pcs_nu: float | None = None

    def __post_init__(self):
        s = np.asarray(self.symbols, dtype=complex).ravel()
        p = np.asarray(self.probabilities, dtype=float).ravel()
        if s.shape != p.shape:
            raise ValueError("symbols and probabilities differ in length")
        if s.size:
            if np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
                raise ValueError("probabilities must be non-negative and sum to 1")
            if abs(np.sum(p * s)) > 1e-9:
                raise ValueError("constellation mean must be zero")
        s.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "symbols", s)
        object.__setattr__(self, "probabilities", p)

    @property
    def is_gaussian(self) -> bool:
        return self.symbols.size == 0

    @property
    def mean_energy(self) -> float:
        return 1.0 if self.is_gaussian else float(np.sum(self.probabilities * np.abs(self.symbols) ** 2))

    def sample(self, n: int, rng) -> np.ndarray:
        """``n`` unit-energy symbols (complex amplitudes)."""
        rng = np.random.default_rng(rng)
        if self.is_gaussian:
            return (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2)
        return self.symbols[rng.choice(self.symbols.size, size=n, p=self.probabilities)]


def psk(order: int) -> Constellation:
    """``order``-PSK on the unit circle, rotated by ``pi / order``."""
    if order < 2:
        raise ValueError("PSK order must be at least 2")
    s = np.exp(1j * (np.pi / order + 2 * np.pi * np.arange(order) / order))
    name = "QPSK" if order == 4 else f"{order}-PSK"
    return Constellation(name, s, np.full(order, 1.0 / order))


def pcs_qam(order: int, nu: float) -> Constellation:
    """Square ``order``-QAM with Maxwell-Boltzmann weights ``exp(-nu |s|^2)``.

    ``|s|`` is measured on the grid scaled to unit energy under uniform
    weights; the shaped alphabet is rescaled back to unit energy.
    """
    side = int(round(math.sqrt(order)))
    if side * side != order or side < 2:
        raise ValueError("QAM order must be a square")
    if nu < 0:
        raise ValueError("shaping parameter must be non-negative")
    g = np.arange(side) * 2.0 - (side - 1)
    s = (g[:, None] + 1j * g[None, :]).ravel()
    s = s / math.sqrt(np.mean(np.abs(s) ** 2))
    p = np.exp(-nu * np.abs(s) ** 2)
    p /= p.sum()
    s = s / math.sqrt(np.sum(p * np.abs(s) ** 2))
    return Constellation(f"{order}-PCS-QAM", s, p, pcs_nu=float(nu))


def gaussian_modulation() -> Constellation:
    return Constellation("Gaussian", np.zeros(0, complex), np.zeros(0))


def constellation_by_name(name: str, nu: float = 0.0) -> Constellation:
    key = name.strip().upper()
    if key == "QPSK":
        return psk(4)
    if key.endswith("-PSK"):
        return psk(int(key.split("-")[0]))
    if key.endswith("-PCS-QAM"):
        return pcs_qam(int(key.split("-")[0]), nu)
    if key == "GAUSSIAN":
        return gaussian_modulation()
    raise ValueError(f"unknown constellation {name!r}")


# ---------------------------------------------------------------------------
# Parameters and link simulation


@dataclass(frozen=True)
class QkdParams:
    """System parameters (SNU). Defaults are the measured operating point."""

    eta: float = 0.55
    v_el: float = 0.029
    t: float = 0.73
    xi_a: float = 0.015
    v_a: float = 0.46
    beta: float = 0.95
    symbol_rate_baud: float = 250e6
    wavelength_m: float = WAVELENGTH_M

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if not 0 <= self.t <= 1:
            raise ValueError("T must lie in [0, 1]")
        if min(self.v_a, self.xi_a, self.v_el) < 0:
            raise ValueError("V_A, xi_A and V_el must be non-negative")
        if not 0 <= self.beta <= 1:
            raise ValueError("beta must lie in [0, 1]")

    def replace(self, **kw) -> "QkdParams":
        return dataclasses.replace(self, **kw)

    @property
    def gain(self) -> float:
        """Heterodyne amplitude factor ``eta T / 2``."""
        return self.eta * self.t / 2

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def va_from_power(p_tx: float, wavelength: float = WAVELENGTH_M, symbol_rate: float = 250e6) -> float:
    """Modulation variance ``2 P / (E_ph R)`` (twice the mean photon number per symbol)."""
    if p_tx < 0 or wavelength <= 0 or symbol_rate <= 0:
        raise ValueError("power must be non-negative; wavelength and rate positive")
    return 2 * p_tx / (photon_energy(wavelength) * symbol_rate)


def expected_covariance(params: QkdParams) -> float:
    return math.sqrt(params.gain) * params.v_a


def expected_bob_variance(params: QkdParams) -> float:
    return 1 + params.v_el + params.gain * (params.v_a + params.xi_a)


def simulate_link(constellation: Constellation, params: QkdParams, n_symbols: int, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Alice's quadrature pairs and Bob's heterodyne outcomes, both in SNU."""
    if n_symbols < 1:
        raise ValueError("n_symbols must be at least 1")
    rng = np.random.default_rng(seed)
    # Unit-energy symbols carry variance 1/2 per quadrature.
    alice = constellation.sample(n_symbols, rng) * math.sqrt(2 * params.v_a)
    noise_var = 1 + params.v_el + params.gain * params.xi_a
    noise = (rng.standard_normal(n_symbols) + 1j * rng.standard_normal(n_symbols)) * math.sqrt(noise_var)
    return alice, math.sqrt(params.gain) * alice + noise


# ---------------------------------------------------------------------------
# Parameter estimation


@dataclass(frozen=True)
class EstimationResult:
    cov_ab: float
    v_b: float
    t_hat: float
    xi_hat: float
    t_sigma: float = float("nan")
    xi_sigma: float = float("nan")
    n_symbols: int = 0

    def __post_init__(self):
        if self.v_b < 1:
            raise PhysicalityError(f"Bob variance {self.v_b:.6g} below shot noise")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def invert_moments(cov: float, v_b: float, v_a: float, eta: float, v_el: float) -> tuple[float, float]:
    """``(T, xi_A)`` from the covariance and Bob variance."""
    if cov <= 0:
        raise FitError("non-positive Alice-Bob covariance")
    t = 2 * cov * cov / (eta * v_a * v_a)
    xi = (v_b - 1 - v_el) / (eta * t / 2) - v_a
    return t, xi


def _moments(a: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    cov = float(np.mean(a.real * y.real + a.imag * y.imag)) / 2
    v_b = float(np.mean(np.abs(y - y.mean()) ** 2)) / 2
    return cov, v_b


def estimate_parameters(alice, bob, v_a: float, eta: float, v_el: float, n_blocks: int = 50, n_boot: int = 200, seed=0) -> EstimationResult:
    """Moment estimates of ``(T, xi_A)`` with block-bootstrap uncertainties.

    The data are cut into ``n_blocks`` contiguous blocks; bootstrap replicas
    resample blocks with replacement and pool their moments.
    """
    a = np.asarray(alice, dtype=complex).ravel()
    y = np.asarray(bob, dtype=complex).ravel()
    if a.shape != y.shape:
        raise ValueError("alice and bob lengths differ")
    if a.size < 10_000:
        warnings.warn("fewer than 1e4 symbols; estimates are noisy", stacklevel=2)
    cov, v_b = _moments(a, y)
    t, xi = invert_moments(cov, v_b, v_a, eta, v_el)
    t_sig = xi_sig = float("nan")
    bs = a.size // n_blocks
    if n_blocks >= 2 and bs >= 1:
        ab = a[: bs * n_blocks].reshape(n_blocks, bs)
        yb = y[: bs * n_blocks].reshape(n_blocks, bs)
        s_xy = np.sum(ab.real * yb.real + ab.imag * yb.imag, axis=1) / 2
        s_y = np.sum(yb, axis=1)
        s_yy = np.sum(np.abs(yb) ** 2, axis=1) / 2
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, n_blocks, size=(n_boot, n_blocks))
        n_tot = bs * n_blocks
        c_b = s_xy[idx].sum(axis=1) / n_tot
        mean_y = s_y[idx].sum(axis=1) / n_tot
        vb_b = s_yy[idx].sum(axis=1) / n_tot - np.abs(mean_y) ** 2 / 2
        t_b = 2 * c_b**2 / (eta * v_a * v_a)
        xi_b = (vb_b - 1 - v_el) / (eta * t_b / 2) - v_a
        t_sig, xi_sig = float(np.std(t_b, ddof=1)), float(np.std(xi_b, ddof=1))
    return EstimationResult(cov, v_b, t, xi, t_sig, xi_sig, a.size)


# ---------------------------------------------------------------------------
# Mutual information


def snr(params: QkdParams) -> float:
    return params.gain * params.v_a / (1 + params.v_el + params.gain * params.xi_a)


def iab(constellation: Constellation, params: QkdParams, method: str = "gaussian", n_samples: int = 1_000_000, seed=0) -> float:
    """Alice-Bob mutual information in bits per symbol.

    ``gaussian``: ``log2(1 + SNR)``. ``numeric``: Monte-Carlo mutual
    information of the discrete alphabet over the complex AWGN channel with
    the same SNR per quadrature.
    """
    s = snr(params)
    if s <= 0:
        return 0.0
    if method == "gaussian" or constellation.is_gaussian:
        return math.log2(1 + s)
    if method != "numeric":
        raise ValueError(f"unknown method {method!r}")
    rng = np.random.default_rng(seed)
    # Unit noise variance per quadrature; signal variance s per quadrature.
    pts = constellation.symbols * math.sqrt(2 * s)
    p = constellation.probabilities
    log_p = np.log(p)
    acc = 0.0
    chunk = max(1, 2_000_000 // pts.size)
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        k = rng.choice(pts.size, size=m, p=p)
        noise = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        y = pts[k] + noise
        d = -(np.abs(y[:, None] - pts[None, :]) ** 2 - np.abs(noise)[:, None] ** 2) / 2
        acc += float(np.sum(special.logsumexp(d + log_p[None, :], axis=1)))
        done += m
    return max(0.0, -acc / n_samples / math.log(2))


# ---------------------------------------------------------------------------
# Fock-space description of Alice's average state


def coherent_state(alpha: complex, cutoff: int) -> np.ndarray:
    k = np.arange(cutoff)
    if alpha == 0:
        return (k == 0).astype(complex)
    return np.exp(-abs(alpha) ** 2 / 2 + k * np.log(complex(alpha)) - 0.5 * special.gammaln(k + 1))


def default_cutoff(constellation: Constellation, v_a: float) -> int:
    n_mean = v_a / 2
    peak = n_mean * (float(np.max(np.abs(constellation.symbols) ** 2)) if constellation.symbols.size else 1.0)
    return int(max(40, math.ceil(10 * n_mean + 10), math.ceil(peak + 12 * math.sqrt(peak) + 20)))


def _amplitudes(constellation: Constellation, v_a: float) -> np.ndarray:
    return constellation.symbols * math.sqrt(v_a / 2)


def _weighted_states(constellation: Constellation, v_a: float, cutoff: int) -> np.ndarray:
    """Columns ``sqrt(p_k) |alpha_k>`` (cutoff x K), with a truncation check."""
    vecs = np.array([coherent_state(a, cutoff) for a in _amplitudes(constellation, v_a)]).T
    norms = np.sum(np.abs(vecs) ** 2, axis=0)
    deficit = float(np.sum(constellation.probabilities * (1 - norms)))
    if deficit > 1e-8:
        raise CutoffError(f"Fock cutoff {cutoff} leaves trace deficit {deficit:.3g}")
    return vecs * np.sqrt(constellation.probabilities)[None, :]


def mean_state_fock(constellation: Constellation, v_a: float, cutoff: int | None = None) -> np.ndarray:
    """Average transmitted state ``sum_k p_k |alpha_k><alpha_k|`` in the number basis.

    The Gaussian modulation maps to the thermal state with ``<n> = V_A / 2``.
    """
    n_mean = v_a / 2
    if cutoff is None:
        cutoff = default_cutoff(constellation, v_a)
    if cutoff < 10 * n_mean + 10:
        raise CutoffError(f"cutoff {cutoff} below 10 <n> + 10")
    if constellation.is_gaussian:
        k = np.arange(cutoff)
        diag = (n_mean**k) / (1 + n_mean) ** (k + 1)
        if 1 - diag.sum() > 1e-8:
            raise CutoffError(f"Fock cutoff {cutoff} leaves trace deficit {1 - diag.sum():.3g}")
        return np.diag(diag).astype(complex)
    m = _weighted_states(constellation, v_a, cutoff)
    rho = m @ m.conj().T
    return (rho + rho.conj().T) / 2


def _annihilation(cutoff: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, cutoff)), 1)


def _sqrtm_psd(rho: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    w, u = np.linalg.eigh(rho)
    if w.min() < -tol * max(1.0, w.max()) - 1e-12:
        raise PhysicalityError(f"density matrix has eigenvalue {w.min():.3g}")
    w = np.clip(w, 0, None)
    return (u * np.sqrt(w)) @ u.conj().T


def effective_z(rho_bar: np.ndarray) -> float:
    """Trace-form correlation ``2 Tr[rho^1/2 a rho^1/2 a^dagger]``."""
    rho = np.asarray(rho_bar, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise PhysicalityError("density matrix must be square")
    if not np.allclose(rho, rho.conj().T, atol=1e-12):
        raise PhysicalityError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1) > 1e-6:
        raise PhysicalityError("density matrix trace differs from 1")
    s = _sqrtm_psd(rho)
    a = _annihilation(rho.shape[0])
    return max(0.0, float(np.real(np.trace(s @ a @ s @ a.conj().T))) * 2)


def z_correction_weight(constellation: Constellation, v_a: float, cutoff: int | None = None) -> float:
    """Penalty weight ``w`` of the discrete-modulation correlation bound.

    Works in the span of the coherent states. With ``M = [sqrt(p_k) |alpha_k>]``
    and ``M = U S R^dagger``, the annihilation operator is carried to the
    symbol register as ``A = (R^dagger (U^dagger a^dagger U) R)^T``; with the
    Gram matrix ``G = (M^dagger M)^T``,
    ``w = Tr[G A A^dagger] - sum_k |(G A)_kk|^2 / p_k``.
    Zero for the Gaussian modulation.
    """
    if constellation.is_gaussian:
        return 0.0
    if cutoff is None:
        cutoff = default_cutoff(constellation, v_a)
    m = _weighted_states(constellation, v_a, cutoff)
    u, _, rh = np.linalg.svd(m, full_matrices=False)
    a = _annihilation(cutoff)
    a_reg = (rh.conj().T @ (u.conj().T @ a.conj().T @ u) @ rh).T
    gram = (m.conj().T @ m).T
    ga = gram @ a_reg
    w = float(np.real(np.trace(ga @ a_reg.conj().T))) - float(np.sum(np.abs(np.diag(ga)) ** 2 / constellation.probabilities))
    return max(0.0, w)


def gaussian_z(v_a: float) -> float:
    """Correlation of the two-mode squeezed purification, ``sqrt(V^2 - 1)`` with ``V = V_A + 1``."""
    v = v_a + 1
    return math.sqrt(v * v - 1)


def correlation_z(constellation: Constellation, params: QkdParams, method: str = "corrected", cutoff: int | None = None) -> tuple[float, float, int]:
    """Effective correlation used in the Holevo bound.

    Returns ``(z, z_trace, cutoff)``. ``corrected`` subtracts
    ``sqrt(2 w xi_A)`` from the trace form; ``trace`` uses the trace form.
    """
    if constellation.is_gaussian:
        z = gaussian_z(params.v_a)
        return z, z, 0
    if cutoff is None:
        cutoff = default_cutoff(constellation, params.v_a)
    z_tr = effective_z(mean_state_fock(constellation, params.v_a, cutoff))
    if method == "trace":
        return z_tr, z_tr, cutoff
    if method != "corrected":
        raise ValueError(f"unknown Z method {method!r}")
    w = z_correction_weight(constellation, params.v_a, cutoff)
    return max(0.0, z_tr - math.sqrt(2 * w * params.xi_a)), z_tr, cutoff


# ---------------------------------------------------------------------------
# Gaussian-state calculus


def symplectic_form(n_modes: int) -> np.ndarray:
    return np.kron(np.eye(n_modes), np.array([[0.0, 1.0], [-1.0, 0.0]]))


def symplectic_eigenvalues(gamma) -> np.ndarray:
    """Symplectic spectrum (one value per mode), sorted descending."""
    g = np.asarray(gamma, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] % 2:
        raise ValueError("covariance must be square with even dimension")
    if not np.allclose(g, g.T, atol=1e-10 * max(1.0, np.abs(g).max())):
        raise ValueError("covariance matrix is not symmetric")
    ev = np.sort(np.abs(np.linalg.eigvals(1j * symplectic_form(g.shape[0] // 2) @ g)))[::-1]
    return ev[::2].copy()


def entropy_g(x: float) -> float:
    """``(x + 1) log2(x + 1) - x log2 x``."""
    if x <= 0:
        return 0.0
    return (x + 1) * math.log2(x + 1) - x * math.log2(x)


@dataclass(frozen=True)
class GaussianState:
    covariance: np.ndarray
    mean: np.ndarray = field(default=None)

    def __post_init__(self):
        g = np.asarray(self.covariance, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] % 2:
            raise ValueError("covariance must be square with even dimension")
        if not np.allclose(g, g.T, atol=1e-10 * max(1.0, np.abs(g).max())):
            raise ValueError("covariance matrix is not symmetric")
        object.__setattr__(self, "covariance", g)
        mu = np.zeros(g.shape[0]) if self.mean is None else np.asarray(self.mean, dtype=float)
        object.__setattr__(self, "mean", mu)

    @property
    def n_modes(self) -> int:
        return self.covariance.shape[0] // 2

    def symplectic_spectrum(self) -> np.ndarray:
        return symplectic_eigenvalues(self.covariance)

    def is_physical(self, tol: float = 1e-9) -> bool:
        return bool(np.all(self.symplectic_spectrum() >= 1 - tol))

    def entropy(self) -> float:
        return float(sum(entropy_g((nu - 1) / 2) for nu in self.symplectic_spectrum()))


def _checked_entropy(gamma: np.ndarray, what: str) -> float:
    st = GaussianState(gamma)
    nu = st.symplectic_spectrum()
    if np.any(nu < 1 - 1e-9):
        raise NumericalInstabilityError(f"unphysical {what} (min symplectic eigenvalue {nu.min():.12g})", gamma)
    return float(sum(entropy_g((v - 1) / 2) for v in nu))


def holevo_bound(params: QkdParams, z_star: float) -> float:
    """Eve's Holevo information on Bob's heterodyne outcomes, trusted detector.

    Raises
    ------
    PhysicalityError
        For ``eta = 1`` with ``V_el > 0`` (no thermal source can supply it).
    NumericalInstabilityError
        If any intermediate covariance is unphysical.
    """
    v = params.v_a + 1
    t = params.t
    z_max = math.sqrt(v * v - 1)
    if z_star > z_max * (1 + 1e-12):
        warnings.warn(f"Z* {z_star:.6g} above the physical bound {z_max:.6g}; clamped", stacklevel=2)
        z_star = z_max
    eta = params.eta
    if eta >= 1 and params.v_el > 0:
        raise PhysicalityError("electronic noise needs eta < 1 in the trusted-detector model")
    w_b = t * (params.v_a + params.xi_a) + 1
    c = math.sqrt(t) * z_star
    gamma_ab = np.block([[v * _I2, c * _SIGMA_Z], [c * _SIGMA_Z, w_b * _I2]])
    s_e = _checked_entropy(gamma_ab, "Alice-Bob covariance")
    if eta >= 1:
        cond = gamma_ab[:2, :2] - gamma_ab[:2, 2:] @ np.linalg.inv(gamma_ab[2:, 2:] + _I2) @ gamma_ab[2:, :2]
        return max(0.0, s_e - _checked_entropy(cond, "conditional covariance"))
    # Modes A, B, F, G with (F, G) an EPR pair; B and F meet on the detector beam splitter.
    ve = 1 + 2 * params.v_el / (1 - eta)
    ze = math.sqrt(ve * ve - 1)
    g = np.zeros((8, 8))
    g[:4, :4] = gamma_ab
    g[4:, 4:] = np.block([[ve * _I2, ze * _SIGMA_Z], [ze * _SIGMA_Z, ve * _I2]])
    tr, rf = math.sqrt(eta), math.sqrt(1 - eta)
    bs = np.eye(8)
    bs[2:6, 2:6] = np.block([[tr * _I2, rf * _I2], [-rf * _I2, tr * _I2]])
    g = bs @ g @ bs.T
    keep = [0, 1, 4, 5, 6, 7]
    g_rest = g[np.ix_(keep, keep)]
    g_b = g[2:4, 2:4]
    sigma = g[np.ix_(keep, [2, 3])]
    cond = g_rest - sigma @ np.linalg.inv(g_b + _I2) @ sigma.T
    cond = (cond + cond.T) / 2
    return max(0.0, s_e - _checked_entropy(cond, "conditional covariance"))


@dataclass(frozen=True)
class SkrReport:
    constellation: str
    i_ab: float
    chi_be: float
    skr_per_symbol: float
    skr_bits_per_second: float
    fock_cutoff: int
    z_star: float
    z_trace: float
    z_method: str
    near_gaussian_bound: bool

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def skr(
    constellation: Constellation,
    params: QkdParams,
    iab_method: str = "gaussian",
    z_method: str = "corrected",
    cutoff: int | None = None,
) -> SkrReport:
    """Asymptotic key rate ``max(0, beta I_AB - chi_BE)``."""
    i = iab(constellation, params, iab_method)
    z, z_tr, n_cut = correlation_z(constellation, params, z_method, cutoff)
    chi = holevo_bound(params, z)
    k = max(0.0, params.beta * i - chi)
    near = z_tr >= 0.99 * gaussian_z(params.v_a) and not constellation.is_gaussian
    return SkrReport(constellation.name, float(i), float(chi), float(k), float(k * params.symbol_rate_baud), n_cut, float(z), float(z_tr), z_method, bool(near))


# ---------------------------------------------------------------------------
# Rate curves


def golden_max(fn, lo: float, hi: float, tol: float = 1e-4, max_iter: int = 80) -> tuple[float, float]:
    """Maximize a unimodal ``fn`` on ``[lo, hi]``; returns ``(x, fn(x))``."""
    inv_phi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fn(d)
    return (c, fc) if fc >= fd else (d, fd)


def optimize_va(constellation: Constellation, params: QkdParams, va_range=(0.01, 10.0), **kw) -> tuple[float, SkrReport]:
    """Golden-section search of the key rate over ``log V_A``."""
    # Unfloored rate keeps the objective informative where the key is zero.
    def rate(log_va):
        rep = skr(constellation, params.replace(v_a=math.exp(log_va)), **kw)
        return params.beta * rep.i_ab - rep.chi_be

    x, _ = golden_max(rate, math.log(va_range[0]), math.log(va_range[1]), tol=1e-3)
    va = math.exp(x)
    return va, skr(constellation, params.replace(v_a=va), **kw)


DEFAULT_NU_GRID = tuple(np.linspace(0.0, 4.0, 32))
CURVE_COLUMNS = ("constellation", "T", "T_db", "v_a_opt", "pcs_nu", "i_ab", "chi_be", "skr_sym", "skr_bps")


def skr_curve(
    constellations: Sequence[str],
    params_template: QkdParams,
    t_grid: Sequence[float],
    optimize: bool = True,
    nu_grid: Sequence[float] = DEFAULT_NU_GRID,
    va_range=(0.01, 10.0),
    **kw,
) -> list[dict]:
    """Key-rate table over transmittance for each constellation name.

    With ``optimize`` the modulation variance is searched per point and the
    shaping parameter of PCS-QAM alphabets is searched over ``nu_grid``.
    """
    if len(t_grid) == 0:
        raise ValueError("empty transmittance grid")
    rows = []
    for name in constellations:
        shaped = name.upper().endswith("PCS-QAM")
        for t in t_grid:
            p = params_template.replace(t=float(t))
            best = None
            for nu in (nu_grid if shaped and optimize else [0.0]):
                c = constellation_by_name(name, nu)
                if optimize:
                    va, rep = optimize_va(c, p, va_range, **kw)
                else:
                    va, rep = p.v_a, skr(c, p, **kw)
                if best is None or rep.skr_per_symbol > best[1].skr_per_symbol:
                    best = (va, rep, c.pcs_nu)
            va, rep, nu = best
            rows.append(
                {
                    "constellation": name,
                    "T": float(t),
                    "T_db": 10 * math.log10(t) if t > 0 else float("-inf"),
                    "v_a_opt": va,
                    "pcs_nu": nu if nu is not None else "",
                    "i_ab": rep.i_ab,
                    "chi_be": rep.chi_be,
                    "skr_sym": rep.skr_per_symbol,
                    "skr_bps": rep.skr_bits_per_second,
                }
            )
    return rows
