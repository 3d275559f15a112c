"""Measurement error generation: link budget, thermal noise, multipath,
receiver clock random walk, broadcast ionosphere, and ephemeris corruption.

The thermal-noise model is a standard coherent DLL/PLL variance family with
noise floors calibrated once against a 45 dB-Hz anchor (0.20 m code, 2.0 mm
carrier); every other carrier-to-noise ratio then follows from the same
formulas.  Multipath is a simplified azimuth/elevation footprint model: a
near-field cos^2 elevation term plus a far-field Gaussian blob centered on
the partner spacecraft's direction.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .constants import (
    CA_CHIP_LENGTH,
    L1_FREQUENCY,
    L1_WAVELENGTH,
    SPEED_OF_LIGHT,
)

__all__ = [
    "LinkBudget",
    "MultipathParams",
    "RoeError",
    "LossOfLockError",
    "free_space_path_loss",
    "carrier_to_noise",
    "thermal_noise_sigmas",
    "pll_thermal_sigma",
    "dll_thermal_sigma",
    "multipath_sigma",
    "multipath_near",
    "multipath_far",
    "multipath_map_rows",
    "clock_random_walk",
    "klobuchar_delay",
    "DEFAULT_KLOBUCHAR_ALPHA",
    "DEFAULT_KLOBUCHAR_BETA",
    "roe_to_rtn",
    "inject_roe_error",
    "calibrate_roe",
    "substream",
]


class LossOfLockError(RuntimeError):
    """Signal power below the receiver tracking threshold."""


# ---------------------------------------------------------------------------
# Link budget
# ---------------------------------------------------------------------------

@dataclass
class LinkBudget:
    """One column of a space-to-space GPS L1 link budget (dB bookkeeping).

    Losses are stored as negative dB values and summed directly.
    """

    frequency: float = 1575.42              # MHz
    pll_bandwidth: float = 15.0             # Hz
    rx_antenna_gain: float = 33.0           # dB
    rx_circuit_loss: float = -1.0           # dB
    rx_polarization_loss: float = -1.0      # dB
    gps_antenna_gain: float = 13.5          # dB
    gps_transmit_power: float = 14.25       # dBW
    gps_transmit_loss: float = -1.25        # dB
    atmospheric_loss: float = -0.10         # dB
    slant_range: float = 20_000.0           # km
    noise_spectral_density: float = -169.919  # dBW/Hz

    @property
    def gps_eirp(self) -> float:
        """Effective isotropic radiated power [dBW]."""
        return self.gps_transmit_power + self.gps_transmit_loss + self.gps_antenna_gain

    @property
    def path_loss(self) -> float:
        return free_space_path_loss(self.slant_range, self.frequency)

    @property
    def carrier_power(self) -> float:
        """Received carrier power C [dBW]: EIRP plus every gain and loss."""
        return (self.gps_eirp + self.rx_antenna_gain + self.rx_circuit_loss
                + self.rx_polarization_loss + self.atmospheric_loss
                + self.path_loss)

    @classmethod
    def leo_mainlobe(cls) -> "LinkBudget":
        """Mainlobe reception across a ~20,000 km slant range."""
        return cls()

    @classmethod
    def geo_sidelobe(cls) -> "LinkBudget":
        """Sidelobe reception from the far side of the constellation."""
        return cls(gps_antenna_gain=-3.0, slant_range=80_000.0)


def free_space_path_loss(range_km, freq_mhz):
    """Free-space path loss, returned as a negative dB quantity.

    Parameters
    ----------
    range_km : float
        Slant range [km].
    freq_mhz : float
        Carrier frequency [MHz].
    """
    if range_km <= 0.0 or freq_mhz <= 0.0:
        raise ValueError("range and frequency must be positive")
    wavelength = SPEED_OF_LIGHT / (freq_mhz * 1e6)
    return -20.0 * math.log10(4.0 * math.pi * range_km * 1e3 / wavelength)


def carrier_to_noise(budget: LinkBudget) -> float:
    """Carrier-to-noise density ratio C/N0 [dB-Hz]."""
    return budget.carrier_power - budget.noise_spectral_density


# ---------------------------------------------------------------------------
# Thermal noise
# ---------------------------------------------------------------------------

# Tracking-loop configuration shared by both spacecraft receivers (narrow
# correlator, 25 ms coherent integration).
DLL_BANDWIDTH = 0.02          # Hz
DLL_CORRELATOR_SPACING = 0.2  # chips
COHERENT_INTEGRATION = 0.025  # s
TRACKING_THRESHOLD = 15.0     # dB-Hz

# Calibration anchor: at this C/N0 the total sigmas must equal these values.
_ANCHOR_CN0 = 45.0
_ANCHOR_CODE_SIGMA = 0.20     # m
_ANCHOR_PHASE_SIGMA = 2.0e-3  # m


def dll_thermal_sigma(c_n0_dbhz, chip_length=CA_CHIP_LENGTH,
                      bandwidth=DLL_BANDWIDTH, spacing=DLL_CORRELATOR_SPACING,
                      t_int=COHERENT_INTEGRATION):
    """Coherent early-late DLL thermal noise (floor-free component) [m]."""
    cn0 = 10.0 ** (c_n0_dbhz / 10.0)
    var = (chip_length ** 2) * (spacing * bandwidth / (2.0 * cn0)) \
        * (1.0 + 2.0 / ((2.0 - spacing) * t_int * cn0))
    return math.sqrt(var)


def pll_thermal_sigma(c_n0_dbhz, wavelength=L1_WAVELENGTH,
                      bandwidth=None, t_int=COHERENT_INTEGRATION):
    """Costas-loop PLL thermal noise (floor-free component) [m].

    Follows the inverse-square-root carrier-to-noise law: +6 dB on C/N0
    halves the value (asymptotically; the squaring-loss term adds a small
    correction at low C/N0).
    """
    if bandwidth is None:
        bandwidth = 15.0
    cn0 = 10.0 ** (c_n0_dbhz / 10.0)
    var = (wavelength / (2.0 * math.pi)) ** 2 * (bandwidth / cn0) \
        * (1.0 + 1.0 / (2.0 * t_int * cn0))
    return math.sqrt(var)


def _noise_floors(pll_bw):
    """Noise floors making the total sigmas hit the anchor exactly."""
    code_component = dll_thermal_sigma(_ANCHOR_CN0)
    phase_component = pll_thermal_sigma(_ANCHOR_CN0, bandwidth=pll_bw)
    floor_code_sq = _ANCHOR_CODE_SIGMA ** 2 - code_component ** 2
    floor_phase_sq = _ANCHOR_PHASE_SIGMA ** 2 - phase_component ** 2
    if floor_code_sq < 0.0 or floor_phase_sq < 0.0:
        raise ValueError("anchor sigmas below the floor-free thermal noise")
    return math.sqrt(floor_code_sq), math.sqrt(floor_phase_sq)


def thermal_noise_sigmas(c_n0_dbhz, pll_bw=15.0, wavelength=L1_WAVELENGTH,
                         threshold=TRACKING_THRESHOLD):
    """Code and carrier thermal noise standard deviations [m].

    Root-sum-square of a fixed receiver noise floor (calibrated once at the
    45 dB-Hz anchor) with the C/N0-dependent tracking-loop thermal noise.

    Raises
    ------
    LossOfLockError
        If ``c_n0_dbhz`` is below the tracking threshold.
    """
    if c_n0_dbhz < threshold:
        raise LossOfLockError(
            f"C/N0 {c_n0_dbhz:.2f} dB-Hz below threshold {threshold:.2f}")
    floor_code, floor_phase = _noise_floors(pll_bw)
    sigma_code = math.hypot(floor_code, dll_thermal_sigma(c_n0_dbhz))
    sigma_phase = math.hypot(
        floor_phase, pll_thermal_sigma(c_n0_dbhz, wavelength, pll_bw))
    return sigma_code, sigma_phase


# ---------------------------------------------------------------------------
# Multipath
# ---------------------------------------------------------------------------

@dataclass
class MultipathParams:
    """Near/far-field multipath footprint parameters.

    ``target_direction`` and ``target_range`` locate the far-field reflector
    (the partner spacecraft) in the sensor frame; ``size_factor`` scales the
    angular footprint it casts (larger reflector, wider footprint).
    """

    amplitude_code: float = 0.0    # m
    amplitude_phase: float = 0.0   # m
    size_factor: float = 1.0       # unitless
    target_direction: tuple = (0.0, 0.0)  # (azimuth, elevation) rad
    target_range: float = 0.0      # m; 0 disables the far-field term

    def __post_init__(self):
        if self.amplitude_code < 0.0 or self.amplitude_phase < 0.0:
            raise ValueError("multipath amplitudes must be nonnegative")
        if self.size_factor <= 0.0:
            raise ValueError("size factor must be positive")

    def amplitude(self, kind):
        if kind == "code":
            return self.amplitude_code
        if kind == "phase":
            return self.amplitude_phase
        raise ValueError(f"unknown multipath kind {kind!r}")


def multipath_near(amplitude, elevation_q):
    """Near-field term: local-appendage shadowing, elevation-dependent [m]."""
    c = math.cos(elevation_q)
    return amplitude * c * c


def multipath_far(amplitude, size_factor, target_range, target_az, target_el,
                  query_az, query_el):
    """Far-field term: Gaussian footprint around the reflector direction [m].

    Range enters twice: the peak shrinks as ``A/(A R + 1)^2`` with distance,
    and the footprint tightens as ``exp(-(R/S) * angular separation^2)``.
    """
    if target_range <= 0.0:
        return 0.0
    da = query_az - target_az
    de = query_el - target_el
    peak = amplitude / (amplitude * target_range + 1.0) ** 2
    return peak * math.exp(-(target_range / size_factor) * (da * da + de * de))


def multipath_sigma(params: MultipathParams, query_az, query_el, kind="phase"):
    """Total multipath standard deviation for a signal arriving from the
    queried direction [m]: near-field plus far-field terms."""
    a = params.amplitude(kind)
    near = multipath_near(a, query_el)
    far = multipath_far(a, params.size_factor, params.target_range,
                        params.target_direction[0], params.target_direction[1],
                        query_az, query_el)
    return near + far


def multipath_map_rows(params: MultipathParams, kind="phase", n_az=73, n_el=37):
    """Grid of (azimuth, elevation, sigma) rows spanning the full sky.

    Intended for CSV export/plotting of the footprint model.
    """
    azs = np.linspace(-math.pi, math.pi, n_az)
    els = np.linspace(-math.pi / 2.0, math.pi / 2.0, n_el)
    rows = []
    for el in els:
        for az in azs:
            rows.append((az, el, multipath_sigma(params, az, el, kind)))
    return rows


# ---------------------------------------------------------------------------
# Receiver clock
# ---------------------------------------------------------------------------

def clock_random_walk(state, dt, rng, sigma_per_sqrt_s=1.0):
    """Advance a receiver clock error state [m] by one random-walk step.

    The increment standard deviation is ``sigma * sqrt(dt)`` so the variance
    grows linearly with elapsed time.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if sigma_per_sqrt_s == 0.0:
        return state
    return state + rng.normal(scale=sigma_per_sqrt_s * math.sqrt(dt))


# ---------------------------------------------------------------------------
# Ionosphere (broadcast Klobuchar model)
# ---------------------------------------------------------------------------

# Representative broadcast coefficient set (classic textbook example values).
DEFAULT_KLOBUCHAR_ALPHA = (3.82e-9, 1.49e-8, -1.79e-7, 0.0)
DEFAULT_KLOBUCHAR_BETA = (1.43e5, 0.0, -3.28e5, 1.13e5)

_SC = 1.0 / math.pi  # radians -> semicircles


def klobuchar_delay(receiver_pos, los, time_of_day,
                    alpha=DEFAULT_KLOBUCHAR_ALPHA,
                    beta=DEFAULT_KLOBUCHAR_BETA):
    """Broadcast-model ionospheric group delay along a line of sight [m].

    Standard single-frequency broadcast algorithm: obliquity from elevation,
    pierce-point geomagnetic latitude from receiver latitude/azimuth, and a
    half-cosine diurnal bump over a 5 ns night-time floor.  The position is
    treated as Earth-fixed for the latitude/longitude extraction (adequate
    for an error model whose differential contribution cancels downstream).

    Returns a nonnegative delay; apply as +delay on code, -delay on carrier.
    """
    r = np.asarray(receiver_pos, dtype=float)
    u = np.asarray(los, dtype=float)
    u = u / np.linalg.norm(u)
    rn = np.linalg.norm(r)
    if rn == 0.0:
        raise ValueError("receiver position must be nonzero")
    up = r / rn
    # Elevation of the line of sight above the local horizon.
    elev = math.asin(max(-1.0, min(1.0, float(up @ u))))
    elev_sc = elev * _SC
    # Local east/north axes for the azimuth of the ray.
    east = np.cross([0.0, 0.0, 1.0], up)
    en = np.linalg.norm(east)
    if en < 1e-12:
        east = np.array([1.0, 0.0, 0.0])
    else:
        east = east / en
    north = np.cross(up, east)
    azim = math.atan2(float(u @ east), float(u @ north))

    lat_sc = math.asin(max(-1.0, min(1.0, up[2]))) * _SC
    lon_sc = math.atan2(r[1], r[0]) * _SC

    # Earth-centered angle to the pierce point, then its coordinates.
    psi = 0.0137 / (elev_sc + 0.11) - 0.022
    phi_i = lat_sc + psi * math.cos(azim)
    phi_i = max(-0.416, min(0.416, phi_i))
    lam_i = lon_sc + psi * math.sin(azim) / math.cos(phi_i * math.pi)
    phi_m = phi_i + 0.064 * math.cos((lam_i - 1.617) * math.pi)

    t = 4.32e4 * lam_i + time_of_day
    t = t % 86400.0

    amp = sum(a * phi_m ** n for n, a in enumerate(alpha))
    per = sum(b * phi_m ** n for n, b in enumerate(beta))
    amp = max(amp, 0.0)
    per = max(per, 72_000.0)

    x = 2.0 * math.pi * (t - 50_400.0) / per
    obliquity = 1.0 + 16.0 * (0.53 - elev_sc) ** 3
    if abs(x) < 1.57:
        t_iono = obliquity * (5.0e-9 + amp * (1.0 - x * x / 2.0 + x ** 4 / 24.0))
    else:
        t_iono = obliquity * 5.0e-9
    return SPEED_OF_LIGHT * t_iono


# ---------------------------------------------------------------------------
# Broadcast ephemeris corruption via relative orbital elements
# ---------------------------------------------------------------------------

@dataclass
class RoeError:
    """Relative-orbital-element corruption of a broadcast ephemeris.

    ``offsets`` is (da, dlambda, dex, dey, dix, diy) — dimensionless
    semimajor-axis fraction, along-track shift, eccentricity vector, and
    inclination vector deltas.  ``da`` must be zero so the injected error is
    purely periodic (no along-track drift).
    """

    offsets: np.ndarray = field(default_factory=lambda: np.zeros(6))
    target_rms: float = 0.0  # m

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=float)
        if self.offsets.shape != (6,):
            raise ValueError("offsets must be a 6-vector")
        if self.offsets[0] != 0.0:
            raise ValueError("semimajor-axis offset must be zero (no drift)")


def roe_to_rtn(offsets, semimajor_axis, arg_latitude):
    """First-order near-circular map from ROE offsets to an RTN error [m].

    Radial:      a (da - dex cos u - dey sin u)
    Transverse:  a (-1.5 da u + dl + 2 dex sin u - 2 dey cos u)
    Normal:      a (dix sin u - diy cos u)
    """
    da, dl, dex, dey, dix, diy = np.asarray(offsets, dtype=float)
    u = float(arg_latitude)
    a = float(semimajor_axis)
    radial = da - dex * math.cos(u) - dey * math.sin(u)
    transverse = -1.5 * da * u + dl + 2.0 * dex * math.sin(u) - 2.0 * dey * math.cos(u)
    normal = dix * math.sin(u) - diy * math.cos(u)
    return a * np.array([radial, transverse, normal])


def calibrate_roe(target_rms, semimajor_axis) -> RoeError:
    """Choose drift-free ROE offsets whose orbit-averaged RMS position error
    equals ``target_rms``.

    With equal weight s on (dl, dex, dey, dix, diy), the mean-square error
    over one orbit is a^2 s^2 (1 + 2.5*2 + 0.5*2) = 7 a^2 s^2.
    """
    s = target_rms / (semimajor_axis * math.sqrt(7.0))
    return RoeError(offsets=np.array([0.0, s, s, s, s, s]),
                    target_rms=target_rms)


def inject_roe_error(position, velocity, roe: RoeError):
    """Corrupt an ECI ephemeris position by the mapped ROE error [m].

    The argument of latitude and RTN axes are derived from the true
    position/velocity; the mapped RTN error is rotated into ECI and added.
    """
    r = np.asarray(position, dtype=float)
    v = np.asarray(velocity, dtype=float)
    rn = np.linalg.norm(r)
    h = np.cross(r, v)
    hn = np.linalg.norm(h)
    if rn == 0.0 or hn == 0.0:
        raise ValueError("degenerate orbit state")
    radial = r / rn
    normal = h / hn
    transverse = np.cross(normal, radial)
    # Argument of latitude from the ascending node direction.
    node = np.cross([0.0, 0.0, 1.0], normal)
    nn = np.linalg.norm(node)
    if nn < 1e-12:
        node = np.array([1.0, 0.0, 0.0])
    else:
        node = node / nn
    cos_u = float(node @ radial)
    sin_u = float(np.cross(node, radial) @ normal)
    u = math.atan2(sin_u, cos_u)

    # Semimajor axis from the vis-viva relation (mu from h and r would need
    # more state; near-circular GPS orbits make |r| an adequate proxy).
    a = rn
    err_rtn = roe_to_rtn(roe.offsets, a, u)
    rot = np.column_stack([radial, transverse, normal])
    return r + rot @ err_rtn


# ---------------------------------------------------------------------------
# Reproducible substreams
# ---------------------------------------------------------------------------

def substream(seed, name):
    """Independent, named, deterministic random generator.

    All stochastic error models in a scenario draw from substreams of one
    seed so that runs are bit-reproducible and models are decoupled (adding
    draws to one model never shifts another's sequence).
    """
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))
