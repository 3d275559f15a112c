"""GPS observation models, differencing operators, and sensor-frame models.

Carrier phases are stored in cycles everywhere and converted to meters only
inside model evaluations.  The external rangefinder/camera pair shares one
boresight frame: +z is the boresight, azimuth is the asin of the y-component
fraction, elevation the quadrant-aware angle of x against z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import L1_WAVELENGTH

__all__ = [
    "CarrierPhaseObs",
    "MeasurementEpoch",
    "SensorBiases",
    "PairingError",
    "FrameError",
    "BoresightError",
    "undifferenced_phase",
    "graphic",
    "single_difference",
    "double_difference",
    "sd_to_dd_matrix",
    "ddcp_geometry_row",
    "range_model",
    "bearing_model",
    "sensor_jacobian",
    "transform_jacobian",
    "relative_position_sensor_frame",
]


class PairingError(ValueError):
    """Differencing attempted across mismatched transmitters or receivers."""


class FrameError(ValueError):
    """A rotation matrix failed its orthonormality check."""


class BoresightError(ValueError):
    """Geometry is singular for the requested angle model or Jacobian."""


@dataclass
class CarrierPhaseObs:
    """One undifferenced L1 observation from one receiver.

    Attributes
    ----------
    phase : float
        Carrier phase [cycles].
    pseudorange : float
        Code pseudorange [m].
    gps_id : int
        Transmitting GPS satellite identifier.
    receiver_id : str
        Receiving spacecraft identifier.
    time : float
        Simulation epoch [s].
    c_n0 : float
        Carrier-to-noise density at the tracking loop [dB-Hz].
    """

    phase: float
    pseudorange: float
    gps_id: int
    receiver_id: str
    time: float
    c_n0: float = 45.0


@dataclass
class SensorBiases:
    """Constant biases of the external range/bearing sensors."""

    range_bias: float = 0.0       # m
    azimuth_bias: float = 0.0     # rad
    elevation_bias: float = 0.0   # rad

    def as_array(self) -> np.ndarray:
        return np.array([self.range_bias, self.azimuth_bias, self.elevation_bias])


@dataclass
class MeasurementEpoch:
    """Time-tagged bundle of everything the filter ingests at one epoch.

    ``graphic`` carries (gps_id, value [m]) pairs per receiver keyed by
    receiver id; ``sdcp`` carries (gps_id, value [cycles]) pairs differenced
    chief-minus-deputy.  ``attitude`` rotates ECI vectors into the sensor
    frame and must be tagged at the same time as the measurements.
    """

    time: float
    graphic: dict = field(default_factory=dict)        # receiver_id -> list[(gps_id, m)]
    sdcp: list = field(default_factory=list)           # list[(gps_id, cycles)]
    ddcp_reference: int = None
    range_obs: float = None                            # m, or None
    bearing_obs: tuple = None                          # (az, el) rad, or None
    attitude: np.ndarray = None                        # 3x3 DCM ECI -> sensor
    attitude_time: float = None
    gps_positions: dict = field(default_factory=dict)  # gps_id -> ECI position [m]
    # Direction-dependent extra measurement variance [m^2] keyed by row label
    # ("graphic:<receiver>:<gps_id>", "sdcp:<gps_id>", "range", ...), e.g.
    # from a calibrated multipath map; added to the filter's floor variances.
    noise_inflation: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.attitude_time is None:
            self.attitude_time = self.time
        if self.sdcp and self.ddcp_reference is not None:
            ids = {gid for gid, _ in self.sdcp}
            if self.ddcp_reference not in ids:
                raise PairingError("ddcp_reference not among the SDCP channels")


# ---------------------------------------------------------------------------
# Observables and combinations
# ---------------------------------------------------------------------------

def undifferenced_phase(geom_range, ambiguity, iono=0.0, rx_clock=0.0,
                        gps_clock=0.0, windup=0.0, noise=0.0,
                        wavelength=L1_WAVELENGTH):
    """Undifferenced carrier phase in cycles.

    ``lambda * phi = R + lambda*N + I + c dt_rx - c dt_gps + W + eps``; the
    clock terms are passed already scaled to meters.  The ionospheric term
    carries its own sign (negative for the carrier advance).

    Parameters
    ----------
    geom_range : float
        Geometric range transmitter-to-receiver [m].
    ambiguity : float
        Integer (or float) cycle ambiguity [cycles].
    iono, rx_clock, gps_clock, windup, noise : float
        Remaining model terms [m].
    wavelength : float
        Carrier wavelength [m].

    Returns
    -------
    float [cycles]
    """
    if wavelength <= 0.0:
        raise ValueError("wavelength must be positive")
    meters = (geom_range + wavelength * ambiguity + iono
              + rx_clock - gps_clock + windup + noise)
    return meters / wavelength


def graphic(pseudorange, phase, wavelength=L1_WAVELENGTH):
    """GRoup And PHase Ionospheric Correction: half code plus half carrier.

    The first-order ionospheric delay enters the code positively and the
    carrier negatively, so the average is ionosphere-free; it retains the
    geometric range, receiver/transmitter clocks, and half the wavelength
    times the ambiguity.

    Parameters
    ----------
    pseudorange : float
        Code pseudorange [m].
    phase : float
        Carrier phase [cycles].
    wavelength : float
        Carrier wavelength [m].

    Returns
    -------
    float [m]
    """
    return 0.5 * pseudorange + 0.5 * wavelength * phase


def _phase_value(obs):
    return obs.phase if isinstance(obs, CarrierPhaseObs) else obs


def single_difference(obs_a, obs_b):
    """Between-receiver difference of one GPS satellite's observable.

    Accepts raw values (cycles or meters) or :class:`CarrierPhaseObs`; in the
    latter case the transmitter identifiers must match.
    """
    if isinstance(obs_a, CarrierPhaseObs) and isinstance(obs_b, CarrierPhaseObs):
        if obs_a.gps_id != obs_b.gps_id:
            raise PairingError(
                f"single difference across GPS ids {obs_a.gps_id} != {obs_b.gps_id}")
    return _phase_value(obs_a) - _phase_value(obs_b)


def double_difference(sd_p, sd_q):
    """Between-satellite difference of two single differences."""
    return sd_p - sd_q


def sd_to_dd_matrix(n_channels, reference_index):
    """Differencing matrix mapping single differences to double differences.

    Row i of the result is ``e_i - e_ref`` for each non-reference channel, so
    ``dd = T @ sd``.  For iid single differences the DD covariance is
    ``T T^T`` = 2 on the diagonal and 1 off it.

    Parameters
    ----------
    n_channels : int
        Number of single-difference channels.
    reference_index : int
        Index of the reference satellite's channel.

    Returns
    -------
    ndarray, shape (n_channels - 1, n_channels)
    """
    if not 0 <= reference_index < n_channels:
        raise IndexError("reference channel out of range")
    rows = []
    for i in range(n_channels):
        if i == reference_index:
            continue
        r = np.zeros(n_channels)
        r[i] = 1.0
        r[reference_index] = -1.0
        rows.append(r)
    return np.array(rows) if rows else np.zeros((0, n_channels))


def ddcp_geometry_row(los_p, los_q):
    """Double-difference geometry row: difference of two unit lines of sight."""
    p = np.asarray(los_p, dtype=float)
    q = np.asarray(los_q, dtype=float)
    for v in (p, q):
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError("line-of-sight vectors must be unit norm")
    return p - q


# ---------------------------------------------------------------------------
# External sensor models
# ---------------------------------------------------------------------------

def relative_position_sensor_frame(r_chief, r_deputy, dcm_eci_to_sensor):
    """Deputy-minus-chief position rotated into the sensor frame [m]."""
    return np.asarray(dcm_eci_to_sensor) @ (np.asarray(r_deputy, dtype=float)
                                            - np.asarray(r_chief, dtype=float))


def range_model(rel_pos_sensor_frame, biases: SensorBiases = None):
    """Measured inter-satellite range: Euclidean norm plus range bias [m]."""
    rho = np.asarray(rel_pos_sensor_frame, dtype=float)
    r = float(np.linalg.norm(rho))
    if r == 0.0:
        raise BoresightError("range undefined for coincident spacecraft")
    return r + (biases.range_bias if biases is not None else 0.0)


def bearing_model(rel_pos_sensor_frame, biases: SensorBiases = None):
    """Azimuth/elevation of the deputy in the sensor frame [rad].

    Azimuth is ``asin(y / range)``; elevation is ``atan2(x, z)``, which is
    quadrant-aware and therefore well defined even behind the boresight
    plane.  Both singularities coincide: a target exactly on the y-axis.

    Returns
    -------
    (float, float)
        azimuth, elevation [rad], biases added.
    """
    rho = np.asarray(rel_pos_sensor_frame, dtype=float)
    x, y, z = rho
    r = float(np.linalg.norm(rho))
    if r == 0.0:
        raise BoresightError("bearing undefined for coincident spacecraft")
    if x == 0.0 and z == 0.0:
        raise BoresightError("elevation singular for a target on the y-axis")
    az = math.asin(max(-1.0, min(1.0, y / r)))
    el = math.atan2(x, z)
    if biases is not None:
        az += biases.azimuth_bias
        el += biases.elevation_bias
    return az, el


def sensor_jacobian(rel_pos_sensor_frame):
    """Partials of (range, azimuth, elevation) w.r.t. the sensor-frame
    relative position.

    Rows, with ``R = |rho|`` and ``s = sqrt(x^2 + z^2)``::

        dR/drho  =  (x, y, z) / R
        dAz/drho =  (-x y, x^2 + z^2, -y z) / (R^2 s)
        dEl/drho =  (z, 0, -x) / s^2

    Raises
    ------
    BoresightError
        When the target sits on the y-axis (s = 0) or at the origin.
    """
    rho = np.asarray(rel_pos_sensor_frame, dtype=float)
    x, y, z = rho
    r2 = float(rho @ rho)
    s2 = x * x + z * z
    if r2 == 0.0 or s2 == 0.0:
        raise BoresightError("Jacobian singular at this geometry")
    r = math.sqrt(r2)
    s = math.sqrt(s2)
    return np.array([
        [x / r, y / r, z / r],
        [-x * y / (r2 * s), s2 / (r2 * s), -y * z / (r2 * s)],
        [z / s2, 0.0, -x / s2],
    ])


def transform_jacobian(h_sensor, dcm_eci_to_sensor):
    """Chain a sensor-frame Jacobian through the ECI-to-sensor rotation.

    ``d(obs)/d(r_eci) = H_sensor @ dcm`` for the deputy position; negate for
    the chief (the relative position is deputy minus chief).
    """
    dcm = np.asarray(dcm_eci_to_sensor, dtype=float)
    if dcm.shape != (3, 3) or not np.allclose(dcm @ dcm.T, np.eye(3), atol=1e-9):
        raise FrameError("attitude matrix is not orthonormal")
    return np.asarray(h_sensor, dtype=float) @ dcm
