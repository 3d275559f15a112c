"""Orbit propagation, GPS constellation geometry, visibility, and frames.

Truth and filter propagation share one fixed-step RK4 integrator over
two-body + J2 dynamics plus an RTN-resolved empirical acceleration; the
deliberate difference between truth and filter is confined to the
acceleration profiles handed in, which is what the filter's empirical
acceleration states are there to absorb.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .constants import (
    GPS_INCLINATION,
    GPS_MAINLOBE_HALFCONE,
    GPS_NUM_PLANES,
    GPS_NUM_SATELLITES,
    GPS_SEMIMAJOR_AXIS,
    GPS_SIDELOBE_HALFCONE,
    ATMOSPHERE_MASK_HEIGHT,
    J2_EARTH,
    MU_EARTH,
    R_EARTH,
)

__all__ = [
    "OrbitState",
    "GpsConstellation",
    "PropagationError",
    "DegenerateFrameError",
    "acceleration",
    "propagate",
    "specific_energy",
    "rtn_frame",
    "visibility",
    "kepler_elements_to_state",
    "default_constellation",
]


class PropagationError(RuntimeError):
    """Trajectory left the valid domain (e.g. struck the Earth)."""


class DegenerateFrameError(ValueError):
    """Position and velocity do not span a plane."""


@dataclass
class OrbitState:
    """Inertial translational state of one spacecraft."""

    position: np.ndarray   # ECI, m
    velocity: np.ndarray   # ECI, m/s
    epoch: float = 0.0     # s

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        if not (np.all(np.isfinite(self.position)) and np.all(np.isfinite(self.velocity))):
            raise ValueError("state must be finite")

    @property
    def radius(self) -> float:
        return float(np.linalg.norm(self.position))

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.velocity))


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------

def acceleration(position, include_j2=True, mu=MU_EARTH, j2=J2_EARTH,
                 r_body=R_EARTH):
    """Two-body plus (optionally) J2 gravitational acceleration [m/s^2]."""
    r = np.asarray(position, dtype=float)
    rn2 = float(r @ r)
    rn = math.sqrt(rn2)
    a = -mu / (rn2 * rn) * r
    if include_j2:
        z2_r2 = r[2] * r[2] / rn2
        k = -1.5 * mu * j2 * r_body * r_body / (rn2 * rn2 * rn)
        a = a + k * np.array([
            r[0] * (1.0 - 5.0 * z2_r2),
            r[1] * (1.0 - 5.0 * z2_r2),
            r[2] * (3.0 - 5.0 * z2_r2),
        ])
    return a


def specific_energy(state: OrbitState, include_j2=True, mu=MU_EARTH,
                    j2=J2_EARTH, r_body=R_EARTH) -> float:
    """Conserved energy of the (two-body [+ J2]) motion [m^2/s^2]."""
    r = state.radius
    e = 0.5 * state.speed ** 2 - mu / r
    if include_j2:
        z2_r2 = state.position[2] ** 2 / r ** 2
        e += mu * j2 * r_body * r_body * (3.0 * z2_r2 - 1.0) / (2.0 * r ** 3)
    return e


def rtn_frame(state: OrbitState) -> np.ndarray:
    """DCM rotating ECI vectors into the radial/transverse/normal frame.

    Rows are R-hat (along position), T-hat (completing the triad, along
    velocity for circular orbits), N-hat (along orbital angular momentum).
    """
    r = state.position
    v = state.velocity
    h = np.cross(r, v)
    hn = np.linalg.norm(h)
    rn = np.linalg.norm(r)
    if rn == 0.0 or hn < 1e-9 * max(rn * np.linalg.norm(v), 1.0):
        raise DegenerateFrameError("position and velocity are parallel")
    radial = r / rn
    normal = h / hn
    transverse = np.cross(normal, radial)
    return np.vstack([radial, transverse, normal])


def _derivative(y, empirical_rtn, include_j2):
    r = y[:3]
    v = y[3:]
    a = acceleration(r, include_j2=include_j2)
    if empirical_rtn is not None:
        st = OrbitState(r, v)
        a = a + rtn_frame(st).T @ empirical_rtn
    return np.concatenate([v, a])


def propagate(state: OrbitState, dt, empirical_accel_rtn=None,
              include_j2=True, max_step=10.0) -> OrbitState:
    """Advance an orbit state by ``dt`` seconds with fixed-step RK4.

    Parameters
    ----------
    state : OrbitState
    dt : float
        Propagation interval [s] (> 0).
    empirical_accel_rtn : array_like, shape (3,), optional
        Constant empirical acceleration over the interval, resolved in the
        instantaneous RTN frame of the propagated craft [m/s^2].
    include_j2 : bool
        Include the J2 zonal term.
    max_step : float
        RK4 substep ceiling [s]; the interval is split evenly.

    Raises
    ------
    PropagationError
        If the trajectory descends below the Earth's surface.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    emp = None if empirical_accel_rtn is None else np.asarray(empirical_accel_rtn, dtype=float)
    n_steps = max(1, int(math.ceil(dt / max_step)))
    h = dt / n_steps
    y = np.concatenate([state.position, state.velocity])
    for _ in range(n_steps):
        k1 = _derivative(y, emp, include_j2)
        k2 = _derivative(y + 0.5 * h * k1, emp, include_j2)
        k3 = _derivative(y + 0.5 * h * k2, emp, include_j2)
        k4 = _derivative(y + h * k3, emp, include_j2)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if float(np.linalg.norm(y[:3])) < R_EARTH:
            raise PropagationError("trajectory descended below the surface")
    return OrbitState(y[:3], y[3:], epoch=state.epoch + dt)


# ---------------------------------------------------------------------------
# GPS constellation
# ---------------------------------------------------------------------------

def _kepler_solve(mean_anomaly, ecc, tol=1e-12):
    """Newton iteration for the eccentric anomaly."""
    m = math.fmod(mean_anomaly, 2.0 * math.pi)
    e_anom = m if ecc < 0.8 else math.pi
    for _ in range(60):
        f = e_anom - ecc * math.sin(e_anom) - m
        e_anom -= f / (1.0 - ecc * math.cos(e_anom))
        if abs(f) < tol:
            break
    return e_anom


def kepler_elements_to_state(a, e, inc, raan, argp, mean_anomaly, at_time=0.0,
                             mu=MU_EARTH) -> OrbitState:
    """Two-body state from classical elements at ``at_time`` seconds past
    the element epoch."""
    n = math.sqrt(mu / a ** 3)
    m = mean_anomaly + n * at_time
    e_anom = _kepler_solve(m, e)
    cos_e, sin_e = math.cos(e_anom), math.sin(e_anom)
    r_mag = a * (1.0 - e * cos_e)
    # Perifocal position/velocity.
    x_p = a * (cos_e - e)
    y_p = a * math.sqrt(1.0 - e * e) * sin_e
    vx_p = -a * n * sin_e / (1.0 - e * cos_e)
    vy_p = a * n * math.sqrt(1.0 - e * e) * cos_e / (1.0 - e * cos_e)

    cr, sr = math.cos(raan), math.sin(raan)
    ci, si = math.cos(inc), math.sin(inc)
    cw, sw = math.cos(argp), math.sin(argp)
    rot = np.array([
        [cr * cw - sr * sw * ci, -cr * sw - sr * cw * ci, sr * si],
        [sr * cw + cr * sw * ci, -sr * sw + cr * cw * ci, -cr * si],
        [sw * si, cw * si, ci],
    ])
    pos = rot @ np.array([x_p, y_p, 0.0])
    vel = rot @ np.array([vx_p, vy_p, 0.0])
    return OrbitState(pos, vel, epoch=at_time)


@dataclass
class GpsConstellation:
    """Transmitting constellation: element sets plus antenna cone geometry.

    Each satellite is a dict with keys a, e, inc, raan, argp, mean_anomaly
    (SI units, radians).  Boresights point at nadir.
    """

    satellites: list = field(default_factory=list)
    mainlobe_halfcone: float = GPS_MAINLOBE_HALFCONE
    sidelobe_halfcone: float = GPS_SIDELOBE_HALFCONE

    def state_at(self, sat_index, time) -> OrbitState:
        el = self.satellites[sat_index]
        return kepler_elements_to_state(
            el["a"], el["e"], el["inc"], el["raan"], el["argp"],
            el["mean_anomaly"], at_time=time)

    def __len__(self):
        return len(self.satellites)

    def to_dict(self) -> dict:
        return {
            "mainlobe_halfcone": self.mainlobe_halfcone,
            "sidelobe_halfcone": self.sidelobe_halfcone,
            "satellites": [dict(s) for s in self.satellites],
        }

    @classmethod
    def from_dict(cls, d) -> "GpsConstellation":
        return cls(
            satellites=[dict(s) for s in d["satellites"]],
            mainlobe_halfcone=d.get("mainlobe_halfcone", GPS_MAINLOBE_HALFCONE),
            sidelobe_halfcone=d.get("sidelobe_halfcone", GPS_SIDELOBE_HALFCONE),
        )

    @classmethod
    def from_json(cls, path) -> "GpsConstellation":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def default_constellation() -> GpsConstellation:
    """Representative 31-satellite GPS constellation: six 55-degree planes
    with one plane carrying the extra satellite."""
    per_plane = [6, 5, 5, 5, 5, 5]
    assert sum(per_plane) == GPS_NUM_SATELLITES and len(per_plane) == GPS_NUM_PLANES
    sats = []
    for plane, count in enumerate(per_plane):
        raan = 2.0 * math.pi * plane / GPS_NUM_PLANES
        phase_offset = 2.0 * math.pi * plane / (GPS_NUM_PLANES * max(per_plane))
        for slot in range(count):
            sats.append({
                "a": GPS_SEMIMAJOR_AXIS,
                "e": 0.0,
                "inc": GPS_INCLINATION,
                "raan": raan,
                "argp": 0.0,
                "mean_anomaly": 2.0 * math.pi * slot / count + phase_offset,
            })
    return GpsConstellation(satellites=sats)


# ---------------------------------------------------------------------------
# Visibility
# ---------------------------------------------------------------------------

def _segment_occluded(p0, p1, mask_radius):
    """True if the p0-p1 segment pierces the masking sphere."""
    d = p1 - p0
    dd = float(d @ d)
    if dd == 0.0:
        return float(np.linalg.norm(p0)) < mask_radius
    t = -float(p0 @ d) / dd
    t = max(0.0, min(1.0, t))
    closest = p0 + t * d
    return float(np.linalg.norm(closest)) < mask_radius


def _arrival_direction(los_sensor):
    """Azimuth/elevation of an arrival direction, tolerant at the y-axis."""
    x, y, z = los_sensor
    az = math.asin(max(-1.0, min(1.0, y / float(np.linalg.norm(los_sensor)))))
    el = math.atan2(x, z) if (x != 0.0 or z != 0.0) else 0.0
    return az, el


def visibility(receiver: OrbitState, gps: OrbitState,
               constellation: GpsConstellation, mode="mainlobe",
               dcm_eci_to_sensor=None):
    """Line-of-sight and antenna-cone check for one receiver/GPS pair.

    Parameters
    ----------
    receiver, gps : OrbitState
        Both at the same epoch.
    constellation : GpsConstellation
        Supplies the transmit cone half-angles.
    mode : "mainlobe" | "sidelobe"
        Sidelobe mode accepts any off-boresight angle up to the sidelobe
        half-cone (which contains the mainlobe).
    dcm_eci_to_sensor : ndarray, optional
        Receiver attitude for expressing the arrival direction; identity if
        omitted.

    Returns
    -------
    (bool, (azimuth, elevation) or None)
        Visibility flag and, when visible, the signal arrival direction in
        the receiver sensor frame [rad].
    """
    if mode == "mainlobe":
        halfcone = constellation.mainlobe_halfcone
    elif mode == "sidelobe":
        halfcone = constellation.sidelobe_halfcone
    else:
        raise ValueError(f"unknown visibility mode {mode!r}")

    mask_radius = R_EARTH + ATMOSPHERE_MASK_HEIGHT
    if _segment_occluded(receiver.position, gps.position, mask_radius):
        return False, None

    # Off-boresight angle at the transmitter (boresight = nadir).
    to_receiver = receiver.position - gps.position
    boresight = -gps.position
    cosang = float(to_receiver @ boresight) / (
        np.linalg.norm(to_receiver) * np.linalg.norm(boresight))
    off_boresight = math.acos(max(-1.0, min(1.0, cosang)))
    if off_boresight > halfcone:
        return False, None

    los = gps.position - receiver.position
    los = los / np.linalg.norm(los)
    if dcm_eci_to_sensor is not None:
        los = np.asarray(dcm_eci_to_sensor) @ los
    return True, _arrival_direction(los)
