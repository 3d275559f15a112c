"""Extended Kalman filter for two-spacecraft relative navigation.

State vector (71 elements):

====================  ========  ==============================================
block                 indices   contents
====================  ========  ==============================================
chief position        0:3       ECI [m]
chief velocity        3:6       ECI [m/s]
chief empirical acc   6:9       RTN [m/s^2], first-order Gauss-Markov
chief clock           9         receiver clock error [m], random walk
deputy (same layout)  10:20
zero-diff ambiguities 20:44     24 channels, chief undifferenced floats [cy]
single-diff ambs      44:68     24 channels, chief-minus-deputy floats [cy]
sensor biases         68:71     range [m], azimuth [rad], elevation [rad]
====================  ========  ==============================================

Ambiguity channels are slots keyed to GPS satellites; a slot freed for a new
satellite restarts at the initialization variance.  GRAPHIC observations see
the zero-difference float of the observing receiver (the deputy's is the
chief's minus the single difference), single-differenced carrier phase sees
the single-difference float, and the external range/bearing sensors see the
relative position plus their biases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import ARCSEC, J2_EARTH, L1_WAVELENGTH, MU_EARTH, R_EARTH
from .iar import success_rate
from .measurements import (
    MeasurementEpoch,
    SensorBiases,
    bearing_model,
    range_model,
    sensor_jacobian,
    transform_jacobian,
)
from .orbits import OrbitState

__all__ = [
    "N_STATES",
    "N_CHANNELS",
    "CHIEF_POS", "CHIEF_VEL", "CHIEF_ACC", "CHIEF_CLOCK",
    "DEPUTY_POS", "DEPUTY_VEL", "DEPUTY_ACC", "DEPUTY_CLOCK",
    "AMB_ZD", "AMB_SD", "BIASES",
    "FilterState",
    "FilterTuning",
    "UpdateReport",
    "DareResult",
    "TimeTagMismatchError",
    "initialize_filter",
    "allocate_channels",
    "time_update",
    "measurement_update",
    "apply_fixes",
    "constrain_linear",
    "dare_steady_state",
    "navigation_metrics",
    "snapshot_header",
    "snapshot_row",
]

N_STATES = 71
N_CHANNELS = 24

CHIEF_POS = slice(0, 3)
CHIEF_VEL = slice(3, 6)
CHIEF_ACC = slice(6, 9)
CHIEF_CLOCK = 9
DEPUTY_POS = slice(10, 13)
DEPUTY_VEL = slice(13, 16)
DEPUTY_ACC = slice(16, 19)
DEPUTY_CLOCK = 19
AMB_ZD = slice(20, 44)
AMB_SD = slice(44, 68)
BIASES = slice(68, 71)


class TimeTagMismatchError(ValueError):
    """Measurement bundle and attitude are tagged at different times."""


@dataclass
class FilterTuning:
    """Every knob of the filter, with LEO-scenario defaults.

    Process-noise sigmas are quoted per reference step (30 s); the applied
    variance scales linearly with the actual step length.  The clock time
    constant defaults to infinity (pure random walk); the empirical
    accelerations are first-order Gauss-Markov with a 900 s constant.
    """

    # Initial standard deviations
    init_pos: float = 1000.0            # m
    init_vel: float = 1.0               # m/s
    init_accel: tuple = (1.0e-6, 2.0e-6, 0.75e-6)  # m/s^2 (RTN)
    init_clock: float = 100.0           # m
    init_amb: float = 1000.0            # cycles
    init_range_bias: float = 0.1        # m
    init_angle_bias: float = 1000.0 * ARCSEC  # rad

    # Process noise (1-sigma per reference step)
    proc_pos: float = 1.0e-6            # m
    proc_vel: float = 1.0e-9            # m/s
    proc_accel: tuple = (1.0e-6, 1.0e-6, 0.5e-6)   # m/s^2
    proc_clock: float = 5.0             # m
    proc_amb: float = 0.0316            # cycles

    # Measurement noise (1-sigma)
    meas_code: float = 1.5              # m   (GRAPHIC rows)
    meas_carrier: float = 15.0e-3       # m   (SDCP rows)
    meas_range: float = 5.0e-3          # m
    meas_angle: float = 100.0 * ARCSEC  # rad

    # Autocorrelation time constants
    tau_accel: float = 900.0            # s
    tau_clock: float = math.inf         # s (infinite: random walk)

    gate_sigma: float = 5.0
    reference_step: float = 30.0        # s
    wavelength: float = L1_WAVELENGTH

    @classmethod
    def leo(cls) -> "FilterTuning":
        return cls()

    @classmethod
    def geo(cls) -> "FilterTuning":
        return cls(meas_code=2.65, meas_carrier=20.0e-3)


@dataclass
class FilterState:
    """Mean, covariance, and channel bookkeeping at one epoch."""

    x: np.ndarray
    covariance: np.ndarray
    epoch: float = 0.0
    channel_ids: np.ndarray = field(
        default_factory=lambda: np.full(N_CHANNELS, -1, dtype=np.int64))
    fixed_mask: np.ndarray = field(
        default_factory=lambda: np.zeros(N_CHANNELS, dtype=bool))
    last_seen: np.ndarray = field(
        default_factory=lambda: np.full(N_CHANNELS, -np.inf))

    def copy(self) -> "FilterState":
        return FilterState(self.x.copy(), self.covariance.copy(), self.epoch,
                           self.channel_ids.copy(), self.fixed_mask.copy(),
                           self.last_seen.copy())

    @property
    def chief(self) -> OrbitState:
        return OrbitState(self.x[CHIEF_POS], self.x[CHIEF_VEL], self.epoch)

    @property
    def deputy(self) -> OrbitState:
        return OrbitState(self.x[DEPUTY_POS], self.x[DEPUTY_VEL], self.epoch)

    @property
    def biases(self) -> SensorBiases:
        b = self.x[BIASES]
        return SensorBiases(b[0], b[1], b[2])

    def slot_of(self, gps_id) -> int:
        hits = np.nonzero(self.channel_ids == gps_id)[0]
        return int(hits[0]) if hits.size else -1


@dataclass
class UpdateReport:
    """Diagnostics from one joint measurement update."""

    n_rows: int = 0
    n_rejected: int = 0
    innovations: np.ndarray = None
    gate_flags: np.ndarray = None
    postfit: np.ndarray = None
    labels: list = None


@dataclass
class DareResult:
    """Steady-state Riccati outcome for the ambiguity variance analysis."""

    diag: np.ndarray
    converged: bool
    unbounded_dim: int = 0
    iterations: int = 0

    def success_probability(self) -> float:
        if not self.converged:
            return 0.0
        return success_rate(np.sqrt(self.diag))


# ---------------------------------------------------------------------------
# Initialization and channel allocation
# ---------------------------------------------------------------------------

def initialize_filter(chief: OrbitState, deputy: OrbitState,
                      tuning: FilterTuning) -> FilterState:
    """Filter state centered on the provided orbit states with the
    configured initial covariance (block diagonal)."""
    x = np.zeros(N_STATES)
    x[CHIEF_POS] = chief.position
    x[CHIEF_VEL] = chief.velocity
    x[DEPUTY_POS] = deputy.position
    x[DEPUTY_VEL] = deputy.velocity

    d = np.zeros(N_STATES)
    for pos, vel, acc, clk in ((CHIEF_POS, CHIEF_VEL, CHIEF_ACC, CHIEF_CLOCK),
                               (DEPUTY_POS, DEPUTY_VEL, DEPUTY_ACC, DEPUTY_CLOCK)):
        d[pos] = tuning.init_pos ** 2
        d[vel] = tuning.init_vel ** 2
        d[acc] = np.square(tuning.init_accel)
        d[clk] = tuning.init_clock ** 2
    d[AMB_ZD] = tuning.init_amb ** 2
    d[AMB_SD] = tuning.init_amb ** 2
    d[BIASES] = [tuning.init_range_bias ** 2,
                 tuning.init_angle_bias ** 2,
                 tuning.init_angle_bias ** 2]
    return FilterState(x=x, covariance=np.diag(d), epoch=chief.epoch)


def _reset_channel(state: FilterState, slot: int, tuning: FilterTuning):
    for idx in (AMB_ZD.start + slot, AMB_SD.start + slot):
        state.x[idx] = 0.0
        state.covariance[idx, :] = 0.0
        state.covariance[:, idx] = 0.0
        state.covariance[idx, idx] = tuning.init_amb ** 2
    state.fixed_mask[slot] = False


def allocate_channels(state: FilterState, gps_ids, tuning: FilterTuning,
                      time=None) -> dict:
    """Ensure every GPS id has an ambiguity slot; returns id -> slot.

    New satellites take free slots first, then evict the slot unseen for the
    longest time.  A slot that changes hands restarts its ambiguity states
    at the initialization variance.
    """
    time = state.epoch if time is None else time
    mapping = {}
    for gid in gps_ids:
        slot = state.slot_of(gid)
        if slot < 0:
            free = np.nonzero(state.channel_ids < 0)[0]
            if free.size:
                slot = int(free[0])
            else:
                candidates = np.nonzero(~np.isin(state.channel_ids, list(gps_ids)))[0]
                if candidates.size == 0:
                    continue  # more satellites than channels; drop extras
                slot = int(candidates[np.argmin(state.last_seen[candidates])])
            state.channel_ids[slot] = gid
            _reset_channel(state, slot, tuning)
        state.last_seen[slot] = time
        mapping[gid] = slot
    return mapping


# ---------------------------------------------------------------------------
# Batched dynamics for mean and finite-difference transition
# ---------------------------------------------------------------------------

def _batch_derivative(y, acc_rtn, include_j2=True):
    """Time derivative of stacked (N, 6) orbit rows with per-row RTN
    empirical accelerations (N, 3)."""
    r = y[:, :3]
    v = y[:, 3:]
    rn2 = np.sum(r * r, axis=1, keepdims=True)
    rn = np.sqrt(rn2)
    a = -MU_EARTH * r / (rn2 * rn)
    if include_j2:
        z2r2 = (r[:, 2:3] ** 2) / rn2
        k = -1.5 * MU_EARTH * J2_EARTH * R_EARTH * R_EARTH / (rn2 * rn2 * rn)
        a = a + k * np.column_stack([
            r[:, 0] * (1.0 - 5.0 * z2r2[:, 0]),
            r[:, 1] * (1.0 - 5.0 * z2r2[:, 0]),
            r[:, 2] * (3.0 - 5.0 * z2r2[:, 0]),
        ])
    if acc_rtn is not None:
        radial = r / rn
        h = np.cross(r, v)
        hn = np.linalg.norm(h, axis=1, keepdims=True)
        normal = h / hn
        transverse = np.cross(normal, radial)
        a = a + (radial * acc_rtn[:, 0:1] + transverse * acc_rtn[:, 1:2]
                 + normal * acc_rtn[:, 2:3])
    return np.hstack([v, a])


def _batch_propagate(y0, acc_rtn, dt, max_step=10.0, include_j2=True):
    """Fixed-step RK4 over stacked orbit rows (same scheme as the truth
    propagator so filter prediction and Jacobian share one dynamics)."""
    n_steps = max(1, int(math.ceil(dt / max_step)))
    h = dt / n_steps
    y = np.array(y0, dtype=float)
    for _ in range(n_steps):
        k1 = _batch_derivative(y, acc_rtn, include_j2)
        k2 = _batch_derivative(y + 0.5 * h * k1, acc_rtn, include_j2)
        k3 = _batch_derivative(y + 0.5 * h * k2, acc_rtn, include_j2)
        k4 = _batch_derivative(y + h * k3, acc_rtn, include_j2)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


# Finite-difference steps for the numerical state transition.
_FD_POS_STEP = 1.0       # m
_FD_VEL_STEP = 1.0e-3    # m/s
_FD_ACC_STEP = 1.0e-8    # m/s^2


def _craft_transition(pos, vel, acc, dt, include_j2=True):
    """Propagate one craft and numerically differentiate the end state.

    Returns (end_y (6,), phi (6, 9)) where the columns of phi are the
    sensitivities of the end position/velocity to the start position,
    velocity, and (held-constant) RTN empirical acceleration.
    """
    steps = np.array([_FD_POS_STEP] * 3 + [_FD_VEL_STEP] * 3 + [_FD_ACC_STEP] * 3)
    n_in = 9
    rows = np.zeros((1 + 2 * n_in, 6))
    accs = np.zeros((1 + 2 * n_in, 3))
    rows[:] = np.concatenate([pos, vel])
    accs[:] = acc
    for j in range(n_in):
        delta = np.zeros(9)
        delta[j] = steps[j]
        rows[1 + 2 * j, :] += delta[:6]
        accs[1 + 2 * j, :] += delta[6:]
        rows[2 + 2 * j, :] -= delta[:6]
        accs[2 + 2 * j, :] -= delta[6:]
    out = _batch_propagate(rows, accs, dt, include_j2=include_j2)
    phi = np.zeros((6, 9))
    for j in range(n_in):
        phi[:, j] = (out[1 + 2 * j] - out[2 + 2 * j]) / (2.0 * steps[j])
    return out[0], phi


def time_update(state: FilterState, tuning: FilterTuning, dt,
                include_j2=True) -> FilterState:
    """Propagate mean and covariance by ``dt`` seconds.

    Orbits integrate through the shared RK4 dynamics with the empirical
    acceleration states applied in the craft RTN frame and held constant
    over the step; the acceleration and (finite-tau) clock states then decay
    as first-order Gauss-Markov processes.  The covariance maps through a
    finite-difference transition matrix and gains the configured process
    noise; fixed ambiguity channels receive none.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    out = state.copy()
    decay_acc = math.exp(-dt / tuning.tau_accel)
    decay_clk = math.exp(-dt / tuning.tau_clock) if math.isfinite(tuning.tau_clock) else 1.0

    phi = np.eye(N_STATES)
    for pos, vel, acc, clk in ((CHIEF_POS, CHIEF_VEL, CHIEF_ACC, CHIEF_CLOCK),
                               (DEPUTY_POS, DEPUTY_VEL, DEPUTY_ACC, DEPUTY_CLOCK)):
        end, phi_craft = _craft_transition(state.x[pos], state.x[vel],
                                           state.x[acc], dt, include_j2)
        if float(np.linalg.norm(end[:3])) < R_EARTH:
            raise RuntimeError("filter mean descended below the surface")
        out.x[pos] = end[:3]
        out.x[vel] = end[3:]
        out.x[acc] = decay_acc * state.x[acc]
        out.x[clk] = decay_clk * state.x[clk]
        rv = np.r_[np.arange(pos.start, pos.stop), np.arange(vel.start, vel.stop)]
        ai = np.arange(acc.start, acc.stop)
        phi[np.ix_(rv, rv)] = phi_craft[:, :6]
        phi[np.ix_(rv, ai)] = phi_craft[:, 6:]
        phi[np.ix_(ai, ai)] = decay_acc * np.eye(3)
        phi[clk, clk] = decay_clk

    q = np.zeros(N_STATES)
    scale = dt / tuning.reference_step
    for pos, vel, acc, clk in ((CHIEF_POS, CHIEF_VEL, CHIEF_ACC, CHIEF_CLOCK),
                               (DEPUTY_POS, DEPUTY_VEL, DEPUTY_ACC, DEPUTY_CLOCK)):
        q[pos] = tuning.proc_pos ** 2 * scale
        q[vel] = tuning.proc_vel ** 2 * scale
        q[acc] = np.square(tuning.proc_accel) * scale
        q[clk] = tuning.proc_clock ** 2 * scale
    amb_q = tuning.proc_amb ** 2 * scale
    q[AMB_ZD] = amb_q
    sd_q = np.full(N_CHANNELS, amb_q)
    sd_q[state.fixed_mask] = 0.0
    q[AMB_SD] = sd_q
    # Biases are constant instrument properties: no process noise.

    cov = phi @ state.covariance @ phi.T + np.diag(q)
    out.covariance = 0.5 * (cov + cov.T)
    out.epoch = state.epoch + dt
    return out


# ---------------------------------------------------------------------------
# Measurement update
# ---------------------------------------------------------------------------

def _graphic_row(state, gps_pos, slot, receiver, wavelength):
    """Prediction and Jacobian row of one GRAPHIC observation [m]."""
    h = np.zeros(N_STATES)
    if receiver == "chief":
        pos_sl, clk = CHIEF_POS, CHIEF_CLOCK
    else:
        pos_sl, clk = DEPUTY_POS, DEPUTY_CLOCK
    rx = state.x[pos_sl]
    los = gps_pos - rx
    rng = float(np.linalg.norm(los))
    los = los / rng
    pred = rng + state.x[clk]
    h[pos_sl] = -los
    h[clk] = 1.0
    zd = AMB_ZD.start + slot
    sd = AMB_SD.start + slot
    half = 0.5 * wavelength
    if receiver == "chief":
        pred += half * state.x[zd]
        h[zd] = half
    else:
        # Deputy zero-difference float = chief ZD minus the single difference.
        pred += half * (state.x[zd] - state.x[sd])
        h[zd] = half
        h[sd] = -half
    return pred, h


def _sdcp_row(state, gps_pos, slot, wavelength):
    """Prediction and Jacobian row of one SDCP observation, in meters."""
    h = np.zeros(N_STATES)
    rc = state.x[CHIEF_POS]
    rd = state.x[DEPUTY_POS]
    los_c = gps_pos - rc
    rng_c = float(np.linalg.norm(los_c))
    los_c = los_c / rng_c
    los_d = gps_pos - rd
    rng_d = float(np.linalg.norm(los_d))
    los_d = los_d / rng_d
    sd = AMB_SD.start + slot
    pred = (rng_c - rng_d) + (state.x[CHIEF_CLOCK] - state.x[DEPUTY_CLOCK]) \
        + wavelength * state.x[sd]
    h[CHIEF_POS] = -los_c
    h[DEPUTY_POS] = los_d
    h[CHIEF_CLOCK] = 1.0
    h[DEPUTY_CLOCK] = -1.0
    h[sd] = wavelength
    return pred, h


def _external_rows(state, attitude):
    """Predictions and Jacobian rows for (range, azimuth, elevation).

    The sensors ride on the deputy (chaser) and observe the chief (target),
    so the modeled vector is chief-minus-deputy in the sensor frame.
    """
    rho = np.asarray(attitude) @ (state.x[CHIEF_POS] - state.x[DEPUTY_POS])
    b = state.biases
    rng = range_model(rho, b)
    az, el = bearing_model(rho, b)
    h_sensor = sensor_jacobian(rho)
    h_eci = transform_jacobian(h_sensor, attitude)
    rows = np.zeros((3, N_STATES))
    rows[:, CHIEF_POS] = h_eci
    rows[:, DEPUTY_POS] = -h_eci
    for i in range(3):
        rows[i, BIASES.start + i] = 1.0
    return np.array([rng, az, el]), rows


def measurement_update(state: FilterState, epoch: MeasurementEpoch,
                       tuning: FilterTuning,
                       use_range=True, use_bearing=True):
    """Joint EKF update over every observation in the epoch.

    GRAPHIC and SDCP rows require the epoch to carry broadcast GPS positions
    (``epoch.gps_positions``: gps_id -> ECI position).  Innovations failing
    the scalar gate are excluded from the joint solve and flagged in the
    report.  Returns ``(new_state, UpdateReport)``.

    Raises
    ------
    TimeTagMismatchError
        If the attitude time tag differs from the measurement time tag.
    """
    if epoch.attitude_time is not None and epoch.attitude_time != epoch.time:
        raise TimeTagMismatchError(
            f"attitude tagged {epoch.attitude_time}, measurements {epoch.time}")

    gps_positions = epoch.gps_positions or {}
    inflation = epoch.noise_inflation or {}
    wavelength = tuning.wavelength
    preds, rows, values, variances, labels = [], [], [], [], []

    for receiver, obs_list in (epoch.graphic or {}).items():
        if receiver not in ("chief", "deputy"):
            raise ValueError(f"unknown receiver id {receiver!r}")
        for gid, value in obs_list:
            slot = state.slot_of(gid)
            if slot < 0 or gid not in gps_positions:
                continue
            pred, h = _graphic_row(state, gps_positions[gid], slot, receiver,
                                   wavelength)
            label = f"graphic:{receiver}:{gid}"
            preds.append(pred)
            rows.append(h)
            values.append(value)
            variances.append(tuning.meas_code ** 2 + inflation.get(label, 0.0))
            labels.append(label)

    for gid, cycles in (epoch.sdcp or []):
        slot = state.slot_of(gid)
        if slot < 0 or gid not in gps_positions:
            continue
        pred, h = _sdcp_row(state, gps_positions[gid], slot, wavelength)
        label = f"sdcp:{gid}"
        preds.append(pred)
        rows.append(h)
        values.append(wavelength * cycles)
        variances.append(tuning.meas_carrier ** 2 + inflation.get(label, 0.0))
        labels.append(label)

    want_range = use_range and epoch.range_obs is not None
    want_bearing = use_bearing and epoch.bearing_obs is not None
    if want_range or want_bearing:
        ext_pred, ext_rows = _external_rows(state, epoch.attitude)
        if want_range:
            preds.append(ext_pred[0])
            rows.append(ext_rows[0])
            values.append(epoch.range_obs)
            variances.append(tuning.meas_range ** 2
                             + inflation.get("range", 0.0))
            labels.append("range")
        if want_bearing:
            for i, name in ((1, "azimuth"), (2, "elevation")):
                preds.append(ext_pred[i])
                rows.append(ext_rows[i])
                values.append(epoch.bearing_obs[i - 1])
                variances.append(tuning.meas_angle ** 2
                                 + inflation.get(name, 0.0))
                labels.append(name)

    if not rows:
        return state.copy(), UpdateReport(labels=[])

    h_all = np.vstack(rows)
    innov_all = np.asarray(values) - np.asarray(preds)
    r_all = np.asarray(variances)

    # Scalar innovation gate per row.
    p = state.covariance
    s_diag = np.einsum("ij,jk,ik->i", h_all, p, h_all) + r_all
    gate = np.abs(innov_all) <= tuning.gate_sigma * np.sqrt(s_diag)

    report = UpdateReport(
        n_rows=len(rows), n_rejected=int(np.sum(~gate)),
        innovations=innov_all, gate_flags=gate, labels=labels)
    if not np.any(gate):
        return state.copy(), report

    h = h_all[gate]
    innov = innov_all[gate]
    out = state.copy()
    out.x, out.covariance = _joint_update(state.x, p, h, innov, r_all[gate])
    report.postfit = innov - h @ (out.x - state.x)
    return out, report


def _joint_update(x, p, h, innov, r_diag):
    """Joseph-form Kalman update with diagonal measurement noise."""
    r = np.diag(r_diag)
    s = h @ p @ h.T + r
    k = np.linalg.solve(s.T, (p @ h.T).T).T
    ikh = np.eye(len(x)) - k @ h
    cov = ikh @ p @ ikh.T + k @ r @ k.T
    return x + k @ innov, 0.5 * (cov + cov.T)


# ---------------------------------------------------------------------------
# Integer fix application
# ---------------------------------------------------------------------------

def apply_fixes(state: FilterState, indices, values) -> FilterState:
    """Overwrite single-difference channels with resolved integers.

    The fixed entries become exact: their covariance rows and columns are
    zeroed (conditioning with zero residual uncertainty) and the channels
    are flagged so later process noise and re-fix attempts skip them.

    Raises
    ------
    ValueError
        If any index is already fixed.
    """
    indices = np.asarray(indices, dtype=np.int64)
    values = np.asarray(values)
    if indices.size == 0:
        return state.copy()
    if np.any(state.fixed_mask[indices]):
        raise ValueError("channel already fixed")
    out = state.copy()
    for slot, val in zip(indices, values):
        idx = AMB_SD.start + int(slot)
        out.x[idx] = float(val)
        out.covariance[idx, :] = 0.0
        out.covariance[:, idx] = 0.0
        out.fixed_mask[int(slot)] = True
    return out


def constrain_linear(state: FilterState, rows, values) -> FilterState:
    """Condition the state on exact linear constraints ``rows @ x = values``.

    This is the zero-noise Kalman update; used to feed partially-resolved
    integer combinations (rows in the decorrelated space) back into the full
    filter without forcing individual channels to integers.
    """
    h = np.atleast_2d(np.asarray(rows, dtype=float))
    v = np.atleast_1d(np.asarray(values, dtype=float))
    p = state.covariance
    s = h @ p @ h.T
    # Guard: constraints must carry information not already exact.
    s = s + 1e-15 * np.eye(s.shape[0]) * max(np.trace(s), 1.0)
    k = np.linalg.solve(s.T, (p @ h.T).T).T
    out = state.copy()
    out.x = state.x + k @ (v - h @ state.x)
    cov = (np.eye(N_STATES) - k @ h) @ p
    out.covariance = 0.5 * (cov + cov.T)
    return out


# ---------------------------------------------------------------------------
# Steady-state Riccati analysis
# ---------------------------------------------------------------------------

def dare_steady_state(process_noise_q, meas_noise_r, wavelength=L1_WAVELENGTH,
                      n=10, c_interpretation="identity", max_iter=200_000,
                      tol=1e-12) -> DareResult:
    """Steady-state ambiguity variances of the discrete Riccati recursion.

    The float-ambiguity channel model is static (A = I) with per-step
    process noise ``q`` [cycles^2].  Two sensitivity readings are supported:

    - ``identity``: each channel observed independently through the
      wavelength, C = wavelength * I — every mode observable, converges to
      the per-channel scalar fixed point.
    - ``ones_row``: one scalar observation of the wavelength-scaled sum,
      C = wavelength * 1^T — rank one, leaving ``n - 1`` unobservable modes
      whose variances grow without bound when q > 0 (reported, not raised).

    Returns
    -------
    DareResult
        ``diag`` holds steady-state variances (np.inf on divergent modes),
        ``unbounded_dim`` the dimension of the divergent subspace.
    """
    q = float(process_noise_q)
    r = float(meas_noise_r)
    if q < 0.0 or r <= 0.0:
        raise ValueError("need q >= 0 and r > 0")
    if c_interpretation == "identity":
        c = wavelength * np.eye(n)
        r_mat = r * np.eye(n)
    elif c_interpretation == "ones_row":
        c = wavelength * np.ones((1, n))
        r_mat = np.array([[r]])
    else:
        raise ValueError(f"unknown C interpretation {c_interpretation!r}")

    unobs_dim = int(n - np.linalg.matrix_rank(c))
    if q == 0.0 and unobs_dim == 0:
        # Noiseless static states under full-rank observation collapse to
        # certainty; the recursion only approaches it harmonically, so
        # return the limit directly.
        return DareResult(diag=np.zeros(n), converged=True, iterations=0)

    diverging = np.zeros(n, dtype=bool)
    cap = max_iter
    if unobs_dim > 0 and q > 0.0:
        # The null space of C is invariant (A = I) and accrues q per step
        # with no correction: every coordinate overlapping it diverges
        # linearly.  Iterate only to settle the observable part.
        _, sv, vt = np.linalg.svd(c)
        rank = int(np.sum(sv > (sv[0] if sv.size else 0.0) * 1e-12))
        diverging = np.sum(vt[rank:] ** 2, axis=0) > 1e-12
        cap = min(max_iter, 5000)

    p = np.eye(n)
    prev = p.copy()
    iterations = 0
    for iterations in range(1, cap + 1):
        s = c @ p @ c.T + r_mat
        k = np.linalg.solve(s.T, (p @ c.T).T).T
        p_upd = (np.eye(n) - k @ c) @ p
        p = 0.5 * (p_upd + p_upd.T) + q * np.eye(n)
        change = np.max(np.abs(p - prev)) / max(np.max(np.abs(p)), 1e-300)
        if change < tol and not diverging.any():
            return DareResult(diag=np.diag(p).copy(), converged=True,
                              unbounded_dim=0, iterations=iterations)
        prev = p.copy()

    diag = np.diag(p).copy()
    diag[diverging] = np.inf
    return DareResult(diag=diag, converged=False,
                      unbounded_dim=unobs_dim if q > 0.0 else 0,
                      iterations=iterations)


def dare_scalar_fixed_point(q, r, wavelength=L1_WAVELENGTH):
    """Closed-form steady-state variance of the scalar channel:
    v = q/2 + sqrt(q^2/4 + q r / wavelength^2)."""
    lam2 = wavelength * wavelength
    return 0.5 * q + math.sqrt(0.25 * q * q + q * r / lam2)


# ---------------------------------------------------------------------------
# Metrics and snapshots
# ---------------------------------------------------------------------------

def navigation_metrics(rel_pos_err_rtn, rel_vel_err_rtn, first_fix_index=None,
                       fix_records=None) -> dict:
    """Summary statistics of a run.

    Parameters
    ----------
    rel_pos_err_rtn, rel_vel_err_rtn : (N, 3) arrays
        Estimated-minus-true relative position/velocity in chief RTN.
    first_fix_index : int or None
        Epoch index of the first accepted fix; splits pre/post statistics.
    fix_records : list of (n_fixed, n_wrong)
        One entry per fix event.

    Returns
    -------
    dict with RMS errors (pre/post fix), fix counts, and wrong-fix rate.
    """
    pos = np.atleast_2d(np.asarray(rel_pos_err_rtn, dtype=float))
    vel = np.atleast_2d(np.asarray(rel_vel_err_rtn, dtype=float))

    def rms(block):
        if block.shape[0] == 0:
            return float("nan")
        return float(np.sqrt(np.mean(np.sum(block * block, axis=1))))

    split = pos.shape[0] if first_fix_index is None else int(first_fix_index)
    fix_records = fix_records or []
    total_fixed = sum(nf for nf, _ in fix_records)
    total_wrong = sum(nw for _, nw in fix_records)
    return {
        "rms_pos_pre_fix": rms(pos[:split]),
        "rms_pos_post_fix": rms(pos[split:]),
        "rms_vel_pre_fix": rms(vel[:split]),
        "rms_vel_post_fix": rms(vel[split:]),
        "rms_pos_total": rms(pos),
        "rms_vel_total": rms(vel),
        "n_fix_events": len(fix_records),
        "n_fixed_integers": int(total_fixed),
        "wrong_fix_rate": (total_wrong / total_fixed) if total_fixed else 0.0,
        "first_fix_index": first_fix_index,
    }


SNAPSHOT_FIELDS = (
    ["time"]
    + [f"chief_{c}" for c in ("x", "y", "z", "vx", "vy", "vz")]
    + [f"deputy_{c}" for c in ("x", "y", "z", "vx", "vy", "vz")]
    + ["chief_clock", "deputy_clock"]
    + [f"sigma_{c}" for c in ("chief_pos", "deputy_pos", "rel_pos")]
    + ["n_fixed_channels"]
)


def snapshot_header() -> str:
    return ",".join(SNAPSHOT_FIELDS)


def snapshot_row(state: FilterState) -> str:
    """One CSV row of the documented snapshot columns (repr-precision)."""
    p = state.covariance
    var_cp = np.trace(p[CHIEF_POS, CHIEF_POS])
    var_dp = np.trace(p[DEPUTY_POS, DEPUTY_POS])
    rel_block = (p[CHIEF_POS, CHIEF_POS] + p[DEPUTY_POS, DEPUTY_POS]
                 - p[CHIEF_POS, DEPUTY_POS] - p[DEPUTY_POS, CHIEF_POS])
    vals = ([state.epoch]
            + list(state.x[CHIEF_POS]) + list(state.x[CHIEF_VEL])
            + list(state.x[DEPUTY_POS]) + list(state.x[DEPUTY_VEL])
            + [state.x[CHIEF_CLOCK], state.x[DEPUTY_CLOCK]]
            + [math.sqrt(max(var_cp, 0.0)), math.sqrt(max(var_dp, 0.0)),
               math.sqrt(max(np.trace(rel_block), 0.0))]
            + [int(np.sum(state.fixed_mask))])
    return ",".join(repr(float(v)) if not isinstance(v, int) else str(v)
                    for v in vals)
