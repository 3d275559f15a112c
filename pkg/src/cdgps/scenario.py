"""End-to-end rendezvous scenarios: truth orbits, error stack, run loop.

This module glues the library together.  It builds a two-spacecraft truth
trajectory, synthesizes every GPS and external-sensor observable through the
full error stack (link budget, tracking-loop thermal noise, multipath,
ionosphere, receiver clock random walks, broadcast-ephemeris corruption,
phase wind-up), and drives the navigation filter with integer-ambiguity
resolution in a configurable coupling mode:

``none``
    GPS-only float solution; external sensors and the integer search are
    both off (the classical baseline).
``loose``
    External range/bearing measurements enter the filter as ordinary EKF
    rows; the integer search runs unconstrained and accepted subsets are
    fed back as exact constraints.
``full``
    As ``loose``, plus the integer search is steered by the external
    observations themselves (sensor-constrained candidate costs).

Everything stochastic draws from named substreams of a single seed, so a
run is bit-reproducible: same config in, same report bytes out.
"""

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import chi2

from .constants import ARCSEC, L1_WAVELENGTH, MU_EARTH, R_EARTH
from .errors import (
    LinkBudget,
    LossOfLockError,
    MultipathParams,
    TRACKING_THRESHOLD,
    calibrate_roe,
    carrier_to_noise,
    clock_random_walk,
    inject_roe_error,
    klobuchar_delay,
    multipath_sigma,
    substream,
    thermal_noise_sigmas,
)
from .iar import (
    AmbiguityDistribution,
    ConstraintContext,
    SingularGeometryError,
    classical_ils_search,
    constrained_search,
    decorrelate,
    inverse_transform,
    partial_resolve,
    round_half_away,
)
from .measurements import (
    MeasurementEpoch,
    SensorBiases,
    bearing_model,
    graphic,
    range_model,
    sd_to_dd_matrix,
    undifferenced_phase,
)
from . import navfilter
from .navfilter import (
    AMB_SD,
    AMB_ZD,
    CHIEF_CLOCK,
    CHIEF_POS,
    DEPUTY_CLOCK,
    DEPUTY_POS,
    DEPUTY_VEL,
    CHIEF_VEL,
    FilterTuning,
    allocate_channels,
    apply_fixes,
    constrain_linear,
    initialize_filter,
    measurement_update,
    navigation_metrics,
    time_update,
)
from .orbits import (
    OrbitState,
    default_constellation,
    kepler_elements_to_state,
    propagate,
    rtn_frame,
    visibility,
)

__all__ = [
    "InsufficientChannelsError",
    "SensorConfig",
    "NoiseConfig",
    "ScenarioConfig",
    "Truth",
    "SynthesisAux",
    "RunReport",
    "generate_truth",
    "synthesize_measurements",
    "sd_to_dd",
    "run_scenario",
    "leo_preset",
    "geo_preset",
    "load_preset",
    "PRESET_NAMES",
]


class InsufficientChannelsError(ValueError):
    """Fewer single-difference channels than a differencing op requires."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class SensorConfig:
    """True error budget of the external range/bearing sensor suite.

    Biases are constant over a run (the filter estimates them); noises are
    white per measurement.
    """

    range_bias: float = 0.05              # m
    azimuth_bias: float = 500.0 * ARCSEC  # rad
    elevation_bias: float = -500.0 * ARCSEC  # rad
    range_noise: float = 0.005            # m, 1-sigma
    angle_noise: float = 100.0 * ARCSEC   # rad, 1-sigma

    def as_biases(self) -> SensorBiases:
        return SensorBiases(self.range_bias, self.azimuth_bias,
                            self.elevation_bias)


@dataclass
class NoiseConfig:
    """Which error sources corrupt the synthesized signals, and how hard.

    Multipath amplitudes are the worst-case standard deviations of the
    near-field footprint [m]; each epoch draws an independent zero-mean
    Gaussian sample with the direction-dependent sigma.
    """

    thermal: bool = True
    multipath: bool = True
    ionosphere: bool = True
    clock_walk: bool = True
    ephemeris: bool = True
    windup: bool = True
    multipath_amp_code: float = 5.0       # m
    multipath_amp_phase: float = 0.05     # m
    multipath_size: float = 5.0           # footprint size factor
    clock_sigma: float = 1.0              # m / sqrt(s) receiver clock walk
    ephemeris_rms: float = 1.5            # m broadcast position RMS error
    windup_amplitude: float = 0.01        # cycles, slow common-mode term

    @classmethod
    def leo(cls) -> "NoiseConfig":
        """Low-orbit mainlobe reception with strong nearby reflectors."""
        return cls()

    @classmethod
    def geo_sidelobe(cls) -> "NoiseConfig":
        """Weak sidelobe signals: milder multipath, no ionosphere."""
        return cls(ionosphere=False, multipath_amp_code=1.0,
                   multipath_amp_phase=0.01, multipath_size=1.0)

    @classmethod
    def disabled(cls) -> "NoiseConfig":
        """Every stochastic corruption off (noise-free synthesis)."""
        return cls(thermal=False, multipath=False, ionosphere=False,
                   clock_walk=False, ephemeris=False, windup=False)


@dataclass
class ScenarioConfig:
    """Complete description of one simulated rendezvous run.

    ``chief_elements`` holds Keplerian elements in SI units and radians
    (keys ``a, e, inc, raan, argp, mean_anomaly``).  The deputy starts
    co-orbital, leading the chief along-track by ``separation`` meters.
    Impulses are (time [s], RTN delta-v [m/s]) pairs executed by the deputy
    and known to the filter (open-loop commanded maneuvers).
    """

    chief_elements: dict
    name: str = "custom"
    separation: float = 1000.0            # m
    duration: float = 11100.0             # s
    truth_step: float = 10.0              # s
    gps_update_period: float = 30.0       # s
    external_update_period: float = 10.0  # s
    external_enable_time: float = 1800.0  # s
    iar_warmup: float = 1800.0            # s before the first fix attempt
    coupling_mode: str = "full"           # none | loose | full
    visibility_mode: str = "mainlobe"     # mainlobe | sidelobe
    link_budget: str = "leo"              # leo | geo
    impulses: list = field(default_factory=list)
    seed: int = 1
    init_pos_error: float = 10.0          # m, 1-sigma per axis
    init_vel_error: float = 0.01          # m/s
    init_clock_error: float = 10.0        # m
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    sensors: SensorConfig = field(default_factory=SensorConfig)
    tuning: FilterTuning = field(default_factory=FilterTuning)

    def validate(self):
        el = self.chief_elements
        for key in ("a", "e", "inc", "raan", "argp", "mean_anomaly"):
            if key not in el:
                raise ValueError(f"chief_elements missing {key!r}")
        if el["a"] <= R_EARTH:
            raise ValueError("semimajor axis below the Earth surface")
        if not 0.0 <= el["e"] < 1.0:
            raise ValueError("eccentricity must be in [0, 1)")
        if self.duration <= 0.0 or self.truth_step <= 0.0:
            raise ValueError("duration and truth_step must be positive")
        n = round(self.duration / self.truth_step)
        if n < 1 or abs(n * self.truth_step - self.duration) > 1e-6:
            raise ValueError("duration must be a multiple of truth_step")
        for period, label in ((self.gps_update_period, "gps_update_period"),
                              (self.external_update_period,
                               "external_update_period")):
            k = round(period / self.truth_step)
            if k < 1 or abs(k * self.truth_step - period) > 1e-9:
                raise ValueError(f"{label} must be a multiple of truth_step")
        if self.external_enable_time < 0.0 or self.iar_warmup < 0.0:
            raise ValueError("enable/warmup times must be nonnegative")
        if self.coupling_mode not in ("none", "loose", "full"):
            raise ValueError(f"unknown coupling mode {self.coupling_mode!r}")
        if self.visibility_mode not in ("mainlobe", "sidelobe"):
            raise ValueError(f"unknown visibility mode {self.visibility_mode!r}")
        if self.link_budget not in ("leo", "geo"):
            raise ValueError(f"unknown link budget {self.link_budget!r}")
        if self.separation <= 0.0:
            raise ValueError("separation must be positive")
        for t, dv in self.impulses:
            if not 0.0 < t <= self.duration:
                raise ValueError("impulse times must lie inside the run")
            k = round(t / self.truth_step)
            if abs(k * self.truth_step - t) > 1e-9:
                raise ValueError("impulse times must be on the truth grid")
            if len(dv) != 3:
                raise ValueError("impulse delta-v must be an RTN 3-vector")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if math.isinf(self.tuning.tau_clock):
            d["tuning"]["tau_clock"] = None  # JSON has no Infinity
        d["impulses"] = [[float(t), [float(c) for c in dv]]
                         for t, dv in self.impulses]
        return d

    @classmethod
    def from_dict(cls, d) -> "ScenarioConfig":
        d = dict(d)
        if "noise" in d and not isinstance(d["noise"], NoiseConfig):
            d["noise"] = NoiseConfig(**d["noise"])
        if "sensors" in d and not isinstance(d["sensors"], SensorConfig):
            d["sensors"] = SensorConfig(**d["sensors"])
        if "tuning" in d and not isinstance(d["tuning"], FilterTuning):
            d["tuning"] = _tuning_from_dict(d["tuning"])
        if "impulses" in d:
            d["impulses"] = [(float(t), tuple(float(c) for c in dv))
                             for t, dv in d["impulses"]]
        return cls(**d)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _tuning_from_dict(d) -> FilterTuning:
    d = dict(d)
    for key in ("init_accel", "proc_accel"):
        if key in d and d[key] is not None:
            d[key] = tuple(d[key])
    if d.get("tau_clock") is None:
        d["tau_clock"] = math.inf
    return FilterTuning(**d)


def leo_preset() -> ScenarioConfig:
    """ISS-class low orbit: mainlobe GPS, heavy multipath, two revolutions."""
    return ScenarioConfig(
        name="leo-iss",
        chief_elements={"a": R_EARTH + 370e3, "e": 1e-4,
                        "inc": math.radians(51.6), "raan": 0.6,
                        "argp": 0.0, "mean_anomaly": 0.0},
        separation=1000.0,
        duration=11100.0,
        impulses=[(600.0, (0.0, 0.02, 0.0))],
        coupling_mode="full",
        visibility_mode="mainlobe",
        link_budget="leo",
        noise=NoiseConfig.leo(),
        tuning=FilterTuning.leo(),
    )


def geo_preset() -> ScenarioConfig:
    """Geostationary approach on sidelobe-only signals across the limb."""
    return ScenarioConfig(
        name="geo-sidelobe",
        chief_elements={"a": 42_164_000.0, "e": 1e-4,
                        "inc": math.radians(0.1), "raan": 0.3,
                        "argp": 0.0, "mean_anomaly": 0.0},
        separation=1000.0,
        duration=43200.0,
        impulses=[(600.0, (0.0, 0.004, 0.0))],
        coupling_mode="full",
        visibility_mode="sidelobe",
        link_budget="geo",
        noise=NoiseConfig.geo_sidelobe(),
        tuning=FilterTuning.geo(),
    )


PRESET_NAMES = ("leo", "geo")


def load_preset(name) -> ScenarioConfig:
    """Preset by short name, or any config by JSON path."""
    if name == "leo":
        return leo_preset()
    if name == "geo":
        return geo_preset()
    path = Path(name)
    if path.suffix == ".json" and path.exists():
        return ScenarioConfig.from_json(path)
    bundled = Path(__file__).parent / "presets" / f"{name}.json"
    if bundled.exists():
        return ScenarioConfig.from_json(bundled)
    raise ValueError(f"unknown preset {name!r} (choose from {PRESET_NAMES} "
                     "or pass a JSON config path)")


# ---------------------------------------------------------------------------
# Truth trajectories
# ---------------------------------------------------------------------------

@dataclass
class Truth:
    """Reference trajectories of both spacecraft on a uniform time grid."""

    times: np.ndarray        # (N,) s
    chief_pos: np.ndarray    # (N, 3) m ECI
    chief_vel: np.ndarray    # (N, 3) m/s
    deputy_pos: np.ndarray
    deputy_vel: np.ndarray
    events: list = field(default_factory=list)

    def index_of(self, t) -> int:
        step = float(self.times[1] - self.times[0])
        i = int(round(float(t) / step))
        if not 0 <= i < len(self.times) or abs(self.times[i] - t) > 1e-6:
            raise ValueError(f"time {t} is not on the truth grid")
        return i

    def chief_state(self, i) -> OrbitState:
        return OrbitState(self.chief_pos[i], self.chief_vel[i],
                          float(self.times[i]))

    def deputy_state(self, i) -> OrbitState:
        return OrbitState(self.deputy_pos[i], self.deputy_vel[i],
                          float(self.times[i]))

    def separation(self) -> np.ndarray:
        """Chief-to-deputy distance at every grid time [m]."""
        return np.linalg.norm(self.deputy_pos - self.chief_pos, axis=1)


def _rotation_about(axis, angle) -> np.ndarray:
    """Rodrigues rotation matrix about a unit axis."""
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def generate_truth(config: ScenarioConfig) -> Truth:
    """Propagate both spacecraft through the run, executing deputy impulses.

    The deputy starts exactly co-orbital, leading the chief by rotating the
    chief state about the orbit normal through ``separation / a`` radians;
    without maneuvers the pair therefore holds its along-track spacing to
    well under a percent per revolution.  Impulses are applied at their grid
    times as instantaneous RTN velocity increments on the deputy.
    """
    config.validate()
    el = config.chief_elements
    chief = kepler_elements_to_state(el["a"], el["e"], el["inc"], el["raan"],
                                     el["argp"], el["mean_anomaly"])
    h = np.cross(chief.position, chief.velocity)
    rot = _rotation_about(h / np.linalg.norm(h),
                          config.separation / el["a"])
    deputy = OrbitState(rot @ chief.position, rot @ chief.velocity, 0.0)

    n = round(config.duration / config.truth_step)
    times = np.arange(n + 1) * config.truth_step
    impulse_at = {}
    for t, dv in config.impulses:
        i_imp = int(round(t / config.truth_step))
        impulse_at.setdefault(i_imp, []).append(np.asarray(dv, dtype=float))

    cp = np.empty((n + 1, 3)); cv = np.empty((n + 1, 3))
    dp = np.empty((n + 1, 3)); dv_ = np.empty((n + 1, 3))
    events = []
    warned_close = False
    for i, t in enumerate(times):
        if i > 0:
            chief = propagate(chief, config.truth_step)
            deputy = propagate(deputy, config.truth_step)
        for burn in impulse_at.get(i, []):
            dv_eci = rtn_frame(deputy).T @ burn
            deputy = OrbitState(deputy.position, deputy.velocity + dv_eci,
                                deputy.epoch)
            events.append({"time": float(t), "kind": "impulse",
                           "dv_rtn": [float(c) for c in burn]})
        cp[i], cv[i] = chief.position, chief.velocity
        dp[i], dv_[i] = deputy.position, deputy.velocity
        sep = float(np.linalg.norm(dp[i] - cp[i]))
        if sep < 1.0 and not warned_close:
            events.append({"time": float(t), "kind": "collision-warning",
                           "separation": sep})
            warned_close = True
    return Truth(times, cp, cv, dp, dv_, events)


# ---------------------------------------------------------------------------
# Sensor-frame pointing
# ---------------------------------------------------------------------------

def _unit(v):
    return v / np.linalg.norm(v)


def _pointing_frame(origin, target, normal_hint) -> np.ndarray:
    """DCM (rows) taking ECI into a sensor frame whose +z boresight points
    from ``origin`` at ``target``; +x is built from the orbit normal hint."""
    z = _unit(np.asarray(target, dtype=float) - np.asarray(origin, dtype=float))
    x = np.cross(normal_hint, z)
    nx = np.linalg.norm(x)
    if nx < 1e-9:  # boresight along the hint: fall back to any transverse axis
        x = np.cross([1.0, 0.0, 0.0] if abs(z[0]) < 0.9 else [0.0, 1.0, 0.0], z)
        nx = np.linalg.norm(x)
    x = x / nx
    return np.vstack([x, np.cross(z, x), z])


# ---------------------------------------------------------------------------
# Measurement synthesis
# ---------------------------------------------------------------------------

@dataclass
class SynthesisAux:
    """Ground truth the runner needs for scoring but the filter never sees."""

    true_sd: dict            # epoch time -> {gps_id: true SD integer [cy]}
    pair_ids: dict           # epoch time -> {gps_id: (chief_trk, deputy_trk)}
    clock_chief: np.ndarray  # truth-grid receiver clock error [m]
    clock_deputy: np.ndarray
    biases: SensorBiases     # true external-sensor biases


def synthesize_measurements(config: ScenarioConfig, truth: Truth,
                            constellation=None):
    """Every observable of the run, through the full error stack.

    GPS epochs carry GRAPHIC [m] per receiver, single-differenced carrier
    phase [cycles], and broadcast (ephemeris-corrupted) GPS positions for
    each satellite tracked by *both* receivers; a satellite one receiver
    loses (occultation, transmit cone, or signal power below the tracking
    threshold) contributes nothing that epoch, and a re-acquired channel
    draws a fresh ambiguity.  External epochs carry biased, noisy range and
    bearing of the chief as seen from the deputy docking sensor.

    Returns
    -------
    (list of MeasurementEpoch, SynthesisAux)
    """
    config.validate()
    const = constellation if constellation is not None else default_constellation()
    noise = config.noise
    wavelength = config.tuning.wavelength
    budget0 = (LinkBudget.leo_mainlobe() if config.link_budget == "leo"
               else LinkBudget.geo_sidelobe())
    biases = config.sensors.as_biases()

    rng_thermal = substream(config.seed, "thermal")
    rng_mp = substream(config.seed, "multipath")
    rng_amb = substream(config.seed, "ambiguity")
    rng_ext = substream(config.seed, "external")
    rng_eph = substream(config.seed, "ephemeris")
    rng_clk_c = substream(config.seed, "clock-chief")
    rng_clk_d = substream(config.seed, "clock-deputy")

    # Receiver clocks walk on the truth grid.
    n_t = len(truth.times)
    clk_c = np.zeros(n_t)
    clk_d = np.zeros(n_t)
    if noise.clock_walk:
        for i in range(1, n_t):
            clk_c[i] = clock_random_walk(clk_c[i - 1], config.truth_step,
                                         rng_clk_c, noise.clock_sigma)
            clk_d[i] = clock_random_walk(clk_d[i - 1], config.truth_step,
                                         rng_clk_d, noise.clock_sigma)

    # Broadcast-ephemeris corruption: drift-free ROE offsets per satellite
    # with randomized signs, calibrated to the configured RMS.
    roes = {}
    if noise.ephemeris:
        for s in range(len(const)):
            a_gps = float(np.linalg.norm(const.state_at(s, 0.0).position))
            base = calibrate_roe(noise.ephemeris_rms, a_gps)
            off = base.offsets.copy()
            off[1:] *= rng_eph.choice([-1.0, 1.0], size=5)
            roes[s] = dataclasses.replace(base, offsets=off)

    windup_phase = 2.0 * math.pi * np.arange(len(const)) / len(const)

    def times_of(period, start=0.0):
        k0 = int(math.ceil((start - 1e-9) / period))
        k1 = int(math.floor((config.duration + 1e-9) / period))
        return [k * period for k in range(k0, k1 + 1)]

    gps_times = set(times_of(config.gps_update_period))
    ext_times = set(times_of(config.external_update_period,
                             config.external_enable_time))
    all_times = sorted(gps_times | ext_times)

    active = {"chief": {}, "deputy": {}}   # gps_id -> {"track": k, "n": int}
    track_counter = 0
    epochs = []
    true_sd = {}
    pair_ids = {}

    for t in all_times:
        i = truth.index_of(t)
        cpos, cvel = truth.chief_pos[i], truth.chief_vel[i]
        dpos, dvel = truth.deputy_pos[i], truth.deputy_vel[i]
        att_deputy = _pointing_frame(dpos, cpos, _unit(np.cross(dpos, dvel)))
        epoch = MeasurementEpoch(time=float(t), attitude=att_deputy)

        if t in gps_times:
            att_chief = _pointing_frame(cpos, dpos, _unit(np.cross(cpos, cvel)))
            baseline = float(np.linalg.norm(dpos - cpos))
            mp_params = MultipathParams(
                amplitude_code=noise.multipath_amp_code,
                amplitude_phase=noise.multipath_amp_phase,
                size_factor=noise.multipath_size,
                target_direction=(0.0, 0.0),  # partner sits on the boresight
                target_range=baseline)
            receivers = (("chief", cpos, cvel, att_chief, clk_c[i]),
                         ("deputy", dpos, dvel, att_deputy, clk_d[i]))
            seen = {"chief": {}, "deputy": {}}
            for s in range(len(const)):
                gstate = const.state_at(s, float(t))
                for name, rpos, rvel, att, clk in receivers:
                    ok, arrival = visibility(OrbitState(rpos, rvel, float(t)),
                                             gstate, const,
                                             config.visibility_mode, att)
                    if not ok:
                        continue
                    slant_km = float(np.linalg.norm(gstate.position - rpos)) / 1e3
                    c_n0 = carrier_to_noise(
                        dataclasses.replace(budget0, slant_range=slant_km))
                    try:
                        sig_code, sig_phase = thermal_noise_sigmas(
                            c_n0, pll_bw=budget0.pll_bandwidth,
                            wavelength=wavelength)
                    except LossOfLockError:
                        continue
                    az, el = arrival
                    noise_code = 0.0
                    noise_phase = 0.0
                    mp_c = mp_p = 0.0
                    if noise.thermal:
                        noise_code += rng_thermal.normal(scale=sig_code)
                        noise_phase += rng_thermal.normal(scale=sig_phase)
                    if noise.multipath:
                        mp_c = multipath_sigma(mp_params, az, el, "code")
                        mp_p = multipath_sigma(mp_params, az, el, "phase")
                        if mp_c > 0.0:
                            noise_code += rng_mp.normal(scale=mp_c)
                        if mp_p > 0.0:
                            noise_phase += rng_mp.normal(scale=mp_p)
                    los = _unit(gstate.position - rpos)
                    iono = (klobuchar_delay(rpos, los, float(t) % 86400.0)
                            if noise.ionosphere else 0.0)
                    windup_m = (wavelength * noise.windup_amplitude
                                * math.sin(2.0 * math.pi * float(t) / 3600.0
                                           + windup_phase[s])
                                if noise.windup else 0.0)
                    seen[name][s] = {
                        "range": float(np.linalg.norm(gstate.position - rpos)),
                        "iono": iono, "windup": windup_m,
                        "noise_code": noise_code, "noise_phase": noise_phase,
                        "clock": clk, "state": gstate,
                        "mp_code": mp_c, "mp_phase": mp_p}

            # Track bookkeeping: gaps end a track, re-acquisition redraws N.
            for name in ("chief", "deputy"):
                current = set(seen[name])
                for gid in list(active[name]):
                    if gid not in current:
                        del active[name][gid]
                for gid in sorted(current - set(active[name])):
                    track_counter += 1
                    active[name][gid] = {
                        "track": track_counter,
                        "n": int(rng_amb.integers(-100_000, 100_001))}

            common = sorted(set(seen["chief"]) & set(seen["deputy"]))
            graphic_map = {"chief": [], "deputy": []}
            sdcp = []
            tsd = {}
            pids = {}
            gpos = {}
            inflation = {}
            for gid in common:
                phases = {}
                mp_phase = {}
                for name in ("chief", "deputy"):
                    sig = seen[name][gid]
                    amb = active[name][gid]["n"]
                    code = (sig["range"] + sig["iono"] + sig["clock"]
                            + sig["noise_code"])
                    phase = undifferenced_phase(
                        sig["range"], amb, iono=-sig["iono"],
                        rx_clock=sig["clock"], windup=sig["windup"],
                        noise=sig["noise_phase"], wavelength=wavelength)
                    phases[name] = phase
                    graphic_map[name].append(
                        (gid, graphic(code, phase, wavelength)))
                    mp_phase[name] = sig["mp_phase"]
                    # Calibrated multipath map: weight each row by the
                    # direction-dependent error on top of the thermal floor.
                    extra = 0.25 * (sig["mp_code"] ** 2 + sig["mp_phase"] ** 2)
                    if extra > 0.0:
                        inflation[f"graphic:{name}:{gid}"] = extra
                sdcp.append((gid, phases["chief"] - phases["deputy"]))
                sd_extra = mp_phase["chief"] ** 2 + mp_phase["deputy"] ** 2
                if sd_extra > 0.0:
                    inflation[f"sdcp:{gid}"] = sd_extra
                tsd[gid] = active["chief"][gid]["n"] - active["deputy"][gid]["n"]
                pids[gid] = (active["chief"][gid]["track"],
                             active["deputy"][gid]["track"])
                gstate = seen["chief"][gid]["state"]
                gpos[gid] = (inject_roe_error(gstate.position, gstate.velocity,
                                              roes[gid])
                             if noise.ephemeris else gstate.position.copy())
            epoch.graphic = graphic_map
            epoch.sdcp = sdcp
            epoch.gps_positions = gpos
            epoch.noise_inflation = inflation
            true_sd[float(t)] = tsd
            pair_ids[float(t)] = pids

        if t in ext_times:
            rel_sensor = att_deputy @ (cpos - dpos)
            epoch.range_obs = (range_model(rel_sensor, biases)
                               + rng_ext.normal(scale=config.sensors.range_noise))
            az, el = bearing_model(rel_sensor, biases)
            epoch.bearing_obs = (
                az + rng_ext.normal(scale=config.sensors.angle_noise),
                el + rng_ext.normal(scale=config.sensors.angle_noise))

        epochs.append(epoch)

    aux = SynthesisAux(true_sd=true_sd, pair_ids=pair_ids,
                       clock_chief=clk_c, clock_deputy=clk_d, biases=biases)
    return epochs, aux


# ---------------------------------------------------------------------------
# Differencing operator
# ---------------------------------------------------------------------------

def sd_to_dd(floats, covariance, reference_index):
    """Double-difference an ambiguity set against one reference channel.

    Parameters
    ----------
    floats : (k,) array
        Single-difference float ambiguities [cycles].
    covariance : (k, k) array
        Their covariance [cycles^2].
    reference_index : int
        Channel subtracted from every other one.

    Returns
    -------
    (AmbiguityDistribution, ndarray)
        The (k-1)-dimensional double-difference distribution and the
        (k-1, k) differencing matrix that produced it.

    Raises
    ------
    InsufficientChannelsError
        With fewer than two channels there is nothing to difference.

    Examples
    --------
    Two independent unit-variance channels difference into variance two::

        >>> dist, t = sd_to_dd([0.2, -0.1], np.eye(2), 0)
        >>> float(dist.covariance[0, 0])
        2.0

    Integers stay integers under the map: row sums are zero, entries +-1.
    """
    floats = np.asarray(floats, dtype=float)
    cov = np.atleast_2d(np.asarray(covariance, dtype=float))
    k = floats.size
    if k < 2:
        raise InsufficientChannelsError(
            "double differencing needs at least two channels")
    if not 0 <= int(reference_index) < k:
        raise IndexError(f"reference index {reference_index} out of range")
    t = sd_to_dd_matrix(k, int(reference_index))
    return AmbiguityDistribution(floats=t @ floats,
                                 covariance=t @ cov @ t.T), t


# ---------------------------------------------------------------------------
# Run loop
# ---------------------------------------------------------------------------

RECORD_FIELDS = (
    "time", "err_r", "err_t", "err_n", "verr_r", "verr_t", "verr_n",
    "sigma_r", "sigma_t", "sigma_n", "n_fixed", "fixed_fraction",
    "success_prob", "n_rows", "n_rejected", "skipped")
_INT_FIELDS = {"n_fixed", "n_rows", "n_rejected", "skipped"}

# Searching more channels than this per attempt buys little and costs much;
# leftovers stay float and are picked up on later epochs once the reference
# is fixed.
IAR_MAX_SEARCH = 10

# A channel must have been tracked this many consecutive measurement epochs
# before it may enter the integer search; fresh floats carry initialization
# transients that the formal covariance understates.
IAR_MIN_TRACK = 5


@dataclass
class RunReport:
    """Everything a finished run produced."""

    config: ScenarioConfig
    records: list                 # one dict per measurement epoch
    fix_events: list
    events: list
    summary: dict
    degraded: bool = False

    def to_csv(self) -> str:
        lines = [",".join(RECORD_FIELDS)]
        for rec in self.records:
            cells = []
            for name in RECORD_FIELDS:
                v = rec[name]
                cells.append(str(int(v)) if name in _INT_FIELDS
                             else repr(float(v)))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "summary": self.summary,
            "degraded": self.degraded,
            "fix_events": self.fix_events,
            "events": self.events,
            "config": self.config.to_dict(),
        }
        return json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"

    def write(self, output_dir) -> dict:
        """Emit history.csv, report.json, and the echoed config.json."""
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"history": out / "history.csv",
                 "report": out / "report.json",
                 "config": out / "config.json"}
        paths["history"].write_text(self.to_csv())
        paths["report"].write_text(self.to_json())
        paths["config"].write_text(self.config.to_json())
        return paths


def _jsonable(obj):
    """Recursively make a payload strict-JSON safe (NaN/inf -> None)."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def _sd_index(state, gid) -> int:
    return AMB_SD.start + state.slot_of(gid)


def _attempt_fix(state, epoch, config, true_sd_map, eligible=None):
    """One integer-resolution attempt at a GPS epoch.

    Selects a reference channel (a fixed one when available, otherwise the
    tightest float), double-differences the single-difference bank against
    it, decorrelates, searches (sensor-constrained when the coupling mode
    and epoch allow), and feeds any accepted subset back into the filter:
    a full acceptance pins channels to integers, a partial one conditions
    the filter on the accepted decorrelated combinations only.

    ``eligible``, when given, limits which *float* channels may enter the
    search (already-fixed channels are exempt).

    Returns ``(state, success_prob or nan, fix_event or None)``.
    """
    tuning = config.tuning
    wavelength = tuning.wavelength
    x = state.x
    p = state.covariance

    gids = sorted(gid for gid, _ in epoch.sdcp
                  if state.slot_of(gid) >= 0 and gid in epoch.gps_positions)
    fixed = [g for g in gids if state.fixed_mask[state.slot_of(g)]]
    unfixed = [g for g in gids if not state.fixed_mask[state.slot_of(g)]]
    if eligible is not None:
        unfixed = [g for g in unfixed if g in eligible]
    if not unfixed:
        return state, float("nan"), None

    if fixed:
        ref = min(fixed, key=lambda g: state.slot_of(g))
    else:
        ref = min(unfixed, key=lambda g: (p[_sd_index(state, g),
                                            _sd_index(state, g)], g))
    free = [g for g in unfixed if g != ref]
    if not free:
        return state, float("nan"), None
    if len(free) > IAR_MAX_SEARCH:
        free = sorted(free, key=lambda g: (p[_sd_index(state, g),
                                             _sd_index(state, g)], g))
        free = free[:IAR_MAX_SEARCH]

    idx = [_sd_index(state, g) for g in free] + [_sd_index(state, ref)]
    n_dd = len(free)
    tmat = np.zeros((n_dd, n_dd + 1))
    tmat[:, :n_dd] = np.eye(n_dd)
    tmat[:, n_dd] = -1.0
    dd_floats = tmat @ x[idx]
    dd_cov = tmat @ p[np.ix_(idx, idx)] @ tmat.T
    dd_cov = 0.5 * (dd_cov + dd_cov.T)
    dist_z = decorrelate(AmbiguityDistribution(floats=dd_floats,
                                               covariance=dd_cov))

    ctx = None
    if (config.coupling_mode == "full" and epoch.range_obs is not None
            and epoch.bearing_obs is not None):
        sdcp_map = dict(epoch.sdcp)
        los = {g: _unit(epoch.gps_positions[g] - x[CHIEF_POS])
               for g in gids}
        rows = [los[ref] - los[g] for g in free]
        phases = [sdcp_map[g] - sdcp_map[ref] for g in free]
        row_gids = list(free)
        if state.fixed_mask[state.slot_of(ref)]:
            ref_int = x[_sd_index(state, ref)]
            for g in fixed:
                if g == ref:
                    continue
                known = x[_sd_index(state, g)] - ref_int
                rows.append(los[ref] - los[g])
                phases.append(sdcp_map[g] - sdcp_map[ref] - known)
                row_gids.append(g)

        # The candidate baseline is triangulated from the differenced
        # carrier phases, so their noise blurs it; propagate that blur
        # into the range/bearing gate sigmas or the gate will veto and
        # pull candidates on what is really phase noise.
        inflation = epoch.noise_inflation or {}

        def _sd_var(g):
            return tuning.meas_carrier ** 2 + inflation.get(f"sdcp:{g}", 0.0)

        var_rng_geom = var_ang_geom = 0.0
        gmat = np.asarray(rows)
        if len(rows) >= 3:
            dd_var = np.array([_sd_var(g) + _sd_var(ref) for g in row_gids])
            try:
                hmat = np.linalg.solve(gmat.T @ gmat, gmat.T)
                cov_b = (hmat * dd_var) @ hmat.T
                b_est = x[CHIEF_POS] - x[DEPUTY_POS]
                rng_est = float(np.linalg.norm(b_est))
                u = b_est / rng_est
                var_rng_geom = float(u @ cov_b @ u)
                var_perp = max(float(np.trace(cov_b)) - var_rng_geom, 0.0)
                var_ang_geom = 0.5 * var_perp / rng_est ** 2
            except np.linalg.LinAlgError:
                pass

        b = state.biases
        ctx = ConstraintContext(
            observed_range=epoch.range_obs - b.range_bias,
            observed_azimuth=epoch.bearing_obs[0] - b.azimuth_bias,
            observed_elevation=epoch.bearing_obs[1] - b.elevation_bias,
            sigma_range=math.sqrt(tuning.meas_range ** 2 + p[68, 68]
                                  + var_rng_geom),
            sigma_azimuth=math.sqrt(tuning.meas_angle ** 2 + p[69, 69]
                                    + var_ang_geom),
            sigma_elevation=math.sqrt(tuning.meas_angle ** 2 + p[70, 70]
                                      + var_ang_geom),
            geometry=gmat,
            ddcp_phases=np.asarray(phases),
            dcm_eci_to_sensor=epoch.attitude,
            wavelength=wavelength,
            free_rows=np.arange(n_dd))

    if ctx is not None:
        try:
            result = constrained_search(dist_z, ctx)
        except SingularGeometryError:
            ctx = None
            result = classical_ils_search(dist_z)
    else:
        result = classical_ils_search(dist_z)

    partial = partial_resolve(dist_z, result, use_shrink=ctx is not None)
    if partial.subset_size == 0:
        return state, float(result.success_prob), None

    sel = np.asarray(partial.indices, dtype=np.int64)
    values = np.rint(np.asarray(partial.values, dtype=float)).astype(np.int64)

    # Consistency veto: the accepted integers must agree with the float
    # solution within its own statistics.  A candidate that the search
    # liked but that sits many sigma from the float estimate signals an
    # inconsistent filter or a constraint-steered excursion; discard it.
    resid = values - dist_z.floats[sel]
    cov_sel = dist_z.covariance[np.ix_(sel, sel)]
    m2 = float(resid @ np.linalg.solve(cov_sel, resid))
    if m2 > chi2.ppf(0.999, len(sel)):
        return state, float(result.success_prob), None

    # Score against truth in the decorrelated double-difference space,
    # which is invariant to the floating single-difference datum.
    tsd = true_sd_map[epoch.time]
    true_dd = np.array([tsd[g] - tsd[ref] for g in free], dtype=np.int64)
    z_true = dist_z.z_matrix.T @ true_dd
    wrong = int(np.sum(values != z_true[sel]))

    full_fix = partial.subset_size == n_dd
    if full_fix:
        n_dd_int = np.rint(inverse_transform(
            dist_z.z_matrix, np.asarray(result.best))).astype(np.int64)
        rows_dd = np.zeros((n_dd, navfilter.N_STATES))
        for r, g in enumerate(free):
            rows_dd[r, _sd_index(state, g)] = 1.0
            rows_dd[r, _sd_index(state, ref)] = -1.0
        state = constrain_linear(state, rows_dd, n_dd_int.astype(float))
        if state.fixed_mask[state.slot_of(ref)]:
            ref_int = int(round(state.x[_sd_index(state, ref)]))
            state = apply_fixes(state, [state.slot_of(g) for g in free],
                                n_dd_int + ref_int)
        else:
            # The datum channel is only code-level observable; round it and
            # let the clock states absorb the common-mode residual.
            ref_int = int(round_half_away(state.x[_sd_index(state, ref)]))
            slots = [state.slot_of(g) for g in free] + [state.slot_of(ref)]
            vals = np.concatenate([n_dd_int + ref_int, [ref_int]])
            state = apply_fixes(state, slots, vals)
    else:
        rows_z = np.asarray(dist_z.z_matrix, dtype=float).T[sel]
        combo = rows_z @ tmat
        rows = np.zeros((len(sel), navfilter.N_STATES))
        rows[:, idx] = combo
        state = constrain_linear(state, rows, values.astype(float))

    event = {
        "time": float(epoch.time),
        "kind": "fix",
        "full": bool(full_fix),
        "subset": int(partial.subset_size),
        "n_searched": int(n_dd),
        "wrong": wrong,
        "success_prob": float(partial.success_prob),
        "shrink": float(partial.shrink_factor),
        "constrained": ctx is not None,
        "reference": int(ref),
        "channels": [int(g) for g in free],
        # Honest-error introspection: worst float error against truth and
        # worst formal sigma, both in double-difference cycles.
        "float_err_max": float(np.max(np.abs(dd_floats - true_dd))),
        "sigma_dd_max": float(np.sqrt(np.max(np.diag(dd_cov)))),
    }
    return state, float(result.success_prob), event


def run_scenario(config: ScenarioConfig, output_dir=None,
                 constellation=None) -> RunReport:
    """Simulate one full rendezvous and run the navigation pipeline on it.

    Per measurement epoch the pipeline is: time update to the epoch,
    commanded-impulse feed-through, channel allocation and warm starting,
    the joint gated EKF measurement update, and (at GPS epochs past the
    warm-up, coupling permitting) one integer-resolution attempt.  An epoch
    whose update raises is logged and skipped; a run with at least 10% of
    its epochs skipped is flagged ``degraded``.

    Returns a :class:`RunReport`; when ``output_dir`` is given the report
    is also written there (history.csv, report.json, config.json).
    """
    config.validate()
    truth = generate_truth(config)
    epochs, aux = synthesize_measurements(config, truth, constellation)
    by_time = {e.time: e for e in epochs}
    tuning = config.tuning
    wavelength = tuning.wavelength

    rng_init = substream(config.seed, "init")
    c0 = truth.chief_state(0)
    d0 = truth.deputy_state(0)
    chief_init = OrbitState(
        c0.position + rng_init.normal(scale=config.init_pos_error, size=3),
        c0.velocity + rng_init.normal(scale=config.init_vel_error, size=3), 0.0)
    deputy_init = OrbitState(
        d0.position + rng_init.normal(scale=config.init_pos_error, size=3),
        d0.velocity + rng_init.normal(scale=config.init_vel_error, size=3), 0.0)
    state = initialize_filter(chief_init, deputy_init, tuning)
    state.x[CHIEF_CLOCK] = rng_init.normal(scale=config.init_clock_error)
    state.x[DEPUTY_CLOCK] = rng_init.normal(scale=config.init_clock_error)
    state.epoch = 0.0

    impulse_by_time = {}
    for t, dv in config.impulses:
        impulse_by_time.setdefault(float(t), []).append(
            np.asarray(dv, dtype=float))
    times = sorted(set(by_time) | set(impulse_by_time))

    events = list(truth.events)
    fix_events = []
    records = []
    known_pairs = {}
    track_age = {}
    n_skipped = 0
    n_attempt_epochs = 0
    first_fix_index = None
    stage_trace_logged = False
    use_external = config.coupling_mode in ("loose", "full")
    run_iar = config.coupling_mode in ("loose", "full")

    for t in times:
        dt = t - state.epoch
        if dt > 0.0:
            try:
                state = time_update(state, tuning, dt)
            except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
                events.append({"time": float(t), "kind": "run-aborted",
                               "detail": str(exc)})
                break

        for burn in impulse_by_time.get(t, []):
            dv_eci = rtn_frame(state.deputy).T @ burn
            state.x[DEPUTY_VEL] += dv_eci
            sigma = max(1e-4, 0.01 * float(np.linalg.norm(burn)))
            state.covariance[DEPUTY_VEL, DEPUTY_VEL] += sigma ** 2 * np.eye(3)

        epoch = by_time.get(t)
        if epoch is None:
            continue

        is_gps = bool(epoch.sdcp)
        skipped = False
        report = None
        success_prob = float("nan")
        fixed_this_epoch = False
        try:
            if is_gps:
                gids = sorted(gid for gid, _ in epoch.sdcp)
                prev_ids = state.channel_ids.copy()
                mapping = allocate_channels(state, gids, tuning, t)
                warm = set()
                cur_pairs = aux.pair_ids[t]
                for gid, slot in mapping.items():
                    if prev_ids[slot] != gid:
                        warm.add(gid)
                    elif known_pairs.get(gid) != cur_pairs[gid]:
                        navfilter._reset_channel(state, slot, tuning)
                        warm.add(gid)
                    known_pairs[gid] = cur_pairs[gid]
                track_age = {gid: 1 if gid in warm
                             else track_age.get(gid, 0) + 1
                             for gid in mapping}
                if warm:
                    graphic_c = dict(epoch.graphic.get("chief", []))
                    sdcp_map = dict(epoch.sdcp)
                    for gid in warm:
                        if gid not in mapping or gid not in graphic_c:
                            continue
                        slot = mapping[gid]
                        gp = epoch.gps_positions[gid]
                        rc = float(np.linalg.norm(gp - state.x[CHIEF_POS]))
                        rd = float(np.linalg.norm(gp - state.x[DEPUTY_POS]))
                        state.x[AMB_ZD.start + slot] = 2.0 * (
                            graphic_c[gid] - rc - state.x[CHIEF_CLOCK]) / wavelength
                        state.x[AMB_SD.start + slot] = sdcp_map[gid] - (
                            (rc - rd) + (state.x[CHIEF_CLOCK]
                                         - state.x[DEPUTY_CLOCK])) / wavelength

            state, report = measurement_update(
                state, epoch, tuning,
                use_range=use_external, use_bearing=use_external)

            if is_gps and run_iar and t >= config.iar_warmup:
                n_attempt_epochs += 1
                mature = {gid for gid, age in track_age.items()
                          if age >= IAR_MIN_TRACK}
                state, success_prob, fix = _attempt_fix(
                    state, epoch, config, aux.true_sd, eligible=mature)
                if not stage_trace_logged:
                    events.append({
                        "time": float(t), "kind": "stage-trace",
                        "stages": ["time-update", "measurement-update",
                                   "integer-resolution"]})
                    stage_trace_logged = True
                if fix is not None:
                    fix_events.append(fix)
                    fixed_this_epoch = True
        except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            events.append({"time": float(t), "kind": "epoch-error",
                           "detail": str(exc)})
            n_skipped += 1
            skipped = True

        if fixed_this_epoch and first_fix_index is None:
            first_fix_index = len(records)

        i = truth.index_of(t)
        rtn = rtn_frame(truth.chief_state(i))
        rel_est = state.x[DEPUTY_POS] - state.x[CHIEF_POS]
        rel_true = truth.deputy_pos[i] - truth.chief_pos[i]
        vel_est = state.x[DEPUTY_VEL] - state.x[CHIEF_VEL]
        vel_true = truth.deputy_vel[i] - truth.chief_vel[i]
        err = rtn @ (rel_est - rel_true)
        verr = rtn @ (vel_est - vel_true)
        pcc = state.covariance[CHIEF_POS, CHIEF_POS]
        pdd = state.covariance[DEPUTY_POS, DEPUTY_POS]
        pcd = state.covariance[CHIEF_POS, DEPUTY_POS]
        rel_cov = rtn @ (pcc + pdd - pcd - pcd.T) @ rtn.T
        sigmas = np.sqrt(np.maximum(np.diag(rel_cov), 0.0))
        n_alloc = int(np.sum(state.channel_ids >= 0))
        n_fixed = int(np.sum(state.fixed_mask))
        records.append({
            "time": float(t),
            "err_r": float(err[0]), "err_t": float(err[1]),
            "err_n": float(err[2]),
            "verr_r": float(verr[0]), "verr_t": float(verr[1]),
            "verr_n": float(verr[2]),
            "sigma_r": float(sigmas[0]), "sigma_t": float(sigmas[1]),
            "sigma_n": float(sigmas[2]),
            "n_fixed": n_fixed,
            "fixed_fraction": (n_fixed / n_alloc) if n_alloc else 0.0,
            "success_prob": success_prob,
            "n_rows": report.n_rows if report else 0,
            "n_rejected": report.n_rejected if report else 0,
            "skipped": int(skipped),
        })

    pos_err = np.array([[r["err_r"], r["err_t"], r["err_n"]]
                        for r in records]) if records else np.zeros((0, 3))
    vel_err = np.array([[r["verr_r"], r["verr_t"], r["verr_n"]]
                        for r in records]) if records else np.zeros((0, 3))
    metrics = navigation_metrics(
        pos_err, vel_err, first_fix_index,
        fix_records=[(e["subset"], e["wrong"]) for e in fix_events])

    n_meas = len(records)
    degraded = n_meas > 0 and n_skipped >= 0.1 * n_meas
    fix_times = {e["time"] for e in fix_events}
    post = [r for r in records if r["time"] >= config.iar_warmup]
    summary = dict(metrics)
    summary.update({
        "coupling_mode": config.coupling_mode,
        "scenario": config.name,
        "seed": int(config.seed),
        "duration": float(config.duration),
        "n_epochs": n_meas,
        "n_skipped": int(n_skipped),
        "first_fix_time": (float(fix_events[0]["time"]) if fix_events
                           else None),
        "n_full_fix_events": int(sum(1 for e in fix_events if e["full"])),
        "n_wrong_fix_events": int(sum(1 for e in fix_events
                                      if e["wrong"] > 0)),
        "pct_epochs_with_fix": (100.0 * len(fix_times) / n_attempt_epochs
                                if n_attempt_epochs else 0.0),
        "mean_fixed_fraction": (float(np.mean([r["fixed_fraction"]
                                               for r in post]))
                                if post else 0.0),
        "final_fixed_channels": int(np.sum(state.fixed_mask)),
    })

    run = RunReport(config=config, records=records, fix_events=fix_events,
                    events=events, summary=summary, degraded=degraded)
    if output_dir is not None:
        run.write(output_dir)
    return run
