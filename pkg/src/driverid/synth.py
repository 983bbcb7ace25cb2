"""Synthetic driving-telemetry generator.

A scripted route per road area (speed-limit zones, curvature, lanes,
intersections with stop signs / traffic signals / yields, and a periodic
traffic stream) is driven by a longitudinal/lateral controller whose
behavior is set by a driver profile.  Every driver gets the same route and
scenario script for an area; only profile parameters and the driver's own
noise stream differ, so channel statistics separate drivers in a controlled
way.  All 31 schema channels are emitted at 100 Hz.

Hard guarantees used by tests: the forward speed never exceeds
``max_target_speed(profile, route)`` (the desired-speed input is clipped and
the first-order speed lag cannot overshoot its input for dt < tau), and the
two turn-indicator channels plus the horn channel are exactly {0, 1} valued.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from .data import AREAS, CANONICAL_CHANNELS, Recording, SAMPLE_RATE_HZ
from .errors import ConfigurationError

DT = 1.0 / SAMPLE_RATE_HZ

# controller constants
ACCEL_MAX = 2.5          # m/s^2
BRAKE_MAX = 4.0          # m/s^2
LAT_ACCEL_MAX = 2.2      # comfort bound for curve speed
WHEELBASE_M = 2.7
STEER_RATIO = 14.0
STOP_DWELL_S = 1.2
CLUTCH_PULSE_S = 0.25
HORN_PULSE_S = 0.7
SENTINEL_DISTANCE_M = 2000.0

#: mean seconds per driver in each area for the source-style dataset scale
DEFAULT_DURATIONS_S = {
    "highway": 238.8,
    "suburban": 251.7,
    "urban": 196.9,
    "tutorial": 171.9,
}

PROFILE_BOUNDS = {
    "speed_factor": (0.70, 1.30),
    "speed_jitter": (0.20, 2.50),
    "headway_s": (0.80, 3.00),
    "lane_bias_m": (-0.50, 0.50),
    "lane_jitter_m": (0.05, 0.40),
    "pedal_tau_s": (0.20, 2.00),
    "turn_signal_prob": (0.05, 0.95),
    "steer_smooth_s": (0.05, 0.80),
    "shift_rpm": (0.80, 1.25),
    "reaction_latency_s": (0.05, 1.00),
}


@dataclass(frozen=True)
class DriverProfile:
    name: str
    speed_factor: float
    speed_jitter: float
    headway_s: float
    lane_bias_m: float
    lane_jitter_m: float
    pedal_tau_s: float
    turn_signal_prob: float
    steer_smooth_s: float
    shift_rpm: float
    reaction_latency_s: float

    def validate(self) -> "DriverProfile":
        for key, (lo, hi) in PROFILE_BOUNDS.items():
            v = getattr(self, key)
            if not lo <= v <= hi:
                raise ConfigurationError(
                    f"profile {self.name!r}: {key}={v} outside bounds [{lo}, {hi}]")
        return self


def sample_profiles(n: int, seed: int = 0, spread: float = 1.0) -> list[DriverProfile]:
    """Deterministic latin-hypercube-style profiles.

    ``spread`` in (0, 1] scales how far parameters sit from the range
    centers: 1.0 gives well-separated drivers, small values make drivers
    hard to tell apart.
    """
    if n < 1:
        raise ConfigurationError(f"need at least one profile, got {n}")
    if not 0.0 < spread <= 1.0:
        raise ConfigurationError(f"spread must be in (0, 1], got {spread}")
    rng = np.random.default_rng(seed)
    values = {}
    for key, (lo, hi) in PROFILE_BOUNDS.items():
        # one stratum per driver, shuffled independently per parameter
        quantiles = (rng.permutation(n) + 0.5) / n
        center = 0.5 * (lo + hi)
        values[key] = center + (lo + quantiles * (hi - lo) - center) * spread
    return [DriverProfile(name=f"driver{i:02d}",
                          **{key: float(values[key][i]) for key in PROFILE_BOUNDS}
                          ).validate()
            for i in range(n)]


@dataclass(frozen=True)
class RouteFeature:
    position_m: float
    control: str      # "none" | "stop" | "signal" | "yield"
    turn: bool = False


@dataclass(frozen=True)
class RouteScript:
    area: str
    length_m: float
    limit_zones: tuple[tuple[float, float], ...]       # (start_m, limit m/s)
    curvature_zones: tuple[tuple[float, float], ...]   # (start_m, 1/m signed)
    lane_zones: tuple[tuple[float, int, float], ...]   # (start_m, n_lanes, width_m)
    features: tuple[RouteFeature, ...]
    traffic_base_mps: float
    traffic_amp_mps: float
    traffic_period_s: float
    traffic_spacing_m: float
    signal_period_s: float = 45.0
    signal_green_frac: float = 0.55

    @property
    def max_limit(self) -> float:
        return max(v for _, v in self.limit_zones)


def default_route(area: str, route_seed: int = 0) -> RouteScript:
    """Fixed per-area scenario, lightly jittered by the route seed."""
    if area not in AREAS:
        raise ConfigurationError(f"unknown area {area!r}")
    rng = np.random.default_rng((route_seed, AREAS.index(area)))
    j = lambda scale: float(rng.uniform(-scale, scale))

    if area == "highway":
        return RouteScript(
            area=area, length_m=8000.0,
            limit_zones=((0, 33.3), (3000 + j(200), 25.0), (4500 + j(200), 33.3)),
            curvature_zones=((0, 0.0), (1200, 1 / 900), (2400, 0.0),
                             (5000, -1 / 700), (6200, 0.0)),
            lane_zones=((0, 3, 3.75),),
            features=(RouteFeature(2600 + j(100), "yield"),
                      RouteFeature(5600 + j(100), "none", turn=True)),
            traffic_base_mps=27.0, traffic_amp_mps=4.0, traffic_period_s=80.0,
            traffic_spacing_m=130.0)
    if area == "suburban":
        return RouteScript(
            area=area, length_m=4200.0,
            limit_zones=((0, 16.7), (1500 + j(100), 13.9), (2800 + j(100), 19.4)),
            curvature_zones=((0, 0.0), (500, 1 / 180), (900, 0.0), (1600, -1 / 140),
                             (2000, 0.0), (3200, 1 / 220), (3600, 0.0)),
            lane_zones=((0, 2, 3.5), (2200, 1, 3.5), (3000, 2, 3.5)),
            features=(RouteFeature(700 + j(50), "signal"),
                      RouteFeature(1300 + j(50), "none"),
                      RouteFeature(1900 + j(50), "stop", turn=True),
                      RouteFeature(2500 + j(50), "signal"),
                      RouteFeature(3100 + j(50), "yield", turn=True),
                      RouteFeature(3800 + j(50), "signal")),
            traffic_base_mps=12.0, traffic_amp_mps=3.0, traffic_period_s=60.0,
            traffic_spacing_m=80.0)
    if area == "urban":
        return RouteScript(
            area=area, length_m=2600.0,
            limit_zones=((0, 11.1), (900 + j(60), 8.3), (1700 + j(60), 13.9)),
            curvature_zones=((0, 0.0), (300, 1 / 35), (380, 0.0), (800, -1 / 30),
                             (880, 0.0), (1400, 1 / 45), (1500, 0.0),
                             (2100, -1 / 40), (2200, 0.0)),
            lane_zones=((0, 1, 3.2), (1000, 2, 3.2), (1900, 1, 3.2)),
            features=(RouteFeature(250 + j(30), "signal"),
                      RouteFeature(550 + j(30), "stop", turn=True),
                      RouteFeature(850 + j(30), "signal", turn=True),
                      RouteFeature(1150 + j(30), "none"),
                      RouteFeature(1450 + j(30), "signal"),
                      RouteFeature(1750 + j(30), "stop"),
                      RouteFeature(2050 + j(30), "yield", turn=True),
                      RouteFeature(2350 + j(30), "signal")),
            traffic_base_mps=8.0, traffic_amp_mps=2.5, traffic_period_s=45.0,
            traffic_spacing_m=55.0)
    return RouteScript(
        area=area, length_m=3200.0,
        limit_zones=((0, 8.3), (800 + j(60), 16.7), (2000 + j(60), 25.0)),
        curvature_zones=((0, 0.0), (600, 1 / 120), (900, 0.0),
                         (1800, -1 / 250), (2200, 0.0)),
        lane_zones=((0, 2, 3.5),),
        features=(RouteFeature(400 + j(40), "stop"),
                  RouteFeature(1200 + j(40), "signal", turn=True),
                  RouteFeature(2400 + j(40), "yield")),
        traffic_base_mps=10.0, traffic_amp_mps=3.0, traffic_period_s=70.0,
        traffic_spacing_m=90.0)


def max_target_speed(profile: DriverProfile, route: RouteScript) -> float:
    """Declared upper bound on the forward-speed channel for this pairing."""
    return route.max_limit * profile.speed_factor + profile.speed_jitter


class _ZoneTrack:
    """O(1) lookup of piecewise-constant route properties along s (wrapping)."""

    def __init__(self, zones, length):
        self.starts = [z[0] for z in zones]
        self.values = [z[1:] if len(z) > 2 else z[1] for z in zones]
        self.length = length
        self.idx = 0

    def at(self, s_mod):
        while (self.idx + 1 < len(self.starts)
               and self.starts[self.idx + 1] <= s_mod):
            self.idx += 1
        if self.starts[self.idx] > s_mod:  # wrapped to a new lap
            self.idx = 0
            while (self.idx + 1 < len(self.starts)
                   and self.starts[self.idx + 1] <= s_mod):
                self.idx += 1
        return self.values[self.idx]


def generate_recording(profile: DriverProfile, route: RouteScript,
                       duration_s: float, seed: int = 0) -> Recording:
    """Simulate one driver over one area route; returns a schema recording."""
    profile.validate()
    n = int(round(duration_s * SAMPLE_RATE_HZ))
    if n < 1:
        raise ConfigurationError(f"duration {duration_s}s gives no frames")
    rng = np.random.default_rng(np.random.SeedSequence(
        entropy=seed, spawn_key=(zlib.crc32(profile.name.encode()),
                                 AREAS.index(route.area))))

    # pre-drawn bounded noise streams (uniform in [-1, 1])
    des_noise = rng.uniform(-1.0, 1.0, n)
    lat_noise = rng.uniform(-1.0, 1.0, n)
    steer_noise = rng.uniform(-1.0, 1.0, n)
    vib_noise = rng.uniform(-1.0, 1.0, (n, 2))
    horn_draw = rng.random(n)
    signal_decisions = rng.random(max(64, len(route.features) * 64))

    jitter_period = 20.0 + 20.0 * float(rng.random())
    jitter_phase = 2.0 * math.pi * float(rng.random())

    limits = _ZoneTrack(route.limit_zones, route.length_m)
    curves = _ZoneTrack(route.curvature_zones, route.length_m)
    lanes = _ZoneTrack(route.lane_zones, route.length_m)

    by_kind = {"intersection": sorted(f.position_m for f in route.features)}
    for kind in ("stop", "signal", "yield"):
        by_kind[kind] = sorted(f.position_m for f in route.features if f.control == kind)
    turn_positions = sorted(f.position_m for f in route.features if f.turn)

    latency_frames = max(1, int(round(profile.reaction_latency_s / DT)))
    des_buffer = [0.0] * latency_frames

    cols = {name: np.zeros(n) for name in CANONICAL_CHANNELS}

    v = 0.0
    s = 0.0
    lap = 0
    theta_road = 0.0
    lat = profile.lane_bias_m
    lat_prev = lat
    steer = 0.0
    gear = 1
    clutch_timer = 0.0
    horn_timer = 0.0
    traffic_pos = 0.35 * route.traffic_spacing_m
    stop_wait = 0.0
    served_stop = -1.0       # route position of the last satisfied stop/signal
    indicator_until = -1.0   # s-position until which the indicator stays on
    indicator_decided_at = -1.0
    decision_idx = 0

    gear_up = [7.0, 13.0, 19.0, 26.0, 34.0]
    fast_driver = profile.speed_factor > 1.02

    for i in range(n):
        t = i * DT
        s_mod = s % route.length_m
        new_lap = int(s // route.length_m)
        if new_lap != lap:
            lap = new_lap
            served_stop = -1.0
            indicator_until = -1.0
            indicator_decided_at = -1.0

        limit = limits.at(s_mod)
        kappa = curves.at(s_mod)
        n_lanes, lane_width = lanes.at(s_mod)

        def dist_ahead(positions):
            for p in positions:
                if p >= s_mod - 1e-9:
                    return p - s_mod
            if positions:
                return positions[0] + route.length_m - s_mod
            return SENTINEL_DISTANCE_M

        d_intersection = dist_ahead(by_kind["intersection"])
        d_stop = dist_ahead(by_kind["stop"])
        d_signal = dist_ahead(by_kind["signal"])
        d_yield = dist_ahead(by_kind["yield"])

        # traffic stream: same field for all drivers
        v_traffic = max(0.0, route.traffic_base_mps + route.traffic_amp_mps
                        * math.sin(2.0 * math.pi * t / route.traffic_period_s))
        traffic_pos += v_traffic * DT
        gap = (traffic_pos - s) % route.traffic_spacing_m
        if gap < 1.0:
            gap += route.traffic_spacing_m

        # desired speed: limit preference with bounded wander
        jitter = profile.speed_jitter * (
            0.7 * math.sin(2.0 * math.pi * t / jitter_period + jitter_phase)
            + 0.3 * des_noise[i])
        v_des = limit * profile.speed_factor + jitter
        v_des = min(v_des, max_target_speed(profile, route))

        # curve comfort
        if abs(kappa) > 1e-9:
            v_des = min(v_des, math.sqrt(LAT_ACCEL_MAX / abs(kappa)))

        # headway control
        if gap < v * profile.headway_s + 5.0:
            v_des = min(v_des, max(0.0, v_traffic
                                   + 0.5 * (gap - v * profile.headway_s) / max(profile.headway_s, 0.8)))

        # stop signs and red signals: braking envelope, dwell, then release
        def stopping_envelope(d):
            return math.sqrt(2.0 * 0.8 * BRAKE_MAX * max(d - 2.0, 0.0))

        next_stop_kind = None
        d_ctrl = SENTINEL_DISTANCE_M
        ctrl_pos = s_mod + d_stop
        if d_stop < d_ctrl and served_stop < ctrl_pos - 1.0:
            d_ctrl, next_stop_kind = d_stop, "stop"
        sig_pos = s_mod + d_signal
        if d_signal < d_ctrl and served_stop < sig_pos - 1.0:
            phase = (t + 0.013 * sig_pos) % route.signal_period_s
            if phase > route.signal_green_frac * route.signal_period_s:
                d_ctrl, next_stop_kind = d_signal, "signal"
        if next_stop_kind is not None and d_ctrl < 120.0:
            v_des = min(v_des, stopping_envelope(d_ctrl))
            if d_ctrl < 5.0 and v < 0.3:
                stop_wait += DT
                release = (stop_wait >= STOP_DWELL_S if next_stop_kind == "stop"
                           else ((t + 0.013 * sig_pos) % route.signal_period_s)
                           <= route.signal_green_frac * route.signal_period_s)
                if release:
                    served_stop = s_mod + d_ctrl
                    stop_wait = 0.0
        else:
            stop_wait = 0.0

        # yields: slow near the feature
        if d_yield < 30.0:
            v_des = min(v_des, max(3.0, 0.45 * limit))

        # reaction latency: controller acts on a delayed desired speed
        des_buffer.append(v_des)
        v_des_used = des_buffer.pop(0)

        a_cmd = (v_des_used - v) / profile.pedal_tau_s
        a_cmd = max(-BRAKE_MAX, min(ACCEL_MAX, a_cmd))
        v = max(0.0, v + a_cmd * DT)
        s += v * DT

        # gear with hysteresis scaled by the shift preference
        while gear < 6 and v > gear_up[gear - 1] * profile.shift_rpm:
            gear += 1
            clutch_timer = CLUTCH_PULSE_S
        while gear > 1 and v < (gear_up[gear - 2] * profile.shift_rpm - 1.5):
            gear -= 1
            clutch_timer = CLUTCH_PULSE_S
        clutch = 1.0 if clutch_timer > 0.0 else 0.0
        clutch_timer = max(0.0, clutch_timer - DT)

        # lateral offset around the preferred bias (bounded wander)
        tau_lat = 1.0 + 4.0 * profile.steer_smooth_s
        lat_prev = lat
        lat += DT / tau_lat * (profile.lane_bias_m - lat) \
            + profile.lane_jitter_m * math.sqrt(DT) * 0.6 * lat_noise[i]
        lat_cap = 0.5 * lane_width - 0.4
        lat = max(-lat_cap, min(lat_cap, lat))
        lat_rate = (lat - lat_prev) / DT

        # steering: curvature feed-forward plus lane correction, low-passed
        steer_target = WHEELBASE_M * kappa * STEER_RATIO + 2.0 * lat_rate
        steer += DT / max(profile.steer_smooth_s, 0.05) * (steer_target - steer)
        steer += 0.002 * steer_noise[i]

        theta_road += kappa * v * DT
        yaw = math.atan2(lat_rate, max(v, 2.0))
        heading = theta_road + yaw

        # turn indicators: one decision per approach to a turning intersection
        d_turn = dist_ahead(turn_positions)
        turn_pos = s_mod + d_turn
        approach = 15.0 + 2.5 * v
        if d_turn < approach and indicator_decided_at != turn_pos:
            indicator_decided_at = turn_pos
            use = signal_decisions[decision_idx % len(signal_decisions)]
            decision_idx += 1
            if use < profile.turn_signal_prob:
                indicator_until = s + d_turn + 6.0
        indicator = 1.0 if s < indicator_until else 0.0
        indicator_on_intersection = indicator if d_intersection < 15.0 else 0.0

        # horn: occasional reaction to being cut off
        if horn_timer <= 0.0 and gap < 0.35 * v * profile.headway_s \
                and horn_draw[i] < 0.05:
            horn_timer = HORN_PULSE_S
        horn = 1.0 if horn_timer > 0.0 else 0.0
        horn_timer = max(0.0, horn_timer - DT)

        vx = v * math.cos(heading)
        vy = v * math.sin(heading)

        cols["Acceleration (x)"][i] = a_cmd * math.cos(heading)
        cols["Acceleration (y)"][i] = a_cmd * math.sin(heading) \
            + v * v * kappa  # centripetal component
        cols["Acceleration (z)"][i] = 0.03 * (1.0 + 0.1 * v) * vib_noise[i, 0]
        cols["Distance to next vehicle"][i] = min(gap, SENTINEL_DISTANCE_M)
        cols["Distance to next intersection"][i] = min(d_intersection, SENTINEL_DISTANCE_M)
        cols["Distance to next stop sign"][i] = min(d_stop, SENTINEL_DISTANCE_M)
        cols["Distance to next traffic signal"][i] = min(d_signal, SENTINEL_DISTANCE_M)
        cols["Distance to next yield sign"][i] = min(d_yield, SENTINEL_DISTANCE_M)
        cols["Distance to completion"][i] = max(route.length_m - s_mod, 0.0)
        cols["Gear"][i] = gear
        cols["Clutch pedal"][i] = clutch
        cols["Number of lanes present"][i] = n_lanes
        cols["Fast lane"][i] = 1.0 if (fast_driver and n_lanes > 1) else 0.0
        cols["Location in lane (right)"][i] = 0.5 * lane_width + lat
        cols["Location in lane (center)"][i] = lat
        cols["Location in lane (left)"][i] = 0.5 * lane_width - lat
        cols["Lane width"][i] = lane_width
        cols["Acceleration pedal"][i] = (max(0.0, a_cmd / ACCEL_MAX)
                                         * (0.4 if clutch else 1.0))
        cols["Brake pedal"][i] = max(0.0, -a_cmd / BRAKE_MAX)
        cols["Steering wheel angle"][i] = steer
        cols["Curve radius"][i] = (1.0 / kappa) if abs(kappa) > 1e-4 else 10000.0
        cols["Road angle"][i] = theta_road
        cols["Speed (x)"][i] = vx
        cols["Speed (y)"][i] = vy
        cols["Speed (z)"][i] = 0.01 * vib_noise[i, 1]
        cols["Speed (next vehicle)"][i] = v_traffic
        cols["Speed limit"][i] = limit
        cols["Turn indicators"][i] = indicator
        cols["Turn indicators on intersection"][i] = indicator_on_intersection
        cols["Horn"][i] = horn
        cols["Vehicle heading"][i] = heading % (2.0 * math.pi)

    frames = np.column_stack([cols[name] for name in CANONICAL_CHANNELS])
    return Recording(driver=profile.name, area=route.area, frames=frames)


def generate_synthetic(profiles: list[DriverProfile],
                       routes: dict[str, RouteScript] | None = None,
                       durations_s: dict[str, float] | None = None,
                       seed: int = 0) -> list[Recording]:
    """All (driver, area) recordings; identical scenario scripts per area."""
    if routes is None:
        routes = {area: default_route(area) for area in AREAS}
    if durations_s is None:
        durations_s = dict(DEFAULT_DURATIONS_S)
    recordings = []
    for profile in profiles:
        for area, route in routes.items():
            recordings.append(generate_recording(
                profile, route, durations_s[area], seed=seed))
    return recordings
