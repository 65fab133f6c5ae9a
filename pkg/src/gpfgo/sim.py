"""Seedable urban-canyon GNSS/odometry scenario generator.

Flat-earth local frame (x east, y north, z up). Satellites sit on a large
shell on a fixed azimuth/elevation grid that slowly rotates in azimuth; canyon
walls are azimuth sectors that block everything below a given elevation, and
a blocked satellite is received via a reflection (NLOS) with a positive,
heavy-tailed range delay and depressed C/N0.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, PreconditionError
from .gp import StateKnot
from .measurements import OdometryMeasurement, SatObservation

TWO_PI = 2.0 * math.pi
STREAMS = ("los_noise", "nlos_delay", "nlos_extra", "cn0", "odometry")


def _default_route():
    # closed 1200 m square at 8 m/s: 600 s, corners on whole seconds
    return [[0.0, 0.0, 0.0, 8.0], [1200.0, 0.0, 0.0, 8.0], [1200.0, 1200.0, 0.0, 8.0],
            [0.0, 1200.0, 0.0, 8.0], [0.0, 0.0, 0.0, 8.0]]


def _default_constellation():
    return {"count": 12, "radius": 2.6e7, "elevations_deg": [15.0, 25.0, 35.0, 60.0],
            "rotation_rate": 0.004, "elevation_mask_deg": 5.0}


@dataclass
class ScenarioConfig:
    """Scenario parameters; angles in the JSON form are degrees.

    ``route`` entries are ``[x, y, z, speed]`` or ``[x, y, z, speed, hold]``:
    ``speed`` applies to the segment leaving the waypoint and ``hold`` is a
    stationary dwell (s) before leaving it. ``mask_sectors`` entries are
    ``[az_from_deg, az_to_deg, blocked_below_deg]``.
    """

    seed: int = 0
    duration: Optional[float] = 600.0
    epoch_rate: float = 1.0
    route: list = field(default_factory=_default_route)
    constellation: dict = field(default_factory=_default_constellation)
    mask_sectors: list = field(default_factory=lambda: [[60.0, 120.0, 40.0], [240.0, 300.0, 40.0]])
    los_sigma: float = 1.0
    los_bias: float = 0.0
    nlos_bias_mean: float = 30.0
    nlos_bias_model: str = "exponential"
    nlos_extra_sigma: float = 2.0
    cn0_los_mean: float = 45.0
    cn0_nlos_depression: float = 10.0
    cn0_sigma: float = 2.0
    odom_rate: float = 1.0
    odom_sigma: float = 0.05
    clock_bias0: float = 30.0
    clock_drift: float = 0.2

    def __post_init__(self):
        self.constellation = {**_default_constellation(), **(self.constellation or {})}
        for name in ("los_sigma", "nlos_extra_sigma", "cn0_sigma", "odom_sigma"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.nlos_bias_mean < 0:
            raise ConfigError("nlos_bias_mean must be non-negative")
        if self.nlos_bias_model not in ("exponential", "gaussian"):
            raise ConfigError(f"unknown nlos_bias_model {self.nlos_bias_model!r}")
        if not self.epoch_rate > 0 or not self.odom_rate > 0:
            raise ConfigError("rates must be positive")
        if self.odom_rate > self.epoch_rate:
            raise ConfigError("odom_rate must not exceed epoch_rate")
        if len(self.route) < 2:
            raise ConfigError("route needs at least two waypoints")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    t: float
    truth: StateKnot
    observations: list
    odometry: Optional[OdometryMeasurement] = None


@dataclass
class Scenario:
    config: ScenarioConfig
    epochs: list

    @property
    def truth(self) -> list:
        return [e.truth for e in self.epochs]

    @property
    def odometry(self) -> list:
        return [e.odometry for e in self.epochs if e.odometry is not None]


def make_streams(seed: int) -> dict:
    """One counter-based generator per noise source, keyed by ``(seed, name)``."""
    out = {}
    for name in STREAMS:
        digest = hashlib.sha256(f"gpfgo:{int(seed)}:{name}".encode()).digest()
        out[name] = np.random.Generator(np.random.Philox(key=int.from_bytes(digest[:16], "little")))
    return out


def _segments(route):
    """``(t_start, t_end, p_start, velocity)`` per leg, holds included."""
    segs, t = [], 0.0
    pts = [np.asarray(w[:3], dtype=float) for w in route]
    for k, w in enumerate(route[:-1]):
        hold = float(w[4]) if len(w) > 4 else 0.0
        if hold > 0:
            segs.append((t, t + hold, pts[k], np.zeros(3)))
            t += hold
        length = float(np.linalg.norm(pts[k + 1] - pts[k]))
        if length == 0.0:
            continue
        speed = float(w[3])
        if not speed > 0:
            raise ConfigError(f"waypoint {k} needs a positive speed")
        dur = length / speed
        segs.append((t, t + dur, pts[k], (pts[k + 1] - pts[k]) / dur))
        t += dur
    if not segs:
        raise PreconditionError("route has zero length")
    return segs


def route_duration(config: ScenarioConfig) -> float:
    return _segments(config.route)[-1][1]


def _closed(route) -> bool:
    return np.allclose(route[0][:3], route[-1][:3])


def _pose_at(segs, t, total, loop):
    if t >= total:
        if loop:
            t = math.fmod(t, total)
        else:
            s = segs[-1]
            return s[2] + s[3] * (s[1] - s[0]), np.zeros(3)
    for t0, t1, p0, v in segs:
        if t0 <= t < t1:
            return p0 + v * (t - t0), v
    s = segs[-1]
    return s[2] + s[3] * (s[1] - s[0]), s[3]


def generate_truth(config: ScenarioConfig) -> list:
    """Ground-truth knots at ``epoch_rate`` along the waypoint route.

    Speed is constant per leg; the clock bias drifts linearly. Closed routes
    repeat when ``duration`` exceeds one lap, open ones stop at the last
    waypoint.
    """
    segs = _segments(config.route)
    total = segs[-1][1]
    duration = total if config.duration is None else float(config.duration)
    n = int(math.floor(duration * config.epoch_rate + 1e-9)) + 1
    loop = _closed(config.route)
    out = []
    for k in range(n):
        t = k / config.epoch_rate
        p, v = _pose_at(segs, t, total, loop)
        out.append(StateKnot(t, p, v, config.clock_bias0 + config.clock_drift * t, config.clock_drift))
    return out


def satellite_positions(config: ScenarioConfig, t: float) -> np.ndarray:
    c = config.constellation
    n = int(c["count"])
    els = np.radians(np.asarray(c["elevations_deg"], dtype=float))
    el = els[np.arange(n) % len(els)]
    az = TWO_PI * np.arange(n) / n + float(c["rotation_rate"]) * t
    R = float(c["radius"])
    return R * np.column_stack([np.cos(el) * np.sin(az), np.cos(el) * np.cos(az), np.sin(el)])


def look_angles(sat_pos: np.ndarray, receiver: np.ndarray):
    """Elevation and azimuth (from north, clockwise) in the receiver's tangent frame."""
    d = sat_pos - receiver
    rng = np.linalg.norm(d, axis=1)
    el = np.arcsin(np.clip(d[:, 2] / rng, -1.0, 1.0))
    az = np.mod(np.arctan2(d[:, 0], d[:, 1]), TWO_PI)
    return el, az


def place_constellation(config: ScenarioConfig, t: float, receiver=(0.0, 0.0, 0.0)):
    """Satellite positions with their elevation/azimuth seen from ``receiver``."""
    receiver = np.asarray(receiver, dtype=float)
    R = float(config.constellation["radius"])
    if not R > np.linalg.norm(receiver):
        raise PreconditionError("shell radius must exceed the route extent")
    sats = satellite_positions(config, t)
    el, az = look_angles(sats, receiver)
    return sats, el, az


def in_mask(config: ScenarioConfig, el, az) -> np.ndarray:
    """True where a canyon sector blocks the direct path."""
    el = np.atleast_1d(np.asarray(el, dtype=float))
    az = np.atleast_1d(np.asarray(az, dtype=float))
    blocked = np.zeros(el.shape, dtype=bool)
    for a0, a1, emax in config.mask_sectors:
        a0, a1, emax = math.radians(a0), math.radians(a1), math.radians(emax)
        if a1 - a0 >= TWO_PI:
            inside = np.ones_like(blocked)
        else:
            lo, hi = a0 % TWO_PI, a1 % TWO_PI
            inside = (az >= lo) & (az < hi) if lo <= hi else (az >= lo) | (az < hi)
        blocked |= inside & (el < emax)
    return blocked


def synthesize_epoch(truth: StateKnot, sats, config: ScenarioConfig, rng: dict) -> EpochRecord:
    """Pseudoranges and C/N0 for one epoch.

    ``sats`` is ``(positions, elevations, azimuths)`` as returned by
    :func:`place_constellation`. Every stream draws once per satellite so
    the sequences do not depend on which satellites end up NLOS.
    """
    pos, el, az = sats
    n = len(pos)
    los_noise = rng["los_noise"].normal(0.0, config.los_sigma, n)
    if config.nlos_bias_model == "exponential":
        delay = config.nlos_bias_mean * rng["nlos_delay"].standard_exponential(n)
    else:
        delay = config.nlos_bias_mean * np.maximum(
            1.0 + 0.3 * rng["nlos_delay"].standard_normal(n), 0.0)
    extra = rng["nlos_extra"].normal(0.0, config.nlos_extra_sigma, n)
    cn0_noise = rng["cn0"].normal(0.0, config.cn0_sigma, n)

    nlos = in_mask(config, el, az)
    mask_el = math.radians(config.constellation.get("elevation_mask_deg", 0.0))
    rng_geo = np.linalg.norm(pos - truth.p, axis=1)
    obs = []
    for k in range(n):
        if el[k] < mask_el:
            continue
        rho = rng_geo[k] + truth.b + los_noise[k]
        if nlos[k]:
            rho += delay[k] + extra[k]
        else:
            rho += config.los_bias
        cn0 = config.cn0_los_mean + cn0_noise[k] - (config.cn0_nlos_depression if nlos[k] else 0.0)
        obs.append(SatObservation(f"G{k + 1:02d}", pos[k], float(rho), float(cn0),
                                  float(min(max(el[k], 0.0), math.pi / 2)), float(az[k]),
                                  truth.t, bool(not nlos[k])))
    return EpochRecord(truth.t, truth, obs)


def synthesize_odometry(truth: list, config: ScenarioConfig, rng) -> list:
    """Noisy world-frame displacements at ``odom_rate``."""
    if config.odom_rate > config.epoch_rate:
        raise PreconditionError("odom_rate must not exceed epoch_rate")
    gen = rng["odometry"] if isinstance(rng, dict) else rng
    step = max(1, int(round(config.epoch_rate / config.odom_rate)))
    out = []
    for k in range(step, len(truth), step):
        a, b = truth[k - step], truth[k]
        delta = b.p - a.p + gen.normal(0.0, config.odom_sigma, 3)
        out.append(OdometryMeasurement(a.t, b.t, delta, config.odom_sigma))
    return out


def simulate(config: ScenarioConfig) -> Scenario:
    rng = make_streams(config.seed)
    truth = generate_truth(config)
    epochs = []
    for knot in truth:
        sats = place_constellation(config, knot.t, knot.p)
        epochs.append(synthesize_epoch(knot, sats, config, rng))
    by_end = {round(o.t_j, 9): o for o in synthesize_odometry(truth, config, rng)}
    for ep in epochs:
        ep.odometry = by_end.get(round(ep.t, 9))
    return Scenario(config, epochs)


# --- dataset files -----------------------------------------------------------

OBS_HEADER = ["t", "sat_id", "sat_x", "sat_y", "sat_z", "pseudorange", "cn0", "elevation",
              "azimuth", "los_truth"]
TRUTH_HEADER = ["t", "px", "py", "pz", "vx", "vy", "vz", "b", "d"]
ODOM_HEADER = ["t_i", "t_j", "dx", "dy", "dz", "sigma"]


def _f(x) -> str:
    return repr(float(x))


def write_dataset(scenario: Scenario, out_dir) -> Path:
    """Write observations/truth/odometry CSVs and a manifest into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "observations.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBS_HEADER)
        for ep in scenario.epochs:
            for o in ep.observations:
                w.writerow([_f(o.t), o.sat_id, *map(_f, o.sat_pos), _f(o.rho), _f(o.cn0),
                            _f(o.elevation), _f(o.azimuth), int(bool(o.los_truth))])
    with open(out / "truth.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_HEADER)
        for k in scenario.truth:
            w.writerow([_f(v) for v in (k.t, *k.x)])
    with open(out / "odometry.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ODOM_HEADER)
        for o in scenario.odometry:
            w.writerow([_f(o.t_i), _f(o.t_j), *map(_f, o.delta_p), _f(o.sigma)])
    manifest = {"format": "gpfgo-scenario-1", "seed": scenario.config.seed,
                "config": scenario.config.to_dict()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def load_dataset(path) -> Scenario:
    """Read a directory written by :func:`write_dataset`."""
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"no scenario manifest in {path}") from exc
    config = ScenarioConfig.from_dict(manifest["config"])

    truth = []
    with open(path / "truth.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            x = [float(row[k]) for k in TRUTH_HEADER[1:]]
            truth.append(StateKnot.from_vector(float(row["t"]), x))
    epochs = {round(k.t, 9): EpochRecord(k.t, k, []) for k in truth}

    with open(path / "observations.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            t = float(row["t"])
            obs = SatObservation(row["sat_id"],
                                 [float(row["sat_x"]), float(row["sat_y"]), float(row["sat_z"])],
                                 float(row["pseudorange"]), float(row["cn0"]),
                                 float(row["elevation"]), float(row["azimuth"]), t,
                                 bool(int(row["los_truth"])))
            epochs[round(t, 9)].observations.append(obs)

    with open(path / "odometry.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            o = OdometryMeasurement(float(row["t_i"]), float(row["t_j"]),
                                    [float(row["dx"]), float(row["dy"]), float(row["dz"])],
                                    float(row["sigma"]))
            epochs[round(o.t_j, 9)].odometry = o
    return Scenario(config, [epochs[k] for k in sorted(epochs)])
