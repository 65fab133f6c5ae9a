"""Run orchestration: sliding-window re-solve per epoch, metrics and comparison tables.

Each epoch the knot window grows to cover the new epoch, is trimmed to the
last ``window`` seconds, and the whole window is re-optimised from a warm
start. The knot falling off the front is summarised by a prior on the new
first knot. Per-epoch wall time covers screening, graph construction, the
solve and (for mixture models) the online refit.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import gp
from .errors import ConfigError, GpfgoError
from .gp import STATE_DIM, GpHyperParams, StateKnot
from .graph import Factor, GraphConfig, build_graph
from .measurements import pseudorange_batch
from .nlos import (ClassifierModel, FeatureHistory, ScreenPolicy, extract_features,
                   loads_classifier, predict, screen_epoch, train)
from .noise import NoiseModel
from .sim import Scenario, ScenarioConfig, load_dataset, simulate
from .solver import COST_ULPS, SolveOptions, solve_array
from .vbgmm import (GmmModel, OnlineGmmState, RefreshConfig, ResidualWindow, VbPrior,
                    dumps_gmm, export_components_csv, loads_gmm, refresh_policy)

log = logging.getLogger(__name__)

NOISE_MODELS = ("gaussian", "cauchy", "huber", "gmm_shift", "gmm_naive")
SCREENING = ("off", "baseline", "oracle")
OUTPUT_ROOT_ENV = "GPFGO_OUTPUT_ROOT"
COMPANION_SEED_OFFSET = 7919


@dataclass
class VbSettings:
    K_max: int = 5
    capacity: int = 1000
    every: int = 10
    min_samples: int = 200
    max_iters: int = 200
    weight_floor: float = 0.01
    scope: str = "pooled"
    prior: dict = field(default_factory=dict)

    def refresh_config(self, shift: bool, fallback_sigma: float) -> RefreshConfig:
        return RefreshConfig(self.every, self.min_samples, self.K_max, self.max_iters,
                             self.weight_floor, VbPrior(**self.prior), shift, fallback_sigma)


@dataclass
class RunConfig:
    """One estimator run.

    ``scenario`` is a dataset directory written by ``simulate``. ``classifier``
    optionally points at a saved logistic model for ``screening='baseline'``;
    without it a model is trained on a companion scenario with a shifted seed.
    ``gmm_init`` optionally seeds the mixture used before the first refit.
    """

    scenario: str = ""
    noise_model: str = "gaussian"
    screening: str = "off"
    knot_rate: float = 1.0
    window: float = 30.0
    pseudorange_sigma: float = 1.0
    elevation_weighting: bool = False
    kernel_scale: Optional[float] = None
    vb: VbSettings = field(default_factory=VbSettings)
    classifier: Optional[str] = None
    threshold: float = 0.5
    min_keep: int = 4
    gmm_init: Optional[str] = None
    qc_pv: float = 1.0
    qc_clk: float = 0.1
    init_sigma: tuple = (50.0, 50.0, 50.0, 20.0, 20.0, 20.0, 100.0, 10.0)
    boundary_sigma: tuple = (1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 2.0, 0.5)
    output: Optional[str] = None
    label: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.vb, dict):
            self.vb = VbSettings(**self.vb)
        if self.noise_model not in NOISE_MODELS:
            raise ConfigError(f"noise_model must be one of {NOISE_MODELS}, got {self.noise_model!r}")
        if self.screening not in SCREENING:
            raise ConfigError(f"screening must be one of {SCREENING}, got {self.screening!r}")
        if not self.knot_rate > 0 or not self.window > 0 or not self.pseudorange_sigma > 0:
            raise ConfigError("knot_rate, window and pseudorange_sigma must be positive")
        if self.vb.scope not in ("pooled", "per_satellite"):
            raise ConfigError(f"unknown vb scope {self.vb.scope!r}")
        self.init_sigma = tuple(float(s) for s in self.init_sigma)
        self.boundary_sigma = tuple(float(s) for s in self.boundary_sigma)
        if len(self.init_sigma) != STATE_DIM or len(self.boundary_sigma) != STATE_DIM:
            raise ConfigError("init_sigma and boundary_sigma need 8 entries")

    @property
    def name(self) -> str:
        return self.label or self.noise_model

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "RunConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown run-config keys: {sorted(unknown)}")
        d = dict(d)
        if base_dir is not None:
            for key in ("scenario", "classifier", "gmm_init"):
                if d.get(key) and not os.path.isabs(d[key]):
                    d[key] = str(Path(base_dir) / d[key])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read run config {path}: {exc}") from exc
        cfg = cls.from_dict(d, base_dir=path.parent)
        cfg.check_files()
        return cfg

    def check_files(self):
        if not (Path(self.scenario) / "manifest.json").is_file():
            raise ConfigError(f"scenario dataset not found: {self.scenario}")
        for key in ("classifier", "gmm_init"):
            p = getattr(self, key)
            if p and not Path(p).is_file():
                raise ConfigError(f"{key} file not found: {p}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricsReport:
    name: str
    noise_model: str
    screening: str
    scenario_id: str
    times: list
    errors_2d: list
    wall_ms: list
    failed: list
    n_used: list
    n_excluded: list
    n_protest: list
    snapshots: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    events: list = field(default_factory=list)
    cost_increases: int = 0

    @property
    def n_epochs(self) -> int:
        return len(self.errors_2d)

    @property
    def mean_2d(self) -> float:
        return float(np.mean(self.errors_2d))

    @property
    def std_2d(self) -> float:
        return float(np.std(self.errors_2d))

    @property
    def mean_ms(self) -> float:
        return float(np.mean(self.wall_ms))

    @property
    def std_ms(self) -> float:
        return float(np.std(self.wall_ms))

    @property
    def failures(self) -> int:
        return int(sum(self.failed))

    def summary(self) -> dict:
        return {"name": self.name, "noise_model": self.noise_model, "screening": self.screening,
                "scenario": self.scenario_id, "epochs": self.n_epochs,
                "mean_2d_m": self.mean_2d, "std_2d_m": self.std_2d,
                "mean_epoch_ms": self.mean_ms, "std_epoch_ms": self.std_ms,
                "failures": self.failures, "excluded": int(sum(self.n_excluded)),
                "retained_under_protest": int(sum(self.n_protest)), "gmm_refits": len(self.snapshots),
                "cost_increases": self.cost_increases}

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(self.summary(), indent=2) + "\n")
        with open(out / "epochs.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "t", "error_2d_m", "epoch_ms", "failed", "used", "excluded",
                        "retained_under_protest"])
            for k in range(self.n_epochs):
                w.writerow([k, repr(self.times[k]), repr(self.errors_2d[k]), repr(self.wall_ms[k]),
                            int(self.failed[k]), self.n_used[k], self.n_excluded[k], self.n_protest[k]])
        with open(out / "residuals.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "sat_id", "residual_m"])
            w.writerows((e, s, repr(r)) for e, s, r in self.residuals)
        if self.snapshots:
            text = "".join(f"# snapshot epoch {e} key {k}\n" + dumps_gmm(g, _scope(k), e) + "\n"
                           for e, k, g in self.snapshots)
            (out / "gmm_snapshots.txt").write_text(text)
            export_components_csv(out / "gmm_components.csv",
                                  [(e, g) for e, k, g in self.snapshots if k is None]
                                  or [(e, g) for e, _, g in self.snapshots])
        return out


def _scope(key) -> str:
    return "pooled" if key is None else f"sat:{key}"


def read_snapshots(path) -> list:
    """``(epoch, gmm)`` pairs from a ``gmm_snapshots.txt`` file."""
    blocks = Path(path).read_text().split("# snapshot epoch ")
    out = []
    for b in blocks[1:]:
        gmm, _, epoch = loads_gmm(b.split("\n", 1)[1])
        out.append((epoch, gmm))
    return out


# --- helpers ----------------------------------------------------------------

def snapshot_fix(observations, iters: int = 10) -> np.ndarray:
    """Single-epoch Gauss-Newton fix of position and clock bias."""
    x = np.zeros(STATE_DIM)
    sat = np.array([o.sat_pos for o in observations])
    rho = np.array([o.rho for o in observations])
    for _ in range(iters):
        e, H, _ = pseudorange_batch(np.broadcast_to(x, (len(rho), STATE_DIM)), sat, rho)
        A = H[:, [0, 1, 2, 6]]
        dx, *_ = np.linalg.lstsq(A, -e, rcond=None)
        x[[0, 1, 2, 6]] += dx
        if np.linalg.norm(dx) < 1e-6:
            break
    return x


def elevation_sigma(sigma0: float, elevation: float, floor_deg: float = 5.0) -> float:
    """``sigma0 / sin(el)`` with the elevation floored to avoid blow-up at the horizon."""
    return sigma0 / math.sin(max(elevation, math.radians(floor_deg)))


def state_at(times: np.ndarray, X: np.ndarray, t: float, hp: GpHyperParams,
             tol: float = 1e-3) -> np.ndarray:
    """Estimate at ``t``: the aligned knot, a GP interpolation, or an extrapolation."""
    k = int(np.searchsorted(times, t))
    for c in (k - 1, k):
        if 0 <= c < len(times) and abs(times[c] - t) <= tol:
            return X[c].copy()
    if k == 0:
        return gp.propagate(X[0], t - times[0])
    if k >= len(times):
        return gp.propagate(X[-1], t - times[-1])
    it = gp.interpolant(times[k - 1], times[k], t, hp)
    return it.lam @ X[k - 1] + it.psi @ X[k]


class _NoiseCache:
    """One NoiseModel object per (model, key) so factors can be reused across epochs."""

    def __init__(self, config: RunConfig, fallback: Optional[GmmModel]):
        self.config = config
        self.fallback = fallback
        m = config.noise_model
        if m == "gaussian":
            self.fixed = NoiseModel.gaussian(config.pseudorange_sigma)
        elif m in ("cauchy", "huber"):
            self.fixed = NoiseModel.m_estimator(m, config.kernel_scale, config.pseudorange_sigma)
        else:
            self.fixed = None
        self._gauss = NoiseModel.gaussian(config.pseudorange_sigma)
        self._mix = {}

    def get(self, gmm_state: Optional[OnlineGmmState], key) -> NoiseModel:
        if self.fixed is not None:
            return self.fixed
        gmm = gmm_state.model_for(key, self.fallback)
        if gmm is None:
            return self._gauss
        nm = self._mix.get(id(gmm))
        if nm is None or nm.gmm is not gmm:
            nm = self._mix[id(gmm)] = NoiseModel.mixture(gmm)
        return nm


_CLASSIFIER_CACHE: dict = {}


def companion_classifier(scenario_config: ScenarioConfig, run_config: RunConfig) -> ClassifierModel:
    """Logistic baseline trained on a companion scenario with a shifted seed.

    Features are collected from an oracle-screened Gaussian run so that the
    residual feature sees a realistic prior state.
    """
    d = scenario_config.to_dict()
    d["seed"] = int(d["seed"]) + COMPANION_SEED_OFFSET
    key = (json.dumps(d, sort_keys=True), run_config.knot_rate, run_config.window,
           run_config.threshold)
    if key not in _CLASSIFIER_CACHE:
        X, y = collect_training_data(simulate(ScenarioConfig.from_dict(d)), run_config)
        model = train(X, y)
        model.threshold = run_config.threshold
        _CLASSIFIER_CACHE[key] = model
    return _CLASSIFIER_CACHE[key]


def collect_training_data(scenario: Scenario, run_config: Optional[RunConfig] = None):
    """``(X, y)`` feature matrix and NLOS labels from an oracle-screened Gaussian run."""
    base = run_config or RunConfig()
    cfg = RunConfig(**{**base.to_dict(), "noise_model": "gaussian", "screening": "oracle",
                       "classifier": None, "gmm_init": None, "output": None})
    rows = []
    run(cfg, scenario=scenario, feature_log=rows)
    X = np.array([fv.as_array() for _, _, fv, _ in rows])
    y = np.array([int(lab) for _, _, _, lab in rows])
    return X, y


# --- main loop ----------------------------------------------------------------

def run(config: RunConfig, scenario: Optional[Scenario] = None,
        classifier=None, feature_log: Optional[list] = None) -> MetricsReport:
    """Process every epoch of a scenario in time order.

    Parameters
    ----------
    config : RunConfig
    scenario : Scenario, optional
        Preloaded scenario; otherwise read from ``config.scenario``.
    classifier : object with ``predict_proba`` and ``threshold``, optional
        Overrides the configured or companion-trained baseline.
    feature_log : list, optional
        Receives ``(epoch, sat_id, SatFeatureVector, is_nlos)`` per observation.
    """
    sc = scenario if scenario is not None else load_dataset(config.scenario)
    hp = GpHyperParams((config.qc_pv,) * 3, config.qc_clk)
    dt = 1.0 / config.knot_rate
    policy = ScreenPolicy(config.min_keep)
    if config.screening == "baseline" and classifier is None:
        if config.classifier:
            classifier = loads_classifier(Path(config.classifier).read_text())
        else:
            classifier = companion_classifier(sc.config, config)
    need_features = config.screening == "baseline" or feature_log is not None
    history = FeatureHistory()

    use_gmm = config.noise_model.startswith("gmm")
    gmm_state = window = refresh = fallback = None
    if use_gmm:
        gmm_state = OnlineGmmState()
        window = ResidualWindow(config.vb.capacity, config.vb.scope)
        refresh = config.vb.refresh_config(config.noise_model == "gmm_shift",
                                           config.pseudorange_sigma)
        if config.gmm_init:
            fallback = loads_gmm(Path(config.gmm_init).read_text())[0]

    noise = _NoiseCache(config, fallback)
    factor_cache = {}
    times = np.zeros(0)
    X = np.zeros((0, STATE_DIM))
    prior_mean = prior_sigma = None
    obs_buf, odo_buf = [], []
    rep = MetricsReport(config.name, config.noise_model, config.screening,
                        f"seed={sc.config.seed}", [], [], [], [], [], [], [])
    opts = SolveOptions()

    for e_idx, ep in enumerate(sc.epochs):
        t0 = time.perf_counter()
        t = ep.t
        obs = list(ep.observations)

        # grow the knot window to cover t
        if len(times) == 0:
            x0 = snapshot_fix(obs) if len(obs) >= 4 else np.zeros(STATE_DIM)
            times, X = np.array([t]), x0[None, :]
            prior_mean, prior_sigma = x0.copy(), config.init_sigma
        while times[-1] < t - 1e-3:
            tn = times[-1] + dt
            times = np.append(times, tn)
            X = np.vstack([X, gp.propagate(X[-1], dt)])
        # trim to the last `window` seconds; the new first knot inherits a prior
        cut = int(np.searchsorted(times, t - config.window - 1e-9))
        if cut > 0:
            times, X = times[cut:], X[cut:]
            prior_mean, prior_sigma = X[0].copy(), config.boundary_sigma
            obs_buf = [o for o in obs_buf if o.t >= times[0] - 1e-3]
            odo_buf = [o for o in odo_buf if o.t_i >= times[0] - 1e-3]
            live = {id(o) for o in obs_buf} | {id(o) for o in odo_buf}
            factor_cache = {k: v for k, v in factor_cache.items() if k in live}

        # screening
        excluded, protest = [], []
        if need_features and obs:
            xp = state_at(times, X, t, hp)
            feats = extract_features(obs, StateKnot.from_vector(t, xp), history)
            if feature_log is not None:
                feature_log.extend((e_idx, o.sat_id, f, not o.los_truth) for o, f in zip(obs, feats))
        if config.screening == "baseline" and obs:
            res = screen_epoch(obs, predict(classifier, feats), policy)
            obs, excluded, protest = res.kept, res.excluded, res.retained_under_protest
        elif config.screening == "oracle" and obs:
            nlos = np.array([not o.los_truth for o in obs])
            res = screen_epoch(obs, (nlos.astype(float), nlos), policy)
            obs, excluded, protest = res.kept, res.excluded, res.retained_under_protest

        obs_buf.extend(obs)
        if ep.odometry is not None and ep.odometry.t_i >= times[0] - 1e-3:
            odo_buf.append(ep.odometry)

        factors = []
        for o in obs_buf:
            nm = noise.get(gmm_state, o.sat_id)
            hit = factor_cache.get(id(o))
            if hit is None or hit[0] is not nm or hit[1].payload is not o:
                used = nm
                if config.elevation_weighting and nm.kind != "gmm":
                    used = nm.with_sigma(elevation_sigma(nm.sigma, o.elevation))
                hit = factor_cache[id(o)] = (nm, Factor.pseudorange(o, used))
            factors.append(hit[1])
        for o in odo_buf:
            hit = factor_cache.get(id(o))
            if hit is None or hit[1].payload is not o:
                hit = factor_cache[id(o)] = (None, Factor.odometry(o))
            factors.append(hit[1])
        failed = False
        try:
            graph = build_graph(times, factors, GraphConfig(hp, prior_mean=prior_mean,
                                                            prior_sigma=prior_sigma))
            Xs, srep = solve_array(graph, X, opts)
            costs = np.asarray(srep.per_iteration_costs)
            if np.any(np.diff(costs) > COST_ULPS * np.finfo(float).eps * np.abs(costs[:-1])):
                rep.cost_increases += 1
            if not np.all(np.isfinite(Xs)):
                raise GpfgoError("non-finite estimate")
            X = Xs
        except (GpfgoError, np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            failed = True
            rep.events.append((e_idx, f"solve failed: {exc}"))
            log.warning("epoch %d: solve failed (%s); keeping the propagated estimate", e_idx, exc)

        xt = state_at(times, X, t, hp)
        if obs:
            e, _, _ = pseudorange_batch(np.broadcast_to(xt, (len(obs), STATE_DIM)),
                                        np.array([o.sat_pos for o in obs]),
                                        np.array([o.rho for o in obs]))
            samples = [(t, o.sat_id, float(r)) for o, r in zip(obs, e)]
            rep.residuals.extend((e_idx, s, r) for _, s, r in samples)
            if use_gmm and not failed:
                window.push(samples)
        if use_gmm:
            before = dict(gmm_state.fit_epochs)
            refresh_policy(window, gmm_state, e_idx, refresh)
            for key, ep_fit in gmm_state.fit_epochs.items():
                if before.get(key) != ep_fit:
                    rep.snapshots.append((e_idx, key, gmm_state.models[key]))
                    if key is None and refresh.shift_elimination:
                        # a pooled re-centring is a clock gauge change: apply it at once
                        s = gmm_state.last_shift.get(None, 0.0)
                        X[:, 6] += s
                        prior_mean = prior_mean.copy()
                        prior_mean[6] += s

        err = float(math.hypot(*(xt[:2] - ep.truth.p[:2])))
        rep.wall_ms.append((time.perf_counter() - t0) * 1e3)
        rep.times.append(float(t))
        rep.errors_2d.append(err)
        rep.failed.append(failed)
        rep.n_used.append(len(obs))
        rep.n_excluded.append(len(excluded))
        rep.n_protest.append(len(protest))

    if use_gmm:
        rep.events.extend(gmm_state.events)
    if config.output:
        rep.write(resolve_output(config.output))
    return rep


def resolve_output(path) -> Path:
    """Relative output paths are placed under ``$GPFGO_OUTPUT_ROOT`` when it is set."""
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


# --- comparison ------------------------------------------------------------------

@dataclass
class Comparison:
    reports: list
    improvements: list

    def rows(self) -> list:
        return sorted(self.reports, key=lambda r: r.mean_2d)

    def table(self) -> str:
        head = ["model", "mean_2d_m", "std_2d_m", "mean_epoch_ms", "std_epoch_ms", "failures"]
        body = [[r.name, f"{r.mean_2d:.3f}", f"{r.std_2d:.3f}", f"{r.mean_ms:.2f}",
                 f"{r.std_ms:.2f}", str(r.failures)] for r in self.rows()]
        widths = [max(len(x) for x in col) for col in zip(head, *body)]
        fmt = lambda row: "  ".join(c.ljust(w) if i == 0 else c.rjust(w)  # noqa: E731
                                    for i, (c, w) in enumerate(zip(row, widths)))
        lines = [fmt(head), fmt(["-" * w for w in widths])] + [fmt(b) for b in body]
        lines.append("(epoch_ms: wall time per epoch including screening, solve and refit)")
        if self.improvements:
            lines.append("")
            lines.append("relative 2D-error improvement (A over B)")
            for a, b, pct in self.improvements:
                lines.append(f"  {a} over {b}: {pct:+.1f}%")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "comparison.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "noise_model", "screening", "mean_2d_m", "std_2d_m",
                        "mean_epoch_ms", "std_epoch_ms", "failures"])
            for r in self.rows():
                w.writerow([r.name, r.noise_model, r.screening, repr(r.mean_2d), repr(r.std_2d),
                            repr(r.mean_ms), repr(r.std_ms), r.failures])
        with open(out / "improvements.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["a", "b", "improvement_pct"])
            w.writerows((a, b, repr(p)) for a, b, p in self.improvements)
        (out / "comparison.txt").write_text(self.table())
        return out


def relative_improvement(mean_a: float, mean_b: float) -> float:
    """Percent improvement of A over B: ``(mean_B - mean_A) / mean_B * 100``."""
    return (mean_b - mean_a) / mean_b * 100.0


def compare(configs, scenario: Optional[Scenario] = None, out_dir=None) -> Comparison:
    """Run each configuration on one shared scenario and tabulate the results."""
    configs = list(configs)
    if not configs:
        raise ConfigError("compare needs at least one run config")
    paths = {str(Path(c.scenario).resolve()) if c.scenario else "" for c in configs}
    if len(paths) > 1:
        raise ConfigError(f"run configs reference different scenarios: {sorted(paths)}")
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise ConfigError("run configs need distinct labels")
    if scenario is None:
        scenario = load_dataset(configs[0].scenario)
    reports = [run(c, scenario=scenario) for c in configs]
    imps = [(a.name, b.name, relative_improvement(a.mean_2d, b.mean_2d))
            for a in reports for b in reports if a is not b]
    result = Comparison(reports, imps)
    if out_dir is not None:
        result.write(out_dir)
    return result


def export_density(snapshots, grid_range=(-10.0, 10.0), n: int = 401) -> list:
    """``(epoch, r, density)`` rows on a uniform grid for each ``(epoch, gmm)`` snapshot."""
    snapshots = list(snapshots)
    if not snapshots:
        raise ValueError("export_density needs at least one snapshot")
    lo, hi = map(float, grid_range)
    if not hi > lo or n < 2:
        raise ValueError("grid range must be increasing with at least two points")
    grid = np.linspace(lo, hi, int(n))
    rows = []
    for snap in snapshots:
        epoch, gmm = snap[0], snap[-1]
        rows.extend((epoch, float(r), float(d)) for r, d in zip(grid, gmm.density(grid)))
    return rows


def write_density_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "r", "density"])
        w.writerows((e, repr(r), repr(d)) for e, r, d in rows)
