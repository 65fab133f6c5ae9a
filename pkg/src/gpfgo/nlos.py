"""NLOS pre-screening: per-satellite features, a pluggable classifier and exclusion.

Features combine the satellite's own signal (C/N0, elevation, residual against
the propagated prior state), the epoch context across all tracked satellites
and its C/N0 change since the previous epoch. Any object with
``predict_proba(features) -> probabilities`` can drive :func:`screen_epoch`;
:class:`ClassifierModel` is the bundled logistic-regression baseline.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .errors import DegenerateLabelsError, DimensionMismatchError, InvalidModelError
from .gp import StateKnot
from .measurements import pseudorange_residual

log = logging.getLogger(__name__)

FEATURE_NAMES = ("cn0", "elevation", "residual_prior", "cn0_epoch_mean", "cn0_epoch_std",
                 "cn0_delta", "sat_count")


@dataclass(frozen=True)
class SatFeatureVector:
    cn0: float
    elevation: float
    residual_prior: float
    cn0_epoch_mean: float
    cn0_epoch_std: float
    cn0_delta: float
    sat_count: int

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURE_NAMES], dtype=float)


class FeatureHistory:
    """Last C/N0 seen per satellite."""

    def __init__(self):
        self.last_cn0 = {}

    def delta(self, sat_id, cn0) -> float:
        prev = self.last_cn0.get(sat_id)
        return 0.0 if prev is None else cn0 - prev

    def update(self, epoch):
        for o in epoch:
            self.last_cn0[o.sat_id] = o.cn0


def extract_features(epoch, prior_state: StateKnot, history: FeatureHistory = None) -> list:
    """One feature vector per observation; updates ``history`` afterwards."""
    if not epoch:
        raise ValueError("extract_features needs a non-empty epoch")
    history = history if history is not None else FeatureHistory()
    cn0 = np.array([o.cn0 for o in epoch])
    mean, std = float(cn0.mean()), float(cn0.std())
    out = [SatFeatureVector(o.cn0, o.elevation, pseudorange_residual(prior_state, o), mean, std,
                            history.delta(o.sat_id, o.cn0), len(epoch))
           for o in epoch]
    history.update(epoch)
    return out


def as_matrix(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        return np.atleast_2d(features).astype(float)
    rows = [f.as_array() if isinstance(f, SatFeatureVector) else np.asarray(f, dtype=float)
            for f in features]
    if not rows:
        return np.zeros((0, len(FEATURE_NAMES)))
    return np.array(rows, dtype=float).reshape(len(rows), -1)


class NlosClassifier(Protocol):
    threshold: float

    def predict_proba(self, X: np.ndarray) -> np.ndarray: ...


@dataclass
class ClassifierModel:
    """Logistic regression on standardised features."""

    weights: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray
    threshold: float = 0.5

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        self.scale = np.asarray(self.scale, dtype=float)
        if not (self.weights.shape == self.mean.shape == self.scale.shape):
            raise InvalidModelError("weights, mean and scale must have equal length")
        if np.any(~(self.scale > 0)):
            raise InvalidModelError("standardisation scales must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise InvalidModelError("threshold must lie in (0, 1)")

    @property
    def dim(self) -> int:
        return len(self.weights)

    def standardize(self, X) -> np.ndarray:
        return (X - self.mean) / self.scale

    def predict_proba(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise DimensionMismatchError(f"model expects {self.dim} features, got {X.shape[1]}")
        return expit(self.standardize(X) @ self.weights + self.bias)


@dataclass
class TrainOptions:
    l2: float = 1e-4
    tol: float = 1e-8
    max_steps: int = 10_000
    threshold: float = 0.5
    standardize: bool = True
    loss_trace: list = field(default_factory=list)


def _loss(Z, y, w, b, l2):
    z = Z @ w + b
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))


def train(X, y, options: TrainOptions = None) -> ClassifierModel:
    """Fit the logistic baseline by gradient descent with backtracking line search.

    ``y`` is 1 for NLOS. The bias is not penalised. The mean loss makes the
    fit invariant to duplicating the dataset.
    """
    opts = options or TrainOptions()
    X = as_matrix(X)
    y = np.asarray(y, dtype=float).ravel()
    if len(np.unique(y)) < 2:
        raise DegenerateLabelsError("training data must contain both LOS and NLOS samples")
    if opts.standardize:
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
    else:
        mean, scale = np.zeros(X.shape[1]), np.ones(X.shape[1])
    Z = (X - mean) / scale
    n = len(y)
    w, b = np.zeros(X.shape[1]), 0.0
    loss = _loss(Z, y, w, b, opts.l2)
    trace = opts.loss_trace
    trace.clear()
    trace.append(loss)
    step = 1.0
    for _ in range(opts.max_steps):
        p = expit(Z @ w + b)
        gw = Z.T @ (p - y) / n + opts.l2 * w
        gb = float(np.mean(p - y))
        gnorm2 = float(gw @ gw + gb * gb)
        if gnorm2 == 0.0:
            break
        step = min(step * 2.0, 1e6)
        while True:
            new = _loss(Z, y, w - step * gw, b - step * gb, opts.l2)
            if new <= loss - 0.5 * step * gnorm2 or step < 1e-12:
                break
            step *= 0.5
        if new > loss:
            break
        w, b = w - step * gw, b - step * gb
        done = loss - new < opts.tol
        loss = new
        trace.append(loss)
        if done:
            break
    return ClassifierModel(w, b, mean, scale, opts.threshold)


def predict(model: NlosClassifier, features):
    """``(probabilities, is_nlos)`` with ``is_nlos = p >= threshold``."""
    p = np.asarray(model.predict_proba(as_matrix(features)), dtype=float)
    return p, p >= model.threshold


@dataclass
class ScreenPolicy:
    min_keep: int = 4


@dataclass
class ScreenResult:
    kept: list
    excluded: list
    retained_under_protest: list


def screen_epoch(epoch, predictions, policy: ScreenPolicy = None) -> ScreenResult:
    """Drop flagged observations while keeping at least ``min_keep`` of them.

    ``predictions`` is ``(probabilities, flags)`` aligned with ``epoch``. When
    too few unflagged observations remain, the least suspicious flagged ones
    are put back and reported as retained under protest.
    """
    policy = policy or ScreenPolicy()
    prob, flags = (np.asarray(a) for a in predictions)
    if len(prob) != len(epoch) or len(flags) != len(epoch):
        raise DimensionMismatchError("predictions must align with the epoch")
    keep = ~flags.astype(bool)
    need = min(policy.min_keep, len(epoch)) - int(keep.sum())
    protest = []
    if need > 0:
        flagged = np.flatnonzero(~keep)
        order = flagged[np.argsort(prob[flagged], kind="stable")][:need]
        keep[order] = True
        protest = [epoch[i] for i in sorted(order)]
        log.info("t=%.3f: %d flagged observation(s) retained under protest",
                 epoch[0].t if epoch else float("nan"), len(protest))
    return ScreenResult([o for o, k in zip(epoch, keep) if k],
                        [o for o, k in zip(epoch, keep) if not k], protest)


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic (ties averaged)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("ROC-AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def dumps_classifier(model: ClassifierModel) -> str:
    def row(name, arr):
        return name + " " + " ".join(repr(float(v)) for v in arr)

    return "\n".join(["# gpfgo logistic v1", "features " + " ".join(FEATURE_NAMES[:model.dim]),
                      row("weights", model.weights), f"bias {model.bias!r}",
                      row("mean", model.mean), row("scale", model.scale),
                      f"threshold {model.threshold!r}"]) + "\n"


def loads_classifier(text: str) -> ClassifierModel:
    kv = {}
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            key, _, rest = line.partition(" ")
            kv[key] = rest.split()
    try:
        return ClassifierModel(np.array(kv["weights"], dtype=float), float(kv["bias"][0]),
                               np.array(kv["mean"], dtype=float), np.array(kv["scale"], dtype=float),
                               float(kv.get("threshold", ["0.5"])[0]))
    except (KeyError, ValueError, IndexError) as exc:
        raise InvalidModelError(f"malformed classifier file: {exc}") from exc


def write_labeled_csv(path, rows):
    """``rows`` are ``(epoch, sat_id, SatFeatureVector, is_nlos)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "sat_id", *FEATURE_NAMES, "nlos"])
        for epoch, sat_id, fv, label in rows:
            w.writerow([epoch, sat_id, *(repr(float(v)) for v in fv.as_array()), int(label)])


def read_labeled_csv(path):
    """Returns ``(X, y)``."""
    X, y = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            X.append([float(row[n]) for n in FEATURE_NAMES])
            y.append(int(row["nlos"]))
    return np.array(X, dtype=float).reshape(-1, len(FEATURE_NAMES)), np.array(y, dtype=int)
