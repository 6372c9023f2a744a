"""Numerical check of the soft-min prototype score and its gradient.

The score of a point ``y`` against prototypes ``eta_k`` under a linear
metric ``L`` is::

    rho_k    = max(eps_rho, ||L (y - eta_k)||)
    lse      = tau * log(sum_k exp(-rho_k / tau))      (-> -min rho as tau -> 0)
    softmin  = -lse
    score    = exp(-softmin) = exp(lse)

and its gradient is ``-score * sum_k w_k L^T L (y - eta_k) / rho_k`` with
``w = softmax(-rho / tau)``.  Gradient ascent on the score therefore pulls
``y`` toward the prototype it is closest to.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RHO_FLOOR = 1e-8


@dataclass(frozen=True)
class PrototypeSet:
    prototypes: np.ndarray  # (K, d)
    metric: np.ndarray  # (m, d)
    tau: float
    rho_floor: float = RHO_FLOOR

    def __post_init__(self):
        protos = np.atleast_2d(np.asarray(self.prototypes, dtype=np.float64))
        metric = np.atleast_2d(np.asarray(self.metric, dtype=np.float64))
        if protos.shape[0] < 1:
            raise ValueError("need at least one prototype")
        if metric.shape[1] != protos.shape[1]:
            raise ValueError(f"metric has {metric.shape[1]} columns, prototypes have dim {protos.shape[1]}")
        if np.linalg.det(metric.T @ metric) <= 1e-12:
            raise ValueError("metric must have full column rank")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.rho_floor > 0:
            raise ValueError("rho_floor must be positive")
        object.__setattr__(self, "prototypes", protos)
        object.__setattr__(self, "metric", metric)

    @property
    def dim(self):
        return self.prototypes.shape[1]

    @property
    def gram(self):
        return self.metric.T @ self.metric

    def distances(self, y):
        return np.linalg.norm((np.asarray(y) - self.prototypes) @ self.metric.T, axis=1)

    def scaled(self, c):
        return PrototypeSet(self.prototypes, c * self.metric, self.tau, self.rho_floor)


@dataclass(frozen=True)
class ScoreReport:
    score: float
    softmin: float
    gradient: np.ndarray
    weights: np.ndarray
    rho: np.ndarray = field(repr=False)
    floored: np.ndarray = field(repr=False)


def _softmin_parts(y, ps):
    raw = ps.distances(y)
    floored = raw < ps.rho_floor
    rho = np.where(floored, ps.rho_floor, raw)
    z = -rho / ps.tau
    zmax = z.max()
    e = np.exp(z - zmax)
    total = e.sum()
    lse = ps.tau * (zmax + np.log(total))
    return rho, floored, e / total, lse


def soft_min_score(y, ps):
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (ps.dim,):
        raise ValueError(f"y must have shape ({ps.dim},), got {y.shape}")
    rho, floored, w, lse = _softmin_parts(y, ps)
    score = float(np.exp(lse))
    diff = y - ps.prototypes
    # d rho_k / dy vanishes where the floor is active.
    coef = np.where(floored, 0.0, w / rho)
    grad_rho = (coef[:, None] * diff).sum(axis=0) @ ps.gram
    # s'(softmin) = -score; d softmin/dy = sum_k w_k d rho_k/dy.
    gradient = -score * grad_rho
    return ScoreReport(score, -lse, gradient, w, rho, floored)


def score_value(y, ps):
    return soft_min_score(y, ps).score


def fd_gradient(y, ps, h=1e-5):
    """Central-difference gradient of the score."""
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"step h={h} outside [1e-7, 1e-3]")
    y = np.asarray(y, dtype=np.float64)
    grad = np.zeros_like(y)
    for j in range(y.size):
        yp = y.copy()
        ym = y.copy()
        yp[j] += h
        ym[j] -= h
        grad[j] = (score_value(yp, ps) - score_value(ym, ps)) / (2 * h)
    return grad


def relative_error(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def random_instance(rng, d, k, tau, min_rho=0.1, metric_jitter=0.3):
    """Random (y, prototype set) pair with y kept off the distance kink."""
    metric = np.eye(d) + metric_jitter * rng.standard_normal((d, d)) / np.sqrt(d)
    while np.linalg.det(metric.T @ metric) <= 1e-6:
        metric = np.eye(d) + metric_jitter * rng.standard_normal((d, d)) / np.sqrt(d)
    ps = PrototypeSet(rng.uniform(-1, 1, size=(k, d)), metric, tau)
    while True:
        y = rng.uniform(-1.2, 1.2, size=d)
        if ps.distances(y).min() >= min_rho:
            return y, ps


@dataclass
class AscentTrace:
    start: np.ndarray
    final: np.ndarray
    target: int
    reached: int
    distance: float
    iterations: int
    min_alignment: float
    scores: list = field(default_factory=list, repr=False)

    @property
    def success(self):
        return self.reached == self.target and self.distance < 1e-3


@dataclass
class SelectivityReport:
    traces: list

    @property
    def trials(self):
        return len(self.traces)

    @property
    def successes(self):
        return sum(t.success for t in self.traces)

    @property
    def success_fraction(self):
        return self.successes / self.trials if self.traces else 0.0

    @property
    def min_alignment(self):
        return min(t.min_alignment for t in self.traces)


def _alignment(grad, y, ps, w, rho, floored):
    pull = (np.where(floored, 0.0, w / rho)[:, None] * (ps.prototypes - y)).sum(axis=0) @ ps.gram
    ng, npull = np.linalg.norm(grad), np.linalg.norm(pull)
    if ng == 0.0 or npull == 0.0:
        return 1.0
    return float(grad @ pull / (ng * npull))


def gradient_ascent(y0, ps, step=0.05, iters=2000, record=False):
    """Fixed-length steps along the score gradient, halving on any decrease.

    Returns ``(y, iterations_used, min_alignment, scores)``.
    """
    y = np.asarray(y0, dtype=np.float64).copy()
    rep = soft_min_score(y, ps)
    min_align = 1.0
    scores = [rep.score] if record else []
    it = 0
    for it in range(1, iters + 1):
        min_align = min(min_align, _alignment(rep.gradient, y, ps, rep.weights, rep.rho, rep.floored))
        gnorm = np.linalg.norm(rep.gradient)
        if gnorm == 0.0 or step < 1e-12:
            break
        cand = y + step * rep.gradient / gnorm
        cand_rep = soft_min_score(cand, ps)
        if cand_rep.score < rep.score:
            step *= 0.5
            continue
        y, rep = cand, cand_rep
        if record:
            scores.append(rep.score)
    return y, it, min_align, scores


def check_directional_selectivity(ps, trials, seed=17, step=0.05, iters=2000, starts=None):
    """Ascend from random starts and compare against the nearest prototype."""
    if ps.tau > 0.05:
        raise ValueError(f"selectivity check needs tau <= 0.05, got {ps.tau}")
    k = ps.prototypes.shape[0]
    for i in range(k):
        for j in range(i + 1, k):
            if np.linalg.norm(ps.prototypes[i] - ps.prototypes[j]) < 10 * ps.rho_floor:
                raise ValueError(f"prototypes {i} and {j} are not separated")
    if starts is None:
        lo, hi = ps.prototypes.min(axis=0), ps.prototypes.max(axis=0)
        rng = np.random.default_rng(seed)
        starts = [rng.uniform(lo, hi) for _ in range(trials)]
    traces = []
    for y0 in starts:
        y0 = np.asarray(y0, dtype=np.float64)
        target = int(np.argmin(ps.distances(y0)))
        y, used, align, scores = gradient_ascent(y0, ps, step, iters)
        dist = np.linalg.norm(y - ps.prototypes, axis=1)
        reached = int(np.argmin(dist))
        traces.append(AscentTrace(y0, y, target, reached, float(dist[reached]), used, align, scores))
    return SelectivityReport(traces)


GRADCHECK_DIMS = (2, 8, 32)
GRADCHECK_KS = (1, 3, 5)
GRADCHECK_TAUS = (0.3, 0.05)


@dataclass(frozen=True)
class GradcheckRow:
    index: int
    d: int
    k: int
    tau: float
    error: float


def gradcheck_suite(trials=200, taus=GRADCHECK_TAUS, seed=0, h=1e-5):
    """Analytic vs central-difference gradients, cycling through every
    (d, K, tau) combination."""
    rng = np.random.default_rng(seed)
    combos = [(d, k, t) for d in GRADCHECK_DIMS for k in GRADCHECK_KS for t in taus]
    rows = []
    for i in range(trials):
        d, k, tau = combos[i % len(combos)]
        y, ps = random_instance(rng, d, k, tau)
        err = relative_error(soft_min_score(y, ps).gradient, fd_gradient(y, ps, h))
        rows.append(GradcheckRow(i, d, k, float(tau), err))
    return rows
