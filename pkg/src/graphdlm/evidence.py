"""Evidence maximization for the per-slot hyperparameters.

With the transition integrated out, each row of ``X_{t+1}`` is Gaussian with
mean ``[H_prior X_t]_i`` and covariance ``alpha^-1 I + gamma^-1 X_t^T X_t``.
In the eigenbasis of ``X_t^T X_t`` the covariance is diagonal, so the log
density only needs the cached row sums held by :class:`SlotGram`.

Hyperparameters are optimized in unconstrained coordinates
``theta = (log alpha, log gamma, z_1 .. z_{K-1})`` with
``pi = softmax(0, z_1, ..., z_{K-1})``.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .data_io import DayTensor, NormStats
from .dlm_core import SlotGram, SlotHyperParams, SlotModel, build_slot_gram, map_transition
from .errors import GraphDLMError, NumericalOverflowError, SlotError, ValidationError
from .graph_kernels import DiffusionGrid, SensorGraph
from .model import TrainedModel

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
LOG_PRECISION_BOUND = 25.0
LOGIT_BOUND = 30.0


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for :func:`fit_slot`.

    ``fixed_alpha`` / ``fixed_gamma`` pin a precision instead of learning it
    (used for ablations and limit checks).  ``vertex_starts`` adds one extra
    start per kernel with 90% of the mixture weight on that kernel.
    """

    max_iters: int = 200
    grad_tol: float = 1e-6
    restarts: int = 3
    logit_noise: float = 1.0
    init_alpha: float | None = None
    init_gamma: float | None = None
    init_pi: tuple[float, ...] | None = None
    fixed_alpha: float | None = None
    fixed_gamma: float | None = None
    seed: int = 0
    vertex_starts: bool = True

    def __post_init__(self):
        if self.max_iters <= 0 or self.grad_tol <= 0:
            raise ValidationError("max_iters and grad_tol must be positive")
        if self.restarts < 1:
            raise ValidationError("restarts must be >= 1")
        for name in ("init_alpha", "init_gamma", "fixed_alpha", "fixed_gamma"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValidationError(f"{name} must be positive, got {v}")


@dataclass(frozen=True)
class EvidenceObjective:
    gram: SlotGram
    grid: DiffusionGrid

    def __post_init__(self):
        if self.gram.n != self.grid.n or self.gram.K != self.grid.K:
            raise ValidationError(
                f"slot gram (N={self.gram.n}, K={self.gram.K}) does not match grid (N={self.grid.n}, K={self.grid.K})"
            )

    @property
    def size(self) -> int:
        return self.gram.n * self.gram.m


def softmax_pinned(z: np.ndarray) -> np.ndarray:
    """Softmax over ``(0, z_1, ..., z_{K-1})``."""
    full = np.concatenate(([0.0], np.asarray(z, dtype=float)))
    full -= full.max()
    e = np.exp(full)
    return e / e.sum()


def to_theta(hyper: SlotHyperParams) -> np.ndarray:
    pi = np.clip(hyper.pi, 1e-300, None)
    logits = np.log(pi[1:]) - math.log(pi[0])
    return np.concatenate(([math.log(hyper.alpha), math.log(hyper.gamma)], logits))


def from_theta(theta: np.ndarray) -> SlotHyperParams:
    return SlotHyperParams(math.exp(theta[0]), math.exp(theta[1]), softmax_pinned(theta[2:]))


def _terms(obj: EvidenceObjective, alpha: float, gamma: float, pi: np.ndarray):
    g = obj.gram
    s = 1.0 / alpha + g.D / gamma
    Gpi = np.einsum("klj,l->kj", g.gram_kk, pi)
    q = g.resid_sq - 2.0 * (pi @ g.cross) + np.einsum("k,kj->j", pi, Gpi)
    q = np.maximum(q, 0.0)
    return s, q, Gpi


def log_evidence(obj: EvidenceObjective, hyper: SlotHyperParams) -> float:
    """Log marginal likelihood of ``X_{t+1}`` given ``X_t`` and the hyperparameters."""
    n, m = obj.gram.n, obj.gram.m
    s, q, _ = _terms(obj, hyper.alpha, hyper.gamma, hyper.pi)
    value = -0.5 * n * m * LOG_2PI - 0.5 * n * np.sum(np.log(s)) - 0.5 * np.sum(q / s)
    if not np.isfinite(value):
        raise NumericalOverflowError(
            f"non-finite log-evidence at alpha={hyper.alpha:g}, gamma={hyper.gamma:g}",
            alpha=hyper.alpha,
            gamma=hyper.gamma,
        )
    return float(value)


def log_evidence_grad(obj: EvidenceObjective, hyper: SlotHyperParams) -> np.ndarray:
    """Gradient with respect to ``(log alpha, log gamma, z_1 .. z_{K-1})``."""
    return _value_and_grad(obj, hyper.alpha, hyper.gamma, hyper.pi)[1]


def _value_and_grad(obj: EvidenceObjective, alpha: float, gamma: float, pi: np.ndarray):
    g = obj.gram
    n, m = g.n, g.m
    s, q, Gpi = _terms(obj, alpha, gamma, pi)
    value = -0.5 * n * m * LOG_2PI - 0.5 * n * np.sum(np.log(s)) - 0.5 * np.sum(q / s)
    if not np.isfinite(value):
        raise NumericalOverflowError(
            f"non-finite log-evidence at alpha={alpha:g}, gamma={gamma:g}", alpha=alpha, gamma=gamma
        )
    df_ds = -0.5 * n / s + 0.5 * q / s**2
    d_log_alpha = float(np.sum(df_ds * (-1.0 / alpha)))
    d_log_gamma = float(np.sum(df_ds * (-g.D / gamma)))
    d_pi = (g.cross - Gpi) @ (1.0 / s)
    d_logits = pi * (d_pi - pi @ d_pi)
    return float(value), np.concatenate(([d_log_alpha, d_log_gamma], d_logits[1:]))


@dataclass(frozen=True)
class SlotFit:
    hyper: SlotHyperParams
    log_evidence: float
    initial_log_evidence: float
    converged: bool
    n_iter: int
    history: tuple[float, ...] = field(default=(), repr=False)


def initial_hyper(gram: SlotGram, cfg: OptimizerConfig) -> SlotHyperParams:
    """Scale-matched start: alpha from the persistence residual, gamma = alpha, uniform pi."""
    mse = gram.persistence_mse
    scale = float(np.sum(gram.Lambda)) / max(gram.n * gram.m, 1)
    alpha0 = 1.0 / max(mse, 1e-8 * max(scale, 1e-300), 1e-300)
    alpha0 = min(max(alpha0, math.exp(-LOG_PRECISION_BOUND + 1)), math.exp(LOG_PRECISION_BOUND - 1))
    alpha = cfg.fixed_alpha or cfg.init_alpha or alpha0
    gamma = cfg.fixed_gamma or cfg.init_gamma or alpha0
    pi = np.asarray(cfg.init_pi, dtype=float) if cfg.init_pi is not None else np.full(gram.K, 1.0 / gram.K)
    return SlotHyperParams(alpha, gamma, pi)


def fit_slot(gram: SlotGram, grid: DiffusionGrid, cfg: OptimizerConfig = OptimizerConfig(),
             rng: np.random.Generator | None = None) -> SlotFit:
    """Maximize the log-evidence over (alpha, gamma, pi) for one slot.

    The objective is scaled by ``1 / (N m)`` for the optimizer so that
    ``grad_tol`` is a per-entry tolerance.  Restarts after the first perturb the
    mixture logits; the best run wins.  Never raises on non-convergence.
    """
    obj = EvidenceObjective(gram, grid)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    K = gram.K
    scale = 1.0 / obj.size
    free = np.ones(2 + K - 1, dtype=bool)
    if cfg.fixed_alpha is not None:
        free[0] = False
    if cfg.fixed_gamma is not None:
        free[1] = False

    start = initial_hyper(gram, cfg)
    theta0 = to_theta(start)
    init_value = log_evidence(obj, start)

    def unpack(x):
        theta = theta0.copy()
        theta[free] = x
        return theta

    def neg(x):
        theta = unpack(x)
        v, gr = _value_and_grad(obj, math.exp(theta[0]), math.exp(theta[1]), softmax_pinned(theta[2:]))
        return -v * scale, -gr[free] * scale

    bounds = [(-LOG_PRECISION_BOUND, LOG_PRECISION_BOUND)] * 2 + [(-LOGIT_BOUND, LOGIT_BOUND)] * (K - 1)
    bounds = [b for b, f in zip(bounds, free) if f]

    best = None
    if not free.any():
        return SlotFit(start, init_value, init_value, True, 0, (init_value,))
    for r, x0 in enumerate(_starts(theta0[free], K, cfg, rng)):
        history: list[float] = []
        try:
            res = minimize(
                neg, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                callback=lambda xk: history.append(-neg(xk)[0] / scale),
                options={"maxiter": cfg.max_iters, "gtol": cfg.grad_tol, "ftol": 1e-15, "maxls": 50},
            )
        except NumericalOverflowError as exc:
            logger.warning("slot %d restart %d: %s", gram.t, r, exc)
            continue
        value = -res.fun / scale
        _, gr = neg(res.x)
        pg = _projected_grad_norm(res.x, gr, bounds)
        converged = bool(res.success or pg < cfg.grad_tol)
        if best is None or value > best[0]:
            best = (value, unpack(res.x), converged, int(res.nit), tuple(history))
    if best is None:
        warnings.warn(f"slot {gram.t}: every restart failed; keeping the initial point", RuntimeWarning)
        return SlotFit(start, init_value, init_value, False, 0, ())
    value, theta, converged, nit, history = best
    if value < init_value:
        # never return worse than the start
        return SlotFit(start, init_value, init_value, converged, nit, history)
    if not converged:
        logger.warning("slot %d: optimizer stopped before convergence after %d iterations", gram.t, nit)
    hyper = from_theta(theta)
    if cfg.fixed_alpha is not None or cfg.fixed_gamma is not None:
        hyper = SlotHyperParams(cfg.fixed_alpha or hyper.alpha, cfg.fixed_gamma or hyper.gamma, hyper.pi)
    return SlotFit(hyper, value, init_value, converged, nit, history)


def _starts(x_init: np.ndarray, K: int, cfg: OptimizerConfig, rng: np.random.Generator):
    """Initial point, noisy-logit restarts, then one start near each simplex vertex."""
    yield x_init.copy()
    if K < 2:
        return
    for _ in range(cfg.restarts - 1):
        x0 = x_init.copy()
        x0[-(K - 1):] = np.clip(x0[-(K - 1):] + rng.normal(0.0, cfg.logit_noise, size=K - 1),
                                -LOGIT_BOUND, LOGIT_BOUND)
        yield x0
    if cfg.vertex_starts:
        for k in range(K):
            p = np.full(K, 0.1 / (K - 1))
            p[k] = 0.9
            x0 = x_init.copy()
            x0[-(K - 1):] = np.log(p[1:]) - np.log(p[0])
            yield x0


def _projected_grad_norm(x, g, bounds) -> float:
    pg = np.array(g, dtype=float)
    for i, (lo, hi) in enumerate(bounds):
        if x[i] <= lo and pg[i] > 0:
            pg[i] = 0.0
        elif x[i] >= hi and pg[i] < 0:
            pg[i] = 0.0
    return float(np.max(np.abs(pg))) if pg.size else 0.0


def slot_pairs(dt: DayTensor, wrap: bool = True):
    """Yield ``(t, X_t, X_{t+1})`` training pairs from a normalized tensor.

    Missing entries are imputed with 0 (the sensor mean after z-scoring).  The
    wrap slot pairs the last slot of day ``d`` with the first slot of day
    ``d + 1`` for calendar-consecutive days.
    """
    vals = dt.filled(0.0)
    T = dt.T
    for t in range(T - 1):
        yield t, vals[t], vals[t + 1]
    if wrap:
        gaps = np.diff(dt.day_labels).astype(int)
        ok = np.flatnonzero(gaps == 1)
        if ok.size == 0:
            raise ValidationError("wrap slot needs at least two consecutive training days")
        yield T - 1, vals[T - 1][:, ok], vals[0][:, ok + 1]


def fit_one(t: int, x_prev: np.ndarray, x_next: np.ndarray, grid: DiffusionGrid, cfg: OptimizerConfig) -> SlotModel:
    try:
        gram = build_slot_gram(x_prev, x_next, grid, t)
        fit = fit_slot(gram, grid, cfg, np.random.default_rng([cfg.seed, t]))
        return map_transition(
            gram, grid, fit.hyper, log_evidence=fit.log_evidence, converged=fit.converged, n_iter=fit.n_iter
        )
    except GraphDLMError as exc:
        raise SlotError(t, exc) from exc


def train(dt: DayTensor, grid: DiffusionGrid, cfg: OptimizerConfig = OptimizerConfig(), *,
          norm: NormStats | None = None, graph: SensorGraph | None = None, wrap: bool = True,
          threads: int | None = None, progress: Callable[[SlotModel], None] | None = None) -> TrainedModel:
    """Fit every slot of a normalized day tensor and assemble a :class:`TrainedModel`.

    ``norm`` should be the statistics used to normalize ``dt``; identity
    statistics are assumed otherwise.
    """
    if dt.m < 2:
        raise ValidationError(f"need at least 2 training days, got {dt.m}")
    if dt.n != grid.n:
        raise ValidationError(f"tensor has {dt.n} sensors, grid has {grid.n}")
    jobs = list(slot_pairs(dt, wrap))

    def run(job):
        return fit_one(*job, grid, cfg)

    if threads == 1:
        slots = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            slots = list(pool.map(run, jobs))
    if progress is not None:
        for s in slots:
            progress(s)
    if norm is None:
        norm = NormStats(np.zeros(dt.n), np.ones(dt.n))
    return TrainedModel(
        slots=tuple(slots),
        sensor_ids=dt.sensor_ids,
        slots_per_day=dt.T,
        interval_min=dt.interval_min,
        taus=grid.taus.copy(),
        norm=norm,
        kappa=graph.kappa if graph is not None else float("nan"),
        sigma=graph.sigma if graph is not None else float("nan"),
        epsilon=grid.epsilon,
        wrap_enabled=wrap,
        train_days=tuple(str(d) for d in dt.day_labels),
        seed=cfg.seed,
    )
