"""Shared builders for the test suite."""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import multivariate_normal

from graphdlm.data_io import NormStats
from graphdlm.dlm_core import SlotHyperParams, SlotModel
from graphdlm.errors import DisconnectedGraphError
from graphdlm.graph_kernels import GraphConfig, build_graph, build_grid
from graphdlm.model import TrainedModel


def random_graph(rng: np.random.Generator, n: int, K: int = 3, epsilon: float = 0.01):
    """Connected random geometric graph plus its diffusion grid."""
    cfg = GraphConfig(kappa=0.6, sigma=0.3, epsilon=epsilon, K=K)
    while True:
        pos = rng.uniform(size=(n, 2))
        D = np.sqrt(((pos[:, None] - pos[None]) ** 2).sum(-1))
        D = 0.5 * (D + D.T)
        np.fill_diagonal(D, 0.0)
        try:
            g = build_graph(D, cfg)
        except DisconnectedGraphError:
            continue
        return g, build_grid(g, cfg)


def random_simplex(rng: np.random.Generator, K: int) -> np.ndarray:
    return rng.dirichlet(np.ones(K))


def random_model(rng: np.random.Generator, n: int = 3, T: int = 6, wrap: bool = True, scale: float = 0.5,
                 alpha_range=(0.5, 4.0)) -> TrainedModel:
    """Model with random transitions and identity normalization."""
    n_slots = T if wrap else T - 1
    slots = []
    for t in range(n_slots):
        H = scale * rng.normal(size=(n, n)) / np.sqrt(n)
        hyper = SlotHyperParams(float(rng.uniform(*alpha_range)), 1.0, np.array([0.5, 0.5]))
        slots.append(SlotModel(t, H, hyper, 0.5, 0.5))
    return TrainedModel(
        slots=tuple(slots),
        sensor_ids=tuple(f"s{i}" for i in range(n)),
        slots_per_day=T,
        interval_min=1440 // T,
        taus=np.array([0.1, 10.0]),
        norm=NormStats(np.zeros(n), np.ones(n)),
        wrap_enabled=wrap,
    )


def ridge_oracle(X, Y, H_prior, alpha, gamma):
    """Regularized normal equations, solved densely."""
    n = X.shape[0]
    lhs = alpha * X @ X.T + gamma * np.eye(n)
    rhs = alpha * Y @ X.T + gamma * H_prior
    return np.linalg.solve(lhs.T, rhs.T).T


def dense_log_evidence(X, Y, H_prior, alpha, gamma):
    """Sum over rows of the m-variate Gaussian log-density, covariance formed explicitly."""
    m = X.shape[1]
    cov = np.eye(m) / alpha + X.T @ X / gamma
    mean = H_prior @ X
    return float(sum(multivariate_normal(mean[i], cov).logpdf(Y[i]) for i in range(X.shape[0])))


def mc_log_evidence(X, Y, H_prior, alpha, gamma, rng, draws=10**6, chunk=200_000):
    """log E_H[p(Y | H)] with H ~ N(H_prior, 1/gamma) entrywise; returns (estimate, standard error)."""
    n, m = X.shape
    logs = []
    for start in range(0, draws, chunk):
        k = min(chunk, draws - start)
        H = H_prior[None] + rng.normal(size=(k, n, n)) / math.sqrt(gamma)
        R = Y[None] - H @ X[None]
        logs.append(-0.5 * n * m * math.log(2 * math.pi / alpha) - 0.5 * alpha * np.einsum("kij,kij->k", R, R))
    logs = np.concatenate(logs)
    top = logs.max()
    w = np.exp(logs - top)
    mean = w.mean()
    se = w.std(ddof=1) / math.sqrt(draws)
    return top + math.log(mean), se / mean
