"""Closed-form per-slot transition estimates.

For one time slot ``t`` the training pairs are the columns of ``X_t`` and
``X_{t+1}`` (sensors x days).  Everything the estimators need is cached once
per slot in a :class:`SlotGram`: the spectra of ``X_t X_t^T`` and
``X_t^T X_t`` (taken from a single SVD of ``X_t``), the cross matrix, and the
projections used by the evidence objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .graph_kernels import DiffusionGrid, check_simplex, mix_kernels

RANK_TOL = 1e-10


@dataclass(frozen=True)
class SlotHyperParams:
    alpha: float
    gamma: float
    pi: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValidationError(f"alpha must be positive and finite, got {self.alpha}")
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValidationError(f"gamma must be positive and finite, got {self.gamma}")
        object.__setattr__(self, "pi", check_simplex(self.pi))


@dataclass(frozen=True)
class SlotGram:
    """Cached spectral quantities of one slot.

    Attributes
    ----------
    U, Lambda : eigenpairs of ``X_t X_t^T`` (N x N, N).
    C : cross matrix ``X_{t+1} X_t^T``.
    Q, D : eigenpairs of ``X_t^T X_t`` (m x m, m).
    A, B : ``X_{t+1} Q`` and ``H(tau_k) X_t Q`` for each kernel (K x N x m).
    resid_sq, cross, gram_kk : row-summed products of the centered
        residual ``A - sum_k B_k / K`` and centered ``B_k``; they make the
        evidence an O(m K^2) function of the hyperparameters.
    """

    t: int
    U: np.ndarray
    Lambda: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    D: np.ndarray
    A: np.ndarray
    B: np.ndarray
    resid_sq: np.ndarray = field(repr=False)
    cross: np.ndarray = field(repr=False)
    gram_kk: np.ndarray = field(repr=False)
    rank: int = 0
    persistence_mse: float = 1.0

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def m(self) -> int:
        return self.Q.shape[0]

    @property
    def K(self) -> int:
        return self.B.shape[0]

    @property
    def rank_deficient(self) -> bool:
        return self.rank < self.n


@dataclass(frozen=True)
class SlotModel:
    t: int
    H_hat: np.ndarray
    hyper: SlotHyperParams
    c_data: float
    c_prior: float
    log_evidence: float = float("nan")
    rank_deficient: bool = False
    converged: bool = True
    n_iter: int = 0


def build_slot_gram(x_prev: np.ndarray, x_next: np.ndarray, grid: DiffusionGrid, t: int = 0) -> SlotGram:
    """Precompute everything needed to fit slot ``t`` from its training pairs."""
    X = np.asarray(x_prev, dtype=float)
    Y = np.asarray(x_next, dtype=float)
    if X.ndim != 2 or X.shape != Y.shape:
        raise ValidationError(f"slot {t}: X_t {X.shape} and X_t+1 {Y.shape} must be equal 2-D shapes")
    n, m = X.shape
    if n != grid.n:
        raise ValidationError(f"slot {t}: data has {n} sensors but the grid has {grid.n}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValidationError(f"slot {t}: training matrices contain non-finite values")

    U, s, Vh = np.linalg.svd(X, full_matrices=True)
    k = s.size
    Lambda = np.zeros(n)
    Lambda[:k] = s**2
    D = np.zeros(m)
    D[:k] = s**2
    Q = Vh.T
    rank = int(np.sum(Lambda > RANK_TOL * max(Lambda.max(), np.finfo(float).tiny)))

    C = Y @ X.T
    XQ = X @ Q
    A = Y @ Q
    B = np.einsum("kij,jl->kil", grid.kernels, XQ)

    # Centering at the uniform mixture: E = A - sum pi_k B_k = A0 - sum pi_k B0_k.
    B_mean = B.mean(axis=0)
    A0 = A - B_mean
    B0 = B - B_mean
    resid_sq = np.einsum("ij,ij->j", A0, A0)
    cross = np.einsum("ij,kij->kj", A0, B0)
    gram_kk = np.einsum("kij,lij->klj", B0, B0)
    persistence_mse = float(np.mean((Y - X) ** 2))
    return SlotGram(t, U, Lambda, C, Q, D, A, B, resid_sq, cross, gram_kk, rank, persistence_mse)


def ml_transition(gram: SlotGram) -> np.ndarray:
    """Least-squares transition ``C (X X^T)^+`` with relative rank cut ``RANK_TOL``."""
    lam = gram.Lambda
    keep = lam > RANK_TOL * max(lam.max(), np.finfo(float).tiny)
    inv = np.zeros_like(lam)
    inv[keep] = 1.0 / lam[keep]
    return (gram.C @ gram.U * inv) @ gram.U.T


def prior_transition(grid: DiffusionGrid, pi) -> np.ndarray:
    return mix_kernels(grid, pi)


def contributions(Lambda: np.ndarray, alpha: float, gamma: float) -> tuple[float, float]:
    """Data and prior contribution shares of the MAP transition."""
    denom = alpha * Lambda + gamma
    w_data = float(np.linalg.norm(alpha * Lambda / denom))
    w_prior = float(np.linalg.norm(gamma / denom))
    total = w_data + w_prior
    c_data = w_data / total
    return c_data, 1.0 - c_data


def map_transition(gram: SlotGram, grid: DiffusionGrid, hyper: SlotHyperParams, **diag) -> SlotModel:
    """Posterior-mode transition fusing the data with the diffusion prior.

    Evaluated as ``(alpha C U + gamma H_prior U) (alpha Lambda + gamma)^-1 U^T``,
    which never inverts ``X_t X_t^T`` and stays defined when it is singular.
    """
    alpha, gamma = hyper.alpha, hyper.gamma
    H_prior = mix_kernels(grid, hyper.pi)
    U = gram.U
    scale = 1.0 / (alpha * gram.Lambda + gamma)
    H_hat = ((alpha * gram.C + gamma * H_prior) @ U * scale) @ U.T
    c_data, c_prior = contributions(gram.Lambda, alpha, gamma)
    return SlotModel(
        t=gram.t,
        H_hat=H_hat,
        hyper=hyper,
        c_data=c_data,
        c_prior=c_prior,
        rank_deficient=gram.rank_deficient,
        **diag,
    )
