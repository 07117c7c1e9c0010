"""Sensor graph construction and heat-diffusion kernels.

The graph is built from directed road travel distances: shortest paths are
symmetrized by taking the shorter direction, thresholded at ``kappa`` and
weighted with a Gaussian kernel of width ``sigma``.  Heat kernels
``exp(-tau L)`` are evaluated through one eigendecomposition of the
combinatorial Laplacian.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import ConfigurationError, DisconnectedGraphError, ValidationError

logger = logging.getLogger(__name__)

CONNECTIVITY_TOL = 1e-10
SIMPLEX_TOL = 1e-9
# Exponents s of the candidate diffusion periods 10**s.
TAU_EXPONENTS = np.round(np.arange(-100, 101) / 10.0, 1)


@dataclass(frozen=True)
class DistanceTable:
    """Directed travel distances (meters) between named sensors."""

    sensor_ids: tuple[str, ...]
    directed_dist: Mapping[tuple[str, str], float]

    def __post_init__(self):
        ids = tuple(self.sensor_ids)
        if len(set(ids)) != len(ids):
            seen, dups = set(), []
            for s in ids:
                if s in seen:
                    dups.append(s)
                seen.add(s)
            raise ConfigurationError(f"duplicate sensor ids: {sorted(set(dups))}")
        object.__setattr__(self, "sensor_ids", ids)
        known = set(ids)
        for (a, b), d in self.directed_dist.items():
            if a not in known or b not in known:
                raise ConfigurationError(f"edge {a}->{b} references an unlisted sensor")
            if not d >= 0:
                raise ValidationError(f"negative or NaN distance on edge {a}->{b}: {d}")
            if a == b and d != 0:
                raise ValidationError(f"self distance of {a} must be 0, got {d}")

    @property
    def n(self) -> int:
        return len(self.sensor_ids)


@dataclass(frozen=True)
class GraphConfig:
    """Graph hyperparameters.

    ``kappa=None`` selects the threshold automatically: the smallest distance
    percentile that connects the graph, doubled.  ``sigma="auto"`` uses the
    standard deviation of the distances that survive the threshold.
    """

    kappa: float | None = None
    sigma: float | str = "auto"
    epsilon: float = 0.01
    K: int = 5

    def __post_init__(self):
        if self.kappa is not None and not self.kappa > 0:
            raise ConfigurationError(f"kappa must be > 0, got {self.kappa}")
        if isinstance(self.sigma, str):
            if self.sigma != "auto":
                raise ConfigurationError(f"sigma must be positive or 'auto', got {self.sigma!r}")
        elif not self.sigma > 0:
            raise ConfigurationError(f"sigma must be > 0, got {self.sigma}")
        if not 0 < self.epsilon < 1:
            raise ConfigurationError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if int(self.K) != self.K or self.K < 2:
            raise ConfigurationError(f"K must be an integer >= 2, got {self.K}")


@dataclass(frozen=True)
class SensorGraph:
    W: np.ndarray
    L: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    kappa: float
    sigma: float
    sensor_ids: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def fiedler_value(self) -> float:
        return float(self.eigvals[1])

    @property
    def lambda_max(self) -> float:
        return float(self.eigvals[-1])

    def heat_kernel(self, tau: float) -> np.ndarray:
        """Return ``exp(-tau L)`` evaluated in the Laplacian eigenbasis."""
        V = self.eigvecs
        return (V * np.exp(-tau * self.eigvals)) @ V.T


@dataclass(frozen=True)
class DiffusionGrid:
    taus: np.ndarray
    kernels: np.ndarray  # shape (K, N, N)
    epsilon: float = field(default=0.01)

    @property
    def K(self) -> int:
        return len(self.taus)

    @property
    def n(self) -> int:
        return self.kernels.shape[1]

    def subset(self, indices: Sequence[int]) -> DiffusionGrid:
        """Grid restricted to the given kernel indices (for ablations)."""
        idx = np.asarray(indices, dtype=int)
        return DiffusionGrid(self.taus[idx].copy(), self.kernels[idx].copy(), self.epsilon)


def read_distance_csv(path: str | Path, sensor_ids: Sequence[str] | None = None) -> DistanceTable:
    """Read a ``from,to,distance`` CSV into a :class:`DistanceTable`.

    The distance column may also be called ``cost``.  Repeated edges keep the
    shortest distance.  When ``sensor_ids`` is given, it fixes the node order
    and edges touching other sensors are dropped.
    """
    path = Path(path)
    edges: dict[tuple[str, str], float] = {}
    order: list[str] = []
    seen: set[str] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if len(header) < 3 or header[0] != "from" or header[1] != "to" or header[2] not in ("distance", "cost"):
            raise ConfigurationError(f"{path}: expected header 'from,to,distance', got {','.join(header)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 3:
                raise ConfigurationError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            a, b = row[0].strip(), row[1].strip()
            try:
                d = float(row[2])
            except ValueError:
                raise ConfigurationError(f"{path}:{lineno}: bad distance {row[2]!r}") from None
            if d < 0 or math.isnan(d):
                raise ValidationError(f"{path}:{lineno}: negative distance {d}")
            for s in (a, b):
                if s not in seen:
                    seen.add(s)
                    order.append(s)
            key = (a, b)
            if key not in edges or d < edges[key]:
                edges[key] = d
    if sensor_ids is not None:
        ids = tuple(str(s) for s in sensor_ids)
        keep = set(ids)
        edges = {k: v for k, v in edges.items() if k[0] in keep and k[1] in keep}
    else:
        ids = tuple(order)
    edges = {k: v for k, v in edges.items() if k[0] != k[1]}
    return DistanceTable(ids, edges)


def all_pairs_shortest(dist_table: DistanceTable) -> np.ndarray:
    """Symmetric matrix of min(shortest(i->j), shortest(j->i)); ``inf`` if unreachable."""
    ids = dist_table.sensor_ids
    index = {s: i for i, s in enumerate(ids)}
    n = len(ids)
    rows, cols, vals = [], [], []
    for (a, b), d in dist_table.directed_dist.items():
        if a == b:
            continue
        rows.append(index[a])
        cols.append(index[b])
        vals.append(float(d))
    adj = sp.csr_matrix((np.asarray(vals, dtype=float), (rows, cols)), shape=(n, n))
    directed = dijkstra(adj, directed=True)
    out = np.minimum(directed, directed.T)
    np.fill_diagonal(out, 0.0)
    return out


def _check_distance_matrix(distM: np.ndarray) -> np.ndarray:
    D = np.asarray(distM, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValidationError(f"distance matrix must be square, got shape {D.shape}")
    if not np.array_equal(D, D.T):
        raise ValidationError("distance matrix must be symmetric")
    if np.any(np.diag(D) != 0):
        raise ValidationError("distance matrix must have a zero diagonal")
    if np.any(D < 0):
        raise ValidationError("distances must be nonnegative")
    return D


def _edge_mask(D: np.ndarray, kappa: float) -> np.ndarray:
    mask = (D > 0) & (D <= kappa)
    np.fill_diagonal(mask, False)
    return mask


def auto_sigma(D: np.ndarray, kappa: float) -> float:
    """Standard deviation of the distances in ``(0, kappa]``."""
    vals = D[np.triu(_edge_mask(D, kappa), 1)]
    if vals.size == 0:
        raise DisconnectedGraphError(f"disconnected graph: no sensor pair within kappa={kappa}")
    s = float(np.std(vals))
    if s <= 0:
        # every retained distance is identical; fall back to that distance
        s = float(vals[0])
    return s


def auto_kappa(distM: np.ndarray) -> float:
    """Smallest distance percentile that connects the graph, doubled."""
    D = _check_distance_matrix(distM)
    finite = D[np.isfinite(D) & (D > 0)]
    if finite.size == 0:
        raise DisconnectedGraphError("disconnected graph: no finite positive distances")
    for q in range(1, 101):
        kappa = float(np.percentile(finite, q))
        n_comp, _ = connected_components(sp.csr_matrix(_edge_mask(D, kappa)), directed=False)
        if n_comp == 1:
            return 2.0 * kappa
    raise DisconnectedGraphError("disconnected graph: sensors unreachable at any threshold")


def build_graph(distM: np.ndarray, cfg: GraphConfig, sensor_ids: Sequence[str] = ()) -> SensorGraph:
    """Gaussian-thresholded weight matrix, Laplacian and its eigenpairs.

    Raises
    ------
    DisconnectedGraphError
        If the second-smallest Laplacian eigenvalue is not positive.
    """
    D = _check_distance_matrix(distM)
    kappa = cfg.kappa if cfg.kappa is not None else auto_kappa(D)
    sigma = auto_sigma(D, kappa) if cfg.sigma == "auto" else float(cfg.sigma)

    mask = _edge_mask(D, kappa)
    W = np.zeros_like(D)
    W[mask] = np.exp(-(D[mask] ** 2) / sigma**2)
    W = 0.5 * (W + W.T)
    L = np.diag(W.sum(axis=1)) - W

    n = D.shape[0]
    if n < 2:
        raise DisconnectedGraphError("disconnected graph: need at least 2 sensors")
    eigvals, eigvecs = np.linalg.eigh(L)
    eigvals = np.clip(eigvals, 0.0, None)
    eigvals[0] = 0.0
    if eigvals[1] <= CONNECTIVITY_TOL:
        n_comp, _ = connected_components(sp.csr_matrix(W > 0), directed=False)
        raise DisconnectedGraphError(
            f"disconnected graph: {n_comp} components at kappa={kappa:g}, sigma={sigma:g} "
            f"(second Laplacian eigenvalue {eigvals[1]:.3g})"
        )
    return SensorGraph(W, L, eigvals, eigvecs, float(kappa), float(sigma), tuple(sensor_ids))


def extreme_taus(g: SensorGraph, epsilon: float) -> tuple[float, float]:
    """Shortest and longest useful diffusion periods on the ``10**s`` grid.

    ``tau0`` is the largest candidate whose kernel is within ``epsilon`` of the
    identity in spectral norm; ``tauInf`` the smallest within ``epsilon`` of the
    averaging operator ``11^T/N``.
    """
    if not 0 < epsilon < 1:
        raise ConfigurationError(f"epsilon must lie in (0, 1), got {epsilon}")
    lam2, lam_max = g.fiedler_value, g.lambda_max
    if lam2 <= CONNECTIVITY_TOL:
        raise DisconnectedGraphError("disconnected graph: second Laplacian eigenvalue is zero")
    cand = 10.0**TAU_EXPONENTS
    near_identity = -np.expm1(-cand * lam_max) < epsilon
    near_average = np.exp(-cand * lam2) < epsilon
    if not near_identity.any() or not near_average.any():
        raise ConfigurationError(
            f"no diffusion period on the candidate grid meets epsilon={epsilon} "
            f"(lambda_2={lam2:.6g}, lambda_max={lam_max:.6g})"
        )
    tau0 = float(cand[near_identity][-1])
    tau_inf = float(cand[near_average][0])
    return tau0, tau_inf


def build_grid(g: SensorGraph, cfg: GraphConfig) -> DiffusionGrid:
    tau0, tau_inf = extreme_taus(g, cfg.epsilon)
    if tau0 >= tau_inf:
        raise ConfigurationError(
            f"tau0={tau0:g} is not below tauInf={tau_inf:g}; decrease epsilon={cfg.epsilon}"
        )
    taus = np.geomspace(tau0, tau_inf, int(cfg.K))
    taus[0], taus[-1] = tau0, tau_inf
    kernels = np.stack([g.heat_kernel(t) for t in taus])
    return DiffusionGrid(taus, kernels, cfg.epsilon)


def check_simplex(pi, k: int | None = None, tol: float = SIMPLEX_TOL) -> np.ndarray:
    p = np.asarray(pi, dtype=float).ravel()
    if k is not None and p.size != k:
        raise ValidationError(f"mixture weights must have length {k}, got {p.size}")
    if np.any(~np.isfinite(p)) or np.any(p < -tol) or np.any(p > 1 + tol):
        raise ValidationError(f"mixture weights must lie in [0, 1]: {p}")
    if abs(p.sum() - 1.0) > tol:
        raise ValidationError(f"mixture weights must sum to 1, got {p.sum()!r}")
    return p


def mix_kernels(grid: DiffusionGrid, pi) -> np.ndarray:
    """Convex combination ``sum_k pi_k H(tau_k)``."""
    p = check_simplex(pi, grid.K)
    return np.tensordot(p, grid.kernels, axes=1)


def graph_from_csv(path: str | Path, cfg: GraphConfig, sensor_ids: Sequence[str] | None = None):
    """Convenience: distance CSV -> (SensorGraph, DiffusionGrid)."""
    table = read_distance_csv(path, sensor_ids)
    D = all_pairs_shortest(table)
    g = build_graph(D, cfg, table.sensor_ids)
    logger.info(
        "graph: N=%d kappa=%.4g sigma=%.4g lambda_2=%.4g lambda_max=%.4g",
        g.n, g.kappa, g.sigma, g.fiedler_value, g.lambda_max,
    )
    return g, build_grid(g, cfg)
