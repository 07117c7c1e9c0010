"""Planted-parameter data generator.

Samples a random geometric sensor graph, plants per-slot transitions
``H_t = H_prior(pi*_t) + residual`` with residual entries ``N(0, 1/gamma*_t)``
and rolls each day forward with noise ``N(0, 1/alpha*_t)``.  Days start
independently from a spatial profile plus noise, so the stream is
day-periodic but carries no information across midnight.  Latent states are
mapped to speeds as ``offset + scale * state``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data_io import DayTensor, SpeedSeries
from .errors import DisconnectedGraphError, ValidationError
from .graph_kernels import DiffusionGrid, GraphConfig, SensorGraph, build_graph, build_grid, mix_kernels

MAX_GRAPH_TRIES = 10


@dataclass(frozen=True)
class PlantedSpec:
    """Generator settings.

    ``alpha``, ``gamma`` may be scalars or per-slot sequences of length
    ``T - 1``; ``pi`` a K-simplex vector, a ``(T - 1, K)`` array, or ``None``
    for smoothly varying default weights.
    """

    n: int = 10
    T: int = 48
    m: int = 200
    K: int = 3
    graph_seed: int = 0
    alpha: float | tuple = 100.0
    gamma: float | tuple = 1e5
    pi: tuple | None = None
    residual_scale: float = 1.0
    noise_scale: float = 1.0
    profile_amplitude: float = 1.0
    init_sd: float = 1.0
    side_m: float = 5000.0
    radius_m: float = 2500.0
    sigma_m: float | str = 1500.0
    speed_offset: float = 60.0
    speed_scale: float = 5.0
    missing_rate: float = 0.0
    start: str = "2020-01-01"

    def __post_init__(self):
        if self.n < 2 or self.T < 2 or self.m < 2 or self.K < 2:
            raise ValidationError("need n, T, m >= 2 and K >= 2")
        if 1440 % self.T:
            raise ValidationError(f"T={self.T} must divide 1440 minutes")
        if self.residual_scale < 0 or self.noise_scale < 0 or not 0 <= self.missing_rate < 1:
            raise ValidationError("scales must be nonnegative and missing_rate in [0, 1)")

    @property
    def interval_min(self) -> int:
        return 1440 // self.T


@dataclass
class GroundTruth:
    spec: PlantedSpec
    positions: np.ndarray
    distances: np.ndarray
    graph: SensorGraph
    grid: DiffusionGrid
    pi: np.ndarray  # (T-1, K)
    alpha: np.ndarray  # (T-1,)
    gamma: np.ndarray  # (T-1,)
    transitions: np.ndarray  # (T-1, N, N) planted H_t
    latent: DayTensor = field(repr=False)  # states before the speed mapping

    @property
    def sensor_ids(self) -> tuple[str, ...]:
        return self.latent.sensor_ids

    def to_json(self) -> str:
        spec = asdict(self.spec)
        return json.dumps(
            {
                "spec": spec,
                "sensor_ids": list(self.sensor_ids),
                "positions_m": self.positions.tolist(),
                "kappa": self.graph.kappa,
                "sigma": self.graph.sigma,
                "taus": self.grid.taus.tolist(),
                "pi": self.pi.tolist(),
                "alpha": self.alpha.tolist(),
                "gamma": self.gamma.tolist(),
            },
            indent=2,
        ) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    def distance_rows(self):
        """Directed ``(from, to, distance)`` rows for pairs within the radius."""
        ids = self.sensor_ids
        D = self.distances
        for i in range(len(ids)):
            for j in range(len(ids)):
                if i != j and D[i, j] <= self.spec.radius_m:
                    yield ids[i], ids[j], float(D[i, j])


def _per_slot(value, count: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(count, float(arr))
    if arr.shape != (count,) or np.any(arr <= 0):
        raise ValidationError(f"{name} must be positive, scalar or length {count}")
    return arr


def default_pi(T: int, K: int) -> np.ndarray:
    """Smooth time-of-day mixture weights, dominated by the shortest period."""
    phase = 2 * np.pi * np.arange(T - 1) / (T - 1)
    logits = np.zeros((T - 1, K))
    for k in range(1, K):
        logits[:, k] = -3.0 * k + 0.8 * np.sin(phase + 1.3 * k)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def _sample_graph(spec: PlantedSpec, rng: np.random.Generator):
    cfg = GraphConfig(kappa=spec.radius_m, sigma=spec.sigma_m, K=spec.K)
    for _ in range(MAX_GRAPH_TRIES):
        pos = rng.uniform(0.0, spec.side_m, size=(spec.n, 2))
        D = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=-1))
        D = 0.5 * (D + D.T)
        np.fill_diagonal(D, 0.0)
        try:
            g = build_graph(D, cfg)
        except DisconnectedGraphError:
            continue
        return pos, D, g, build_grid(g, cfg)
    raise DisconnectedGraphError(f"no connected geometric graph after {MAX_GRAPH_TRIES} draws")


def generate(spec: PlantedSpec = PlantedSpec(), seed: int = 0) -> tuple[SpeedSeries, GroundTruth]:
    """Draw a planted dataset; identical ``(spec, seed)`` gives identical output."""
    graph_rng = np.random.default_rng([spec.graph_seed, 7919])
    pos, D, g, grid = _sample_graph(spec, graph_rng)
    rng = np.random.default_rng([seed, 104729])
    n, T, m = spec.n, spec.T, spec.m
    S = T - 1

    alpha = _per_slot(spec.alpha, S, "alpha")
    gamma = _per_slot(spec.gamma, S, "gamma")
    if spec.pi is None:
        pi = default_pi(T, spec.K)
    else:
        pi = np.asarray(spec.pi, dtype=float)
        pi = np.tile(pi, (S, 1)) if pi.ndim == 1 else pi
    if pi.shape != (S, spec.K) or np.any(np.abs(pi.sum(axis=1) - 1) > 1e-9) or np.any(pi < 0):
        raise ValidationError(f"pi must be K-simplex weights of shape ({S}, {spec.K})")

    H = np.empty((S, n, n))
    for t in range(S):
        resid = rng.normal(0.0, 1.0, size=(n, n)) / np.sqrt(gamma[t])
        H[t] = mix_kernels(grid, pi[t]) + spec.residual_scale * resid

    # smooth spatial pattern on the plane, zero mean across sensors
    centred = (pos - pos.mean(axis=0)) / spec.side_m
    profile = np.sin(2 * np.pi * centred[:, 0]) + np.cos(2 * np.pi * centred[:, 1])
    profile = spec.profile_amplitude * (profile - profile.mean())

    Z = np.empty((T, n, m))
    Z[0] = profile[:, None] + spec.init_sd * rng.normal(size=(n, m))
    for t in range(S):
        noise = rng.normal(0.0, 1.0, size=(n, m)) / np.sqrt(alpha[t])
        Z[t + 1] = H[t] @ Z[t] + spec.noise_scale * noise

    ids = tuple(f"S{i:03d}" for i in range(n))
    labels = np.datetime64(spec.start, "D") + np.arange(m)
    latent = DayTensor(ids, Z, labels, spec.interval_min)

    speeds = spec.speed_offset + spec.speed_scale * Z
    if spec.missing_rate > 0:
        drop = rng.uniform(size=speeds.shape) < spec.missing_rate
        speeds = np.where(drop, np.nan, speeds)
    series = DayTensor(ids, speeds, labels, spec.interval_min).flatten()
    truth = GroundTruth(spec, pos, D, g, grid, pi, alpha, gamma, H, latent)
    return series, truth


def write_distances(truth: GroundTruth, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("from,to,distance\n")
        for a, b, d in truth.distance_rows():
            fh.write(f"{a},{b},{d!r}\n")
