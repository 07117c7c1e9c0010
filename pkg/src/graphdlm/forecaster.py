"""Multi-step prediction by chaining the per-slot transitions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import HorizonError, ValidationError
from .model import TrainedModel


@dataclass(frozen=True)
class Forecast:
    base_slot: int
    horizons: tuple[int, ...]
    means: np.ndarray  # (len(horizons), N), mph
    cov_diag: np.ndarray | None = None  # (len(horizons), N), mph^2


def slot_path(model: TrainedModel, t: int, h: int) -> list[int]:
    """Slot indices ``t, t+1, ..., t+h-1`` whose transitions are applied in turn."""
    if int(h) != h or h < 1:
        raise ValidationError(f"horizon must be an integer >= 1, got {h}")
    T = model.slots_per_day
    if not 0 <= t < T:
        raise ValidationError(f"slot {t} outside [0, {T})")
    if model.wrap_enabled:
        return [(t + i) % T for i in range(h)]
    if t + h - 1 > T - 2:
        raise HorizonError(f"horizon exceeds day: slot {t} + {h} steps passes slot {T - 1} and wrap is disabled")
    return list(range(t, t + h))


def propagate(model: TrainedModel, z: np.ndarray, t: int, h: int) -> np.ndarray:
    """Apply ``H_{t+h-1} ... H_t`` to normalized state(s) ``z`` (N or N x k), right to left."""
    p = np.asarray(z, dtype=float)
    for s in slot_path(model, t, h):
        p = model.transition(s) @ p
    return p


def _normalize_input(model: TrainedModel, x_t) -> np.ndarray:
    x = np.asarray(x_t, dtype=float)
    if x.shape[0] != model.n:
        raise ValidationError(f"state has {x.shape[0]} entries, model has {model.n} sensors")
    z = model.norm.apply(x, axis=0)
    # missing readings fall back to the training mean, i.e. 0 after z-scoring
    return np.where(np.isfinite(z), z, 0.0)


def predict(model: TrainedModel, x_t, t: int, h: int) -> np.ndarray:
    """Most probable state ``h`` steps after slot ``t``, in original units."""
    z = _normalize_input(model, x_t)
    return model.norm.invert(propagate(model, z, t, h), axis=0)


def predictive_covariance(model: TrainedModel, t: int, h: int) -> np.ndarray:
    """Covariance of the ``h``-step prediction in normalized units.

    ``R_1 = I / alpha_t`` and ``R_l = I / alpha_{t+l-1} + H_{t+l-1} R_{l-1} H_{t+l-1}^T``.
    """
    path = slot_path(model, t, h)
    n = model.n
    R = np.eye(n) / model.alpha(path[0])
    for s in path[1:]:
        H = model.transition(s)
        R = np.eye(n) / model.alpha(s) + H @ R @ H.T
        R = 0.5 * (R + R.T)
    return R


def baseline_predict(x_t, h: int = 1) -> np.ndarray:
    """Persistence: the current reading for every horizon."""
    return np.array(x_t, dtype=float, copy=True)


def forecast(model: TrainedModel, x_t, t: int, horizons: Sequence[int], variance: bool = False) -> Forecast:
    """Predictions (and optionally variances, mph^2) for several horizons in one pass."""
    hs = tuple(int(h) for h in horizons)
    if not hs or min(hs) < 1:
        raise ValidationError(f"horizons must be >= 1, got {list(horizons)}")
    h_max = max(hs)
    path = slot_path(model, t, h_max)
    z = _normalize_input(model, x_t)
    n = model.n
    means, variances = {}, {}
    R = None
    for step, s in enumerate(path, start=1):
        H = model.transition(s)
        z = H @ z
        if variance:
            R = np.eye(n) / model.alpha(s) if R is None else np.eye(n) / model.alpha(s) + H @ R @ H.T
        if step in hs:
            means[step] = model.norm.invert(z, axis=0)
            if variance:
                variances[step] = np.clip(np.diag(R), 0.0, None) * model.norm.sd**2
    mean_arr = np.stack([means[h] for h in hs])
    var_arr = np.stack([variances[h] for h in hs]) if variance else None
    return Forecast(t, hs, mean_arr, var_arr)
