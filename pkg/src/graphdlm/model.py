"""Trained model container and its on-disk format.

File layout::

    b"GDLMODEL"                 8-byte magic
    uint64 little-endian        length of the JSON metadata in bytes
    JSON metadata (UTF-8)
    float64 little-endian       per-slot N x N transitions, row-major, slot order
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_io import NormStats
from .dlm_core import SlotHyperParams, SlotModel
from .errors import ModelFileError, ValidationError

MAGIC = b"GDLMODEL"
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TrainedModel:
    """Per-slot transitions plus everything needed to predict in mph.

    ``slots[t]`` maps slot ``t`` to slot ``t + 1``; with ``wrap_enabled`` the
    final slot maps the last slot of a day to midnight of the next day.
    """

    slots: tuple[SlotModel, ...]
    sensor_ids: tuple[str, ...]
    slots_per_day: int
    interval_min: int
    taus: np.ndarray
    norm: NormStats
    kappa: float = float("nan")
    sigma: float = float("nan")
    epsilon: float = float("nan")
    wrap_enabled: bool = True
    train_days: tuple[str, ...] = ()
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = self.slots_per_day if self.wrap_enabled else self.slots_per_day - 1
        if len(self.slots) != expected:
            raise ValidationError(f"expected {expected} slot models, got {len(self.slots)}")
        for s in self.slots:
            if not np.all(np.isfinite(s.H_hat)):
                raise ValidationError(f"slot {s.t}: transition has non-finite entries")

    @property
    def n(self) -> int:
        return len(self.sensor_ids)

    @property
    def K(self) -> int:
        return len(self.taus)

    def transition(self, t: int) -> np.ndarray:
        return self.slots[t].H_hat

    def alpha(self, t: int) -> float:
        return self.slots[t].hyper.alpha


def _nan_to_none(x: float):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


def _none_to_nan(x) -> float:
    return float("nan") if x is None else float(x)


def _metadata(model: TrainedModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "sensor_ids": list(model.sensor_ids),
        "T": model.slots_per_day,
        "interval_min": model.interval_min,
        "K": model.K,
        "taus": [float(t) for t in model.taus],
        "kappa": _nan_to_none(float(model.kappa)),
        "sigma": _nan_to_none(float(model.sigma)),
        "epsilon": _nan_to_none(float(model.epsilon)),
        "norm": {"mu": [float(v) for v in model.norm.mu], "sd": [float(v) for v in model.norm.sd]},
        "wrap_enabled": bool(model.wrap_enabled),
        "train_days": list(model.train_days),
        "seed": int(model.seed),
        "n_slots": len(model.slots),
        "slots": [
            {
                "t": s.t,
                "alpha": s.hyper.alpha,
                "gamma": s.hyper.gamma,
                "pi": [float(p) for p in s.hyper.pi],
                "c_data": s.c_data,
                "c_prior": s.c_prior,
                "log_evidence": _nan_to_none(float(s.log_evidence)),
                "rank_deficient": bool(s.rank_deficient),
                "converged": bool(s.converged),
                "n_iter": int(s.n_iter),
            }
            for s in model.slots
        ],
        "extra": model.extra,
    }


def save_model(model: TrainedModel, path: str | Path) -> None:
    meta = json.dumps(_metadata(model), allow_nan=False).encode("utf-8")
    payload = np.stack([s.H_hat for s in model.slots]).astype("<f8", copy=False)
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(meta)))
        fh.write(meta)
        fh.write(np.ascontiguousarray(payload).tobytes(order="C"))


def load_model(path: str | Path) -> TrainedModel:
    """Read a model container, verifying magic, schema version and payload size."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ModelFileError(f"{path}: not a model file (bad magic)")
    if len(raw) < 16:
        raise ModelFileError(f"{path}: truncated header")
    (meta_len,) = struct.unpack("<Q", raw[8:16])
    try:
        meta = json.loads(raw[16 : 16 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"{path}: corrupt metadata: {exc}") from None
    if not isinstance(meta, dict) or meta.get("schema_version") != SCHEMA_VERSION:
        version = meta.get("schema_version") if isinstance(meta, dict) else None
        raise ModelFileError(f"{path}: unsupported schema version {version!r}")
    try:
        return _from_parts(path, meta, raw[16 + meta_len :])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFileError):
            raise
        raise ModelFileError(f"{path}: inconsistent metadata: {exc}") from None


def _from_parts(path, meta: dict, body: bytes) -> TrainedModel:
    n = len(meta["sensor_ids"])
    n_slots = int(meta["n_slots"])
    expected = n * n * n_slots * 8
    if len(body) != expected:
        raise ModelFileError(f"{path}: payload is {len(body)} bytes, expected {expected} (N={n}, slots={n_slots})")
    H = np.frombuffer(body, dtype="<f8").reshape(n_slots, n, n).astype(float)
    slots = []
    for i, s in enumerate(meta["slots"]):
        hyper = SlotHyperParams(float(s["alpha"]), float(s["gamma"]), np.asarray(s["pi"], dtype=float))
        slots.append(
            SlotModel(
                t=int(s["t"]),
                H_hat=H[i].copy(),
                hyper=hyper,
                c_data=float(s["c_data"]),
                c_prior=float(s["c_prior"]),
                log_evidence=_none_to_nan(s["log_evidence"]),
                rank_deficient=bool(s["rank_deficient"]),
                converged=bool(s["converged"]),
                n_iter=int(s["n_iter"]),
            )
        )
    norm = NormStats(np.asarray(meta["norm"]["mu"], dtype=float), np.asarray(meta["norm"]["sd"], dtype=float))
    return TrainedModel(
        slots=tuple(slots),
        sensor_ids=tuple(meta["sensor_ids"]),
        slots_per_day=int(meta["T"]),
        interval_min=int(meta["interval_min"]),
        taus=np.asarray(meta["taus"], dtype=float),
        norm=norm,
        kappa=_none_to_nan(meta["kappa"]),
        sigma=_none_to_nan(meta["sigma"]),
        epsilon=_none_to_nan(meta["epsilon"]),
        wrap_enabled=bool(meta["wrap_enabled"]),
        train_days=tuple(meta["train_days"]),
        seed=int(meta["seed"]),
        extra=dict(meta.get("extra", {})),
    )
