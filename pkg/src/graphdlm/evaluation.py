"""RMSE evaluation against held-out days and per-slot diagnostic curves."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data_io import DayTensor
from .errors import ValidationError
from .model import TrainedModel

logger = logging.getLogger(__name__)

RATIO_FLOOR = 1e-12


@dataclass(frozen=True)
class DiagnosticsSeries:
    slot: np.ndarray
    minute_of_day: np.ndarray
    c_data: np.ndarray
    pi_ratio: np.ndarray  # weight of the shortest over the longest diffusion period
    ratio_floored: np.ndarray  # True where the denominator hit RATIO_FLOOR
    alpha: np.ndarray
    gamma: np.ndarray
    log_evidence: np.ndarray

    def mean_c_data(self, start_min: float, end_min: float) -> float:
        """Mean data contribution over slots starting in ``[start_min, end_min)``."""
        sel = (self.minute_of_day >= start_min) & (self.minute_of_day < end_min)
        if not sel.any():
            raise ValidationError(f"no slots between minute {start_min} and {end_min}")
        return float(self.c_data[sel].mean())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["slot", "minute_of_day", "c_data", "pi_ratio", "ratio_floored", "alpha", "gamma", "log_evidence"])
        for i in range(len(self.slot)):
            w.writerow([
                int(self.slot[i]), int(self.minute_of_day[i]), repr(float(self.c_data[i])),
                repr(float(self.pi_ratio[i])), int(self.ratio_floored[i]), repr(float(self.alpha[i])),
                repr(float(self.gamma[i])), repr(float(self.log_evidence[i])),
            ])
        return buf.getvalue()


def diagnostics_series(model: TrainedModel) -> DiagnosticsSeries:
    slots = model.slots
    pi = np.stack([s.hyper.pi for s in slots])
    denom = pi[:, -1]
    floored = denom < RATIO_FLOOR
    ratio = pi[:, 0] / np.maximum(denom, RATIO_FLOOR)
    idx = np.array([s.t for s in slots])
    return DiagnosticsSeries(
        slot=idx,
        minute_of_day=idx * model.interval_min,
        c_data=np.array([s.c_data for s in slots]),
        pi_ratio=ratio,
        ratio_floored=floored,
        alpha=np.array([s.hyper.alpha for s in slots]),
        gamma=np.array([s.hyper.gamma for s in slots]),
        log_evidence=np.array([s.log_evidence for s in slots]),
    )


@dataclass
class EvalReport:
    horizons: tuple[int, ...]
    interval_min: int
    masked: bool
    wrap: bool
    # keys: "model" / "baseline" -> "masked" / "unmasked" -> list per horizon (None = no points)
    rmse: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    per_slot: dict = field(default_factory=dict)  # method -> (n_h, T) masked RMSE by base slot
    diagnostics: DiagnosticsSeries | None = None

    def primary(self, method: str = "model") -> list[float | None]:
        """RMSE per horizon under the report's default masking."""
        return self.rmse[method]["masked" if self.masked else "unmasked"]

    def to_dict(self) -> dict:
        out = {
            "horizons_steps": list(self.horizons),
            "horizons_min": [h * self.interval_min for h in self.horizons],
            "interval_min": self.interval_min,
            "masked_default": self.masked,
            "wrap_enabled": self.wrap,
            "rmse": self.rmse,
            "counts": self.counts,
        }
        if self.diagnostics is not None:
            d = self.diagnostics
            out["diagnostics"] = {
                "c_data": [float(v) for v in d.c_data],
                "pi_ratio": [float(v) for v in d.pi_ratio],
                "ratio_floored": [bool(v) for v in d.ratio_floored],
            }
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["horizon_steps", "horizon_min", "method", "masked", "rmse", "count"])
        for method in self.rmse:
            for mode in ("masked", "unmasked"):
                for i, h in enumerate(self.horizons):
                    v = self.rmse[method][mode][i]
                    w.writerow([h, h * self.interval_min, method, int(mode == "masked"),
                                "" if v is None else repr(v), self.counts[method][mode][i]])
        return buf.getvalue()

    def per_slot_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "horizon_steps", "slot", "minute_of_day", "rmse"])
        for method, arr in self.per_slot.items():
            for i, h in enumerate(self.horizons):
                for t in range(arr.shape[1]):
                    v = arr[i, t]
                    w.writerow([method, h, t, t * self.interval_min, "" if not np.isfinite(v) else repr(float(v))])
        return buf.getvalue()


def _stream(test: DayTensor):
    T, n, m = test.T, test.n, test.m
    raw = np.transpose(test.values, (2, 0, 1))  # (m, T, N)
    abs_slot = (test.day_labels.astype("int64")[:, None] * T + np.arange(T)[None, :])  # (m, T)
    return raw, abs_slot


def rmse(model: TrainedModel, test: DayTensor, horizons: Sequence[int], masked: bool = True,
         baseline_only: bool = False) -> EvalReport:
    """Pooled RMSE per horizon (steps) in original units for the model and persistence.

    A base time ``(d, t)`` is evaluated at horizon ``h`` when the target lies
    ``h`` slots later in the test stream on calendar-consecutive days and
    (without wrap) inside the same day.  Masked mode drops targets whose truth
    is missing; unmasked mode scores them against 0.
    """
    hs = tuple(int(h) for h in horizons)
    if not hs or min(hs) < 1:
        raise ValidationError(f"horizons must be >= 1, got {list(horizons)}")
    if tuple(test.sensor_ids) != tuple(model.sensor_ids):
        raise ValidationError("test data sensors do not match the model")
    if test.T != model.slots_per_day:
        raise ValidationError(f"test data has {test.T} slots per day, model has {model.slots_per_day}")
    T, n, m = test.T, test.n, test.m
    raw, abs_slot = _stream(test)
    flat_raw = raw.reshape(m * T, n)
    flat_abs = abs_slot.ravel()
    z = model.norm.apply(raw, axis=-1)
    z = np.where(np.isfinite(z), z, 0.0)
    base_mph = model.norm.invert(z, axis=-1).reshape(m * T, n)

    h_max = max(hs)
    methods = ["baseline"] if baseline_only else ["model", "baseline"]
    sq = {k: {"masked": [], "unmasked": []} for k in methods}
    cnt = {k: {"masked": [], "unmasked": []} for k in methods}
    per_slot = {k: np.full((len(hs), T), np.nan) for k in methods}

    P = z.copy()  # (m, T, N): state propagated from each base time
    base_idx = np.arange(m * T)
    for k in range(1, h_max + 1):
        if not baseline_only:
            for b in range(T):
                s = b + k - 1
                if s >= T:
                    if not model.wrap_enabled:
                        continue
                    s %= T
                elif s > T - 2 and not model.wrap_enabled:
                    continue
                P[:, b, :] = P[:, b, :] @ model.transition(s).T
        if k not in hs:
            continue
        i_h = hs.index(k)
        tgt = base_idx + k
        ok = tgt < m * T
        ok[ok] = flat_abs[tgt[ok]] - flat_abs[base_idx[ok]] == k
        if not model.wrap_enabled:
            ok &= (base_idx % T) + k <= T - 1
        b_sel = base_idx[ok]
        truth = flat_raw[tgt[ok]]
        observed = np.isfinite(truth)
        truth0 = np.where(observed, truth, 0.0)
        preds = {"baseline": base_mph[b_sel]}
        if not baseline_only:
            preds["model"] = model.norm.invert(P.reshape(m * T, n)[b_sel], axis=-1)
        for method in methods:
            err2 = (preds[method] - truth0) ** 2
            for mode, use in (("masked", observed), ("unmasked", np.ones_like(observed))):
                c = int(use.sum())
                cnt[method][mode].append(c)
                sq[method][mode].append(float(np.sqrt(err2[use].sum() / c)) if c else None)
                if c == 0:
                    logger.warning("no evaluation points for %s at horizon %d (%s)", method, k, mode)
            slot_of_base = b_sel % T
            num = np.bincount(slot_of_base, weights=np.where(observed, err2, 0.0).sum(axis=1), minlength=T)
            den = np.bincount(slot_of_base, weights=observed.sum(axis=1), minlength=T)
            with np.errstate(invalid="ignore", divide="ignore"):
                per_slot[method][i_h] = np.where(den > 0, np.sqrt(num / np.maximum(den, 1)), np.nan)
    return EvalReport(
        horizons=hs,
        interval_min=test.interval_min,
        masked=masked,
        wrap=model.wrap_enabled,
        rmse=sq,
        counts=cnt,
        per_slot=per_slot,
        diagnostics=None if baseline_only else diagnostics_series(model),
    )
