"""Analytic training-time model for pruned finetuning, and its measurement."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, MeasurementError


@dataclass(frozen=True)
class CostModel:
    dt_step: float  # seconds per training mini-batch
    dt_forward: float  # seconds per full-trainset scoring pass
    B: int  # steps per full epoch

    def __post_init__(self):
        if not self.dt_step > 0:
            raise ConfigError("dt_step must be > 0")
        if self.dt_forward < 0:
            raise ConfigError("dt_forward must be >= 0")
        if self.B < 1:
            raise ConfigError("B must be >= 1")

    @classmethod
    def from_json(cls, path) -> CostModel:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        try:
            return cls(float(raw["dt_step"]), float(raw["dt_forward"]), int(raw["B"]))
        except KeyError as exc:
            raise ConfigError(f"cost model JSON missing field {exc}") from None

    def to_dict(self) -> dict:
        return asdict(self)


def n_cycles(E: int, tau: int, T: int) -> int:
    return (E - tau) // T


def baseline_time(cost: CostModel, E: int) -> float:
    return E * cost.B * cost.dt_step


def predict_total_time(cost: CostModel, E: int, tau: int, T: int, rho: float) -> float:
    """Full-set epochs, minus the pruned share of post-warmup epochs, plus one
    scoring pass per cycle."""
    if tau > E:
        raise ConfigError("tau must be <= E")
    if T < 1:
        raise ConfigError("T must be >= 1")
    if not 0.0 <= rho < 1.0:
        raise ConfigError("rho must lie in [0, 1)")
    step = cost.B * cost.dt_step
    return E * step - (E - tau) * step * rho + n_cycles(E, tau, T) * cost.dt_forward


def min_cycle(cost: CostModel, rho: float) -> float:
    """Smallest cycle length (epochs) for which re-scoring pays for itself."""
    if rho <= 0.0:
        raise ConfigError("min_cycle is undefined for rho = 0 (pruning saves nothing)")
    return cost.dt_forward / (cost.dt_step * cost.B * rho)


def measure_cost(run) -> CostModel:
    """Median per-step and per-scoring-pass wall times recorded by a run."""
    steps = np.asarray(run.step_times, dtype=float)
    if steps.size == 0:
        raise MeasurementError("run recorded no training-step timings")
    fwd = np.asarray(run.forward_times, dtype=float)
    dt_forward = float(np.median(fwd)) if fwd.size else 0.0
    return CostModel(float(np.median(steps)), dt_forward, int(run.steps_per_epoch))


# ---------------------------------------------------------------------- sweep

SWEEP_COLUMNS = ("E", "tau", "T", "rho", "cycles", "predicted_time", "baseline_time", "saving", "min_cycle")


def sweep_rows(cost: CostModel, E: int, tau: int, rhos, Ts) -> list[dict]:
    rows = []
    for rho in rhos:
        for T in Ts:
            pred = predict_total_time(cost, E, tau, T, rho)
            base = baseline_time(cost, E)
            tmin = min_cycle(cost, rho) if rho > 0 else math.nan
            rows.append({
                "E": E, "tau": tau, "T": T, "rho": rho,
                "cycles": n_cycles(E, tau, T),
                "predicted_time": pred,
                "baseline_time": base,
                "saving": base - pred,
                "min_cycle": tmin,
            })
    return rows
