"""Error metrics and offline model evaluations."""
from __future__ import annotations

import math

import numpy as np

from ..sa import masked_errors, n_observed, sa_predict_batch
from ..stf import stf_rollout


def evaluate(forecast, truth, mask=None) -> tuple[float, float]:
    """MAE and RMSE over the selected cells (all cells when ``mask`` is None)."""
    f = np.asarray(forecast, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if f.shape != t.shape:
        raise ValueError(f"evaluate: forecast {f.shape} and truth {t.shape} are misaligned")
    err = f - t
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != f.shape:
            raise ValueError(f"evaluate: mask {mask.shape} does not match {f.shape}")
        err = err[mask]
    if err.size == 0:
        raise ValueError("evaluate: empty selection")
    mae = float(np.abs(err).mean())
    rmse = float(np.sqrt((err * err).mean()))
    return mae, max(rmse, mae)


def per_horizon(forecast, truth) -> tuple[np.ndarray, np.ndarray]:
    """Per-lead MAE and RMSE over zones for (F, M) arrays."""
    f = np.asarray(forecast, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if f.shape != t.shape or f.ndim != 2:
        raise ValueError(f"per_horizon: forecast {f.shape} and truth {t.shape} are misaligned")
    pairs = [evaluate(f[k], t[k]) for k in range(len(f))]
    return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])


def reduction_pct(value: float, baseline: float) -> float:
    """Percentage reduction of ``value`` relative to ``baseline``; nan when the baseline is 0."""
    if not baseline > 0:
        return float("nan")
    return 100.0 * (1.0 - value / baseline)


def longest_run(flags) -> int:
    best = cur = 0
    for f in flags:
        cur = cur + 1 if f else 0
        best = max(best, cur)
    return best


def sa_masked_evaluation(model, snapshots, context, graph, ratio: float, draws: int = 20, seed: int = 0):
    """Masked-zone MAE/RMSE over ``draws`` random masks of every snapshot."""
    snaps = np.asarray(snapshots, dtype=np.float64)
    m = snaps.shape[1]
    k = n_observed(ratio, m)
    rng = np.random.default_rng(seed)
    preds, truths, hidden = [], [], []
    for _ in range(draws):
        observed = np.zeros(snaps.shape, dtype=bool)
        for i in range(len(snaps)):
            observed[i, rng.choice(m, size=k, replace=False)] = True
        values = np.where(observed, snaps, 0.0)
        preds.append(sa_predict_batch(values, observed, context, graph, model))
        truths.append(snaps)
        hidden.append(~observed)
    return masked_errors(np.concatenate(preds), np.concatenate(truths), np.concatenate(hidden))


def onset_rollout(model, storm, trajectory, graph, horizon: int | None = None) -> np.ndarray:
    """Rollout from the storm onset (zero history) over the storm duration."""
    h = model.hp.history
    r = np.asarray(storm.intensity, dtype=np.float64)
    horizon = horizon or len(r)
    rain = np.concatenate([np.zeros(h), r, np.zeros(max(0, horizon - len(r)))])
    return stf_rollout(rain, np.zeros((h, trajectory.values.shape[1])), horizon, graph, model)


def lead_errors(forecast, truth) -> tuple[np.ndarray, np.ndarray]:
    n = min(len(forecast), len(truth))
    return per_horizon(np.asarray(forecast)[:n], np.asarray(truth)[:n])


def safe_ratio(a: float, b: float) -> float:
    return a / b if b > 0 else math.inf
