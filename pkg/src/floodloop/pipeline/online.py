"""Online update cycle for the three forecasting regimes on the held-out storm.

Cycle ``t`` runs at the end of hour ``t``.  Observed rainfall ``R[0..t]`` and
posts stamped ``<= t`` are available; rainfall after ``t`` comes from the
(biased) forecast hyetograph.

* fr   - one rollout from the storm onset driven by the forecast hyetograph;
         later cycles read that single trajectory.
* ur   - the model state is stepped forward each hour with observed rainfall;
         forecasts use observed rainfall up to ``t`` and forecast rainfall after.
* craf - as ur, but inside the assimilation window the state at ``t`` is
         replaced by the spatial completion of the crowd observation.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..cim import CrowdParams, Post, localize, posts_to_observation, synth_crowd
from ..sa import sa_infer
from ..stf import HistoryBuffer, stf_rollout, stf_step
from ..worldgen import Hyetograph, derive_conditioning, simulate_flood
from .config import REGIME_LABELS, REGIMES, RunConfig
from .metrics import evaluate, per_horizon
from .offline import OfflineArtifacts, fragility_params

log = logging.getLogger(__name__)


def inject_forecast_bias(rain: Hyetograph, factor: float) -> Hyetograph:
    if not factor > 0:
        raise ValueError("inject_forecast_bias: factor must be > 0")
    return Hyetograph(np.asarray(rain.intensity, dtype=np.float64) * factor, rain.storm_id)


def escalation_window(rain: Hyetograph) -> np.ndarray:
    """Hours whose intensity exceeds the storm median."""
    r = np.asarray(rain.intensity)
    return r > np.median(r)


def assimilation_mask(cfg: RunConfig, forecast_rain: Hyetograph) -> np.ndarray:
    t = forecast_rain.duration
    mode = cfg.event.assimilation
    if mode == "escalation":
        return escalation_window(forecast_rain)
    if mode == "always":
        return np.ones(t, dtype=bool)
    if mode == "never":
        return np.zeros(t, dtype=bool)
    mask = np.zeros(t, dtype=bool)
    for h in cfg.event.assimilation_hours:
        if 0 <= h < t:
            mask[h] = True
    return mask


def crowd_params(cfg: RunConfig) -> CrowdParams:
    c = cfg.crowd
    band = None if c.coverage_band is None else tuple(c.coverage_band)
    return CrowdParams(c.base_rate, c.depth_mid, c.depth_scale, c.min_depth, band)


def nearest_ratio(coverage: float, ratios) -> float:
    """Trained ratio tag nearest the realized coverage; ties go to the sparser model."""
    ratios = sorted(ratios)
    return min(ratios, key=lambda r: (abs(r - coverage), r))


@dataclass
class CycleRecord:
    t: int
    regime: str
    assimilated: bool
    n_posts: int
    crowd_coverage: float
    coverage: float
    sa_ratio: float | None
    observation: dict[int, float]
    sa_output: np.ndarray | None
    forecast: np.ndarray  # (F, M) for hours t+1..t+F
    truth: np.ndarray | None  # (F', M), F' <= F hours that exist in the record
    mae: np.ndarray
    rmse: np.ndarray
    duration: float = 0.0

    def score(self, leads: int) -> float:
        """MAE over the first ``leads`` hours (zones x hours)."""
        if self.truth is None or len(self.truth) < leads:
            return float("nan")
        return evaluate(self.forecast[:leads], self.truth[:leads])[0]

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "regime": REGIME_LABELS[self.regime],
            "assimilated": self.assimilated,
            "n_posts": self.n_posts,
            "crowd_coverage": self.crowd_coverage,
            "coverage": self.coverage,
            "sa_ratio": self.sa_ratio,
            "observation": {str(k): v for k, v in sorted(self.observation.items())},
            "sa_output": None if self.sa_output is None else self.sa_output.tolist(),
            "forecast": self.forecast.tolist(),
            "mae": self.mae.tolist(),
            "rmse": self.rmse.tolist(),
        }


@dataclass
class ForecastLog:
    regime: str
    storm_id: int
    cycles: list[CycleRecord] = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(c.to_dict(), sort_keys=True) + "\n" for c in self.cycles)


@dataclass
class EventState:
    regime: str
    forecast_rain: np.ndarray  # full forecast hyetograph
    history: HistoryBuffer
    assimilate: np.ndarray  # bool per hour
    t: int = -1
    observed_rain: list[float] = field(default_factory=list)
    fr_plan: np.ndarray | None = None


def init_event(arts: OfflineArtifacts, regime: str, forecast_rain: Hyetograph, cfg: RunConfig) -> EventState:
    if regime not in REGIMES:
        raise ValueError(f"init_event: unknown regime {regime!r}")
    _require(arts, regime)
    h, m = arts.stf.hp.history, arts.city.n_zones
    return EventState(
        regime,
        np.asarray(forecast_rain.intensity, dtype=np.float64),
        # pre-storm hours -H..-1 are dry
        HistoryBuffer(h, m, start=-h, states=[np.zeros(m) for _ in range(h)], sources=["ground-truth-sim"] * h),
        assimilation_mask(cfg, forecast_rain),
    )


def _require(arts: OfflineArtifacts, regime: str) -> None:
    if arts.stf is None or not arts.stf.trained:
        raise ValueError("update_cycle: trained STF model missing")
    if regime == "craf" and not arts.sa_models:
        raise ValueError("update_cycle: CRAF needs trained SA models")


def _rain_span(state: EventState, start: int, stop: int) -> np.ndarray:
    """Rainfall for hours start..stop-1: observed up to state.t, forecast after, zero outside the storm."""
    out = np.zeros(stop - start)
    for i, hour in enumerate(range(start, stop)):
        if 0 <= hour <= state.t and hour < len(state.observed_rain):
            out[i] = state.observed_rain[hour]
        elif hour > state.t and 0 <= hour < len(state.forecast_rain):
            out[i] = state.forecast_rain[hour]
    return out


def update_cycle(
    state: EventState,
    posts: list[Post],
    observed_rain_t: float,
    arts: OfflineArtifacts,
    cfg: RunConfig,
    zone_elevation: np.ndarray | None = None,
) -> tuple[EventState, CycleRecord]:
    """Advance the event by one hour and issue an F-hour forecast."""
    t0 = time.perf_counter()
    _require(arts, state.regime)
    model, g2 = arts.stf, arts.g2
    h, horizon, m = model.hp.history, cfg.stf.horizon, arts.city.n_zones
    t = state.t + 1
    state.observed_rain.append(float(observed_rain_t))
    state.t = t
    obs_entries: dict[int, float] = {}
    sa_out = None
    ratio = None
    assimilated = False
    n_posts = 0
    crowd_cov = 0.0

    if state.regime == "fr":
        if state.fr_plan is None:
            span = len(state.forecast_rain) + horizon
            rain = np.concatenate([np.zeros(h), state.forecast_rain, np.zeros(horizon)])
            state.fr_plan = stf_rollout(rain, np.zeros((h, m)), span, g2, model)
        state.history.push(state.fr_plan[t], "model-predicted")
        forecast = state.fr_plan[t + 1 : t + 1 + horizon].copy()
    else:
        # one model step with observed rainfall R[t-H..t]
        z_t = stf_step(_rain_span(state, t - h, t + 1), state.history, g2, model)
        state.history.push(z_t, "model-predicted")
        if state.regime == "craf" and t < len(state.assimilate) and state.assimilate[t]:
            current = [p for p in posts if p.t == t]
            n_posts = len(current)
            crowd_cov = len({localize(p, arts.city) for p in current} - {None}) / m
            obs = posts_to_observation(
                current,
                arts.city,
                fragility_params(cfg),
                t,
                cfg.crowd.radius,
                cfg.crowd.elevation_tol,
                zone_elevation,
            )
            if obs.entries:
                ratio = nearest_ratio(obs.coverage(m), arts.sa_models)
                sa_out = sa_infer(obs, arts.context, arts.g1, arts.sa_models[ratio]).z
                state.history.replace(t, sa_out, "sa-inferred")
                obs_entries = dict(obs.entries)
                assimilated = True
            else:
                log.info("craf cycle t=%d: empty observation, continuing open loop", t)
        rain = _rain_span(state, t - h + 1, t + 1 + horizon)
        forecast = stf_rollout(rain, state.history, horizon, g2, model)

    record = CycleRecord(
        t=t,
        regime=state.regime,
        assimilated=assimilated,
        n_posts=n_posts,
        crowd_coverage=crowd_cov,
        coverage=len(obs_entries) / m,
        sa_ratio=ratio,
        observation=obs_entries,
        sa_output=sa_out,
        forecast=forecast,
        truth=None,
        mae=np.zeros(0),
        rmse=np.zeros(0),
    )
    record.duration = time.perf_counter() - t0
    return state, record


def attach_truth(record: CycleRecord, truth: np.ndarray) -> None:
    t = record.t
    sl = truth[t + 1 : t + 1 + len(record.forecast)]
    record.truth = sl
    if len(sl):
        record.mae, record.rmse = per_horizon(record.forecast[: len(sl)], sl)


def event_posts(arts: OfflineArtifacts, cfg: RunConfig, storm_id: int | None = None) -> dict[int, list[Post]]:
    """Synthetic crowd posts per hour from the simulated depth field of the storm."""
    storm = arts.storm(arts.split.test if storm_id is None else storm_id)
    depth = simulate_flood(arts.city, storm, cfg.world.substeps).depth
    params = crowd_params(cfg)
    return {t: synth_crowd(depth[t], arts.city, params, cfg.seed * 7919 + 11, t) for t in range(len(depth))}


def run_event(
    arts: OfflineArtifacts,
    cfg: RunConfig,
    regime: str | None = None,
    posts: dict[int, list[Post]] | None = None,
    storm_id: int | None = None,
    observed_rain: np.ndarray | None = None,
) -> ForecastLog:
    regime = regime or cfg.event.regime
    storm = arts.storm(arts.split.test if storm_id is None else storm_id)
    truth = arts.trajectory(storm.storm_id).values
    forecast_rain = inject_forecast_bias(storm, cfg.event.bias_factor)
    if regime == "craf" and posts is None:
        posts = event_posts(arts, cfg, storm.storm_id)
    posts = posts or {}
    observed = storm.intensity if observed_rain is None else np.asarray(observed_rain, dtype=np.float64)
    zone_elev = derive_conditioning(arts.city)[:, 0]
    state = init_event(arts, regime, forecast_rain, cfg)
    out = ForecastLog(regime, storm.storm_id)
    for t in range(storm.duration):
        state, rec = update_cycle(state, list(posts.get(t, [])), float(observed[t]), arts, cfg, zone_elev)
        attach_truth(rec, truth)
        out.cycles.append(rec)
    return out


@dataclass
class RegimeComparison:
    storm_id: int
    logs: dict[str, ForecastLog]
    table: list[dict]
    longest_success_run: int
    leads: int
    min_run: int = 3

    @property
    def success(self) -> bool:
        return self.longest_success_run >= self.min_run


def compare_regimes(arts: OfflineArtifacts, cfg: RunConfig, posts: dict[int, list[Post]] | None = None) -> RegimeComparison:
    from .metrics import longest_run, reduction_pct

    storm_id = arts.split.test
    if posts is None:
        posts = event_posts(arts, cfg, storm_id)
    logs = {r: run_event(arts, cfg, r, posts, storm_id) for r in REGIMES}
    truth = arts.trajectory(storm_id).values
    leads = cfg.event.score_leads
    table, flags = [], []
    for k in range(len(truth)):
        recs = {r: logs[r].cycles[k] for r in REGIMES}
        scores = {r: recs[r].score(leads) for r in REGIMES}
        if any(np.isnan(v) for v in scores.values()):
            continue
        vs_fr = reduction_pct(scores["craf"], scores["fr"])
        vs_ur = reduction_pct(scores["craf"], scores["ur"])
        ok = bool(vs_fr >= 100 * cfg.event.fr_threshold and vs_ur >= 100 * cfg.event.ur_threshold)
        flags.append(ok)
        z = truth[k]
        table.append(
            {
                "t": k,
                "observed_mean": float(z.mean()),
                "observed_std": float(z.std()),
                "fr": scores["fr"],
                "ur": scores["ur"],
                "craf": scores["craf"],
                "craf_vs_fr_pct": vs_fr,
                "craf_vs_ur_pct": vs_ur,
                "assimilated": recs["craf"].assimilated,
                "coverage": recs["craf"].coverage,
                "crowd_coverage": recs["craf"].crowd_coverage,
                "success": ok,
            }
        )
    return RegimeComparison(storm_id, logs, table, longest_run(flags), leads, cfg.event.min_run)
