"""Offline build, online update cycle, regime comparison, reporting and CLI."""
from .config import REGIME_LABELS, REGIMES, RunConfig, config_from_dict, config_hash, dump_config, load_config
from .metrics import evaluate, longest_run, per_horizon, reduction_pct
from .offline import OfflineArtifacts, StageError, load_offline, read_manifest, run_offline, split_storms
from .online import (
    CycleRecord,
    EventState,
    ForecastLog,
    RegimeComparison,
    compare_regimes,
    escalation_window,
    event_posts,
    init_event,
    inject_forecast_bias,
    run_event,
    update_cycle,
)
from .report import OfflineEvaluation, evaluate_offline, report
