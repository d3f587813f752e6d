"""Evaluation tables and plain-text summaries written as CSV / text files."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..stf import one_step_mae
from .config import REGIME_LABELS, REGIMES, RunConfig
from .metrics import lead_errors, onset_rollout, safe_ratio, sa_masked_evaluation
from .offline import OfflineArtifacts, windows_for
from .online import RegimeComparison


@dataclass
class OfflineEvaluation:
    storm_id: int
    sa_rows: list[dict]  # ratio, mae, rmse
    stf_rollout: np.ndarray  # (T, M)
    nr_rollout: np.ndarray
    truth: np.ndarray
    stf_lead_mae: np.ndarray
    stf_lead_rmse: np.ndarray
    nr_lead_mae: np.ndarray
    nr_lead_rmse: np.ndarray
    one_step_mae: float

    def sa_mae(self, ratio: float) -> float:
        return next(r["mae"] for r in self.sa_rows if abs(r["ratio"] - ratio) < 1e-9)

    def ablation_ratio(self, lead: int) -> float:
        return safe_ratio(float(self.nr_lead_mae[lead - 1]), float(self.stf_lead_mae[lead - 1]))


def evaluate_offline(arts: OfflineArtifacts, cfg: RunConfig) -> OfflineEvaluation:
    test = arts.split.test
    storm, traj = arts.storm(test), arts.trajectory(test)
    sa_rows = []
    for k, ratio in enumerate(sorted(arts.sa_models)):
        mae, rmse = sa_masked_evaluation(
            arts.sa_models[ratio], traj.values, arts.context, arts.g1, ratio, cfg.sa.eval_draws, seed=cfg.seed * 31 + k
        )
        sa_rows.append({"ratio": ratio, "mae": mae, "rmse": rmse})
    stf = onset_rollout(arts.stf, storm, traj, arts.g2)
    nr = onset_rollout(arts.stf_nr, storm, traj, arts.g2)
    s_mae, s_rmse = lead_errors(stf, traj.values)
    n_mae, n_rmse = lead_errors(nr, traj.values)
    windows = windows_for(arts.trajectories, arts.storms, [test], arts.stf.hp.history)
    return OfflineEvaluation(
        test, sa_rows, stf, nr, traj.values, s_mae, s_rmse, n_mae, n_rmse, one_step_mae(windows, arts.g2, arts.stf)
    )


def _csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".10g")
    return str(v)


def regime_table(cmp: RegimeComparison) -> str:
    """Cycle x regime layout: 1..L-hour MAE per regime and CRAF reductions."""
    header = [
        "cycle_t",
        "observed_zfl_mean",
        "observed_zfl_std",
        *[f"{REGIME_LABELS[r]}_mae" for r in REGIMES],
        "craf_vs_fr_pct",
        "craf_vs_ur_pct",
        "assimilated",
        "coverage",
        "crowd_coverage",
        "meets_thresholds",
    ]
    rows = [
        [
            r["t"],
            r["observed_mean"],
            r["observed_std"],
            *[r[k] for k in REGIMES],
            r["craf_vs_fr_pct"],
            r["craf_vs_ur_pct"],
            r["assimilated"],
            r["coverage"],
            r["crowd_coverage"],
            r["success"],
        ]
        for r in cmp.table
    ]
    return _csv(header, rows)


def per_horizon_table(cmp: RegimeComparison | None, ev: OfflineEvaluation | None) -> str:
    rows = []
    if ev is not None:
        for k in range(len(ev.stf_lead_mae)):
            rows.append(["STF-onset", k + 1, ev.stf_lead_mae[k], ev.stf_lead_rmse[k]])
        for k in range(len(ev.nr_lead_mae)):
            rows.append(["STF-NR-onset", k + 1, ev.nr_lead_mae[k], ev.nr_lead_rmse[k]])
    if cmp is not None:
        for r in REGIMES:
            cycles = cmp.logs[r].cycles
            depth = max(len(c.mae) for c in cycles)
            for k in range(depth):
                maes = [c.mae[k] for c in cycles if len(c.mae) > k]
                rmses = [c.rmse[k] for c in cycles if len(c.rmse) > k]
                rows.append([REGIME_LABELS[r], k + 1, float(np.mean(maes)), float(np.mean(rmses))])
    return _csv(["model", "lead_h", "mae", "rmse"], rows)


def per_zone_table(ev: OfflineEvaluation) -> str:
    s = np.abs(ev.stf_rollout[: len(ev.truth)] - ev.truth).mean(axis=0)
    n = np.abs(ev.nr_rollout[: len(ev.truth)] - ev.truth).mean(axis=0)
    rows = [[m + 1, s[m], n[m]] for m in range(len(s))]
    return _csv(["zone", "stf_24h_mae", "stf_nr_24h_mae"], rows)


def sa_table(ev: OfflineEvaluation) -> str:
    return _csv(["ratio", "masked_mae", "masked_rmse"], [[r["ratio"], r["mae"], r["rmse"]] for r in ev.sa_rows])


def ablation_table(ev: OfflineEvaluation) -> str:
    rows = [
        [k + 1, ev.stf_lead_mae[k], ev.nr_lead_mae[k], ev.ablation_ratio(k + 1)] for k in range(len(ev.stf_lead_mae))
    ]
    return _csv(["lead_h", "stf_mae", "stf_nr_mae", "nr_over_stf"], rows)


def forecast_long(cmp: RegimeComparison) -> str:
    rows = []
    for r in REGIMES:
        for c in cmp.logs[r].cycles:
            if c.truth is None:
                continue
            for k in range(len(c.truth)):
                for m in range(c.forecast.shape[1]):
                    rows.append([REGIME_LABELS[r], c.t, k + 1, m + 1, c.forecast[k, m], c.truth[k, m]])
    return _csv(["regime", "cycle_t", "lead_h", "zone", "forecast", "truth"], rows)


def summary_text(cfg: RunConfig, cmp: RegimeComparison | None, ev: OfflineEvaluation | None) -> str:
    lines = [f"config {cfg.hash()}", f"seed {cfg.seed}"]
    if ev is not None:
        lines.append(f"held-out storm {ev.storm_id}")
        for r in ev.sa_rows:
            lines.append(f"SA ratio {r['ratio']:.2f}: masked MAE {r['mae']:.4f} RMSE {r['rmse']:.4f}")
        lines.append(f"STF one-step MAE {ev.one_step_mae:.4f}")
        last = len(ev.stf_lead_mae)
        lines.append(f"STF rollout +{last}h MAE {ev.stf_lead_mae[-1]:.4f}")
        if last >= 6:
            lines.append(
                f"STF +6h MAE {ev.stf_lead_mae[5]:.5f}, STF-NR +6h MAE {ev.nr_lead_mae[5]:.5f}, "
                f"ratio {ev.ablation_ratio(6):.2f}"
            )
    if cmp is not None:
        lines.append(f"bias factor {cfg.event.bias_factor}")
        for row in cmp.table:
            lines.append(
                f"cycle {row['t']:2d}: observed {row['observed_mean']:.3f}+/-{row['observed_std']:.3f} "
                f"FR {row['fr']:.4f} UR {row['ur']:.4f} CRAF {row['craf']:.4f} "
                f"({row['craf_vs_fr_pct']:.1f}% vs FR, {row['craf_vs_ur_pct']:.1f}% vs UR)"
            )
        lines.append(f"longest run meeting thresholds: {cmp.longest_success_run} cycles")
    return "\n".join(lines) + "\n"


def report(
    out_dir: str | Path, cfg: RunConfig, cmp: RegimeComparison | None = None, ev: OfflineEvaluation | None = None
) -> list[Path]:
    """Write every available table; returns the paths written."""
    if cmp is None and ev is None:
        raise ValueError("report: nothing to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"per_horizon_errors.csv": per_horizon_table(cmp, ev), "summary.txt": summary_text(cfg, cmp, ev)}
    if ev is not None:
        files["per_zone_errors.csv"] = per_zone_table(ev)
        files["sa_errors.csv"] = sa_table(ev)
        files["ablation.csv"] = ablation_table(ev)
    if cmp is not None:
        files["regime_comparison.csv"] = regime_table(cmp)
        files["forecasts_long.csv"] = forecast_long(cmp)
    written = []
    for name, text in files.items():
        (out / name).write_text(text)
        written.append(out / name)
    return written
