"""Offline build: world, simulations, graphs and trained models, persisted with a manifest."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..fragility import FragilityParams, trajectory_from_depths
from ..graphs import ErzGraph, build_sa_graph, build_stf_graph, read_edge_list, write_edge_list
from ..sa import SaHyperParams, SaModel, ZoneContext, sa_train
from ..stf import StfHyperParams, StfModel, WindowSet, ablate_rainfall, make_training_windows, stf_train
from ..worldgen import (
    generate_city,
    generate_rainfall_ensemble,
    load_city,
    load_hyetographs,
    load_trajectories,
    save_city,
    save_hyetographs,
    save_trajectories,
    simulate_flood,
)
from .config import RunConfig, config_hash

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
STAGES = ("worldgen", "simulate", "graphs", "train-sa", "train-stf")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


def sa_filename(ratio: float) -> str:
    return f"sa_r{round(ratio * 100):02d}.ckpt"


def fragility_params(cfg: RunConfig) -> FragilityParams:
    f = cfg.fragility
    return FragilityParams.from_base(tuple(f.base_medians), f.ratio, f.beta)


def sa_hyper(cfg: RunConfig) -> SaHyperParams:
    s = cfg.sa
    return SaHyperParams(
        hidden_layers=s.hidden_layers,
        heads=s.heads,
        hidden_width=s.hidden_width,
        lr=s.lr,
        epochs=s.epochs,
        batch_size=s.batch_size,
        patience=s.patience,
    )


def stf_hyper(cfg: RunConfig) -> StfHyperParams:
    s = cfg.stf
    return StfHyperParams(
        history=s.history,
        kernel=s.kernel,
        channels=s.channels,
        rain_channels=s.rain_channels,
        zone_channels=s.zone_channels,
        lr=s.lr,
        epochs=s.epochs,
        batch_size=s.batch_size,
        patience=s.patience,
    )


@dataclass
class Split:
    test: int
    train: list[int]
    val: list[int]


def split_storms(cfg: RunConfig, storms) -> Split:
    """Held-out storm = total nearest the target; the rest split by a seeded shuffle."""
    totals = np.array([s.total for s in storms])
    test_idx = int(np.argmin(np.abs(totals - cfg.event.target_total)))
    rest = [i for i in range(len(storms)) if i != test_idx]
    order = np.random.default_rng([cfg.seed, 17]).permutation(len(rest))
    rest = [rest[i] for i in order]
    n_val = max(1, int(round(cfg.val_fraction * len(rest))))
    ids = [int(s.storm_id) for s in storms]
    return Split(ids[test_idx], sorted(ids[i] for i in rest[n_val:]), sorted(ids[i] for i in rest[:n_val]))


@dataclass
class OfflineArtifacts:
    config: RunConfig
    out_dir: Path
    city: object
    storms: list
    trajectories: list
    split: Split
    g1: ErzGraph
    g2: ErzGraph
    sa_models: dict[float, SaModel] = field(default_factory=dict)
    stf: StfModel | None = None
    stf_nr: StfModel | None = None

    def storm(self, storm_id: int):
        return next(s for s in self.storms if s.storm_id == storm_id)

    def trajectory(self, storm_id: int):
        return next(t for t in self.trajectories if t.storm_id == storm_id)

    @property
    def context(self) -> ZoneContext:
        return ZoneContext.from_city(self.city)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Manifest:
    def __init__(self, out_dir: Path, cfg: RunConfig):
        self.path = out_dir / MANIFEST
        self.doc = {
            "config_hash": config_hash(cfg),
            "seed": cfg.seed,
            "status": "running",
            "stale": True,
            "stages": [],
            "artifacts": {},
        }
        if self.path.exists():
            old = json.loads(self.path.read_text())
            if old.get("config_hash") == self.doc["config_hash"]:
                self.doc.update({k: old[k] for k in ("stages", "artifacts", "split") if k in old})

    def record(self, stage: str, files: list[Path], **extra) -> None:
        # a rerun stage invalidates everything downstream of it
        done = set(self.doc["stages"]) | {stage}
        self.doc["stages"] = [s for s in STAGES if s in done and STAGES.index(s) <= STAGES.index(stage)]
        for f in files:
            self.doc["artifacts"][f.name] = _sha256(f)
        self.doc.update(extra)
        self.write()

    def fail(self, stage: str, message: str) -> None:
        self.doc.update(status="failed", stale=True, failed_stage=stage, error=message)
        self.write()

    def complete(self) -> None:
        self.doc.update(status="complete", stale=False)
        self.doc.pop("failed_stage", None)
        self.doc.pop("error", None)
        self.write()

    def write(self) -> None:
        self.path.write_text(json.dumps(self.doc, indent=2, sort_keys=True) + "\n")


def read_manifest(out_dir: str | Path) -> dict:
    path = Path(out_dir) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no manifest in {out_dir}")
    return json.loads(path.read_text())


# ---------------------------------------------------------------------------
# stages


def stage_worldgen(cfg: RunConfig, out: Path):
    w = cfg.world
    city = generate_city(cfg.seed, w.rows, w.cols, w.n_zones, w.n_buildings, w.cell_size, w.n_outlets)
    storms = generate_rainfall_ensemble(cfg.seed, w.n_storms, w.duration, w.rain_threshold)
    save_city(out / "city.json", city)
    save_hyetographs(out / "storms.csv", storms)
    return city, storms


def stage_simulate(cfg: RunConfig, out: Path, city, storms):
    fp = fragility_params(cfg)
    trajs = [
        trajectory_from_depths(city, simulate_flood(city, s, cfg.world.substeps), fp, s.storm_id) for s in storms
    ]
    save_trajectories(out / "trajectories.csv", trajs)
    return trajs


def _stack(trajs, ids) -> np.ndarray:
    by_id = {t.storm_id: t for t in trajs}
    return np.concatenate([by_id[i].values for i in ids], axis=0)


def stage_graphs(cfg: RunConfig, out: Path, trajs, split: Split):
    known = split.train + split.val
    g1 = build_sa_graph(_stack(trajs, known), cfg.graphs.sa_threshold, cfg.graphs.top_k)
    by_id = {t.storm_id: t for t in trajs}
    g2 = build_stf_graph([by_id[i] for i in known], cfg.graphs.stf_threshold, cfg.graphs.top_k)
    write_edge_list(out / "g1.csv", g1)
    write_edge_list(out / "g2.csv", g2)
    return g1, g2


def stage_train_sa(cfg: RunConfig, out: Path, city, trajs, split: Split, g1: ErzGraph):
    ctx = ZoneContext.from_city(city)
    train, val = _stack(trajs, split.train), _stack(trajs, split.val)
    models, rows = {}, []
    for k, ratio in enumerate(cfg.sa.ratios):
        model, hist = sa_train(train, val, ctx, g1, ratio, sa_hyper(cfg), seed=cfg.seed * 1000 + k)
        model.save(out / sa_filename(ratio))
        models[ratio] = model
        rows += [(f"sa_r{round(ratio * 100):02d}", h["epoch"], h["train_loss"], h["val_mae"]) for h in hist]
    _write_history(out / "sa_history.csv", rows)
    return models


def windows_for(trajs, storms, ids, history: int) -> WindowSet:
    by_t = {t.storm_id: t for t in trajs}
    by_s = {s.storm_id: s for s in storms}
    return WindowSet.concat([make_training_windows(by_t[i], by_s[i], history) for i in ids])


def stage_train_stf(cfg: RunConfig, out: Path, trajs, storms, split: Split, g2: ErzGraph):
    hp = stf_hyper(cfg)
    train = windows_for(trajs, storms, split.train, hp.history)
    val = windows_for(trajs, storms, split.val, hp.history)
    seed = cfg.seed * 1000 + 500
    stf, h1 = stf_train(train, g2, hp, seed, val, exclude_storms=(split.test,))
    nr, h2 = ablate_rainfall(train, g2, hp, seed, val, exclude_storms=(split.test,))
    stf.save(out / "stf.ckpt")
    nr.save(out / "stf_nr.ckpt")
    rows = [("stf", h["epoch"], h["train_loss"], h["val_mae"]) for h in h1]
    rows += [("stf_nr", h["epoch"], h["train_loss"], h["val_mae"]) for h in h2]
    _write_history(out / "stf_history.csv", rows)
    return stf, nr


def _write_history(path: Path, rows) -> None:
    lines = ["model,epoch,train_loss,val_mae"]
    lines += [f"{m},{e},{float(loss)!r},{float(val)!r}" for m, e, loss, val in rows]
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# orchestration


def _run(stage: str, manifest: Manifest, fn, *args):
    try:
        return fn(*args)
    except Exception as exc:  # noqa: BLE001 - every failure is tagged with its stage
        manifest.fail(stage, f"{type(exc).__name__}: {exc}")
        raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc


def run_offline(cfg: RunConfig, out_dir: str | Path | None = None, stages: tuple[str, ...] = STAGES) -> OfflineArtifacts:
    """Run the requested stages in order, loading earlier outputs from disk when skipped."""
    cfg.validate()
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out, cfg)
    manifest.doc.update(status="running", stale=True)
    manifest.write()

    if "worldgen" in stages:
        city, storms = _run("worldgen", manifest, stage_worldgen, cfg, out)
        manifest.record("worldgen", [out / "city.json", out / "storms.csv"])
    else:
        city, storms = _run("worldgen", manifest, lambda: (load_city(out / "city.json"), load_hyetographs(out / "storms.csv")))
    split = split_storms(cfg, storms)
    manifest.doc["split"] = {"loso_storm": split.test, "train_storms": split.train, "val_storms": split.val}

    if "simulate" in stages:
        trajs = _run("simulate", manifest, stage_simulate, cfg, out, city, storms)
        manifest.record("simulate", [out / "trajectories.csv"])
    else:
        trajs = _run("simulate", manifest, load_trajectories, out / "trajectories.csv")

    if "graphs" in stages:
        g1, g2 = _run("graphs", manifest, stage_graphs, cfg, out, trajs, split)
        manifest.record("graphs", [out / "g1.csv", out / "g2.csv"])
    else:
        g1, g2 = _run("graphs", manifest, lambda: (read_edge_list(out / "g1.csv"), read_edge_list(out / "g2.csv")))

    arts = OfflineArtifacts(cfg, out, city, storms, trajs, split, g1, g2)
    if "train-sa" in stages:
        arts.sa_models = _run("train-sa", manifest, stage_train_sa, cfg, out, city, trajs, split, g1)
        manifest.record("train-sa", [out / sa_filename(r) for r in cfg.sa.ratios] + [out / "sa_history.csv"])
    if "train-stf" in stages:
        arts.stf, arts.stf_nr = _run("train-stf", manifest, stage_train_stf, cfg, out, trajs, storms, split, g2)
        manifest.record("train-stf", [out / "stf.ckpt", out / "stf_nr.ckpt", out / "stf_history.csv"])

    if all(s in manifest.doc["stages"] for s in STAGES):
        manifest.complete()
        if arts.stf is None or not arts.sa_models:
            arts = load_offline(cfg, out)
    return arts


def load_offline(cfg: RunConfig, out_dir: str | Path | None = None) -> OfflineArtifacts:
    """Load a completed offline build; rejects missing, stale or mismatched artifacts."""
    out = Path(out_dir or cfg.out)
    doc = read_manifest(out)
    if doc.get("config_hash") != config_hash(cfg):
        raise StageError("load", f"artifacts in {out} were built with a different config")
    if doc.get("stale", True):
        raise StageError("load", f"artifacts in {out} are stale (status {doc.get('status')})")
    for name, digest in doc["artifacts"].items():
        path = out / name
        if not path.exists():
            raise StageError("load", f"missing artifact {name}")
        if _sha256(path) != digest:
            raise StageError("load", f"artifact {name} does not match the manifest")
    city = load_city(out / "city.json")
    storms = load_hyetographs(out / "storms.csv")
    trajs = load_trajectories(out / "trajectories.csv")
    sp = doc["split"]
    split = Split(sp["loso_storm"], sp["train_storms"], sp["val_storms"])
    arts = OfflineArtifacts(
        cfg, out, city, storms, trajs, split, read_edge_list(out / "g1.csv"), read_edge_list(out / "g2.csv")
    )
    arts.sa_models = {r: SaModel.load(out / sa_filename(r)) for r in cfg.sa.ratios}
    arts.stf = StfModel.load(out / "stf.ckpt")
    arts.stf_nr = StfModel.load(out / "stf_nr.ckpt")
    return arts
