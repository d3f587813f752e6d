"""Rainfall-conditioned one-step graph forecaster with autoregressive rollout.

Input to one step: the last H zone snapshots and the H + 1 rainfall values
ending at the target hour.  A small temporal convolution encodes rainfall;
its channels are broadcast over zones and concatenated to the snapshot
history.  Two ST-Conv blocks (gated temporal conv, first-order graph conv,
gated temporal conv) and an output stage (two gated temporal convs and a
1x1 conv with sigmoid) produce the next snapshot.

Time indexing: ``Z[h]`` is the state at the end of hour ``h`` and depends on
rainfall ``R[0..h]``.  The window for target hour ``h`` holds ``Z[h-H..h-1]``
and ``R[h-H..h]``; hours before 0 are zero.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from . import numerics as nx
from .graphs import ErzGraph

log = logging.getLogger(__name__)

SOURCES = ("ground-truth-sim", "sa-inferred", "model-predicted")


@dataclass
class StfHyperParams:
    history: int = 12
    kernel: int = 3
    channels: int = 16
    rain_channels: int = 4
    rain_kernel: int = 2
    zone_channels: int = 4
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    patience: int = 10
    history_noise: float = 0.0  # std of Gaussian noise added to training histories
    use_rainfall: bool = True

    def __post_init__(self):
        if self.kernel % 2 == 0:
            raise ValueError("StfHyperParams: temporal kernel must be odd")
        if self.history < self.kernel:
            raise ValueError("StfHyperParams: history must be >= kernel")
        if self.output_kernel < 1:
            raise ValueError("StfHyperParams: history too short for two ST-Conv blocks")

    @property
    def output_kernel(self) -> int:
        return self.history - 4 * (self.kernel - 1)


@dataclass
class StfModel:
    hp: StfHyperParams
    params: dict[str, np.ndarray]
    rain_scale: float
    trained: bool = False
    excluded_storms: list[int] = field(default_factory=list)

    def parameter_shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in sorted(self.params.items())}

    def save(self, path: str | Path) -> None:
        hp = self.hp
        meta = {
            "architecture": "stconv2-glu",
            "history": hp.history,
            "kernel": hp.kernel,
            "channels": hp.channels,
            "rain_channels": hp.rain_channels,
            "rain_kernel": hp.rain_kernel,
            "zone_channels": hp.zone_channels,
            "use_rainfall": hp.use_rainfall,
            "rain_scale": format(self.rain_scale, ".17g"),
            "trained": self.trained,
            "excluded_storms": list(self.excluded_storms),
        }
        checkpoint.save(path, "stf", meta, self.params)

    @classmethod
    def load(cls, path: str | Path) -> "StfModel":
        kind, meta, params = checkpoint.load(path)
        if kind != "stf":
            raise ValueError(f"{path}: expected an stf checkpoint, found {kind}")
        hp = StfHyperParams(
            history=meta["history"],
            kernel=meta["kernel"],
            channels=meta["channels"],
            rain_channels=meta["rain_channels"],
            rain_kernel=meta["rain_kernel"],
            zone_channels=meta["zone_channels"],
            use_rainfall=meta["use_rainfall"],
        )
        return cls(hp, params, float(meta["rain_scale"]), bool(meta["trained"]), list(meta["excluded_storms"]))


@dataclass
class HistoryBuffer:
    """Last ``capacity`` snapshots, hour-stamped and tagged with their source."""

    capacity: int
    n_zones: int
    start: int = 0  # hour of the first slot
    states: list[np.ndarray] = field(default_factory=list)
    sources: list[str] = field(default_factory=list)

    @property
    def hours(self) -> list[int]:
        return list(range(self.start, self.start + len(self.states)))

    @property
    def last_hour(self) -> int:
        return self.start + len(self.states) - 1

    def push(self, z: np.ndarray, source: str) -> None:
        if source not in SOURCES:
            raise ValueError(f"HistoryBuffer: unknown source {source!r}")
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        if z.shape != (self.n_zones,):
            raise ValueError(f"HistoryBuffer: snapshot has {z.size} zones, expected {self.n_zones}")
        self.states.append(z.copy())
        self.sources.append(source)
        if len(self.states) > self.capacity:
            self.states.pop(0)
            self.sources.pop(0)
            self.start += 1

    def replace(self, hour: int, z: np.ndarray, source: str) -> None:
        i = hour - self.start
        if not (0 <= i < len(self.states)):
            raise ValueError(f"HistoryBuffer: hour {hour} not in buffer {self.hours}")
        self.states[i] = np.asarray(z, dtype=np.float64).reshape(-1).copy()
        self.sources[i] = source

    def padded(self) -> np.ndarray:
        """(capacity, M) with zero rows before the oldest snapshot."""
        out = np.zeros((self.capacity, self.n_zones))
        if self.states:
            out[self.capacity - len(self.states) :] = np.array(self.states)
        return out

    def copy(self) -> "HistoryBuffer":
        return HistoryBuffer(
            self.capacity, self.n_zones, self.start, [s.copy() for s in self.states], list(self.sources)
        )


# ---------------------------------------------------------------------------
# windows


@dataclass
class WindowSet:
    history: np.ndarray  # (n, H, M)
    rain: np.ndarray  # (n, H + 1)
    target: np.ndarray  # (n, M)
    storm: np.ndarray  # (n,) storm id per window
    hour: np.ndarray  # (n,) target hour

    def __len__(self) -> int:
        return len(self.target)

    def subset(self, keep: np.ndarray) -> "WindowSet":
        return WindowSet(self.history[keep], self.rain[keep], self.target[keep], self.storm[keep], self.hour[keep])

    @classmethod
    def concat(cls, sets: list["WindowSet"]) -> "WindowSet":
        return cls(*(np.concatenate([getattr(s, f) for s in sets]) for f in ("history", "rain", "target", "storm", "hour")))


def make_training_windows(trajectory, rain, history: int = 12) -> WindowSet:
    """One window per target hour with zero padding before hour 0."""
    z = np.asarray(getattr(trajectory, "values", trajectory), dtype=np.float64)
    r = np.asarray(getattr(rain, "intensity", rain), dtype=np.float64).reshape(-1)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ValueError("make_training_windows: empty trajectory")
    t, m = z.shape
    if len(r) != t:
        raise ValueError(f"make_training_windows: rainfall has {len(r)} hours, trajectory {t}")
    zp = np.concatenate([np.zeros((history, m)), z])
    rp = np.concatenate([np.zeros(history), r])
    hist = np.stack([zp[h : h + history] for h in range(t)])
    rain_w = np.stack([rp[h : h + history + 1] for h in range(t)])
    storm = np.full(t, getattr(trajectory, "storm_id", 0))
    return WindowSet(hist, rain_w, z.copy(), storm, np.arange(t))


# ---------------------------------------------------------------------------
# network


def temporal_gated_conv(x: nx.Tensor, W, b, kernel: int, out_channels: int) -> nx.Tensor:
    """Valid temporal conv along axis 1 of (B, T, M, C) followed by a GLU with residual."""
    bsz, t, m, c = x.shape
    t_out = t - kernel + 1
    taps = [nx.getitem(x, (slice(None), slice(k, k + t_out))) for k in range(kernel)]
    stacked = nx.concat(taps, axis=-1) if kernel > 1 else taps[0]
    pre = nx.add(nx.matmul(stacked, W), b)  # (B, T', M, 2*C_out)
    aligned = taps[-1]
    if c < out_channels:
        aligned = nx.concat([aligned, nx.const(np.zeros((bsz, t_out, m, out_channels - c)))], axis=-1)
    elif c > out_channels:
        aligned = nx.getitem(aligned, (Ellipsis, slice(0, out_channels)))
    residual = nx.concat([aligned, nx.const(np.zeros((bsz, t_out, m, out_channels)))], axis=-1)
    return nx.glu(nx.add(pre, residual))


def spatial_graph_conv(x: nx.Tensor, a_norm: np.ndarray, theta, bias) -> nx.Tensor:
    """x + tanh(A_hat x Theta + b) on (B, T, M, C)."""
    agg = nx.matmul(nx.const(a_norm), x)
    return nx.add(x, nx.tanh(nx.add(nx.matmul(agg, theta), bias)))


def init_params(hp: StfHyperParams, n_zones: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    c, k = hp.channels, hp.kernel
    p = {
        "rain.W": rng.normal(0, 1.0 / math.sqrt(hp.rain_kernel), (hp.rain_kernel, hp.rain_channels)),
        "rain.b": np.zeros(hp.rain_channels),
    }
    p["zone.E"] = rng.normal(0, 0.5, (n_zones, hp.zone_channels))
    c_in = 1 + hp.rain_channels + hp.zone_channels
    for blk in range(2):
        p[f"st{blk}.t1.W"] = rng.normal(0, 1.0 / math.sqrt(k * c_in), (k * c_in, 2 * c))
        p[f"st{blk}.t1.b"] = np.zeros(2 * c)
        p[f"st{blk}.g.W"] = rng.normal(0, 0.5 / math.sqrt(c), (c, c))
        p[f"st{blk}.g.b"] = np.zeros(c)
        p[f"st{blk}.t2.W"] = rng.normal(0, 1.0 / math.sqrt(k * c), (k * c, 2 * c))
        p[f"st{blk}.t2.b"] = np.zeros(2 * c)
        c_in = c
    ko = hp.output_kernel
    p["out.t1.W"] = rng.normal(0, 1.0 / math.sqrt(ko * c), (ko * c, 2 * c))
    p["out.t1.b"] = np.zeros(2 * c)
    p["out.t2.W"] = rng.normal(0, 1.0 / math.sqrt(c), (c, 2 * c))
    p["out.t2.b"] = np.zeros(2 * c)
    p["out.fc.W"] = rng.normal(0, 1.0 / math.sqrt(c), (c, 1))
    p["out.fc.b"] = np.zeros(1)
    return p


def stf_forward(history, rain, a_norm: np.ndarray, p: dict[str, nx.Tensor], hp: StfHyperParams, rain_scale: float):
    """(B, H, M) history and (B, H + 1) rainfall -> (B, M) next-hour snapshot."""
    history = np.asarray(history, dtype=np.float64)
    rain = np.asarray(rain, dtype=np.float64)
    bsz, h, m = history.shape
    if h != hp.history or rain.shape != (bsz, hp.history + 1):
        raise ValueError(
            f"stf_forward: expected history (B, {hp.history}, M) and rain (B, {hp.history + 1}); "
            f"got {history.shape} and {rain.shape}"
        )
    if not hp.use_rainfall:
        rain = np.zeros_like(rain)
    r = rain / rain_scale
    rk = hp.rain_kernel
    n_rain = hp.history + 1 - rk + 1
    taps = np.stack([r[:, k : k + n_rain] for k in range(rk)], axis=-1)[:, -hp.history :]  # (B, H, rk)
    enc = nx.tanh(nx.add(nx.matmul(nx.const(taps), p["rain.W"]), p["rain.b"]))  # (B, H, rc)
    enc = nx.broadcast_to(nx.reshape(enc, (bsz, hp.history, 1, hp.rain_channels)), (bsz, hp.history, m, hp.rain_channels))
    ze = nx.broadcast_to(nx.reshape(p["zone.E"], (1, 1, m, hp.zone_channels)), (bsz, hp.history, m, hp.zone_channels))
    x = nx.concat([nx.const(history[..., None]), enc, ze], axis=-1)  # (B, H, M, 1 + rc + zc)
    for blk in range(2):
        x = temporal_gated_conv(x, p[f"st{blk}.t1.W"], p[f"st{blk}.t1.b"], hp.kernel, hp.channels)
        x = spatial_graph_conv(x, a_norm, p[f"st{blk}.g.W"], p[f"st{blk}.g.b"])
        x = temporal_gated_conv(x, p[f"st{blk}.t2.W"], p[f"st{blk}.t2.b"], hp.kernel, hp.channels)
    x = temporal_gated_conv(x, p["out.t1.W"], p["out.t1.b"], hp.output_kernel, hp.channels)
    x = temporal_gated_conv(x, p["out.t2.W"], p["out.t2.b"], 1, hp.channels)
    y = nx.sigmoid(nx.add(nx.matmul(x, p["out.fc.W"]), p["out.fc.b"]))  # (B, 1, M, 1)
    return nx.reshape(y, (bsz, m))


def _const_params(model: StfModel) -> dict[str, nx.Tensor]:
    return {k: nx.const(v) for k, v in model.params.items()}


def predict_batch(history, rain, graph: ErzGraph, model: StfModel) -> np.ndarray:
    return stf_forward(history, rain, graph.normalized(), _const_params(model), model.hp, model.rain_scale).value


def stf_step(rain_window, history: HistoryBuffer | np.ndarray, graph: ErzGraph, model: StfModel) -> np.ndarray:
    """Next-hour snapshot from H + 1 rainfall hours and the (padded) history."""
    hist = history.padded() if isinstance(history, HistoryBuffer) else np.asarray(history, dtype=np.float64)
    rain_window = np.asarray(rain_window, dtype=np.float64).reshape(-1)
    if hist.shape[0] != model.hp.history:
        raise ValueError(f"stf_step: history has {hist.shape[0]} rows, expected {model.hp.history}")
    if rain_window.shape != (model.hp.history + 1,):
        raise ValueError(f"stf_step: rain window has {rain_window.size} hours, expected {model.hp.history + 1}")
    return predict_batch(hist[None], rain_window[None], graph, model)[0]


def stf_rollout(rain, history: HistoryBuffer | np.ndarray, horizon: int, graph: ErzGraph, model: StfModel) -> np.ndarray:
    """Autoregressive F-step forecast.

    ``rain`` covers the H history hours plus the ``horizon`` forecast hours,
    i.e. ``R[t-H+1 .. t+F]``.
    """
    h = model.hp.history
    if horizon < 1:
        raise ValueError("stf_rollout: horizon must be >= 1")
    rain = np.asarray(rain, dtype=np.float64).reshape(-1)
    if len(rain) < h + horizon:
        raise ValueError(f"stf_rollout: rainfall covers {len(rain)} hours, need {h + horizon}")
    buf = history.padded() if isinstance(history, HistoryBuffer) else np.asarray(history, dtype=np.float64).copy()
    a_norm = graph.normalized()
    params = _const_params(model)
    out = np.zeros((horizon, buf.shape[1]))
    for k in range(horizon):
        window = rain[k : k + h + 1]
        z = stf_forward(buf[None], window[None], a_norm, params, model.hp, model.rain_scale).value[0]
        out[k] = z
        buf = np.concatenate([buf[1:], z[None]])
    return out


# ---------------------------------------------------------------------------
# training


def stf_loss(windows: WindowSet, idx, a_norm, p, hp, rain_scale, rng=None) -> nx.Tensor:
    hist = windows.history[idx]
    if rng is not None and hp.history_noise > 0:
        hist = np.clip(hist + rng.normal(0.0, hp.history_noise, hist.shape), 0.0, 1.0)
    pred = stf_forward(hist, windows.rain[idx], a_norm, p, hp, rain_scale)
    return nx.mse(pred, windows.target[idx])


def one_step_mae(windows: WindowSet, graph: ErzGraph, model: StfModel, batch: int = 256) -> float:
    errs = []
    for s in range(0, len(windows), batch):
        sl = slice(s, s + batch)
        errs.append(np.abs(predict_batch(windows.history[sl], windows.rain[sl], graph, model) - windows.target[sl]))
    return float(np.concatenate(errs).mean())


def stf_train(
    train: WindowSet,
    graph: ErzGraph,
    hp: StfHyperParams | None = None,
    seed: int = 0,
    val: WindowSet | None = None,
    exclude_storms: tuple[int, ...] = (),
) -> tuple[StfModel, list[dict]]:
    """Teacher-forced one-step training with Adam; keeps the best-validation parameters."""
    hp = hp or StfHyperParams()
    if len(train) == 0:
        raise ValueError("stf_train: empty window set")
    if exclude_storms:
        train = train.subset(~np.isin(train.storm, exclude_storms))
        if val is not None:
            val = val.subset(~np.isin(val.storm, exclude_storms))
    rng = np.random.default_rng(seed)
    rain_scale = float(max(train.rain.max(), 1e-9))
    params = init_params(hp, graph.n_nodes, rng)
    mean_target = float(np.clip(train.target.mean(), 1e-3, 1 - 1e-3))
    params["out.fc.b"][:] = math.log(mean_target / (1 - mean_target))
    model = StfModel(hp, params, rain_scale, False, sorted(int(s) for s in exclude_storms))
    a_norm = graph.normalized()
    state = nx.AdamState(lr=hp.lr)
    history = []
    best = (float("inf"), {k: v.copy() for k, v in params.items()})
    stale = 0
    for epoch in range(hp.epochs):
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), hp.batch_size):
            idx = order[start : start + hp.batch_size]
            leaves = {k: nx.param(v, k) for k, v in params.items()}
            loss = stf_loss(train, idx, a_norm, leaves, hp, rain_scale, rng)
            value = float(loss.value.reshape(()))
            if not math.isfinite(value):
                raise FloatingPointError(f"stf_train: non-finite loss at epoch {epoch}, batch starting {start}")
            names = sorted(leaves)
            grads = dict(zip(names, nx.backward(loss, [leaves[k] for k in names])))
            nx.adam_step(params, grads, state)
            losses.append(value)
        probe = StfModel(hp, params, rain_scale, True)
        val_mae = one_step_mae(val, graph, probe) if val is not None and len(val) else float("nan")
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_mae": val_mae})
        log.debug("stf epoch=%d loss=%.6f val_mae=%.5f", epoch, history[-1]["train_loss"], val_mae)
        if val is None or not len(val):
            best = (float("nan"), {k: v.copy() for k, v in params.items()})
            continue
        if val_mae < best[0]:
            best = (val_mae, {k: v.copy() for k, v in params.items()})
            stale = 0
        else:
            stale += 1
            if stale >= hp.patience:
                break
    model.params = best[1]
    model.trained = True
    return model, history


def ablate_rainfall(
    train: WindowSet,
    graph: ErzGraph,
    hp: StfHyperParams | None = None,
    seed: int = 0,
    val: WindowSet | None = None,
    exclude_storms: tuple[int, ...] = (),
) -> tuple[StfModel, list[dict]]:
    """Same architecture and schedule with rainfall inputs identically zero."""
    hp = hp or StfHyperParams()
    nr = StfHyperParams(**{**hp.__dict__, "use_rainfall": False})
    return stf_train(train, graph, nr, seed, val, exclude_storms)
