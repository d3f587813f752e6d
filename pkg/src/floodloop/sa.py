"""Spatial completion of sparse zone observations with a graph attention network.

Nodes are zones; each node sees its observed functionality loss (or an
inverse-distance prior from observed zones), its archetype mix and four
terrain features.  The network is trained to reconstruct the hidden zones
only, and observed zones are clamped to their reported values at inference.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from . import numerics as nx
from .fragility import ZflSnapshot
from .graphs import ErzGraph
from .worldgen.conditioning import SELECTED_CONDITIONING

log = logging.getLogger(__name__)

IDW_POWER = 2.0


@dataclass
class Observation:
    """Sparse zone-level observation at hour ``t``; zone ids are 1-based."""

    t: int
    entries: dict[int, float] = field(default_factory=dict)

    def validate(self, n_zones: int) -> None:
        for m, v in self.entries.items():
            if not (1 <= int(m) <= n_zones):
                raise ValueError(f"Observation: unknown zone id {m}")
            if not (0.0 <= v <= 1.0) or not math.isfinite(v):
                raise ValueError(f"Observation: value {v} for zone {m} outside [0, 1]")

    def coverage(self, n_zones: int) -> float:
        return len(self.entries) / n_zones

    def as_arrays(self, n_zones: int) -> tuple[np.ndarray, np.ndarray]:
        """(values, observed mask) as dense length-M arrays."""
        self.validate(n_zones)
        vals = np.zeros(n_zones)
        mask = np.zeros(n_zones, dtype=bool)
        for m, v in self.entries.items():
            vals[int(m) - 1] = float(v)
            mask[int(m) - 1] = True
        return vals, mask


@dataclass
class ZoneContext:
    """Static zone attributes: W (M, 7), E (M, 4) and centroids (M, 2) in meters."""

    W: np.ndarray
    E: np.ndarray
    centroids: np.ndarray

    @classmethod
    def from_city(cls, city) -> "ZoneContext":
        from .worldgen.conditioning import building_attributes, derive_conditioning

        return cls(derive_conditioning(city), building_attributes(city), city.zone_centroids())

    @property
    def n_zones(self) -> int:
        return len(self.E)

    def static_features(self) -> np.ndarray:
        return np.concatenate([self.E, self.W[:, SELECTED_CONDITIONING]], axis=1)

    def inverse_distance_weights(self) -> np.ndarray:
        d = np.linalg.norm(self.centroids[:, None, :] - self.centroids[None, :, :], axis=-1)
        with np.errstate(divide="ignore"):
            w = np.where(d > 0, 1.0 / d**IDW_POWER, 0.0)
        np.fill_diagonal(w, 0.0)
        return w


@dataclass
class SaHyperParams:
    hidden_layers: int = 2
    heads: int = 4
    hidden_width: int = 32  # concatenated width of all heads
    lr: float = 5e-3
    epochs: int = 120
    batch_size: int = 32
    patience: int = 25
    init_scale: float = 1.0


@dataclass
class SaModel:
    hp: SaHyperParams
    params: dict[str, np.ndarray]
    feature_mean: np.ndarray
    feature_std: np.ndarray
    fallback_prior: float
    ratio: float
    trained: bool = False

    @property
    def input_width(self) -> int:
        return 1 + len(self.feature_mean)

    def save(self, path: str | Path) -> None:
        meta = {
            "hidden_layers": self.hp.hidden_layers,
            "heads": self.hp.heads,
            "hidden_width": self.hp.hidden_width,
            "ratio": self.ratio,
            "trained": self.trained,
            "fallback_prior": format(self.fallback_prior, ".17g"),
            "feature_mean": [format(v, ".17g") for v in self.feature_mean],
            "feature_std": [format(v, ".17g") for v in self.feature_std],
        }
        checkpoint.save(path, "sa", meta, self.params)

    @classmethod
    def load(cls, path: str | Path) -> "SaModel":
        kind, meta, params = checkpoint.load(path)
        if kind != "sa":
            raise ValueError(f"{path}: expected an sa checkpoint, found {kind}")
        hp = SaHyperParams(meta["hidden_layers"], meta["heads"], meta["hidden_width"])
        return cls(
            hp,
            params,
            np.array([float(v) for v in meta["feature_mean"]]),
            np.array([float(v) for v in meta["feature_std"]]),
            float(meta["fallback_prior"]),
            float(meta["ratio"]),
            bool(meta["trained"]),
        )


# ---------------------------------------------------------------------------
# features


def idw_prior(values: np.ndarray, observed: np.ndarray, weights: np.ndarray, fallback: float) -> np.ndarray:
    """Observed values where present, IDW of observed zones elsewhere.

    Works on a single snapshot (M,) or a batch (B, M).
    """
    values = np.atleast_2d(values).astype(np.float64)
    observed = np.atleast_2d(observed).astype(bool)
    obs_f = observed.astype(np.float64)
    num = (values * obs_f) @ weights.T
    den = obs_f @ weights.T
    prior = np.where(den > 0, num / np.where(den > 0, den, 1.0), fallback)
    out = np.where(observed, values, prior)
    return out


def assemble_node_features(
    obs: Observation, context: ZoneContext, model: SaModel | None = None, stats=None
) -> tuple[np.ndarray, np.ndarray]:
    """(M, 1 + 4 + 4) node features and the observed mask."""
    vals, mask = obs.as_arrays(context.n_zones)
    if model is not None:
        mean, std, fallback = model.feature_mean, model.feature_std, model.fallback_prior
    else:
        mean, std, fallback = stats
    col0 = idw_prior(vals, mask, context.inverse_distance_weights(), fallback)[0]
    static = (context.static_features() - mean) / std
    return np.column_stack([col0, static]), mask


def _batch_features(values, observed, context: ZoneContext, mean, std, fallback, weights=None):
    weights = context.inverse_distance_weights() if weights is None else weights
    col0 = idw_prior(values, observed, weights, fallback)
    static = (context.static_features() - mean) / std
    b = col0.shape[0]
    return np.concatenate([col0[..., None], np.broadcast_to(static, (b,) + static.shape)], axis=-1)


# ---------------------------------------------------------------------------
# network


def gat_layer(H: nx.Tensor, neighbours: np.ndarray, W, a_src, a_dst, heads: int, concat_heads: bool):
    """One multi-head attention layer on a batch ``H`` of shape (B, M, F_in).

    Returns (output, attention) where attention has shape (B, heads, M, M).
    """
    b, m, _ = H.shape
    f_out = W.shape[-1] // heads
    wh = nx.reshape(nx.matmul(H, W), (b, m, heads, f_out))
    wh = nx.transpose(wh, (0, 2, 1, 3))  # (B, heads, M, f_out)
    src = nx.matmul(wh, nx.reshape(a_src, (heads, f_out, 1)))  # (B, heads, M, 1)
    dst = nx.matmul(wh, nx.reshape(a_dst, (heads, f_out, 1)))
    scores = nx.leaky_relu(nx.add(src, nx.transpose(dst, (0, 1, 3, 2))))
    alpha = nx.softmax(scores, mask=neighbours)
    out = nx.matmul(alpha, wh)  # (B, heads, M, f_out)
    if concat_heads:
        out = nx.reshape(nx.transpose(out, (0, 2, 1, 3)), (b, m, heads * f_out))
    else:
        out = nx.mean(out, axis=1)  # (B, M, f_out)
    return out, alpha


def init_params(hp: SaHyperParams, in_width: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    width = in_width
    per_head = hp.hidden_width // hp.heads
    for layer in range(hp.hidden_layers):
        params[f"gat{layer}.W"] = rng.normal(0, hp.init_scale / math.sqrt(width), (width, hp.heads * per_head))
        params[f"gat{layer}.a_src"] = rng.normal(0, hp.init_scale / math.sqrt(per_head), (hp.heads, per_head))
        params[f"gat{layer}.a_dst"] = rng.normal(0, hp.init_scale / math.sqrt(per_head), (hp.heads, per_head))
        params[f"gat{layer}.b"] = np.zeros(hp.heads * per_head)
        width = hp.heads * per_head
    params["out.W"] = rng.normal(0, hp.init_scale / math.sqrt(width), (width, hp.heads))
    params["out.a_src"] = rng.normal(0, hp.init_scale, (hp.heads, 1))
    params["out.a_dst"] = rng.normal(0, hp.init_scale, (hp.heads, 1))
    params["out.b"] = np.zeros(1)
    return params


def sa_forward(X, neighbours: np.ndarray, p: dict[str, nx.Tensor], hp: SaHyperParams) -> nx.Tensor:
    """Batch of node features (B, M, F) -> probabilities (B, M)."""
    h = X if isinstance(X, nx.Tensor) else nx.const(X)
    for layer in range(hp.hidden_layers):
        h, _ = gat_layer(
            h, neighbours, p[f"gat{layer}.W"], p[f"gat{layer}.a_src"], p[f"gat{layer}.a_dst"], hp.heads, True
        )
        h = nx.elu(nx.add(h, p[f"gat{layer}.b"]))
    out, _ = gat_layer(h, neighbours, p["out.W"], p["out.a_src"], p["out.a_dst"], hp.heads, False)
    b, m, _ = out.shape
    return nx.reshape(nx.sigmoid(nx.add(out, p["out.b"])), (b, m))


def sa_loss(X, target, hidden_mask, neighbours, p, hp) -> nx.Tensor:
    """Mean squared error over hidden (unobserved) nodes only."""
    return nx.masked_mse(sa_forward(X, neighbours, p, hp), target, hidden_mask)


def sa_infer(obs: Observation, context: ZoneContext, graph: ErzGraph, model: SaModel) -> ZflSnapshot:
    """Dense snapshot from a sparse observation; observed zones are returned exactly."""
    if not model.trained:
        raise ValueError("sa_infer: model is not trained")
    X, mask = assemble_node_features(obs, context, model)
    p = {k: nx.const(v) for k, v in model.params.items()}
    pred = sa_forward(X[None], graph.neighbourhood_mask(), p, model.hp).value[0]
    vals, _ = obs.as_arrays(context.n_zones)
    out = np.where(mask, vals, np.clip(pred, 0.0, 1.0))
    return ZflSnapshot(out, obs.t)


def sa_predict_batch(values, observed, context, graph, model, weights=None) -> np.ndarray:
    """Clamped predictions for a batch of (B, M) observation arrays."""
    X = _batch_features(values, observed, context, model.feature_mean, model.feature_std, model.fallback_prior, weights)
    p = {k: nx.const(v) for k, v in model.params.items()}
    pred = sa_forward(X, graph.neighbourhood_mask(), p, model.hp).value
    return np.where(observed, values, np.clip(pred, 0.0, 1.0))


# ---------------------------------------------------------------------------
# masking and training


def n_observed(ratio: float, n_zones: int) -> int:
    return min(n_zones, math.ceil(ratio * n_zones - 1e-9))


def mask_observations(snapshot: ZflSnapshot, ratio: float, seed) -> tuple[Observation, np.ndarray]:
    """Observe ceil(ratio * M) zones chosen uniformly; returns the observation and the hidden mask."""
    if not (0.0 < ratio <= 1.0):
        raise ValueError("mask_observations: ratio must lie in (0, 1]")
    z = snapshot.z
    m = len(z)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chosen = np.sort(rng.choice(m, size=n_observed(ratio, m), replace=False))
    hidden = np.ones(m, dtype=bool)
    hidden[chosen] = False
    return Observation(snapshot.t, {int(i) + 1: float(z[i]) for i in chosen}), hidden


def random_masks(rng: np.random.Generator, batch: int, n_zones: int, ratio: float) -> np.ndarray:
    """(batch, M) boolean observed masks with exactly ceil(ratio * M) True per row."""
    k = n_observed(ratio, n_zones)
    keys = rng.random((batch, n_zones))
    order = np.argsort(keys, axis=1)
    observed = np.zeros((batch, n_zones), dtype=bool)
    np.put_along_axis(observed, order[:, :k], True, axis=1)
    return observed


def feature_stats(context: ZoneContext, train_snapshots: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    static = context.static_features()
    mean = static.mean(axis=0)
    std = static.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    return mean, std, float(np.mean(train_snapshots))


def masked_errors(pred: np.ndarray, truth: np.ndarray, hidden: np.ndarray) -> tuple[float, float]:
    diff = (pred - truth)[hidden]
    return float(np.abs(diff).mean()), float(np.sqrt((diff * diff).mean()))


def sa_train(
    train_snapshots: np.ndarray,
    val_snapshots: np.ndarray,
    context: ZoneContext,
    graph: ErzGraph,
    ratio: float,
    hp: SaHyperParams | None = None,
    seed: int = 0,
) -> tuple[SaModel, list[dict]]:
    """Masked-node regression training; returns the best-validation model and the epoch history."""
    hp = hp or SaHyperParams()
    if not (0.0 < ratio < 1.0):
        raise ValueError("sa_train: ratio must lie in (0, 1)")
    train = np.asarray(train_snapshots, dtype=np.float64)
    val = np.asarray(val_snapshots, dtype=np.float64)
    if train.ndim != 2 or len(train) == 0:
        raise ValueError("sa_train: need a nonempty (n, M) training set")
    rng = np.random.default_rng(seed)
    mean, std, fallback = feature_stats(context, train)
    params = init_params(hp, 1 + len(mean), rng)
    model = SaModel(hp, params, mean, std, fallback, float(ratio))
    neighbours = graph.neighbourhood_mask()
    weights = context.inverse_distance_weights()
    state = nx.AdamState(lr=hp.lr)
    m = context.n_zones

    val_rng = np.random.default_rng(seed + 7919)
    val_obs = random_masks(val_rng, len(val), m, ratio) if len(val) else None

    def evaluate(ps) -> float:
        if val_obs is None:
            return float("nan")
        probe = SaModel(hp, ps, mean, std, fallback, ratio, True)
        pred = sa_predict_batch(val, val_obs, context, graph, probe, weights)
        return masked_errors(pred, val, ~val_obs)[0]

    best = (float("inf"), {k: v.copy() for k, v in params.items()})
    history = []
    stale = 0
    for epoch in range(hp.epochs):
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), hp.batch_size):
            idx = order[start : start + hp.batch_size]
            target = train[idx]
            observed = random_masks(rng, len(idx), m, ratio)
            X = _batch_features(target, observed, context, mean, std, fallback, weights)
            leaves = {k: nx.param(v, k) for k, v in params.items()}
            loss = sa_loss(X, target, ~observed, neighbours, leaves, hp)
            value = float(loss.value.reshape(()))
            if not math.isfinite(value):
                raise FloatingPointError(f"sa_train: non-finite loss at epoch {epoch}, batch starting {start}")
            names = sorted(leaves)
            grads = dict(zip(names, nx.backward(loss, [leaves[k] for k in names])))
            nx.adam_step(params, grads, state)
            losses.append(value)
        val_mae = evaluate(params)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_mae": val_mae})
        log.debug("sa ratio=%.2f epoch=%d loss=%.5f val_mae=%.4f", ratio, epoch, history[-1]["train_loss"], val_mae)
        if val_obs is None:
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
