"""Depth-driven building functionality states and zone functionality loss.

Seven ordered states I..VII; III..VII are non-functional.  Exceedance of
state k (k = 2..7) follows a lognormal curve in water depth.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

N_STATES = 7
FIRST_NONFUNCTIONAL = 2  # index of state III in a 0-based state vector
DEFAULT_BASE_MEDIANS = (0.4, 0.3, 0.25, 0.2)  # state-II median per archetype, meters
DEFAULT_RATIO = 1.6
DEFAULT_BETA = 0.4


def _ladder(base: float, ratio: float) -> tuple[float, ...]:
    return tuple(base * ratio**k for k in range(N_STATES - 1))


@dataclass(frozen=True)
class FragilityParams:
    """Per-archetype medians for states II..VII plus a shared dispersion."""

    medians: tuple[tuple[float, ...], ...] = field(
        default_factory=lambda: tuple(_ladder(b, DEFAULT_RATIO) for b in DEFAULT_BASE_MEDIANS)
    )
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        med = np.asarray(self.medians, dtype=np.float64)
        if med.ndim != 2 or med.shape[1] != N_STATES - 1:
            raise ValueError("FragilityParams: need six medians per archetype")
        if np.any(med <= 0) or np.any(np.diff(med, axis=1) <= 0):
            raise ValueError("FragilityParams: medians must be positive and strictly increasing")
        if not self.beta > 0:
            raise ValueError("FragilityParams: beta must be positive")

    @classmethod
    def from_base(cls, base_medians=DEFAULT_BASE_MEDIANS, ratio=DEFAULT_RATIO, beta=DEFAULT_BETA):
        return cls(tuple(_ladder(float(b), float(ratio)) for b in base_medians), float(beta))

    def median_array(self) -> np.ndarray:
        return np.asarray(self.medians, dtype=np.float64)


def exceedance(depth, archetype, params: FragilityParams) -> np.ndarray:
    """G_k(d) for k = 2..7, shape ``depth.shape + (6,)``."""
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth < 0):
        raise ValueError("depth must be >= 0")
    mu = params.median_array()[np.asarray(archetype)]
    d = depth[..., None]
    with np.errstate(divide="ignore"):
        z = (np.log(d) - np.log(mu)) / params.beta
    g = np.where(d > 0, ndtr(z), 0.0)
    # exact monotonicity in k guards against rounding
    return np.minimum.accumulate(g, axis=-1)


def depth_to_state_probs(depth, archetype, params: FragilityParams) -> np.ndarray:
    """Probability over states I..VII, shape ``depth.shape + (7,)``."""
    g = exceedance(depth, archetype, params)
    ones = np.ones(g.shape[:-1] + (1,))
    zeros = np.zeros_like(ones)
    upper = np.concatenate([ones, g], axis=-1)
    lower = np.concatenate([g, zeros], axis=-1)
    return upper - lower


def nonfunctional_prob(probs) -> np.ndarray | float:
    """P(state in III..VII)."""
    probs = np.asarray(probs, dtype=np.float64)
    out = probs[..., FIRST_NONFUNCTIONAL:].sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def aggregate_zfl(nonfunctional) -> float:
    """Zone functionality loss: arithmetic mean over the zone's buildings."""
    p = np.asarray(nonfunctional, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise ValueError("aggregate_zfl: zone has no buildings")
    return float(min(max(p.mean(), 0.0), 1.0))


def building_nonfunctional(depths, archetypes, params: FragilityParams) -> np.ndarray:
    return nonfunctional_prob(depth_to_state_probs(depths, archetypes, params))


def zone_means(values: np.ndarray, zones: np.ndarray, n_zones: int) -> np.ndarray:
    """Mean of ``values[..., i]`` over buildings i of each zone 1..M."""
    out = np.zeros(values.shape[:-1] + (n_zones,))
    for m in range(n_zones):
        members = zones == m + 1
        if not members.any():
            raise ValueError(f"zone {m + 1} has no buildings")
        out[..., m] = values[..., members].mean(axis=-1)
    return np.clip(out, 0.0, 1.0)


@dataclass
class ZflSnapshot:
    z: np.ndarray  # (M,)
    t: int = 0

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64).reshape(-1)
        if np.any(self.z < 0) or np.any(self.z > 1):
            raise ValueError("ZflSnapshot: entries must lie in [0, 1]")


@dataclass
class ZflTrajectory:
    values: np.ndarray  # (T, M)
    storm_id: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("ZflTrajectory: values must be T x M")
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise ValueError("ZflTrajectory: entries must lie in [0, 1]")

    @property
    def hours(self) -> int:
        return self.values.shape[0]

    @property
    def n_zones(self) -> int:
        return self.values.shape[1]


def trajectory_from_depths(city, depth_field, params: FragilityParams, storm_id: int = 0) -> ZflTrajectory:
    depth = depth_field.depth if hasattr(depth_field, "depth") else np.asarray(depth_field)
    if depth.shape[1:] != (city.rows, city.cols):
        raise ValueError(f"trajectory_from_depths: depth grid {depth.shape[1:]} != city grid {(city.rows, city.cols)}")
    r, c = city.buildings[:, 0], city.buildings[:, 1]
    if np.any((r < 0) | (r >= city.rows) | (c < 0) | (c >= city.cols)):
        raise ValueError("trajectory_from_depths: building cell outside grid")
    per_building = depth[:, r, c]  # (T, N)
    nf = building_nonfunctional(per_building, city.archetypes, params)
    return ZflTrajectory(zone_means(nf, city.zones, city.n_zones), storm_id)
