"""Depth interpolation, conversion to zone observations and synthetic crowd posts."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..fragility import FragilityParams, building_nonfunctional
from ..sa import Observation
from ..worldgen.conditioning import derive_conditioning
from .posts import Post, default_cue_table, extract_depth_cue, filter_relevant, localize

log = logging.getLogger(__name__)

DEFAULT_RADIUS = 300.0
DEFAULT_ELEVATION_TOL = 1.0
IDW_POWER = 2.0

_KEYWORDS = ("Waterlogging", "Flooding", "Inundation", "Heavy rain", "Rainstorm")
_TEMPLATES = {
    "human-body": "{kw} near {name}: water is up to the {part} when walking",
    "shared-bicycle": "{kw} at {name}, water reaches the {part} of shared bikes",
    "car": "{kw} by {name}, water up to the {part} of parked cars",
}


def _zone_elevation(city) -> np.ndarray:
    return derive_conditioning(city)[:, 0]


def interpolate_depths(
    estimates,
    city,
    radius: float = DEFAULT_RADIUS,
    elevation_tol: float = DEFAULT_ELEVATION_TOL,
    zone_elevation: np.ndarray | None = None,
) -> dict[int, float]:
    """Median per directly reported zone, then constrained IDW to nearby similar-elevation zones."""
    direct: dict[int, list[float]] = {}
    for zone, depth in estimates:
        direct.setdefault(int(zone), []).append(float(depth))
    if not direct:
        return {}
    out = {z: float(np.median(v)) for z, v in sorted(direct.items())}
    centroids = city.zone_centroids()
    elev = _zone_elevation(city) if zone_elevation is None else np.asarray(zone_elevation)
    donors = np.array(sorted(out)) - 1
    donor_depth = np.array([out[z + 1] for z in donors])
    for m in range(city.n_zones):
        if m + 1 in out:
            continue
        d = np.hypot(*(centroids[donors] - centroids[m]).T)
        ok = (d <= radius) & (np.abs(elev[donors] - elev[m]) <= elevation_tol) & (d > 0)
        if not ok.any():
            continue
        w = d[ok] ** -IDW_POWER
        out[m + 1] = float((w * donor_depth[ok]).sum() / w.sum())
    return dict(sorted(out.items()))


def observe_zfl(depth_map: dict[int, float], city, params: FragilityParams, t: int = 0) -> Observation:
    """Zone functionality loss per observed zone, assuming uniform depth over the zone."""
    entries = {}
    for zone, depth in sorted(depth_map.items()):
        members = city.zone_members(int(zone))
        if members.size == 0:
            raise ValueError(f"observe_zfl: zone {zone} has no buildings")
        nf = building_nonfunctional(np.full(members.size, float(depth)), city.archetypes[members], params)
        entries[int(zone)] = float(min(max(nf.mean(), 0.0), 1.0))
    obs = Observation(int(t), entries)
    obs.validate(city.n_zones)
    return obs


def posts_to_observation(
    posts: list[Post],
    city,
    params: FragilityParams,
    t: int,
    radius: float = DEFAULT_RADIUS,
    elevation_tol: float = DEFAULT_ELEVATION_TOL,
    zone_elevation: np.ndarray | None = None,
) -> Observation:
    """Filter, extract, localize, interpolate and convert the posts stamped at hour ``t``."""
    seen = set()
    estimates = []
    for p in sorted(posts, key=lambda p: p.id):
        if p.id in seen or p.t != t or not filter_relevant(p):
            continue
        seen.add(p.id)
        cue = extract_depth_cue(p.text)
        zone = localize(p, city)
        if cue is None or zone is None:
            continue
        estimates.append((zone, cue.depth))
    depths = interpolate_depths(estimates, city, radius, elevation_tol, zone_elevation)
    return observe_zfl(depths, city, params, t)


@dataclass
class CrowdParams:
    base_rate: float = 0.5
    depth_mid: float = 0.15  # meters; logistic midpoint
    depth_scale: float = 0.05
    min_depth: float = 0.05
    coverage_band: tuple[float, float] | None = (0.16, 0.42)

    def __post_init__(self):
        if self.base_rate < 0 or self.depth_scale <= 0:
            raise ValueError("CrowdParams: base_rate >= 0 and depth_scale > 0 required")
        if self.coverage_band is not None:
            lo, hi = self.coverage_band
            if not (0 <= lo <= hi <= 1):
                raise ValueError("CrowdParams: coverage band must satisfy 0 <= lo <= hi <= 1")
            self.coverage_band = (float(lo), float(hi))


def nearest_cue(depth: float, rng: np.random.Generator | None = None):
    rows = default_cue_table()
    gaps = np.array([abs(r.depth - depth) for r in rows])
    best = np.flatnonzero(gaps == gaps.min())
    return rows[int(best[0] if rng is None else rng.choice(best))]


def post_probability(depth: np.ndarray, params: CrowdParams) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    p = params.base_rate / (1.0 + np.exp(-(depth - params.depth_mid) / params.depth_scale))
    return np.where(depth > params.min_depth, p, 0.0)


def synth_crowd(depth_hour: np.ndarray, city, params: CrowdParams, seed: int, t: int) -> list[Post]:
    """Posts from buildings whose cell is wet, one phrase per post naming the nearest table depth.

    With a coverage band, the posting zones are capped at the upper bound and topped up
    from wet zones to the lower bound; an hour with too few wet zones yields no posts.
    """
    depth_hour = np.asarray(depth_hour, dtype=np.float64)
    if depth_hour.shape != (city.rows, city.cols):
        raise ValueError(f"synth_crowd: depth grid {depth_hour.shape} != city grid {(city.rows, city.cols)}")
    rng = np.random.default_rng([int(seed), int(t)])
    d = depth_hour[city.buildings[:, 0], city.buildings[:, 1]]
    p = post_probability(d, params)
    posting = rng.random(len(d)) < p
    zones = city.zones
    m_total = city.n_zones
    if params.coverage_band is not None:
        lo, hi = params.coverage_band
        chosen = np.unique(zones[posting])
        cap = int(math.floor(hi * m_total))
        if len(chosen) > cap:
            keep = rng.choice(chosen, size=cap, replace=False)
            posting &= np.isin(zones, keep)
        floor_n = int(math.ceil(lo * m_total))
        if len(np.unique(zones[posting])) < floor_n:
            wet = d > params.min_depth
            have = set(np.unique(zones[posting]).tolist())
            candidates = sorted(set(np.unique(zones[wet]).tolist()) - have)
            if candidates:
                weight = np.array([d[wet & (zones == z)].max() for z in candidates])
                n_add = min(floor_n - len(have), len(candidates))
                extra = rng.choice(candidates, size=n_add, replace=False, p=weight / weight.sum())
                for z in extra:
                    idx = np.flatnonzero(wet & (zones == z))
                    posting[idx[np.argmax(d[idx])]] = True
        if len(np.unique(zones[posting])) < floor_n:
            return []
    names = city.gazetteer()
    posts = []
    for i in np.flatnonzero(posting):
        row = nearest_cue(float(d[i]), rng)
        z = int(zones[i])
        text = _TEMPLATES[row.object].format(
            kw=_KEYWORDS[int(rng.integers(len(_KEYWORDS)))], name=names[z], part=row.part.lower()
        )
        posts.append(Post(id=f"syn-t{int(t):03d}-b{int(i):04d}", t=int(t), text=text, source="synthetic"))
    return posts
