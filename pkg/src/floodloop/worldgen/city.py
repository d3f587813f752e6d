"""Seeded synthetic city: terrain, river, drainage, buildings and zones."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

ARCHETYPES = ("high-rise", "multi-story", "detached villa", "overlay villa")
ARCHETYPE_PROBS = (0.25, 0.35, 0.2, 0.2)

# zone m (1-based) gets suffix GAZETTEER_SUFFIXES[(m - 1) % 8]
GAZETTEER_SUFFIXES = ("Market", "Garden", "Plaza", "Bridge", "Court", "Terrace", "Station", "Park")


@dataclass
class CityModel:
    rows: int
    cols: int
    cell_size: float
    elevation: np.ndarray  # (rows, cols) meters
    river: np.ndarray  # (rows, cols) bool
    outlets: np.ndarray  # (K, 2) int cell indices
    drainage: np.ndarray  # (rows, cols) mm/hour
    buildings: np.ndarray  # (N, 2) int cell indices (row, col)
    archetypes: np.ndarray  # (N,) int in 0..3
    zones: np.ndarray  # (N,) int in 1..M
    n_zones: int

    def __post_init__(self):
        self.elevation = np.asarray(self.elevation, dtype=np.float64)
        self.river = np.asarray(self.river, dtype=bool)
        self.outlets = np.asarray(self.outlets, dtype=np.int64).reshape(-1, 2)
        self.drainage = np.asarray(self.drainage, dtype=np.float64)
        self.buildings = np.asarray(self.buildings, dtype=np.int64).reshape(-1, 2)
        self.archetypes = np.asarray(self.archetypes, dtype=np.int64)
        self.zones = np.asarray(self.zones, dtype=np.int64)
        self.validate()

    def validate(self) -> None:
        grid = (self.rows, self.cols)
        for name in ("elevation", "river", "drainage"):
            if getattr(self, name).shape != grid:
                raise ValueError(f"CityModel.{name} must have shape {grid}")
        if not np.all(np.isfinite(self.elevation)):
            raise ValueError("CityModel: elevation must be finite")
        if np.any(self.drainage < 0):
            raise ValueError("CityModel: drainage capacity must be >= 0")
        n = len(self.buildings)
        if self.archetypes.shape != (n,) or self.zones.shape != (n,):
            raise ValueError("CityModel: one archetype and one zone per building")
        r, c = self.buildings[:, 0], self.buildings[:, 1]
        if np.any((r < 0) | (r >= self.rows) | (c < 0) | (c >= self.cols)):
            raise ValueError("CityModel: building cell outside grid")
        if np.any(self.river[r, c]):
            raise ValueError("CityModel: building placed on a river cell")
        if np.any((self.archetypes < 0) | (self.archetypes >= len(ARCHETYPES))):
            raise ValueError("CityModel: archetype id out of range")
        counts = np.bincount(self.zones, minlength=self.n_zones + 1)
        if self.zones.min(initial=1) < 1 or self.zones.max(initial=1) > self.n_zones:
            raise ValueError("CityModel: zone id out of range 1..M")
        if np.any(counts[1:] == 0):
            raise ValueError("CityModel: every zone must contain a building")

    @property
    def n_buildings(self) -> int:
        return len(self.buildings)

    def cell_xy(self, cells: np.ndarray) -> np.ndarray:
        """Cell-centre coordinates (x east, y south) in meters."""
        cells = np.asarray(cells).reshape(-1, 2)
        return np.column_stack([(cells[:, 1] + 0.5), (cells[:, 0] + 0.5)]) * self.cell_size

    def building_xy(self) -> np.ndarray:
        return self.cell_xy(self.buildings)

    def zone_centroids(self) -> np.ndarray:
        """(M, 2) mean building coordinate per zone."""
        xy = self.building_xy()
        out = np.zeros((self.n_zones, 2))
        for m in range(self.n_zones):
            out[m] = xy[self.zones == m + 1].mean(axis=0)
        return out

    def zone_members(self, zone: int) -> np.ndarray:
        return np.flatnonzero(self.zones == zone)

    def gazetteer(self) -> dict[int, str]:
        return {
            m: f"Zone-{m} {GAZETTEER_SUFFIXES[(m - 1) % len(GAZETTEER_SUFFIXES)]}"
            for m in range(1, self.n_zones + 1)
        }

    def equals(self, other: "CityModel") -> bool:
        scalars = ("rows", "cols", "cell_size", "n_zones")
        arrays = ("elevation", "river", "outlets", "drainage", "buildings", "archetypes", "zones")
        return all(getattr(self, k) == getattr(other, k) for k in scalars) and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in arrays
        )


def _place_sites(land: np.ndarray, counts: np.ndarray, rng: np.random.Generator):
    """Disjoint square all-land blocks, one per zone, each large enough for its buildings."""
    rows, cols = land.shape
    radius = 0
    while (2 * radius + 1) ** 2 < 2 * counts.max():
        radius += 1
    spacing = 2 * radius + 2
    ok = np.zeros_like(land)
    for r in range(radius, rows - radius):
        for c in range(radius, cols - radius):
            ok[r, c] = land[r - radius : r + radius + 1, c - radius : c + radius + 1].all()
    cand = np.flatnonzero(ok.ravel())
    rng.shuffle(cand)
    taken = np.zeros_like(land)
    centers = []
    for idx in cand:
        r, c = divmod(int(idx), cols)
        if taken[r, c]:
            continue
        centers.append((r, c))
        taken[max(r - spacing + 1, 0) : r + spacing, max(c - spacing + 1, 0) : c + spacing] = True
        if len(centers) == len(counts):
            break
    if len(centers) < len(counts):
        raise ValueError(
            f"generate_city: infeasible placement, room for {len(centers)} neighbourhoods, need {len(counts)}"
        )
    return centers, radius


def kmeans_zones(
    points: np.ndarray, k: int, rng: np.random.Generator, iters: int = 100, init: np.ndarray | None = None
) -> np.ndarray:
    """Lloyd's k-means (k-means++ seeding unless ``init`` is given); labels 0..k-1, no empty cluster."""
    n = len(points)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k if init is None else 1):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers[j] = points[idx]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))
    if init is not None:
        centers = np.array(init, dtype=np.float64, copy=True)

    labels = np.full(n, -1)
    for _ in range(iters):
        dist = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = dist.argmin(axis=1)
        # repair empty clusters with the point farthest from its own centre
        for j in range(k):
            if np.any(new == j):
                continue
            own = dist[np.arange(n), new]
            sizes = np.bincount(new, minlength=k)
            own = np.where(sizes[new] > 1, own, -1.0)
            far = int(own.argmax())
            new[far] = j
            centers[j] = points[far]
        if np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            centers[j] = points[labels == j].mean(axis=0)
    return labels


def generate_city(
    seed: int,
    rows: int = 64,
    cols: int = 64,
    n_zones: int = 50,
    n_buildings: int = 500,
    cell_size: float = 10.0,
    n_outlets: int = 8,
    archetype_probs: tuple[float, ...] = ARCHETYPE_PROBS,
) -> CityModel:
    if n_zones < 2:
        raise ValueError("generate_city: need at least 2 zones")
    if n_buildings < n_zones:
        raise ValueError("generate_city: building count must be >= zone count")
    if rows < 16 or cols < 16:
        raise ValueError("generate_city: grid must be at least 16x16")
    rng = np.random.default_rng(seed)

    rr, cc = np.mgrid[0:rows, 0:cols].astype(np.float64)
    noise = gaussian_filter(rng.standard_normal((rows, cols)), sigma=max(rows, cols) / 12, mode="reflect")
    noise /= noise.std()

    # meandering valley axis along the rows
    phase = rng.uniform(0, 2 * np.pi)
    amp = rng.uniform(0.08, 0.16) * cols
    axis_col = cols * rng.uniform(0.4, 0.6) + amp * np.sin(2 * np.pi * rr[:, 0] / rows * 1.2 + phase)
    lateral = np.abs(cc - axis_col[:, None]) * cell_size
    elevation = 5.0 + 0.025 * lateral + 0.004 * rr * cell_size + 1.2 * noise

    river = np.abs(cc - axis_col[:, None]) <= 1.0
    elevation[river] -= 2.0

    land = ~river
    near = np.zeros_like(river)
    near[:, 1:] |= river[:, :-1]
    near[:, :-1] |= river[:, 1:]
    near &= land
    outlet_rows = np.linspace(rows * 0.05, rows * 0.95, n_outlets).astype(int)
    outlets = []
    for r in outlet_rows:
        cand = np.flatnonzero(near[r])
        if len(cand):
            outlets.append((r, int(cand[rng.integers(len(cand))])))
    outlets = np.array(outlets, dtype=np.int64).reshape(-1, 2)

    cap_noise = gaussian_filter(rng.standard_normal((rows, cols)), sigma=max(rows, cols) / 16, mode="reflect")
    cap_noise = (cap_noise - cap_noise.min()) / max(np.ptp(cap_noise), 1e-12)
    drainage = 4.0 + 14.0 * cap_noise

    counts = np.full(n_zones, n_buildings // n_zones)
    counts[: n_buildings % n_zones] += 1
    centers, radius = _place_sites(land, counts, rng)
    buildings = []
    site_of = []
    for j, (r0, c0) in enumerate(centers):
        block = [(r, c) for r in range(r0 - radius, r0 + radius + 1) for c in range(c0 - radius, c0 + radius + 1)]
        block = np.array(block)
        # graded neighbourhood pad
        elevation[block[:, 0], block[:, 1]] = elevation[block[:, 0], block[:, 1]].mean()
        pick = np.sort(rng.choice(len(block), size=counts[j], replace=False))
        buildings.extend(block[pick].tolist())
        site_of.extend([j] * counts[j])
    buildings = np.array(buildings, dtype=np.int64)
    order = np.lexsort((buildings[:, 1], buildings[:, 0]))
    buildings, site_of = buildings[order], np.array(site_of)[order]
    probs = np.asarray(archetype_probs, dtype=np.float64)
    archetypes = rng.choice(len(ARCHETYPES), size=n_buildings, p=probs / probs.sum())

    xy = np.column_stack([buildings[:, 1] + 0.5, buildings[:, 0] + 0.5]) * cell_size
    init = np.array([xy[site_of == j].mean(axis=0) for j in range(n_zones)])
    labels = kmeans_zones(xy, n_zones, rng, init=init)
    # number zones by centroid position for stable, readable ids
    cent = np.array([xy[labels == j].mean(axis=0) for j in range(n_zones)])
    order = np.lexsort((cent[:, 0], np.round(cent[:, 1] / (cell_size * 8))))
    rank = np.empty(n_zones, dtype=np.int64)
    rank[order] = np.arange(n_zones)
    zones = rank[labels] + 1

    return CityModel(
        rows=rows,
        cols=cols,
        cell_size=float(cell_size),
        elevation=elevation,
        river=river,
        outlets=outlets,
        drainage=drainage,
        buildings=buildings,
        archetypes=archetypes,
        zones=zones,
        n_zones=n_zones,
    )
