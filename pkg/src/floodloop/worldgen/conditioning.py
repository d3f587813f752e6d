"""Zone-level flood-conditioning features and building attributes."""
from __future__ import annotations

import numpy as np
from scipy.ndimage import distance_transform_edt

from .city import ARCHETYPES, CityModel

CONDITIONING_COLUMNS = (
    "elevation",
    "slope",
    "curvature",
    "aspect",
    "twi",
    "river_distance",
    "outlet_distance",
)
# subset fed to the spatial completion model: elevation, curvature, river and outlet distance
SELECTED_CONDITIONING = (0, 2, 5, 6)
TWI_EPS = 1e-3


def terrain_derivatives(elevation: np.ndarray, cell_size: float):
    """Per-cell slope (degrees), aspect (degrees clockwise from north) and curvature (1/m)."""
    gy, gx = np.gradient(elevation, cell_size)
    grad = np.hypot(gx, gy)
    slope = np.degrees(np.arctan(grad))
    aspect = np.where(grad > 0, np.degrees(np.arctan2(-gx, gy)) % 360.0, 0.0)
    gyy, _ = np.gradient(gy, cell_size)
    _, gxx = np.gradient(gx, cell_size)
    curvature = gxx + gyy
    return slope, aspect, curvature


def flow_accumulation(elevation: np.ndarray) -> np.ndarray:
    """D8 upslope cell count (each cell counts itself)."""
    rows, cols = elevation.shape
    acc = np.ones(elevation.size)
    flat = elevation.ravel()
    order = np.argsort(-flat, kind="stable")
    offsets = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    for idx in order:
        r, c = divmod(int(idx), cols)
        best, target = 0.0, -1
        for dr, dc in offsets:
            nr, nc = r + dr, c + dc
            if 0 <= nr < rows and 0 <= nc < cols:
                drop = (flat[idx] - flat[nr * cols + nc]) / np.hypot(dr, dc)
                if drop > best:
                    best, target = drop, nr * cols + nc
        if target >= 0:
            acc[target] += acc[idx]
    return acc.reshape(rows, cols)


def cell_features(city: CityModel) -> np.ndarray:
    """(rows, cols, 7) per-cell conditioning values in CONDITIONING_COLUMNS order."""
    slope, aspect, curvature = terrain_derivatives(city.elevation, city.cell_size)
    acc = flow_accumulation(city.elevation)
    twi = np.log(acc / (np.tan(np.radians(slope)) + TWI_EPS))
    if city.river.any():
        river_dist = distance_transform_edt(~city.river, sampling=city.cell_size)
    else:
        river_dist = np.full(city.elevation.shape, np.hypot(city.rows, city.cols) * city.cell_size)
    rr, cc = np.mgrid[0 : city.rows, 0 : city.cols]
    if len(city.outlets):
        dr = rr[..., None] - city.outlets[:, 0]
        dc = cc[..., None] - city.outlets[:, 1]
        outlet_dist = np.hypot(dr, dc).min(axis=-1) * city.cell_size
    else:
        outlet_dist = np.full(city.elevation.shape, np.hypot(city.rows, city.cols) * city.cell_size)
    return np.stack([city.elevation, slope, curvature, aspect, twi, river_dist, outlet_dist], axis=-1)


def derive_conditioning(city: CityModel) -> np.ndarray:
    """W: (M, 7) zone means over building cells."""
    feats = cell_features(city)
    per_building = feats[city.buildings[:, 0], city.buildings[:, 1]]
    W = np.zeros((city.n_zones, len(CONDITIONING_COLUMNS)))
    for m in range(city.n_zones):
        W[m] = per_building[city.zones == m + 1].mean(axis=0)
    return W


def building_attributes(city: CityModel) -> np.ndarray:
    """E: (M, 4) archetype proportions per zone."""
    E = np.zeros((city.n_zones, len(ARCHETYPES)))
    np.add.at(E, (city.zones - 1, city.archetypes), 1.0)
    return E / E.sum(axis=1, keepdims=True)
