"""Synthetic city, conditioning features, storm ensemble and the flood automaton."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodloop.worldgen import (
    CityModel,
    Hyetograph,
    building_attributes,
    cell_features,
    derive_conditioning,
    generate_city,
    generate_rainfall_ensemble,
    kmeans_zones,
    load_city,
    load_hyetographs,
    load_trajectories,
    save_city,
    save_hyetographs,
    save_trajectories,
    simulate_flood,
    terrain_derivatives,
)
from floodloop.fragility import ZflTrajectory


def flat_city(rows=16, cols=16, drainage=0.0, elevation=None, cell=10.0):
    elev = np.zeros((rows, cols)) if elevation is None else elevation
    return CityModel(
        rows=rows,
        cols=cols,
        cell_size=cell,
        elevation=elev,
        river=np.zeros((rows, cols), bool),
        outlets=np.zeros((0, 2), int),
        drainage=np.full((rows, cols), drainage),
        buildings=np.array([[2, 2], [2, 3], [8, 8], [9, 10]]),
        archetypes=np.array([0, 1, 2, 3]),
        zones=np.array([1, 1, 2, 2]),
        n_zones=2,
    )


def relative_balance(city, field, storm):
    area = city.cell_size**2
    rain = np.cumsum(storm.intensity) / 1000.0 * city.rows * city.cols * area
    stored = field.stored_volume(area)
    return np.abs(rain - stored - field.drained_volume) / np.maximum(rain, 1e-300), rain


# ---------------------------------------------------------------------------
# city


def test_default_city_counts(default_city):
    assert default_city.n_zones == 50
    assert default_city.n_buildings == 500
    counts = np.bincount(default_city.zones, minlength=51)[1:]
    assert np.all(counts > 0) and counts.sum() == 500


def test_city_deterministic():
    assert generate_city(7, 32, 32, 8, 40).equals(generate_city(7, 32, 32, 8, 40))
    assert not generate_city(7, 32, 32, 8, 40).equals(generate_city(8, 32, 32, 8, 40))


def test_one_building_per_zone():
    city = generate_city(2, 48, 48, 20, 20)
    assert np.array_equal(np.sort(city.zones), np.arange(1, 21))


def test_buildings_on_land(default_city):
    r, c = default_city.buildings.T
    assert not default_city.river[r, c].any()
    assert len(np.unique(default_city.buildings, axis=0)) == default_city.n_buildings


def test_city_rejects_bad_inputs():
    with pytest.raises(ValueError):
        generate_city(1, n_zones=10, n_buildings=5)
    with pytest.raises(ValueError):
        generate_city(1, rows=8, cols=8)
    with pytest.raises(ValueError, match="infeasible"):
        generate_city(1, rows=16, cols=16, n_zones=40, n_buildings=400)


def test_city_model_validation():
    with pytest.raises(ValueError, match="every zone"):
        CityModel(16, 16, 10.0, np.zeros((16, 16)), np.zeros((16, 16), bool), np.zeros((0, 2)), np.zeros((16, 16)),
                  np.array([[1, 1]]), np.array([0]), np.array([1]), 2)
    with pytest.raises(ValueError, match="river"):
        river = np.zeros((16, 16), bool)
        river[1, 1] = True
        CityModel(16, 16, 10.0, np.zeros((16, 16)), river, np.zeros((0, 2)), np.zeros((16, 16)),
                  np.array([[1, 1]]), np.array([0]), np.array([1]), 1)


def test_kmeans_recovers_separated_clusters(rng):
    centers = np.array([[0.0, 0.0], [100.0, 0.0], [0.0, 100.0]])
    pts = np.concatenate([c + rng.normal(scale=2.0, size=(20, 2)) for c in centers])
    labels = kmeans_zones(pts, 3, np.random.default_rng(1))
    for j in range(3):
        assert len(np.unique(labels[j * 20 : (j + 1) * 20])) == 1
    assert len(np.unique(labels)) == 3


def test_city_roundtrip(tmp_path, small_city):
    save_city(tmp_path / "c.json", small_city)
    assert load_city(tmp_path / "c.json").equals(small_city)


# ---------------------------------------------------------------------------
# conditioning


def test_flat_slope_zero():
    feats = cell_features(flat_city())
    assert np.all(feats[..., 1] == 0)


def test_ramp_constant_slope_zero_curvature():
    rows, cols, cell = 16, 16, 10.0
    elev = 0.05 * cell * np.arange(cols)[None, :].repeat(rows, axis=0)
    slope, _, curvature = terrain_derivatives(elev, cell)
    assert np.allclose(slope, np.degrees(np.arctan(0.05)), atol=1e-12)
    assert np.allclose(curvature, 0.0, atol=1e-12)


def test_river_adjacent_distance(default_city):
    feats = cell_features(default_city)
    river = default_city.river
    adj = np.zeros_like(river)
    adj[:, 1:] |= river[:, :-1]
    adj[:, :-1] |= river[:, 1:]
    adj &= ~river
    assert adj.any()
    assert np.all(feats[..., 5][adj] <= default_city.cell_size)


def test_zone_features_shapes(small_city):
    W, E = derive_conditioning(small_city), building_attributes(small_city)
    assert W.shape == (8, 7) and E.shape == (8, 4)
    assert np.all(np.isfinite(W))
    assert np.allclose(E.sum(axis=1), 1.0)


# ---------------------------------------------------------------------------
# rainfall


def test_ensemble_threshold():
    storms = generate_rainfall_ensemble(1, 16, 24, 350.0)
    assert len(storms) == 16
    assert all(s.total > 350.0 and s.duration == 24 for s in storms)


def test_ensemble_threshold_zero():
    storms = generate_rainfall_ensemble(4, 9, 24, 0.0)
    assert len(storms) == 9 and [s.storm_id for s in storms] == list(range(9))


def test_ensemble_deterministic():
    a, b = generate_rainfall_ensemble(3, 5), generate_rainfall_ensemble(3, 5)
    assert all(np.array_equal(x.intensity, y.intensity) for x, y in zip(a, b))


def test_ensemble_spans_intensities():
    peaks = [s.intensity.max() for s in generate_rainfall_ensemble(1, 64)]
    assert max(peaks) / min(peaks) >= 3.0


def test_ensemble_unreachable_threshold():
    with pytest.raises(ValueError, match="unreachable"):
        generate_rainfall_ensemble(1, 1, 2, 1e6)


def test_hyetograph_validation():
    with pytest.raises(ValueError):
        Hyetograph(np.array([1.0, -1.0]))


def test_storms_roundtrip(tmp_path, small_storms):
    save_hyetographs(tmp_path / "s.csv", small_storms)
    back = load_hyetographs(tmp_path / "s.csv")
    assert all(np.array_equal(a.intensity, b.intensity) and a.storm_id == b.storm_id for a, b in zip(small_storms, back))


def test_trajectories_roundtrip(tmp_path, rng):
    trajs = [ZflTrajectory(rng.random((5, 3)), storm_id=i) for i in (0, 4)]
    save_trajectories(tmp_path / "t.csv", trajs)
    back = load_trajectories(tmp_path / "t.csv")
    assert [t.storm_id for t in back] == [0, 4]
    assert all(np.array_equal(a.values, b.values) for a, b in zip(trajs, back))


# ---------------------------------------------------------------------------
# flood automaton


def test_zero_rain_is_dry(small_city):
    field = simulate_flood(small_city, Hyetograph(np.zeros(6)))
    assert not field.depth.any()


def test_flat_closed_basin_depth():
    city = flat_city()
    r, hours = 12.5, 5
    field = simulate_flood(city, Hyetograph(np.full(hours, r)), substeps=4)
    for h in range(hours):
        assert np.allclose(field.depth[h], r * (h + 1) / 1000.0, rtol=1e-12, atol=0)


def test_mass_balance_small_city(small_city, small_storms):
    for storm in small_storms:
        field = simulate_flood(small_city, storm)
        err, _ = relative_balance(small_city, field, storm)
        assert err.max() < 1e-6
        assert field.depth.min() >= 0


def test_rain_and_drain_cumulative(small_city, small_storms):
    field = simulate_flood(small_city, small_storms[0])
    _, rain = relative_balance(small_city, field, small_storms[0])
    assert np.allclose(field.rain_volume, rain, rtol=1e-12)
    assert np.all(np.diff(field.drained_volume) >= 0)


def test_substeps_validation(small_city):
    with pytest.raises(ValueError):
        simulate_flood(small_city, Hyetograph(np.ones(2)), substeps=0)


def _tilted_city(seed):
    rng = np.random.default_rng(seed)
    elev = rng.normal(scale=0.5, size=(12, 12)) + np.linspace(0, 2, 12)[None, :]
    return flat_city(12, 12, 0.0, elevation=elev)


@settings(max_examples=15, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    rain=st.lists(st.floats(0.0, 80.0), min_size=1, max_size=5),
    drainage=st.floats(0.0, 30.0),
)
def test_mass_conservation_property(seed, rain, drainage):
    city = _tilted_city(seed)
    city.drainage[:] = drainage
    storm = Hyetograph(np.array(rain))
    field = simulate_flood(city, storm, substeps=8)
    assert field.depth.min() >= 0
    rain_vol = np.cumsum(storm.intensity) / 1000.0 * city.rows * city.cols * city.cell_size**2
    stored = field.stored_volume(city.cell_size**2)
    assert np.all(np.abs(rain_vol - stored - field.drained_volume) <= 1e-6 * np.maximum(rain_vol, 1e-12) + 1e-12)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(1.0, 3.0), base=st.floats(1.0, 40.0))
def test_monotone_in_rain_at_zero_drainage(seed, c, base):
    city = _tilted_city(seed)
    storm = Hyetograph(np.full(3, base))
    lo = simulate_flood(city, storm, substeps=8).stored_volume(100.0)
    hi = simulate_flood(city, Hyetograph(storm.intensity * c), substeps=8).stored_volume(100.0)
    assert np.all(hi >= lo * (1 - 1e-12))


def test_simulation_deterministic(small_city, small_storms):
    a = simulate_flood(small_city, small_storms[1]).depth
    b = simulate_flood(small_city, small_storms[1]).depth
    assert np.array_equal(a, b)
