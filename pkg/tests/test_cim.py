"""Crowd posts: relevance, depth cues, localization, interpolation and observation."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodloop.cim import (
    CrowdParams,
    Post,
    default_cue_table,
    depth_table,
    extract_depth_cue,
    filter_relevant,
    interpolate_depths,
    localize,
    observe_zfl,
    posts_to_observation,
    read_posts,
    synth_crowd,
    write_posts,
)
from floodloop.fragility import FragilityParams, building_nonfunctional, trajectory_from_depths

# reference object, level -> depth in meters, as published
HIERARCHY = {
    ("human-body", "A"): 0.1,
    ("human-body", "B"): 0.3,
    ("human-body", "C"): 0.45,
    ("human-body", "D"): 0.64,
    ("human-body", "E"): 0.85,
    ("human-body", "F"): 1.28,
    ("human-body", "G"): 1.49,
    ("shared-bicycle", "A"): 0.3,
    ("shared-bicycle", "B"): 0.5,
    ("shared-bicycle", "C"): 0.6,
    ("car", "A"): 0.33,
    ("car", "B"): 0.66,
    ("car", "C"): 0.8,
}
PARTS = {
    ("human-body", "A"): "Ankle",
    ("human-body", "B"): "Calf",
    ("human-body", "C"): "Knee",
    ("human-body", "D"): "Thigh",
    ("human-body", "E"): "Waist",
    ("human-body", "F"): "Chest",
    ("human-body", "G"): "Neck",
    ("shared-bicycle", "A"): "Center of the wheel",
    ("shared-bicycle", "B"): "Top of the wheel",
    ("shared-bicycle", "C"): "Saddle",
    ("car", "A"): "Center of the tire",
    ("car", "B"): "Top of the tire",
    ("car", "C"): "Door handle",
}
KEYWORDS = ["rainstorm", "暴雨", "heavy rain", "大雨", "typhoon", "台风", "Haikui", "海葵", "flooding", "洪涝",
            "inundation", "淹", "waterlogging", "积水", "waist-deep", "齐腰深", "knee-deep", "齐膝深"]


def post(text, **kw):
    return Post(id=kw.pop("id", "p"), t=kw.pop("t", 0), text=text, **kw)


# ---------------------------------------------------------------------------
# relevance


@pytest.mark.parametrize("text", ["knee-deep water on Main St", "台风海葵来了", "HEAVY RAIN again", "积水严重"])
def test_relevant(text):
    assert filter_relevant(text)


@pytest.mark.parametrize("text", ["lovely sunset tonight", "", "water bottle"])
def test_irrelevant(text):
    assert not filter_relevant(text)


@pytest.mark.parametrize("keyword", KEYWORDS)
def test_every_keyword_matches(keyword):
    assert filter_relevant(f"... {keyword} ...")


def test_non_string_is_irrelevant():
    assert not filter_relevant(post(None))


# ---------------------------------------------------------------------------
# depth cues


def test_table_exact():
    assert depth_table() == HIERARCHY
    assert {(r.object, r.level): r.part for r in default_cue_table()} == PARTS


@pytest.mark.parametrize("key", sorted(HIERARCHY))
def test_each_part_phrase(key):
    obj, _ = key
    noun = {"human-body": "", "shared-bicycle": " of the shared bike", "car": " of the car"}[obj]
    cue = extract_depth_cue(f"water reaches the {PARTS[key].lower()}{noun}")
    assert (cue.object, cue.level) == key and cue.depth == HIERARCHY[key]


@pytest.mark.parametrize(
    "text, depth",
    [("water is waist-deep", 0.85), ("up to the knee", 0.45), ("flooded to the car door handle", 0.8),
     ("水深齐腰", 0.85), ("积水到膝盖了", 0.45)],
)
def test_cue_examples(text, depth):
    assert extract_depth_cue(text).depth == depth


@pytest.mark.parametrize("text, depth", [("about 30 cm of water here", 0.3), ("1.2 m deep at the gate", 1.2)])
def test_numeric_depth(text, depth):
    cue = extract_depth_cue(text)
    assert cue.object == "measured" and cue.depth == pytest.approx(depth)


@pytest.mark.parametrize("text", ["no depth here", "kneel down", "calfskin boots", "20 m tall tree", ""])
def test_no_cue(text):
    assert extract_depth_cue(text) is None


@settings(max_examples=200, deadline=None)
@given(text=st.text())
def test_parser_total(text, small_city):
    cue = extract_depth_cue(text)
    assert cue is None or cue.depth > 0
    zone = localize(post(text), small_city)
    assert zone is None or 1 <= zone <= small_city.n_zones
    filter_relevant(text)


# ---------------------------------------------------------------------------
# localization


def test_localize_by_coordinates(small_city):
    c = small_city.zone_centroids()
    for m in range(small_city.n_zones):
        assert localize(post("x", x=c[m, 0], y=c[m, 1]), small_city) == m + 1


def test_localize_by_gazetteer(default_city):
    assert default_city.gazetteer()[17] == "Zone-17 Market"
    assert localize(post("flooding near Zone-17 Market now"), default_city) == 17
    assert localize(post("zone-2 garden under water"), default_city) == 2


def test_localize_prefers_longest_name():
    from floodloop.worldgen import generate_city

    city = generate_city(2, 48, 48, 20, 40)
    assert localize(post(f"at {city.gazetteer()[12]}"), city) == 12


def test_localize_none(small_city):
    assert localize(post("nothing to see"), small_city) is None
    assert localize(post("x", zone=99), small_city) is None
    assert localize(post("x", zone=3), small_city) == 3


# ---------------------------------------------------------------------------
# interpolation and observation


def test_interpolate_empty(small_city):
    assert interpolate_depths([], small_city) == {}


def test_interpolate_single_zero_radius(small_city):
    assert interpolate_depths([(3, 0.4)], small_city, radius=0.0) == {3: 0.4}


def test_interpolate_median(small_city):
    out = interpolate_depths([(2, 0.1), (2, 0.9), (2, 0.3)], small_city, radius=0.0)
    assert out == {2: 0.3}


def test_interpolate_equidistant_mean():
    from floodloop.worldgen import CityModel

    city = CityModel(
        rows=16, cols=16, cell_size=10.0, elevation=np.zeros((16, 16)), river=np.zeros((16, 16), bool),
        outlets=np.zeros((0, 2)), drainage=np.zeros((16, 16)),
        buildings=np.array([[5, 2], [5, 6], [5, 10]]), archetypes=np.array([0, 0, 0]), zones=np.array([1, 2, 3]),
        n_zones=3,
    )
    out = interpolate_depths([(1, 0.2), (3, 0.6)], city, radius=100.0, elevation_tol=1.0)
    assert out[2] == pytest.approx(0.4, abs=1e-15)
    far = interpolate_depths([(1, 0.2), (3, 0.6)], city, radius=30.0)
    assert 2 not in far
    steep = interpolate_depths([(1, 0.2)], city, radius=100.0, zone_elevation=np.array([0.0, 5.0, 0.0]))
    assert 2 not in steep and 3 in steep


def test_observe_zero_and_huge(small_city, fragility):
    zones = range(1, small_city.n_zones + 1)
    assert all(v == 0 for v in observe_zfl({m: 0.0 for m in zones}, small_city, fragility).entries.values())
    mu7 = fragility.median_array()[:, -1].max()
    assert all(v > 0.99 for v in observe_zfl({m: 10 * mu7 for m in zones}, small_city, fragility).entries.values())


def test_observe_single_archetype_zone(fragility):
    from floodloop.worldgen import CityModel

    city = CityModel(
        rows=16, cols=16, cell_size=10.0, elevation=np.zeros((16, 16)), river=np.zeros((16, 16), bool),
        outlets=np.zeros((0, 2)), drainage=np.zeros((16, 16)),
        buildings=np.array([[1, 1], [1, 2], [9, 9]]), archetypes=np.array([2, 2, 0]), zones=np.array([1, 1, 2]),
        n_zones=2,
    )
    z = observe_zfl({1: 0.5}, city, fragility).entries[1]
    assert z == float(building_nonfunctional(np.array([0.5]), np.array([2]), fragility)[0])


@pytest.mark.parametrize("depth", [0.0, 0.05, 0.2, 0.45, 0.9, 1.6, 4.0])
def test_observe_consistent_with_trajectory(small_city, fragility, depth):
    direct = trajectory_from_depths(small_city, np.full((1, small_city.rows, small_city.cols), depth), fragility)
    obs = observe_zfl({m: depth for m in range(1, small_city.n_zones + 1)}, small_city, fragility, t=4)
    assert obs.t == 4
    for m, v in obs.entries.items():
        assert abs(v - direct.values[0, m - 1]) <= 1e-12


def test_posts_to_observation_pipeline(small_city, fragility):
    names = small_city.gazetteer()
    posts = [
        post(f"Flooding at {names[2]}, water up to the knee", id="a", t=5),
        post(f"Flooding at {names[2]}, water up to the knee", id="a", t=5),
        post(f"nice day at {names[4]}, knee high grass", id="b", t=5),
        post(f"Heavy rain at {names[6]}: waist-deep", id="c", t=4),
    ]
    obs = posts_to_observation(posts, small_city, fragility, t=5, radius=0.0)
    direct = observe_zfl({2: 0.45}, small_city, fragility, 5)
    assert obs.entries == direct.entries


# ---------------------------------------------------------------------------
# synthetic crowd


def _wet_field(city, level, rng):
    return np.clip(level + rng.normal(scale=0.2, size=(city.rows, city.cols)), 0, None)


def test_no_posts_when_dry(small_city):
    params = CrowdParams(base_rate=0.0, coverage_band=None)
    assert synth_crowd(np.zeros((32, 32)), small_city, params, 1, 0) == []
    assert synth_crowd(np.zeros((32, 32)), small_city, CrowdParams(), 1, 0) == []


def test_synth_deterministic(small_city, rng):
    field = _wet_field(small_city, 0.5, rng)
    a = synth_crowd(field, small_city, CrowdParams(), 3, 7)
    b = synth_crowd(field, small_city, CrowdParams(), 3, 7)
    assert [p.to_json() for p in a] == [p.to_json() for p in b]
    assert all(p.t == 7 and p.source == "synthetic" for p in a)


@pytest.mark.parametrize("level", [0.1, 0.3, 0.6, 1.0, 1.6])
def test_roundtrip_recovers_nearest_depth(default_city, level):
    rng = np.random.default_rng(int(level * 100))
    field = _wet_field(default_city, level, rng)
    posts = synth_crowd(field, default_city, CrowdParams(coverage_band=None, base_rate=0.9), 11, 3)
    assert posts
    table = np.array(sorted(set(HIERARCHY.values())))
    depth_at = field[default_city.buildings[:, 0], default_city.buildings[:, 1]]
    for p in posts:
        assert filter_relevant(p)
        b = int(p.id.split("-b")[1])
        cue = extract_depth_cue(p.text)
        gap = np.abs(table - depth_at[b])
        assert cue.depth in table[gap == gap.min()]
        assert localize(p, default_city) == default_city.zones[b]


def test_coverage_band(default_city):
    params = CrowdParams()
    rng = np.random.default_rng(5)
    for level in (0.2, 0.5, 1.2):
        posts = synth_crowd(_wet_field(default_city, level, rng), default_city, params, 2, 10)
        zones = {localize(p, default_city) for p in posts}
        assert 0.16 <= len(zones) / default_city.n_zones <= 0.42


def test_crowd_params_validation():
    with pytest.raises(ValueError):
        CrowdParams(coverage_band=(0.5, 0.2))
    with pytest.raises(ValueError):
        CrowdParams(depth_scale=0.0)


def test_posts_jsonl_roundtrip(tmp_path):
    posts = [post("积水 水深齐腰", id="u1", t=2, x=1.5, y=2.5), post("knee-deep", id="u2", t=3, zone=4)]
    write_posts(tmp_path / "p.jsonl", posts)
    assert read_posts(tmp_path / "p.jsonl") == posts


def test_post_rejects_negative_time():
    with pytest.raises(ValueError):
        Post("x", -1, "text")


def test_coverage_band_unreachable_gives_no_posts(default_city):
    field = np.zeros((default_city.rows, default_city.cols))
    r, c = default_city.buildings[0]
    field[r, c] = 0.5
    assert synth_crowd(field, default_city, CrowdParams(), 2, 3) == []
    assert synth_crowd(field, default_city, CrowdParams(coverage_band=None, base_rate=1.0), 2, 3)
