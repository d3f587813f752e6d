"""Shared fixtures: a small city, a tiny end-to-end configuration and its offline build."""
import numpy as np
import pytest

from floodloop.fragility import FragilityParams
from floodloop.pipeline import config_from_dict, run_offline
from floodloop.worldgen import generate_city, generate_rainfall_ensemble

TINY = {
    "seed": 3,
    "world": {"rows": 32, "cols": 32, "n_zones": 8, "n_buildings": 40, "n_storms": 6, "rain_threshold": 150.0},
    "sa": {"ratios": [0.25, 0.5], "hidden_width": 8, "heads": 2, "epochs": 2, "eval_draws": 2},
    "stf": {"channels": 4, "rain_channels": 2, "zone_channels": 2, "epochs": 2, "horizon": 6},
}


def tiny_config(**overrides):
    data = {k: (dict(v) if isinstance(v, dict) else v) for k, v in TINY.items()}
    for key, value in overrides.items():
        if isinstance(value, dict):
            data.setdefault(key, {}).update(value)
        else:
            data[key] = value
    return config_from_dict(data)


@pytest.fixture(scope="session")
def small_city():
    return generate_city(5, rows=32, cols=32, n_zones=8, n_buildings=40)


@pytest.fixture(scope="session")
def default_city():
    return generate_city(1)


@pytest.fixture(scope="session")
def small_storms():
    return generate_rainfall_ensemble(5, 4, threshold=150.0)


@pytest.fixture(scope="session")
def fragility():
    return FragilityParams()


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    cfg = tiny_config()
    out = tmp_path_factory.mktemp("tiny")
    arts = run_offline(cfg, out)
    return cfg, out, arts


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# ---------------------------------------------------------------------------
# acceptance criteria summary


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    n, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    verdict = "PASS" if rep.passed else "FAIL"
    item.config._criteria[n] = f"{verdict} criterion {n}: {title}" + (f" ({detail})" if detail else "")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    criteria = getattr(config, "_criteria", {})
    if not criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(criteria):
        terminalreporter.write_line(criteria[n])
    passed = sum(line.startswith("PASS") for line in criteria.values())
    terminalreporter.write_line(f"{passed}/{len(criteria)} criteria passed")
