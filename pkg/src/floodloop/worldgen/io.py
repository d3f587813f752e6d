"""Plain-text persistence for cities, hyetographs and functionality-loss trajectories."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .city import CityModel
from .rainfall import Hyetograph

CITY_FORMAT = "floodloop-city/1"


def city_to_json(city: CityModel) -> str:
    doc = {
        "format": CITY_FORMAT,
        "rows": city.rows,
        "cols": city.cols,
        "cell_size": city.cell_size,
        "n_zones": city.n_zones,
        "elevation": city.elevation.tolist(),
        "river": city.river.astype(int).tolist(),
        "outlets": city.outlets.tolist(),
        "drainage": city.drainage.tolist(),
        "buildings": [
            {"row": int(r), "col": int(c), "archetype": int(a), "zone": int(z)}
            for (r, c), a, z in zip(city.buildings, city.archetypes, city.zones)
        ],
    }
    return json.dumps(doc, sort_keys=True) + "\n"


def city_from_json(text: str) -> CityModel:
    doc = json.loads(text)
    if doc.get("format") != CITY_FORMAT:
        raise ValueError(f"not a {CITY_FORMAT} document")
    b = doc["buildings"]
    return CityModel(
        rows=int(doc["rows"]),
        cols=int(doc["cols"]),
        cell_size=float(doc["cell_size"]),
        elevation=np.array(doc["elevation"], dtype=np.float64),
        river=np.array(doc["river"], dtype=bool),
        outlets=np.array(doc["outlets"], dtype=np.int64).reshape(-1, 2),
        drainage=np.array(doc["drainage"], dtype=np.float64),
        buildings=np.array([[x["row"], x["col"]] for x in b], dtype=np.int64).reshape(-1, 2),
        archetypes=np.array([x["archetype"] for x in b], dtype=np.int64),
        zones=np.array([x["zone"] for x in b], dtype=np.int64),
        n_zones=int(doc["n_zones"]),
    )


def save_city(path: str | Path, city: CityModel) -> None:
    Path(path).write_text(city_to_json(city))


def load_city(path: str | Path) -> CityModel:
    return city_from_json(Path(path).read_text())


def _write_csv(path: str | Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def save_hyetographs(path: str | Path, storms: list[Hyetograph]) -> None:
    _write_csv(
        path,
        ["storm_id", "hour", "intensity_mm_per_h"],
        ([s.storm_id, h, repr(float(v))] for s in storms for h, v in enumerate(s.intensity)),
    )


def load_hyetographs(path: str | Path) -> list[Hyetograph]:
    series: dict[int, list[float]] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            series.setdefault(int(rec["storm_id"]), []).append(float(rec["intensity_mm_per_h"]))
    return [Hyetograph(np.array(v), k) for k, v in series.items()]


def save_trajectories(path: str | Path, trajectories) -> None:
    """Long format: storm_id, hour, zone (1-based), zfl."""
    _write_csv(
        path,
        ["storm_id", "hour", "zone", "zfl"],
        (
            [t.storm_id, h, m + 1, repr(float(v))]
            for t in trajectories
            for h, row in enumerate(t.values)
            for m, v in enumerate(row)
        ),
    )


def load_trajectories(path: str | Path):
    from ..fragility import ZflTrajectory

    cells: dict[int, dict[tuple[int, int], float]] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            cells.setdefault(int(rec["storm_id"]), {})[(int(rec["hour"]), int(rec["zone"]))] = float(rec["zfl"])
    out = []
    for sid, d in cells.items():
        t = max(h for h, _ in d) + 1
        m = max(z for _, z in d)
        v = np.zeros((t, m))
        for (h, z), val in d.items():
            v[h, z - 1] = val
        out.append(ZflTrajectory(v, sid))
    return out
