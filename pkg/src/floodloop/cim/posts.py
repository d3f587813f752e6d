"""Post records, relevance filtering, depth-cue extraction and localization."""
from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import asdict, dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

_LATIN_EDGE_L = r"(?<![A-Za-z])"
_LATIN_EDGE_R = r"(?![A-Za-z])"

NUMERIC_PATTERN = re.compile(
    r"(?<![\w.])(\d+(?:\.\d+)?)\s*(cm|centimet(?:er|re)s?|m|met(?:er|re)s?)(?![A-Za-z])"
    r"(?:\s+(?:of\s+)?(?:water|deep|flood(?:ing|water)?))",
    re.IGNORECASE,
)


@dataclass
class Post:
    id: str
    t: int
    text: str
    x: float | None = None
    y: float | None = None
    zone: int | None = None
    source: str = "crowd"

    def __post_init__(self):
        if int(self.t) < 0:
            raise ValueError(f"Post {self.id}: timestamp must be >= 0")
        self.t = int(self.t)

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "Post":
        d = json.loads(line)
        return cls(
            id=str(d["id"]),
            t=int(d["t"]),
            text=str(d["text"]),
            x=None if d.get("x") is None else float(d["x"]),
            y=None if d.get("y") is None else float(d["y"]),
            zone=None if d.get("zone") is None else int(d["zone"]),
            source=str(d.get("source", "crowd")),
        )


@dataclass(frozen=True)
class DepthCue:
    object: str  # human-body | shared-bicycle | car | measured
    level: str
    depth: float
    part: str = ""


@dataclass(frozen=True)
class CueRow:
    object: str
    level: str
    part: str
    depth: float
    pattern: re.Pattern


def _data_text(name: str) -> str:
    return resources.files("floodloop.cim").joinpath("data", name).read_text(encoding="utf-8")


def _wrap(alt: str) -> str:
    if re.fullmatch(r"[\x00-\x7f]+", alt):
        return _LATIN_EDGE_L + "(?:" + alt + ")" + _LATIN_EDGE_R
    return "(?:" + alt + ")"


def _split_alternatives(text: str) -> list[str]:
    """Split on top-level ``|`` only; pipes inside groups belong to the alternative."""
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "|" and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


def load_cue_table(path: str | Path | None = None) -> tuple[CueRow, ...]:
    """Depth-cue rows in match priority order (file order)."""
    text = Path(path).read_text(encoding="utf-8") if path else _data_text("depth_cues.csv")
    rows = []
    for rec in csv.DictReader(text.splitlines()):
        alts = _split_alternatives(rec["patterns"])
        pattern = re.compile("|".join(_wrap(a) for a in alts), re.IGNORECASE)
        rows.append(CueRow(rec["object"], rec["level"], rec["part"], float(rec["depth"]), pattern))
    return tuple(rows)


def load_keywords(path: str | Path | None = None) -> tuple[str, ...]:
    text = Path(path).read_text(encoding="utf-8") if path else _data_text("keywords.csv")
    out = []
    for rec in csv.DictReader(text.splitlines()):
        out.extend(k for k in (rec["english"], rec["chinese"]) if k)
    return tuple(out)


@lru_cache(maxsize=1)
def default_cue_table() -> tuple[CueRow, ...]:
    return load_cue_table()


@lru_cache(maxsize=1)
def default_keywords() -> tuple[str, ...]:
    return load_keywords()


def depth_table(rows: tuple[CueRow, ...] | None = None) -> dict[tuple[str, str], float]:
    return {(r.object, r.level): r.depth for r in rows or default_cue_table()}


def filter_relevant(post: Post | str, keywords: tuple[str, ...] | None = None) -> bool:
    text = post.text if isinstance(post, Post) else post
    if not isinstance(text, str):
        return False
    folded = text.casefold()
    return any(k.casefold() in folded for k in keywords or default_keywords())


def extract_depth_cue(text: str, rows: tuple[CueRow, ...] | None = None) -> DepthCue | None:
    """Numeric depths first, then table phrases in table order."""
    if not isinstance(text, str) or not text:
        return None
    m = NUMERIC_PATTERN.search(text)
    if m:
        value = float(m.group(1))
        if m.group(2).lower().startswith("c"):
            value /= 100.0
        if value > 0 and math.isfinite(value):
            return DepthCue("measured", "", value)
    for row in rows or default_cue_table():
        if row.pattern.search(text):
            return DepthCue(row.object, row.level, row.depth, row.part)
    return None


@lru_cache(maxsize=32)
def _gazetteer_pattern(names: tuple[tuple[int, str], ...]) -> re.Pattern:
    ordered = sorted(names, key=lambda kv: -len(kv[1]))
    alts = [f"(?P<z{m}>{re.escape(name)})" for m, name in ordered]
    return re.compile(r"(?<![\w-])(?:" + "|".join(alts) + r")(?![\w-])", re.IGNORECASE)


def localize(post: Post, city) -> int | None:
    """Explicit zone id, else nearest zone centroid to the coordinates, else gazetteer name."""
    try:
        if post.zone is not None and 1 <= int(post.zone) <= city.n_zones:
            return int(post.zone)
        if post.x is not None and post.y is not None and math.isfinite(post.x) and math.isfinite(post.y):
            c = city.zone_centroids()
            d2 = (c[:, 0] - post.x) ** 2 + (c[:, 1] - post.y) ** 2
            return int(np.argmin(d2)) + 1
        if isinstance(post.text, str) and post.text:
            m = _gazetteer_pattern(tuple(sorted(city.gazetteer().items()))).search(post.text)
            if m:
                return int(m.lastgroup[1:])
    except (TypeError, ValueError):
        return None
    return None


def write_posts(path: str | Path, posts: list[Post]) -> None:
    Path(path).write_text("".join(p.to_json() + "\n" for p in posts), encoding="utf-8")


def read_posts(path: str | Path) -> list[Post]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [Post.from_json(line) for line in lines if line.strip()]
