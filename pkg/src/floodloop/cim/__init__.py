"""Crowd observation operator: posts to sparse zone functionality-loss observations."""
from .observe import (
    DEFAULT_ELEVATION_TOL,
    DEFAULT_RADIUS,
    CrowdParams,
    interpolate_depths,
    nearest_cue,
    observe_zfl,
    post_probability,
    posts_to_observation,
    synth_crowd,
)
from .posts import (
    CueRow,
    DepthCue,
    Post,
    default_cue_table,
    default_keywords,
    depth_table,
    extract_depth_cue,
    filter_relevant,
    load_cue_table,
    load_keywords,
    localize,
    read_posts,
    write_posts,
)
