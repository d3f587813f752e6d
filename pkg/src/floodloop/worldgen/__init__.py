"""Synthetic city, design storms and a cellular-automaton flood model."""
from .city import ARCHETYPE_PROBS, ARCHETYPES, CityModel, generate_city, kmeans_zones
from .conditioning import (
    CONDITIONING_COLUMNS,
    SELECTED_CONDITIONING,
    building_attributes,
    cell_features,
    derive_conditioning,
    flow_accumulation,
    terrain_derivatives,
)
from .flood import OUTLET_RATE, RIVER_RATE, DepthField, effective_capacity, simulate_flood
from .io import (
    load_city,
    load_hyetographs,
    load_trajectories,
    save_city,
    save_hyetographs,
    save_trajectories,
)
from .rainfall import Hyetograph, gamma_storm, generate_rainfall_ensemble
