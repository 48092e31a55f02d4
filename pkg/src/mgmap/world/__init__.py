"""Synthetic scenes, geodesic fields, episodes and their file formats."""
from .episodes import Episode, EpisodeParams, sample_episode, sample_episodes, smooth_path
from .geodesic import GeodesicField, OccupancyGrid, geodesic_distance, geodesic_field
from .io import (DataFormatError, read_episodes, read_scene, scene_from_dict, scene_to_dict, write_episodes,
                 write_scene)
from .scene import (DomainError, Footprint, GenerationError, Scene, SceneObject, WorldParams, ambiguous_objects,
                    generate_scene)
from .vocab import CATEGORY_NAMES, CATEGORY_PRESET_27, COLORS, MATERIALS, WALL_CATEGORY, Vocab, category_names

__all__ = [
    "CATEGORY_NAMES", "CATEGORY_PRESET_27", "COLORS", "DataFormatError", "DomainError", "Episode", "EpisodeParams",
    "Footprint", "GenerationError", "GeodesicField", "MATERIALS", "OccupancyGrid", "Scene", "SceneObject",
    "Vocab", "WALL_CATEGORY", "WorldParams", "ambiguous_objects", "category_names", "generate_scene",
    "geodesic_distance", "geodesic_field", "read_episodes", "read_scene", "sample_episode", "sample_episodes",
    "scene_from_dict", "scene_to_dict", "smooth_path", "write_episodes", "write_scene",
]
