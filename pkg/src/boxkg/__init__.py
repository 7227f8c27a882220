"""Two-view knowledge graph embeddings: entities as vectors, concepts as Gumbel boxes."""

from .config import ConfigError, RunConfig, TrainConfig
from .geometry import BoxConfig, DegenerateBoxError, GumbelBox
from .kgdata import KGFormatError, SplitKG, TwoViewKG, load_kg, split_kg
from .state import TrainState, init_state

__version__ = "0.1.0"

__all__ = [
    "BoxConfig",
    "ConfigError",
    "DegenerateBoxError",
    "GumbelBox",
    "KGFormatError",
    "RunConfig",
    "SplitKG",
    "TrainConfig",
    "TrainState",
    "TwoViewKG",
    "init_state",
    "load_kg",
    "split_kg",
]
