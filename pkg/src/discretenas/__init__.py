"""Differentiable cell search with entropy regularizers that close the discretization gap."""

__version__ = "0.1.0"

from .config import RunConfig, load as load_config, toy_config  # noqa: E402
from .discretize import GapReport, Genotype, derive_genotype, gap_probe, one_hot_arch  # noqa: E402
from .regularizers import EdgeGroup, Schedules, ScheduleSpec, group_preset  # noqa: E402
from .search import run_search, train_subnetwork  # noqa: E402
from .supernet import ArchParams, CellNetwork, NetworkConfig, SuperNetwork  # noqa: E402

__all__ = [
    "ArchParams", "CellNetwork", "EdgeGroup", "GapReport", "Genotype", "NetworkConfig", "RunConfig",
    "ScheduleSpec", "Schedules", "SuperNetwork", "derive_genotype", "gap_probe", "group_preset",
    "load_config", "one_hot_arch", "run_search", "toy_config", "train_subnetwork",
]
