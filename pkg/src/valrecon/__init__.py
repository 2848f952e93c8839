"""Value-oriented forecast reconciliation for a portfolio of wind power
producers trading jointly in a forward market with dual-price balancing."""

from .allocation import AllocationPolicy, allocate
from .hierarchy import Hierarchy, RecordSet
from .market import MarketHour, Penalties, imbalance_cost, nominal_level, profit
from .reconcile import ReconModel, TrainConfig, train, train_quality, train_value

__version__ = "0.1.0"

__all__ = [
    "AllocationPolicy", "Hierarchy", "MarketHour", "Penalties", "ReconModel", "RecordSet",
    "TrainConfig", "allocate", "imbalance_cost", "nominal_level", "profit",
    "train", "train_quality", "train_value",
]
