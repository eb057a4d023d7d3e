from .config import CONFIG_FORMAT, RegionBounds, TrainConfig, UserCost, load_config
from .dataset import DATASET_FORMAT, EmptyDatasetError, TrajectoryDataset, generate_dataset, in_region
from .losses import (
    Batch,
    loss_delta,
    loss_dissipativity,
    loss_reg,
    loss_shaping,
    total_loss,
    user_cost,
    violation,
)
from .loop import HISTORY_COLUMNS, TrainHistory, init_model, train

__all__ = [
    "Batch", "CONFIG_FORMAT", "DATASET_FORMAT", "EmptyDatasetError", "HISTORY_COLUMNS", "RegionBounds",
    "TrainConfig", "TrainHistory", "TrajectoryDataset", "UserCost", "generate_dataset", "in_region",
    "init_model", "load_config", "loss_delta", "loss_dissipativity", "loss_reg", "loss_shaping",
    "total_loss", "train", "user_cost", "violation",
]
