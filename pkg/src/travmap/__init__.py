"""BEV traversability mapping from LIDAR scans.

Pipeline: pillar feature extraction -> (optional) multi-frame attention
fusion -> dilated encoder-decoder completion -> 4-class (+unknown)
traversability map. Includes synthetic scene generation, dataset
building, two-stage training, and evaluation tooling.
"""

__version__ = "0.1.0"

FREE, LOW_COST, MEDIUM_COST, LETHAL, UNKNOWN = 0, 1, 2, 3, 4
NUM_CLASSES = 5
EVAL_CLASSES = 4  # unknown is excluded from evaluation

CLASS_NAMES = ("free", "low-cost", "medium-cost", "lethal", "unknown")

from .grid import GridSpec, metric_to_cell, cell_center  # noqa: E402,F401
