"""
Configuration constants for the project.

This module holds the directory layout, on-disk format versions and the
defaults every stage of the pipeline falls back to. Run-specific settings
(scenarios, schedules, seeds) live in the pydantic models of
`src/schemas.py` and are read from a JSON run config; nothing here is
overridden by environment variables.
"""

from pathlib import Path

# Project directory structure
PROJECT_DIR = Path(__file__).parent.parent.absolute()

RESOURCE_DIR = PROJECT_DIR / "resources"

# Example run configs (`irs_desk.json`, `uav_desk.json`).
CONFIG_DIR = RESOURCE_DIR / "configs"

# Fallback log directory when no `--out` directory is given.
LOG_DIR = PROJECT_DIR / "logs"

# On-disk formats. Bump on any layout change; loaders reject other values.
DATASET_FORMAT_VERSION = 1
CHECKPOINT_FORMAT_VERSION = 1
CHECKPOINT_MAGIC = b"DTCK"

# Transformer trunk defaults. Three blocks with 0.1 dropout is the
# published setup; the 8-token sliding window covers roughly two to three
# (return, state, action) steps.
DEFAULT_NUM_BLOCKS = 3
DEFAULT_DROPOUT_RATE = 0.1
DEFAULT_SPARSE_WINDOW = 8
LAYER_NORM_EPS = 1e-5

# Decision-transformer context: K timesteps of (R, s, a) plus one prompt
# token. 1 + 3 * 20 = 61 tokens stays under the 64-token sequence budget.
DEFAULT_CONTEXT_LEN = 20
DEFAULT_MAX_SEQUENCE_LEN = 64

# Size of the learned timestep table. Must exceed every episode_len.
DEFAULT_MAX_TIMESTEP = 512

# Supervised DT training (AdamW, batch 64, lr 1e-4).
DT_BATCH_SIZE = 64
DT_LEARNING_RATE = 1e-4
DT_WEIGHT_DECAY = 1e-4
DT_GRAD_CLIP = 0.25

# Fine-tuning: few-shot episode budget and the loss weight applied to
# samples whose return falls below the expert threshold.
FEW_SHOT_EPISODES = 50
NON_EXPERT_WEIGHT = 0.5

# Lightweight distillation: weight of the parameter-similarity term added
# to the student's action loss.
SIMILARITY_WEIGHT = 0.1

# Expert labelling: a trajectory is expert when its return clears the
# 80th percentile of the last 200 PPO training episodes.
EXPERT_PERCENTILE = 80.0
EXPERT_TAIL_EPISODES = 200

# Convergence rule for the speedup statistic: first step where the
# 5-point moving average reaches 90% of the baseline plateau
# (final-quarter mean).
CONVERGENCE_FRACTION = 0.9
MOVING_AVERAGE_WINDOW = 5
PLATEAU_FRACTION = 0.25

# Central-difference step for gradient checks; gradient entries smaller
# than GRAD_CHECK_MIN_SCALE are compared on an absolute scale.
GRAD_CHECK_STEP = 1e-5
GRAD_CHECK_MIN_SCALE = 1e-3
