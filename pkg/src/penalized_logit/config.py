"""Shared configuration for fitting, tuning, and the simulation harness."""

from __future__ import annotations

import os
from pathlib import Path

# Newton driver
PROBABILITY_EPSILON = 1e-10
GRADIENT_TOLERANCE = 1e-8
STEP_TOLERANCE = 1e-6
MAX_ITERATIONS = 25
FIRTH_MAX_ITERATIONS = 50
MAX_HALVINGS = 5
RCOND_MINIMUM = 1e-12

# Ridge penalty and complexity-parameter selection
RESCALE_S = 10.0
GRID_LOW_EXPONENT = -6.0
GRID_HIGH_EXPONENT = 2.0
GRID_SIZE = 200
GRID_VERSION = "log10[-6,2]x200-v1"
CV_FOLDS = 10
RCV_REPETITIONS = 50
IP_LAMBDA = 2.0
WP_LAMBDA = 0.5
GCV_MODES = ("insample", "loocv")
DEFAULT_GCV_MODE = "insample"

SEPARATION_THRESHOLD = 1e-6
SLOPE_WINSOR_FLOOR = 0.01

# Simulation
VALIDATION_SIZE = 10_000
CALIBRATION_DRAWS = int(os.getenv("PENALIZED_LOGIT_CALIBRATION_DRAWS", "1000000"))
CALIBRATION_SEED = 20_210_312
CALIBRATION_VERSION = 1
DEFAULT_MASTER_SEED = int(os.getenv("PENALIZED_LOGIT_SEED", "2021"))
DEFAULT_REPS = 200
FULL_REPS = 1000
ILLUSTRATE_REPS = 1000
DEFAULT_WORKERS = int(os.getenv("PENALIZED_LOGIT_WORKERS", "1"))

SCHEMA_VERSION = 1
LOCAL_OUTPUT_DIR = Path(os.getenv("PENALIZED_LOGIT_OUTPUT", "runs"))
