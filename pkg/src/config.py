import os
from pathlib import Path

# Base directory: parent of src/
BASE_DIR = Path(__file__).resolve().parent.parent

# ──────────────────── Local storage ────────────────────
DATA_DIR = os.getenv("DATA_DIR", str(BASE_DIR / "data"))
LOGS_DIR = os.getenv("LOGS_DIR", str(BASE_DIR / "logs"))
LOG_FILE = os.path.join(LOGS_DIR, "workbench.log")
LOG_LEVEL = os.getenv("WORKBENCH_LOG_LEVEL", "INFO")

# ──────────────────── Parallelism ────────────────────
# 0 means "all available cores"
THREADS = int(os.getenv("WORKBENCH_THREADS", "0"))


def resolve_threads(threads: int | None) -> int:
    """Turn a --threads value (0/None = auto) into a worker count."""
    if not threads:
        threads = THREADS
    if not threads:
        threads = os.cpu_count() or 1
    return max(1, threads)


# ──────────────────── Cell geometry ────────────────────
BS_POSITION = (-1.3, 0.0)
DEVICE_AREA = ((-1.0, 1.0), (-0.5, 0.5))  # x-range, y-range
NUM_DEVICES = 20
BEAMWIDTH = 0.025
NUM_OBJECTS_RANGE = (2, 5)
OBJECT_LENGTH_RANGE = (0.05, 0.05)
OBJECT_SPEED_RANGE = (0.005, 0.01)  # loops per second
ATTENUATION_DB_RANGE = (-30.0, -10.0)
POLYLINE_POINTS = 9

# ──────────────────── Fading ────────────────────
UNBLOCKED_SNR_DB = 0.0
K_FACTOR_DB = 15.0
SNR_THRESHOLD_DB = -20.0
SLOT_MS = 50.0

# ──────────────────── Arc-length table ────────────────────
ARC_TABLE_RESOLUTION = 1024
ARC_TABLE_MIN_RESOLUTION = 64

# ──────────────────── Dataset ────────────────────
NUM_TASKS = 100
NUM_SLOTS = 10_000
DEFAULT_MODE = "any"
# Label windows: ANY (xi=0, tau=25), ALL (xi=25, tau=3)
MODE_DEFAULTS = {"any": (0, 25), "all": (25, 3)}

# ──────────────────── Model ────────────────────
HIDDEN_IN = 128
LSTM_UNITS = 128
HIDDEN_OUT = 128
PROB_EPS = 1e-7
POSITIVE_WEIGHT = 9.0

# ──────────────────── Training ────────────────────
TRUNC_LEN = 128
CHUNK_LEN = 512
INNER_LR = 0.05
OUTER_LR = 1e-3
META_BATCH = 8
MAX_META_ITERS = 2000
CONVERGENCE_WINDOW = 50
CONVERGENCE_TOL = 1e-4
JOINT_LR = 1e-3
JOINT_STEPS = 2000
JOINT_BATCH = 8
ADAPT_LR = 0.05
ADAPT_EPOCHS = 5
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

# ──────────────────── Evaluation ────────────────────
DETECTION_THRESHOLD = 0.5
CLEAN_WINDOW = 50
CENSOR_HORIZON = 25
T_TEST_LIST = (100, 500, 2000)
INIT_KINDS = ("maml", "joint", "random", "naive")

# ──────────────────── Artifact formats ────────────────────
DATASET_MAGIC = b"MMWBLKDS"
DATASET_VERSION = 2
CHECKPOINT_MAGIC = b"MMWBCKPT"
CHECKPOINT_VERSION = 1

# ──────────────────── Exit codes ────────────────────
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4
