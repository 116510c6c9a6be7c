import os
import logging
from logging.handlers import RotatingFileHandler
from dotenv import load_dotenv

logger = logging.getLogger(__name__)

load_dotenv()

# Logging
LOG_FILE = os.getenv('INFOSELECT_LOG_FILE', 'infoselect.log')
LOG_LEVEL = os.getenv('INFOSELECT_LOG_LEVEL', 'INFO').upper()
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def configure_logging(level: str = LOG_LEVEL, log_file: str = LOG_FILE) -> None:
    """Install the rotating file + console handlers (called by the CLI only)."""
    handlers = [logging.StreamHandler()]
    if log_file:
        handlers.insert(0, RotatingFileHandler(
            log_file,
            maxBytes=5 * 1024 * 1024,  # 5 MB
            backupCount=3,
        ))
    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)


# Worker pool
INFOSELECT_THREADS = int(os.getenv('INFOSELECT_THREADS', str(os.cpu_count() or 1)))

# Exhaustive search limits
COMBINATION_CAP = int(float(os.getenv('INFOSELECT_COMBINATION_CAP', '5e6')))
EXHAUSTIVE_MAX_N = int(os.getenv('INFOSELECT_EXHAUSTIVE_MAX', '8'))

# Numerical tolerances
PINV_RCOND = 1e-10          # relative cutoff for (E^T E)^+
RANK_TOL = 1e-9             # singular values below RANK_TOL * sigma_max are dropped
GAIN_EPS = 1e-12            # marginal gains at or below this are treated as zero
SYMMETRY_TOL = 1e-10

# Vision model
DEFAULT_SIGMA_BEARING = 0.01

# Scenario generation
MAX_RESAMPLE_ATTEMPTS = 100
DEFAULT_DT = 0.1
DEFAULT_WHEELBASE = 0.26    # 1/10-scale RC car
DEFAULT_GRAVITY = (0.0, 0.0, -9.81)

# Default forward-looking camera: optical axis (z) along body x, image x along -body y
DEFAULT_HALF_FOV_H = 0.6
DEFAULT_HALF_FOV_V = 0.45
DEFAULT_Z_MIN = 0.2
DEFAULT_Z_MAX = 15.0
DEFAULT_T_EXT = (0.1, 0.0, 0.1)
DEFAULT_R_EXT = (
    (0.0, 0.0, 1.0),
    (-1.0, 0.0, 0.0),
    (0.0, -1.0, 0.0),
)

# Default IMU noise (SI units)
DEFAULT_SIGMA_P = 0.01
DEFAULT_SIGMA_V = 0.05
DEFAULT_SIGMA_B = 0.01
DEFAULT_SIGMA_PRIOR = 0.1

# Selection
DEFAULT_EPSILON_SAMPLE = 0.5
GRID_COLS = 15
GRID_ROWS = 12
