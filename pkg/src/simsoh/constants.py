"""Frozen default constants for the simulator, filter and pipeline.

The cycle-aging rate was calibrated once with a brute-force campaign run so
that the default campaign, extended to 5000 h, drives at least one cell to the
SOH floor; see ``scripts/calibrate_aging.py``.
"""

KELVIN_OFFSET = 273.15

# OCV lookup: 11 knots, soc 0.0 -> 1.0 in steps of 0.1.
DEFAULT_OCV_TABLE = (
    (0.0, 3.00),
    (0.1, 3.45),
    (0.2, 3.55),
    (0.3, 3.62),
    (0.4, 3.67),
    (0.5, 3.72),
    (0.6, 3.78),
    (0.7, 3.85),
    (0.8, 3.94),
    (0.9, 4.06),
    (1.0, 4.20),
)

NOMINAL_CAPACITY_AH = 27.0
R0_INIT_OHM = 0.01
R1_OHM = 0.015
C1_F = 2000.0
C_TH_J_PER_K = 1100.0
R_TH_K_PER_W = 3.0

K_CAL = 2e-4
EA_OVER_R_K = 4000.0
T_REF_K = 298.15
SOC_STRESS_SLOPE = 0.5
K_CYC = 3e-3
ALPHA_DOD = 1.1
BETA_CURRENT = 0.3
THETA_TEMP_PER_K = 0.05
GAMMA_R_GROWTH = 1.0

INTEGRATION_DT_S = 1.0
IDLE_CURRENT_A = 1e-3

# Unscented Kalman filter
UKF_ALPHA = 1e-3
UKF_BETA = 2.0
UKF_KAPPA = 0.0
UKF_PROCESS_NOISE = (1e-10, 1e-8, 1e-12)
UKF_MEASUREMENT_NOISE = 1e-4
UKF_INITIAL_COVARIANCE = (1e-2, 1e-4, 1e-6)

# Campaign / dataset
SAMPLE_PERIOD_S = 1.0
MAX_HOURS = 1000.0
SOC_LOW = 0.1
SOC_HIGH = 0.9
SOH_FLOOR = 0.0
SQUARE_PERIOD_S = 1800.0
PULSE_DURATION_S = 60.0
RANDOM_WALK_LEVELS_A = (0.25, 0.50, 0.75, 1.00, 1.25, 1.50, 1.75, 2.00)
WINDOW_HOURS = 2.0
SPLIT_PROPORTIONS = (0.5, 0.2, 0.3)

# Learners
GBT_LEARNING_RATE = 0.1
GBT_N_TREES = (5, 10, 20, 50, 100, 200)
GBT_MAX_DEPTH = (1, 2, 3, 4, 5, 10, 30, 50)
MLP_SIZES = (4, 8, 16, 32, 64, 128)
MLP_BATCH_SIZE = 64
MLP_LEARNING_RATE = 1e-3
MLP_EPOCHS = 50
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
RFE_REFERENCE_TREES = 50
RFE_REFERENCE_DEPTH = 5
RFE_MIN_FEATURES = 3

SCALAR_BYTES = 4
GBT_NODE_BYTES = 8
