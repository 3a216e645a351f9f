"""
Constants for the Saddle library.
"""

# Heun substeps per macro time step
DEFAULT_SUBSTEPS = 5

# States with a larger Euclidean norm abort a rollout
BLOWUP_NORM = 1e6

# Adam moment decay rates and denominator guard
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Final learning rate of the linearly decaying SG schedule
SG_RATE_FLOOR = 1e-5

# Upper bound on unrolled inner ascent steps (POTEB)
MAX_UNROLLED_STEPS = 50

# Half width of the band around the zero level set used by the local L1 error
DEFAULT_ETA_LOC = 0.2

# Evaluation grid points per axis
DEFAULT_RESOLUTION = 101

# Points per axis of the oracle control grids
DEFAULT_CONTROL_POINTS = 41

# Relative enlargement of the sampling box for the grid oracle
BOX_ENLARGEMENT = 0.2

# Largest strategy table the exhaustive enumeration will walk
MAX_ENUMERATED_STRATEGIES = 10_000_000

# Below this radius tanh(r)/r is taken from its Taylor series
TANH_RATIO_SERIES_RADIUS = 1e-4

# Guard for x/|x| in the rotation dynamics
NORM_GUARD = 1e-8

# Weight file header
WEIGHTS_MAGIC = b"SDLW"
WEIGHTS_VERSION = 1

# Default success threshold on the local L1 error for the rotation benchmark
ROTATION_SUCCESS_THRESHOLD = 0.1
