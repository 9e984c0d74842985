DIVERGENCE_BOUND = 1e3

# Adaptive moment optimizer
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

# Neuromorphic cost model (pJ per operation)
ENERGY_PER_AC = 0.9
ENERGY_PER_MAC = 4.6

# Predictive-coding overhead per neuron and time step
PREDCODING_MULTIPLIES_PER_NEURON = 4
PREDCODING_ADDITIONS_PER_NEURON = 4
PREDCODING_MEMORY_PER_NEURON = 3

# Stability baselines
LOWPASS_DECAY = 0.9
LOWPASS_THRESHOLD = 1.0
PREDCODING_ALPHA = 0.5
PREDCODING_THRESHOLD = 0.5
SCHEDULE_DECAY = 0.95
SCHEDULE_MIN_STEP = 0.05
STABILITY_SAMPLES = 100
STABILITY_WINDOW = 10
STABILITY_RESIDUAL_BOUND = 0.05

# Gradient oracle
ORACLE_EPSILON = 1e-4
ORACLE_RELAX_STEPS = 20000
ORACLE_RESIDUAL_TOL = 1e-11
GRADCHECK_THRESHOLD = 0.95
GRADCHECK_BETAS = (0.5, 0.1, 0.01)

# kappa sweep
SWEEP_KAPPAS = (0.5, 1.0, 2.0, 4.0)
SWEEP_SAMPLES = 100

# Checkpoints
CHECKPOINT_VERSION = 1
CHECKPOINT_NAME = 'checkpoint.npz'

# Stream context tags; a stream id is (context..., sample, layer), positioned at a time step
STREAM_TRAIN = 0
STREAM_EVAL = 1
STREAM_SWEEP = 2
STREAM_STABILITY = 3
STREAM_BATCH_SIGN = 4
STREAM_GRADCHECK = 5

PHASE_FREE = 0
PHASE_NUDGE_POS = 1
PHASE_NUDGE_NEG = 2

# IDX magic numbers
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# Environment
ENV_DATA_ROOT = 'EP_DATA_ROOT'

# CLI exit codes
EXIT_OK = 0
EXIT_GRADCHECK_FAIL = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_ORACLE = 4
EXIT_CHECKPOINT_VERSION = 5
