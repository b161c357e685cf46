"""Quantizer configuration and constants."""

import math

# Numerical linear algebra
PIVOT_TOLERANCE = 1e-14  # Cholesky pivot floor, relative to the mean diagonal
RECONSTRUCTION_TOLERANCE = 1e-10  # Relative Frobenius error accepted by self-checks

# Phase 1 setup
DEFAULT_DAMPING = 1e-4  # delta, as a fraction of mean(diag(Sigma_xhat))
DEAD_FEATURE_TAU = 1e-3  # Dead if diag < tau * median(diag)

# Codes
CODE_MIN = -(2**31)
CODE_MAX = 2**31 - 1

# Side information: one 16-bit scalar per row and per column
SIDE_INFO_BITS = 16

# Rescaler (alternating T / Gamma optimization)
RESCALER_EPS = 1e-6  # Relative loss change that stops the sweeps
RESCALER_MAX_ITERS = 50
RESCALER_RIDGE_FRACTION = 1e-10  # Ridge lambda relative to mean(diag(Sigma_xhat))
RESCALER_LOSS_FLOOR = 1e-12  # Denominator guard in the stopping rule

# Rate search
RATE_SEARCH_ITERATIONS = 30
RATE_SEARCH_ROW_FRACTION = 0.10
RATE_SEARCH_TOLERANCE = 0.01  # Bits between full-matrix entropy and target
RATE_SEARCH_JOINT_MARGIN_BITS = 4.0  # Joint mode: sampled symbols >= 2^(target + margin)
RATE_SEARCH_COLUMN_MARGIN_BITS = 2.0  # Column mode: sampled rows >= 2^(target + margin)
BRACKET_LOW_FACTOR = 1e-3  # c_lo = factor * rms(Y)
BRACKET_HIGH_FACTOR = 64.0  # c_hi = factor * rms(Y)
BRACKET_WIDEN_FACTOR = 4.0
BRACKET_MAX_WIDENINGS = 8

# Adaptive mixing
GOLDEN_SECTION_ITERATIONS = 15
GOLDEN_RATIO_CONJUGATE = (math.sqrt(5.0) - 1.0) / 2.0

# Covariance estimation
COVARIANCE_BLOCK_TOKENS = 4096  # Token rows per partial sum

# Waterfilling
WATERFILL_MAX_ITERS = 200
WATERFILL_REL_TOL = 1e-12
WATERFILL_LOW_FACTOR = 1e-9  # Lower tau bracket = factor * min(sigma_w2 * lambda)

# Half of log2(2 pi e / 12): ZSIC cell penalty against the waterfilling bound
WATERSIC_GAP_BITS = 0.5 * math.log2(2.0 * math.pi * math.e / 12.0)

# Spacing modes
SPACING_WATERSIC = "watersic"
SPACING_UNIFORM = "uniform"
SPACING_MODES = (SPACING_WATERSIC, SPACING_UNIFORM)

# Entropy accounting modes
ENTROPY_JOINT = "joint"  # One table for the whole matrix
ENTROPY_COLUMN = "column"  # One table per column
ENTROPY_MODES = (ENTROPY_JOINT, ENTROPY_COLUMN)

# Binary matrix file
MATRIX_MAGIC = b"WSMX"
MATRIX_VERSION = 1
MATRIX_DTYPE_FLOAT64 = 0

# Layer container
CONTAINER_MAGIC = b"WSQZ"
CONTAINER_VERSION = 1

# Benchmark defaults
BENCH_ROWS = 8192
BENCH_COLS = 128
BENCH_RATE = 6.0
BENCH_CONDITION = 1000.0
BENCH_SEEDS = 10
BENCH_SIGMA_W = 1.0
BENCH_DAMPING = 0.0  # Synthetic covariances are well conditioned
