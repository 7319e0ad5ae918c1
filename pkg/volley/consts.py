"""
This module contains various constant definitions that any other
module can import without risk of cyclic imports.

Example usage:
from volley import consts
...
vec = simd.encode(values, consts.DEFAULT_SLOTS)
"""

# 2^15 slots, the capacity of one ciphertext at logN=16
DEFAULT_SLOTS = 32768
DEFAULT_SEED = 42
DEFAULT_TOLERANCE = 1e-9
DEFAULT_WORKERS = 1

# MNIST batch carried by one ciphertext: 32 * 28 * 28 = 25088 slots
MNIST_BATCH = 32
MNIST_SIDE = 28

# Polynomial activations of the MNIST network, c0 + c1*x + c2*x^2 + c3*x^3
ACT1_COEFFS = (-0.00015120704, 0.4610149, 2.0225089, -1.4511951)
ACT2_COEFFS = (-1.5650465, -0.9943767, 1.6794522, 0.5350255)

# MNIST network layer sizes
CONV_KERNELS = 4
CONV_KERNEL_SIDE = 3
FC1_OUTPUTS = 64
FC2_OUTPUTS = 10

# Quadratic gradient constants
EPSILON = 1e-8
NAG_ALPHA0 = 0.01
ADAGRAD_RATE = 1.0 + 0.01

# IDX magic numbers (big endian)
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# CLI exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY_FAILED = 2

# Tolerances used by the verification suites
MATMUL_TOLERANCE = 1e-9
SUM_FOR_CONV_TOLERANCE = 1e-12
CONV_TOLERANCE = 1e-9
FORWARD_TOLERANCE = 1e-6
DOMINANCE_SLACK = 1e-8

# Model directory layout
MODEL_MANIFEST = "manifest.cfg"
MODEL_FC1 = "fc1.csv"
MODEL_FC2 = "fc2.csv"
MODEL_BIASES = "biases.csv"
MODEL_KERNEL = "conv_k%d.csv"
