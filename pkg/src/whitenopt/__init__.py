"""Whitening optimizers decomposed into interchangeable parts.

The package provides a dense linear-algebra core (Jacobi eigensolver,
fractional matrix powers, Newton-Schulz orthogonalization), update rules
assembled from a momentum/basis/normalizer/post-normalizer pipeline, two
training workloads with exact gradients, a deterministic run harness, and a
sweep driver with reporting utilities.
"""

__version__ = "0.1.0"
