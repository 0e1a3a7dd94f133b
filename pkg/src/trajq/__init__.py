"""Discrete multi-period portfolio trajectories compiled to QUBO form.

The package covers the full loop: integer trajectory model, integer-to-bit
encodings, QUBO compilation, a simulated Chimera annealer (embedding, gauges,
control noise, majority-vote readout), exhaustive and annealing solvers, and
spectral-perturbation success metrics with report generation.

All randomness is seed-explicit; identical seeds give identical artifacts.
"""

from trajq.errors import (
    EmbeddingError,
    GuardLimitError,
    SpecError,
)

__version__ = "0.1.0"

__all__ = [
    "EmbeddingError",
    "GuardLimitError",
    "SpecError",
    "__version__",
]
