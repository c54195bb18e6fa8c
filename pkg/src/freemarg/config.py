"""Shared numerical tolerances.

Every validation and membership check in the package reads its thresholds
from one `Tolerances` record so that the constants live in a single place.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    """Package-wide numerical thresholds."""

    hermiticity: float = 1e-12   # max |M - M^dag| entry allowed
    psd: float = 1e-9            # minimum eigenvalue floor for PSD checks
    trace: float = 1e-9          # |tr(rho) - 1| allowed for density matrices
    gap: float = 1e-8            # relative duality-gap target of the solver
    feas: float = 1e-8           # feasibility-residual target of the solver
    compat: float = 1e-6         # zero-robustness / compatibility decision level
    membership: float = 1e-9     # default free-set membership slack


DEFAULT_TOLS = Tolerances()
