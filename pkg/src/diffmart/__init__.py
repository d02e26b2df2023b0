"""Martingale classification of generalized stochastic exponentials of
one-dimensional diffusions, with a Monte Carlo cross-check."""

__version__ = "0.1.0"

from .classify import (  # noqa: F401
    LEVEL_MARTINGALE, LEVEL_NOT_LOCAL, LEVEL_STRICT_LOCAL, LEVEL_UI,
    ProblemSpec, Verdict, build_problem, certificate_json,
)
from .classify import classify as classify_problem  # noqa: F401
from .mc import (  # noqa: F401
    MCEstimate, PathBundle, SimConfig, estimate_mean, martingale_test,
    simulate_Z,
)

# keep the submodule reachable as diffmart.classify (the name would
# otherwise be shadowed by the function exported above)
from . import classify  # noqa: F401, E402
