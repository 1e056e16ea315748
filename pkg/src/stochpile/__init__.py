"""Single-source stochastic sandpile on Z^2 with random toppling multiplicity."""

from .core import (
    Configuration,
    OrderPolicy,
    StabilizationResult,
    is_stable,
    single_source,
    stabilize,
    topple_once,
)
from .distributions import (
    GammaSpec,
    build_sampler,
    cdf,
    expected_value,
    pmf,
    sample_from_word,
)
from .observables import avalanche_number, quotients, radius_number, toppling_stats
from .prf import indexed_word

__version__ = "0.1.0"
