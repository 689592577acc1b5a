"""Numerics for a time-fractional stochastic heat equation driven by Poisson noise.

Submodules: ``specfun`` (Mittag-Leffler and stable densities), ``kernels``
(Green function and its tables), ``noise`` (Levy measures, sampling,
isometry checks), ``solver`` (mild-solution marching and Picard iteration),
``analysis`` (constants, renewal equations, moment fits) and ``cli``.
"""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .grid import GridSpec  # noqa: F401
from .specfun import *  # noqa: F401,F403
from .kernels import *  # noqa: F401,F403
from .noise import *  # noqa: F401,F403
from .solver import *  # noqa: F401,F403
from .analysis import *  # noqa: F401,F403
from .config import ExperimentConfig, parse_config, serialize  # noqa: F401
