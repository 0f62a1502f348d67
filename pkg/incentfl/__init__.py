"""
Simulation and analysis of a rank-based incentive mechanism for federated
learning, where better contributors receive better-aggregated models.
"""

# ruff: noqa: F401, F403

from ._coreutils import logger, IncentFLError, ConfigError, DegenerateError
from ._version import __version__, version_info
from ._diagnostics import diagnostics, DiagnosticsBase
from .enums import *
from .synthdata import *
from .learner import *
from .mechanism import *
from .utility import *
from .game import *
from .config import ExperimentConfig, parse_config, load_config
from . import verification
