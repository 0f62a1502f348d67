"""
These enums are defined in ``incentfl.enums``, but are also available from
the root namespace.

Enums are choices; exactly one field must be selected. Enum values are
strings, so instead of ``incentfl.MechanismMode.incentive`` one can also
write ``"incentive"``, e.g. in a config file.
"""

from ._coreutils import BaseEnum as _BaseEnum


__all__ = [
    "SizeKind",
    "MechanismMode",
    "Weighting",
    "RankingMetric",
    "EvaluationMode",
]


class Enum(_BaseEnum):
    """Base enum class for incentfl."""


class SizeKind(Enum):
    """The family of a client-size distribution."""

    uniform = "uniform"
    pareto = "pareto"
    exponential = "exponential"
    explicit = "explicit"


class MechanismMode(Enum):
    """How the server turns uploaded models into distributed models."""

    vanilla = "vanilla"  #: One global model for everyone (FedAvg).
    incentive = "incentive"  #: Per-client nested aggregation by rank.


class Weighting(Enum):
    """Aggregation weights for the vanilla global model."""

    unweighted = "unweighted"
    weighted = "weighted"  #: By reported data size, an oracle baseline.


class RankingMetric(Enum):
    """What the server ranks uploaded models by."""

    accuracy = "accuracy"
    loss = "loss"


class EvaluationMode(Enum):
    """How the game layer evaluates a client's performance p_i."""

    analytic = "analytic"
    empirical = "empirical"
