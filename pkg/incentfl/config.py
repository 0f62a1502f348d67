"""
Experiment configuration, parsed from flat ``key = value`` text with
dotted section prefixes, e.g.::

    seed = 42
    rounds = 20
    task.sizes = 50, 100, 150
    mechanism.mode = incentive
    utility.population.kind = pareto

Every key has a declared type and default; ``seed`` is required.
"""

from dataclasses import dataclass, field, replace
from typing import Any, Dict

from ._coreutils import ConfigError, str_to_enum_value
from .enums import EvaluationMode, MechanismMode, RankingMetric, SizeKind, Weighting
from .game import GameConfig, StrategyProfile
from .learner import TrainConfig
from .mechanism import MechanismConfig
from .synthdata import STANDARD_SIZES, SizeDistribution, TaskSpec
from .utility import CostModel, PerformanceModel, PopulationModel, UtilityParams


__all__ = ["ExperimentConfig", "parse_config", "load_config", "CONFIG_KEYS"]


# Value types
INT, FLOAT, BOOL, STR, INTS, FLOATS = "int", "float", "bool", "str", "ints", "floats"

GAME_STARTS = ("caps", "zero", "random")

# key -> (type, default). A default of None means the key is optional.
# The order is the order of the canonical text.
CONFIG_KEYS = {
    "seed": (INT, None),
    "rounds": (INT, 20),
    "out": (STR, "out"),
    "task.num_classes": (INT, 2),
    "task.feature_dim": (INT, 8),
    "task.separation": (FLOAT, 6.0),
    "task.sizes": (INTS, list(STANDARD_SIZES)),
    "task.validation_size": (INT, 10000),
    "train.learning_rate": (FLOAT, 0.005),
    "train.local_epochs": (INT, 1),
    "train.batch_size": (INT, 16),
    "mechanism.mode": (MechanismMode, MechanismMode.incentive),
    "mechanism.participation": (FLOAT, 1.0),
    "mechanism.weighting": (Weighting, Weighting.unweighted),
    "mechanism.ranking": (RankingMetric, RankingMetric.accuracy),
    "mechanism.threads": (INT, 1),
    "mechanism.compare_vanilla": (BOOL, False),
    "utility.gamma": (FLOAT, 1.0),
    "utility.alpha": (FLOAT, 1.0),
    "utility.cap": (FLOAT, 100.0),
    "utility.performance.theta": (FLOAT, 1.0),
    "utility.performance.beta": (FLOAT, -0.5),
    "utility.performance.degeneration": (FLOAT, 1.0),
    "utility.cost.linear": (FLOAT, 0.0),
    "utility.cost.quadratic": (FLOAT, 0.0),
    "utility.population.n": (INT, 10),
    "utility.population.kind": (SizeKind, SizeKind.uniform),
    "utility.population.d_max": (FLOAT, 500.0),
    "utility.population.shape": (FLOAT, 2.0),
    "utility.population.scale": (FLOAT, 10.0),
    "utility.population.rate": (FLOAT, 0.01),
    "utility.population.sizes": (INTS, None),
    "game.evaluation": (EvaluationMode, EvaluationMode.analytic),
    "game.mechanism": (MechanismMode, MechanismMode.incentive),
    "game.step": (INT, 1),
    "game.max_iterations": (INT, 100),
    "game.start": (STR, "caps"),
    "game.caps": (INTS, None),
    "game.cost_weights": (FLOATS, None),
    "game.short_rounds": (INT, 5),
    "game.tolerance": (FLOAT, 1e-9),
}

REQUIRED_KEYS = ("seed",)

# Keys that affect where and how fast a run goes, not its results
RUNTIME_KEYS = ("out", "mechanism.threads")


def _parse_value(key, text):
    kind = CONFIG_KEYS[key][0]
    text = text.strip()
    try:
        if kind == INT:
            return int(text)
        elif kind == FLOAT:
            return float(text)
        elif kind == BOOL:
            value = {"true": True, "false": False, "1": True, "0": False}.get(text.lower())
            if value is None:
                raise ValueError(f"{text!r} is not a boolean")
            return value
        elif kind == STR:
            return text
        elif kind == INTS:
            return [int(x) for x in text.split(",")] if text else []
        elif kind == FLOATS:
            return [float(x) for x in text.split(",")] if text else []
        else:
            return str_to_enum_value(kind, text)
    except ValueError as err:
        raise ConfigError(key, f"invalid value {text!r}: {err}") from None


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    elif isinstance(value, float):
        return repr(value)
    elif isinstance(value, list):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment configuration.

    Holds the typed value of every known key (defaults filled in). The
    sub-configs for each module are built from these values on demand.
    """

    values: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        values = {}
        for key, (_, default) in CONFIG_KEYS.items():
            values[key] = self.values.get(key, default)
        for key in self.values:
            if key not in CONFIG_KEYS:
                raise ConfigError(key, "unknown key")
        for key in REQUIRED_KEYS:
            if values[key] is None:
                raise ConfigError(key, "missing required key")
        object.__setattr__(self, "values", values)
        self.validate()

    def __getitem__(self, key):
        return self.values[key]

    def equivalent(self, other):
        """Whether both configs give the same results, ignoring runtime keys."""
        return all(
            self.values[key] == other.values[key] for key in CONFIG_KEYS if key not in RUNTIME_KEYS
        )

    def updated(self, overrides):
        """Get a copy with the values of some (dotted) keys replaced."""
        values = dict(self.values)
        for key, value in overrides.items():
            if key not in CONFIG_KEYS:
                raise ConfigError(key, "unknown key")
            values[key] = value
        return replace(self, values=values)

    def validate(self):
        """Build all sub-configs, raising ConfigError on invalid values."""
        seed = self["seed"]
        if not 0 <= seed < 2**64:
            raise ConfigError("seed", "must be a 64-bit unsigned integer")
        if self["rounds"] < 1:
            raise ConfigError("rounds", "must be at least 1")
        if self["game.start"] not in GAME_STARTS:
            raise ConfigError("game.start", f"must be one of {', '.join(GAME_STARTS)}")
        if not self["task.sizes"]:
            raise ConfigError("task.sizes", "needs at least one client")
        for section, build in [
            ("task", lambda: self.task_spec.validate()),
            ("train", lambda: self.train_config.validate()),
            ("mechanism", lambda: self.mechanism_config),
            ("utility", lambda: self.utility_params),
            ("game", lambda: (self.game_config(), self.game_profile())),
        ]:
            try:
                build()
            except ConfigError:
                raise
            except (ValueError, TypeError) as err:
                raise ConfigError(section, str(err)) from None
        try:
            self.mechanism_config.num_participants(len(self["task.sizes"]))
        except ValueError as err:
            raise ConfigError("mechanism.participation", str(err)) from None

    # %% Sub-configs

    @property
    def task_spec(self):
        return TaskSpec(
            num_classes=self["task.num_classes"],
            feature_dim=self["task.feature_dim"],
            class_separation=self["task.separation"],
            samples_per_client=list(self["task.sizes"]),
            validation_size=self["task.validation_size"],
            seed=self["seed"],
        )

    @property
    def train_config(self):
        return TrainConfig(
            learning_rate=self["train.learning_rate"],
            local_epochs=self["train.local_epochs"],
            batch_size=self["train.batch_size"],
            seed=self["seed"],
        )

    @property
    def mechanism_config(self):
        return MechanismConfig(
            mode=self["mechanism.mode"],
            participation=self["mechanism.participation"],
            weighting=self["mechanism.weighting"],
            ranking=self["mechanism.ranking"],
            threads=self["mechanism.threads"],
        )

    @property
    def size_distribution(self):
        kind = self["utility.population.kind"]
        if kind == SizeKind.uniform:
            return SizeDistribution.uniform(self["utility.population.d_max"])
        elif kind == SizeKind.pareto:
            return SizeDistribution.pareto(
                self["utility.population.shape"], self["utility.population.scale"]
            )
        elif kind == SizeKind.exponential:
            return SizeDistribution.exponential(self["utility.population.rate"])
        sizes = self["utility.population.sizes"]
        if sizes is None:
            raise ConfigError("utility.population.sizes", "required for an explicit population")
        return SizeDistribution.explicit(sizes)

    @property
    def utility_params(self):
        return UtilityParams(
            gamma=self["utility.gamma"],
            alpha=self["utility.alpha"],
            performance=PerformanceModel(
                self["utility.performance.theta"],
                self["utility.performance.beta"],
                self["utility.performance.degeneration"],
            ),
            cost=CostModel(self["utility.cost.linear"], self["utility.cost.quadratic"]),
            population=PopulationModel(self["utility.population.n"], self.size_distribution),
            cap=self["utility.cap"],
        )

    @property
    def game_caps(self):
        caps = self["game.caps"]
        if caps is None:
            caps = self["task.sizes"]
        return dict(enumerate(caps))

    def game_config(self):
        weights = self["game.cost_weights"]
        caps = self.game_caps
        if weights is not None and len(weights) != len(caps):
            raise ConfigError("game.cost_weights", f"needs one weight per client ({len(caps)})")
        return GameConfig(
            evaluation=self["game.evaluation"],
            mechanism=self["game.mechanism"],
            step=self["game.step"],
            max_iterations=self["game.max_iterations"],
            seed=self["seed"],
            tolerance=self["game.tolerance"],
            cost_weights={} if weights is None else dict(enumerate(weights)),
            short_rounds=self["game.short_rounds"],
            task=self.task_spec,
            train=self.train_config,
            threads=self["mechanism.threads"],
        )

    def game_profile(self):
        """The start profile of the game."""
        caps = self.game_caps
        if not caps:
            raise ConfigError("game.caps", "needs at least one client")
        start = self["game.start"]
        if start == "zero":
            return StrategyProfile.all_zero(caps)
        elif start == "random":
            return StrategyProfile.random(caps, self["seed"])
        return StrategyProfile.all_caps(caps)

    # %% Text

    def to_text(self, runtime=True):
        """Get the canonical text of this config; parsing it gives an equal config.

        With ``runtime=False`` the output directory and thread count are
        left out, so the text only depends on what determines the results.
        """
        lines = []
        for key, value in self.values.items():
            if not runtime and key in RUNTIME_KEYS:
                continue
            if value is not None:
                lines.append(f"{key} = {_format_value(value)}")
        return "\n".join(lines) + "\n"


def parse_config(text):
    """Parse config text into an ExperimentConfig."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(key or f"line {lineno}", "expected 'key = value'")
        if key not in CONFIG_KEYS:
            raise ConfigError(key, "unknown key")
        if key in values:
            raise ConfigError(key, "duplicate key")
        values[key] = _parse_value(key, value)
    return ExperimentConfig(values)


def load_config(path):
    """Read and parse a config file. Raises OSError if it cannot be read."""
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())
