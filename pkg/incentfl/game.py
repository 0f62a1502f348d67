"""
The contribution game between clients: best responses on a grid of
contribution sizes, best-response dynamics, Nash verification and the
comparison of optimal contributions under both mechanisms.

Client performance is evaluated either analytically, with the exact
finite-population data total of the lower-ranked clients, or empirically,
by running a short simulation of the mechanism.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional

import numpy as np

from ._coreutils import str_to_enum_value
from .enums import EvaluationMode, MechanismMode
from .learner import TrainConfig
from .mechanism import ClientRecord, MechanismConfig, run_training
from .synthdata import TaskSpec, generate_task
from .utility import cost, perf


__all__ = [
    "StrategyProfile",
    "GameConfig",
    "BestResponseResult",
    "client_utility",
    "best_response",
    "best_response_dynamics",
    "verify_nash",
    "compare_mechanisms",
    "check_all_caps_condition",
    "game_report",
]

logger = logging.getLogger("incentfl")


@dataclass(frozen=True)
class StrategyProfile:
    """The contribution ``d_i`` and the cap ``d^t_i`` of every client."""

    contributions: Dict[int, int]
    caps: Dict[int, int]

    def __post_init__(self):
        if set(self.contributions) != set(self.caps):
            raise ValueError("Profile contributions and caps must cover the same clients.")
        if not self.caps:
            raise ValueError("A profile needs at least one client.")
        for i, d in self.contributions.items():
            if d != int(d) or self.caps[i] != int(self.caps[i]):
                raise TypeError(f"Client {i}: contributions and caps must be integers.")
            if not 0 <= d <= self.caps[i]:
                raise ValueError(f"Client {i}: contribution {d} outside [0, {self.caps[i]}].")

    @classmethod
    def all_caps(cls, caps):
        caps = {int(i): int(c) for i, c in caps.items()}
        return cls(dict(caps), caps)

    @classmethod
    def all_zero(cls, caps):
        caps = {int(i): int(c) for i, c in caps.items()}
        return cls(dict.fromkeys(caps, 0), caps)

    @classmethod
    def random(cls, caps, seed):
        """A profile with contributions drawn uniformly from ``[0, cap]``."""
        rng = np.random.default_rng(int(seed))
        caps = {int(i): int(c) for i, c in caps.items()}
        return cls({i: int(rng.integers(0, caps[i] + 1)) for i in sorted(caps)}, caps)

    @property
    def ids(self):
        return sorted(self.caps)

    def with_contribution(self, i, d):
        contributions = dict(self.contributions)
        contributions[i] = int(d)
        return StrategyProfile(contributions, self.caps)

    def key(self):
        return tuple(self.contributions[i] for i in self.ids)


class EmpiricalEvaluator:
    """Measures a client's performance as the validation accuracy of the
    model the mechanism distributes to it after a short simulation.

    Local data is generated once for the caps; a client contributing
    ``d_i`` points uses the first ``d_i`` of them. Results are cached per
    profile and mechanism.
    """

    def __init__(self, caps, task, train, rounds):
        self._ids = sorted(caps)
        spec = TaskSpec(
            num_classes=task.num_classes,
            feature_dim=task.feature_dim,
            class_separation=task.class_separation,
            samples_per_client=[caps[i] for i in self._ids],
            validation_size=task.validation_size,
            seed=task.seed,
        )
        local, self.validation = generate_task(spec)
        self.local = dict(zip(self._ids, local))
        self.train = train
        self.rounds = rounds
        self._cache = {}

    def accuracies(self, profile, mode):
        key = (mode, profile.key())
        result = self._cache.get(key, None)
        if result is None:
            clients = [
                ClientRecord(i, self.local[i].take(d), d, max(1, profile.caps[i]))
                for i, d in sorted(profile.contributions.items())
            ]
            training = run_training(
                clients, self.validation, self.rounds, self.train, MechanismConfig(mode=mode)
            )
            result = training.logs[-1].distributed_accuracies
            self._cache[key] = result
        return result


@dataclass
class GameConfig:
    """Settings of the contribution game.

    Attributes:
        evaluation: analytic or empirical performance.
        mechanism: the mechanism the clients play under.
        step: grid step of the contribution sizes a client considers.
        max_iterations: maximum number of best-response passes.
        seed: seed for random start profiles.
        tolerance: utility gain below which a deviation does not count.
        cost_weights: per-client multiplier on the cost, default 1.
        short_rounds: rounds per empirical evaluation.
        task, train: the synthetic task and training settings for the
            empirical evaluation.
        threads: number of threads to evaluate candidate contributions.
    """

    evaluation: str = EvaluationMode.analytic
    mechanism: str = MechanismMode.incentive
    step: int = 1
    max_iterations: int = 100
    seed: int = 0
    tolerance: float = 1e-9
    cost_weights: Dict[int, float] = field(default_factory=dict)
    short_rounds: int = 5
    task: Optional[TaskSpec] = None
    train: TrainConfig = field(default_factory=TrainConfig)
    threads: int = 1
    _evaluator: Optional[EmpiricalEvaluator] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.evaluation = str_to_enum_value(EvaluationMode, self.evaluation)
        self.mechanism = str_to_enum_value(MechanismMode, self.mechanism)
        if self.step < 1:
            raise ValueError("Game grid step must be at least 1.")
        if self.max_iterations < 1:
            raise ValueError("Game max_iterations must be at least 1.")
        if self.short_rounds < 1:
            raise ValueError("Game short_rounds must be at least 1.")
        if self.threads < 1:
            raise ValueError("Game threads must be at least 1.")
        if any(not w >= 0 for w in self.cost_weights.values()):
            raise ValueError("Game cost weights must be non-negative.")

    def cost_weight(self, i):
        return float(self.cost_weights.get(i, 1.0))

    def evaluator(self, profile):
        if self._evaluator is None:
            if self.task is None:
                raise ValueError("Empirical evaluation needs a task.")
            self._evaluator = EmpiricalEvaluator(
                profile.caps, self.task, self.train, self.short_rounds
            )
        return self._evaluator


class BestResponseResult(NamedTuple):
    responder: int
    best: int
    utility: float  #: utility at the best response
    gain: float  #: utility gain over the current contribution
    curve: Dict[int, float]  #: contribution -> utility


def lower_ranked_total(i, profile, mode=MechanismMode.incentive):
    """The data total client ``i`` is aggregated with, excluding its own.

    Under the incentive mechanism this sums the contributions that precede
    ``(d_i, i)`` in (size, id) order; under vanilla FL, all others.
    """
    contributions = profile.contributions
    d_i = contributions[i]
    if mode == MechanismMode.vanilla:
        return sum(d for j, d in contributions.items() if j != i)
    return sum(d for j, d in contributions.items() if j != i and (d, j) < (d_i, i))


def _utility(i, profile, cfg, params, mode):
    d_i = profile.contributions[i]
    penalty = params.alpha * cfg.cost_weight(i) * cost(d_i, params.cost)
    if cfg.evaluation == EvaluationMode.empirical:
        p = cfg.evaluator(profile).accuracies(profile, mode)[i]
    else:
        p = perf(d_i + lower_ranked_total(i, profile, mode), params.performance)
    return params.gamma * p - penalty


def client_utility(i, profile, cfg, params):
    """The utility ``gamma * p_i - alpha * w_i * c(d_i)`` of client ``i`` in the profile."""
    if i not in profile.caps:
        raise ValueError(f"Client {i} is not in the profile.")
    return _utility(i, profile, cfg, params, cfg.mechanism)


def _grid(cap, step):
    grid = list(range(0, cap + 1, step))
    if grid[-1] != cap:
        grid.append(cap)
    return grid


def _best_response(i, profile, cfg, params, mode):
    grid = _grid(profile.caps[i], cfg.step)
    candidates = [profile.with_contribution(i, d) for d in grid]

    def evaluate(candidate):
        return _utility(i, candidate, cfg, params, mode)

    if cfg.evaluation == EvaluationMode.empirical and cfg.threads > 1:
        cfg.evaluator(profile)  # create before the threads need it
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            values = list(pool.map(evaluate, candidates))
    else:
        values = [evaluate(c) for c in candidates]

    curve = dict(zip(grid, values))
    best, best_u = grid[0], values[0]
    for d, u in zip(grid, values):
        if u > best_u:  # strict, so the leftmost maximizer wins
            best, best_u = d, u
    current = curve.get(profile.contributions[i], None)
    if current is None:
        current = _utility(i, profile, cfg, params, mode)
    return BestResponseResult(i, best, best_u, best_u - current, curve)


def best_response(i, profile, cfg, params):
    """Get client ``i``'s best contribution on the grid ``{0, step, ..., cap}``,
    holding the other contributions fixed.
    """
    if i not in profile.caps:
        raise ValueError(f"Client {i} is not in the profile.")
    return _best_response(i, profile, cfg, params, cfg.mechanism)


class DynamicsResult(NamedTuple):
    initial: StrategyProfile
    trajectory: List[StrategyProfile]  #: the profile after each pass
    converged: bool

    @property
    def final(self):
        return self.trajectory[-1] if self.trajectory else self.initial


def best_response_dynamics(initial, cfg, params):
    """Let clients switch to their best response in turn, by ascending id.

    A client only switches when that gains more than ``cfg.tolerance``.
    Stops after a pass without changes, or after ``cfg.max_iterations``
    passes. The fixed point reached need not be the only equilibrium.
    """
    profile = initial
    trajectory = []
    for iteration in range(1, cfg.max_iterations + 1):
        changed = 0
        for i in profile.ids:
            response = best_response(i, profile, cfg, params)
            if response.gain > cfg.tolerance and response.best != profile.contributions[i]:
                profile = profile.with_contribution(i, response.best)
                changed += 1
        trajectory.append(profile)
        logger.info(f"Best-response pass {iteration}: {changed} clients changed their contribution.")
        if not changed:
            return DynamicsResult(initial, trajectory, True)
    logger.warning(f"Best-response dynamics did not converge in {cfg.max_iterations} passes.")
    return DynamicsResult(initial, trajectory, False)


class NashVerdict(NamedTuple):
    is_nash: bool
    worst_violator: int
    worst_gain: float
    responses: Dict[int, BestResponseResult]


def verify_nash(profile, cfg, params):
    """Check that no client gains more than ``cfg.tolerance`` by deviating."""
    responses = {i: best_response(i, profile, cfg, params) for i in profile.ids}
    worst = max(profile.ids, key=lambda i: (responses[i].gain, -i))
    gain = responses[worst].gain
    return NashVerdict(bool(gain <= cfg.tolerance), worst, float(gain), responses)


class MechanismComparison(NamedTuple):
    rows: Dict[int, dict]
    all_hold: bool


def compare_mechanisms(params, cfg, profile):
    """Compare each client's best response under both mechanisms, against
    the same opponent profile. The incentive best response should be at
    least the vanilla one, up to one grid step.
    """
    rows = {}
    for i in profile.ids:
        incentive = _best_response(i, profile, cfg, params, MechanismMode.incentive)
        vanilla = _best_response(i, profile, cfg, params, MechanismMode.vanilla)
        rows[i] = {
            "cap": profile.caps[i],
            "d_opt": incentive.best,
            "d_opt_star": vanilla.best,
            "holds": incentive.best >= vanilla.best - cfg.step,
        }
    return MechanismComparison(rows, all(row["holds"] for row in rows.values()))


def check_all_caps_condition(profile, cfg, params):
    """Check a sufficient condition for the all-caps profile to be a Nash
    equilibrium in the analytic game.

    A client deviating below its cap can only lose lower-ranked data, so
    its utility is bounded by the one with its current data total frozen.
    All-caps is an equilibrium when, for every client, that bounded
    utility is maximal at the cap on the contribution grid.
    """
    caps = StrategyProfile.all_caps(profile.caps)
    for i in caps.ids:
        frozen = lower_ranked_total(i, caps, cfg.mechanism)
        grid = np.array(_grid(caps.caps[i], cfg.step), dtype=np.float64)
        values = params.gamma * perf(grid + frozen, params.performance)
        values = values - params.alpha * cfg.cost_weight(i) * cost(grid, params.cost)
        if np.max(values) > values[-1] + cfg.tolerance:
            return False
    return True


def game_report(dynamics, verdict, comparison):
    """Collect the results of a game run into a JSON-ready dict."""

    def profile_dict(profile):
        return {str(i): d for i, d in sorted(profile.contributions.items())}

    return {
        "initial": profile_dict(dynamics.initial),
        "trajectory": [profile_dict(p) for p in dynamics.trajectory],
        "converged": dynamics.converged,
        "passes": len(dynamics.trajectory),
        "nash": {
            "is_nash": verdict.is_nash,
            "worst_violator": verdict.worst_violator,
            "worst_gain": verdict.worst_gain,
        },
        "response_curves": {
            str(i): [[d, u] for d, u in sorted(r.curve.items())]
            for i, r in sorted(verdict.responses.items())
        },
        "mechanism_comparison": {
            "all_hold": comparison.all_hold,
            "clients": {str(i): row for i, row in sorted(comparison.rows.items())},
        },
    }
