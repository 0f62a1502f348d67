"""
The built-in property suite, run by ``incentfl verify``.

Each check is a function registered under a name; it returns a
``(passed, detail)`` tuple. Checks call into the package modules through
their module attributes, so that a patched function is what gets checked.
"""

import sys
import logging
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from . import learner, mechanism, utility
from ._coreutils import DegenerateError
from .enums import MechanismMode, SizeKind
from .game import GameConfig, StrategyProfile, check_all_caps_condition, verify_nash
from .synthdata import Dataset, generate_task, sample_sizes, standard_task_spec


__all__ = ["CheckResult", "CapSweep", "cap_optimality_sweep", "checks", "run_checks"]

logger = logging.getLogger("incentfl")

checks = {}  # name -> func


def check(name):
    """Decorator to register a check function under a name."""

    def wrapper(func):
        checks[name] = func
        return func

    return wrapper


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str

    def __str__(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


# %% Shared fixtures

SWEEP_SIZE = 200
SWEEP_SEED = 1234


@lru_cache(maxsize=None)
def _standard_run(seed=0, rounds=20):
    local, validation = generate_task(standard_task_spec(seed))
    clients = mechanism.make_clients(local)
    train_cfg = learner.standard_train_config(seed)
    return mechanism.run_training(clients, validation, rounds, train_cfg, mechanism.MechanismConfig())


def _sweep(n=SWEEP_SIZE, seed=SWEEP_SEED, cost_scale=1.0):
    rng = np.random.default_rng(seed)
    return [utility.sample_params(rng, cost_scale=cost_scale) for _ in range(n)]


# %% The checks


@check("nestedness")
def check_nestedness():
    result = _standard_run()
    violations = [v for log in result.logs for v in mechanism.check_nestedness(log)]
    if violations:
        return False, f"{len(violations)} violations, first: {violations[0]}"
    return True, f"{len(result.logs)} rounds of 10 clients, no violations"


@check("incentive_ordering")
def check_incentive_ordering():
    rho = mechanism.contribution_accuracy_correlation(_standard_run().logs[-1])
    return bool(rho >= 0.8), f"Spearman(d_i, final accuracy) = {rho:.3f}"


@check("mechanism_exactness")
def check_mechanism_exactness():
    rng = np.random.default_rng(7)
    models = {k: rng.standard_normal(42) for k in range(6)}
    rank = mechanism.rank_by_accuracy({k: float(rng.uniform()) for k in models})
    distributed = mechanism.incentive_aggregate(models, rank)
    bottom, top = rank.order[0], rank.order[-1]
    global_mean = mechanism.aggregate_unweighted(list(models.values()))
    ok = [
        np.array_equal(distributed[bottom], models[bottom]),
        np.array_equal(distributed[top], global_mean),
        mechanism.aggregate_weighted([np.array([0.0]), np.array([4.0])], [1, 3])[0] == 3.0,
    ]
    return all(ok), "bottom = upload, top = global mean, weighted([0,4],[1,3]) = 3"


@check("gradient_oracle")
def check_gradient_oracle():
    rng = np.random.default_rng(11)
    h, worst = 1e-5, 0.0
    for _ in range(50):
        num_classes, feature_dim = int(rng.integers(2, 5)), int(rng.integers(1, 6))
        n = int(rng.integers(1, 9))
        batch = Dataset(
            rng.standard_normal((n, feature_dim)),
            rng.integers(0, num_classes, n),
            num_classes,
            feature_dim,
        )
        model = rng.standard_normal((feature_dim + 1) * num_classes)
        _, grad = learner.loss_and_gradient(model, batch)
        for j in range(len(model)):
            step = np.zeros_like(model)
            step[j] = h
            up, _ = learner.loss_and_gradient(model + step, batch)
            down, _ = learner.loss_and_gradient(model - step, batch)
            worst = max(worst, abs((up - down) / (2 * h) - grad[j]))
    return bool(worst <= 1e-4), f"max abs gradient error {worst:.2e} over 50 model/batch pairs"


def _term_scales(d, params, mode, d_fixed):
    # Magnitudes of the terms that make up the first and second derivative
    pm, pop = params.performance, params.population
    if mode == MechanismMode.incentive:
        D = utility.d_others(d, pop)
        D1, D2, _ = utility.d_others_deriv(d, pop)
    else:
        D, D1, D2 = d_fixed, 0.0, 0.0
    p1, p2 = utility.perf_deriv(d + D, pm), utility.perf_second_deriv(d + D, pm)
    g, a = params.gamma, params.alpha
    first = max(abs(g * p1 * (1 + D1)), abs(a * utility.cost_deriv(d, params.cost)))
    second = max(
        abs(g * p2 * (1 + D1) ** 2),
        abs(g * p1 * D2),
        abs(a * utility.cost_second_deriv(d, params.cost)),
    )
    return first, second


def _derivative_errors(params, rng, num=100):
    # Errors of the analytic derivatives against central differences,
    # relative to the largest term of the derivative
    cap = params.cap
    h1, h2 = cap * 1e-6, cap * 1e-4
    first_err = second_err = 0.0
    for mode in (MechanismMode.incentive, MechanismMode.vanilla):
        for d in rng.uniform(0.05 * cap, 0.95 * cap, num):
            if mode == MechanismMode.incentive:
                d_fixed = None
                u = lambda x: utility.utility_incentive(x, params)
            else:
                d_fixed = utility.d_others(d, params.population)
                u = lambda x, c=d_fixed: utility.utility_vanilla(x, params, c)
            du = utility.utility_deriv(d, params, mode, d_fixed)
            d2u = utility.utility_second_deriv(d, params, mode, d_fixed)
            fd1 = (u(d + h1) - u(d - h1)) / (2 * h1)
            fd2 = (u(d + h2) - 2 * u(d) + u(d - h2)) / h2**2
            scale1, scale2 = _term_scales(d, params, mode, d_fixed)
            first_err = max(first_err, abs(du - fd1) / max(abs(fd1), scale1))
            second_err = max(second_err, abs(d2u - fd2) / max(abs(fd2), scale2))
    return first_err, second_err


def derivative_params():
    """Smooth parameterizations, away from kinks, for the derivative oracle."""
    base = dict(gamma=1.5, alpha=0.8, cost=utility.CostModel(1e-5, 2e-8))
    return [
        utility.UtilityParams(
            performance=utility.PerformanceModel(0.5, -0.5),
            population=utility.PopulationModel(8, utility.SizeDistribution.uniform(400)),
            cap=300.0,
            **base,
        ),
        utility.UtilityParams(
            performance=utility.PerformanceModel(1.0, -1.0),
            population=utility.PopulationModel(5, utility.SizeDistribution.exponential(0.01)),
            cap=250.0,
            **base,
        ),
    ]


@check("derivative_oracle")
def check_derivative_oracle():
    rng = np.random.default_rng(13)
    worst1 = worst2 = 0.0
    for params in derivative_params():
        e1, e2 = _derivative_errors(params, rng)
        worst1, worst2 = max(worst1, e1), max(worst2, e2)
    passed = worst1 <= 1e-5 and worst2 <= 1e-3
    return passed, f"max rel error first {worst1:.2e}, second {worst2:.2e}"


@check("optimum_ordering")
def check_optimum_ordering():
    failures = 0
    for params in _sweep():
        if not utility.compare_optima(params).holds:
            failures += 1
    n = SWEEP_SIZE
    return failures == 0, f"incentive optimum >= vanilla optimum in {n - failures}/{n} draws"


def _finite_game(params, seed):
    # A finite game whose caps are drawn from the population
    n = min(params.population.n, 6)
    sizes = sample_sizes(params.population.dist, n, seed)
    caps = {i: max(1, min(int(s), 2000)) for i, s in enumerate(sizes)}
    cfg = GameConfig(step=max(1, max(caps.values()) // 200))
    return StrategyProfile.all_caps(caps), cfg


class CapSweep(NamedTuple):
    qualifying: int  #: draws where the conditions for an optimum at the cap hold
    off_cap: int  #: qualifying draws whose optimum is not at the cap
    games: int  #: finite games that were checked for a Nash equilibrium
    not_nash: int  #: checked games where all-caps is not a Nash equilibrium
    unchecked: int  #: finite games without the all-caps condition, not checked

    @property
    def failures(self):
        return self.off_cap + self.not_nash


def cap_optimality_sweep():
    """Sweep utility params for draws that should be optimal at the cap.

    For every qualifying draw the optimal contribution is compared to the
    cap. A finite game built from the draw is checked for a Nash equilibrium
    only when it satisfies the finite all-caps condition; the continuous
    population conditions do not imply that condition for a small game.
    """
    qualifying = off_cap = games = not_nash = unchecked = 0
    # The regular sweep, plus a cheap-cost one where the conditions hold more often
    sweep = _sweep() + _sweep(seed=SWEEP_SEED + 2, cost_scale=1e-3)
    for k, params in enumerate(sweep):
        try:
            eq_large = utility.check_eq_large(params)
        except DegenerateError:
            continue
        concavity = utility.check_concavity(params)
        zero_utility = utility.utility_incentive(0.0, params)
        if not (eq_large.holds and concavity.grid_concave):
            continue
        if utility.utility_incentive(params.cap, params) <= zero_utility:
            continue
        qualifying += 1
        d_opt = utility.optimal_contribution(params, MechanismMode.incentive)
        if abs(d_opt - params.cap) > params.cap / 10_000:
            off_cap += 1
            continue
        profile, cfg = _finite_game(params, SWEEP_SEED + k)
        if params.population.dist.kind != SizeKind.explicit and check_all_caps_condition(
            profile, cfg, params
        ):
            games += 1
            if not verify_nash(profile, cfg, params).is_nash:
                not_nash += 1
        else:
            unchecked += 1
    return CapSweep(qualifying, off_cap, games, not_nash, unchecked)


@check("cap_optimality")
def check_cap_optimality():
    sweep = cap_optimality_sweep()
    detail = (
        f"{sweep.qualifying - sweep.failures}/{sweep.qualifying} qualifying draws optimal "
        f"at the cap ({sweep.games} games Nash-checked, {sweep.unchecked} games without "
        f"the finite all-caps condition not checked)"
    )
    return sweep.qualifying > 0 and sweep.failures == 0, detail

@check("quadrature_oracle")
def check_quadrature_oracle():
    worst = 0.0
    for params in _sweep(20, SWEEP_SEED + 1):
        pop = params.population
        for d in np.linspace(0, params.cap, 7):
            exact, numeric = utility.d_others(d, pop), utility.d_others_numeric(d, pop)
            worst = max(worst, abs(exact - numeric) / max(abs(numeric), 1.0))
    return bool(worst <= 1e-8), f"max rel error of the closed forms {worst:.2e}"


def run_checks(names=None, file=None):
    """Run the named checks (default all), printing one line per check."""
    file = file or sys.stdout
    results = []
    for name in names or list(checks):
        try:
            passed, detail = checks[name]()
        except Exception as err:
            passed, detail = False, f"raised {err.__class__.__name__}: {err}"
        result = CheckResult(name, bool(passed), detail)
        logger.info(str(result))
        print(result, file=file)
        results.append(result)
    return results
