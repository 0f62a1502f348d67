"""
The analytic layer: performance and cost functions, the population model
for the data total a client is aggregated with, the utility of a client
under both mechanisms, its derivatives, and the checks on them.

All functions accept scalars or numpy arrays for the contribution ``d``,
and return a float for scalar input.

The utility of a client contributing ``d`` points is::

    u(d) = gamma * p(d + D_others) - alpha * c(d)

In the vanilla mechanism ``D_others`` is a constant. In the incentive
mechanism it is the expected data total of the lower-ranked clients, a
non-decreasing function of ``d``.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple

import numpy as np
from scipy import integrate, special

from ._coreutils import DegenerateError, str_to_enum_value
from .enums import MechanismMode, SizeKind
from .synthdata import SizeDistribution


__all__ = [
    "PerformanceModel",
    "CostModel",
    "PopulationModel",
    "UtilityParams",
    "perf",
    "perf_deriv",
    "perf_second_deriv",
    "cost",
    "cost_deriv",
    "cost_second_deriv",
    "d_others",
    "d_others_numeric",
    "d_others_deriv",
    "utility_vanilla",
    "utility_incentive",
    "utility_deriv",
    "utility_second_deriv",
    "check_eq_large",
    "check_concavity",
    "golden_section_max",
    "optimal_contribution",
    "compare_optima",
    "utility_curve",
    "sample_params",
    "UTILITY_CURVE_HEADER",
]

logger = logging.getLogger("incentfl")

UTILITY_CURVE_HEADER = ["d", "u_vanilla", "u_incentive", "du_incentive", "D_others"]


@dataclass(frozen=True)
class PerformanceModel:
    """Power-law performance ``p(D) = gamma_f * max(0, 1 - theta * D**beta)``, with ``p(0) = 0``.

    ``degeneration`` (gamma_f) is the quality factor of federated
    aggregation compared to training on the pooled data.
    """

    theta: float = 1.0
    beta: float = -0.5
    degeneration: float = 1.0

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("Performance theta must be positive.")
        if not self.beta < 0:
            raise ValueError("Performance beta must be negative.")
        if not 0 < self.degeneration <= 1:
            raise ValueError("Performance degeneration factor must be in (0, 1].")

    @property
    def saturation_point(self):
        """The data total below which performance is clamped to zero."""
        return self.theta ** (-1.0 / self.beta)


@dataclass(frozen=True)
class CostModel:
    """Participation cost ``c(d) = linear * d + quadratic * d**2``."""

    linear: float = 0.0
    quadratic: float = 0.0

    def __post_init__(self):
        if not (self.linear >= 0 and self.quadratic >= 0):
            raise ValueError("Cost coefficients must be non-negative.")


@dataclass(frozen=True)
class PopulationModel:
    """The population of ``n`` clients whose sizes follow ``dist``.

    For an explicit distribution, ``dist.sizes`` lists the sizes of the
    ``n - 1`` other clients.
    """

    n: int = 10
    dist: SizeDistribution = field(default_factory=lambda: SizeDistribution.uniform(100))

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("A population needs at least 2 clients.")
        if self.dist.kind == SizeKind.explicit and len(self.dist.sizes) != self.n - 1:
            raise ValueError("An explicit population lists the sizes of the n - 1 other clients.")


@dataclass(frozen=True)
class UtilityParams:
    """Utility weights (gamma_u for performance, alpha for cost), the
    performance, cost and population models, and the cap ``d^t``.
    """

    gamma: float = 1.0
    alpha: float = 1.0
    performance: PerformanceModel = field(default_factory=PerformanceModel)
    cost: CostModel = field(default_factory=CostModel)
    population: PopulationModel = field(default_factory=PopulationModel)
    cap: float = 100.0

    def __post_init__(self):
        for name in ("gamma", "alpha", "cap"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"Utility {name} must be finite.")
        if self.gamma < 0 or self.alpha < 0:
            raise ValueError("Utility weights must be non-negative.")
        if not self.cap > 0:
            raise ValueError("Utility cap must be positive.")


def _result(value, like):
    return float(value) if np.ndim(like) == 0 else value


def _as_array(d):
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("Data amounts must be non-negative.")
    return d


# ===== Performance and cost


def _positive_region(D, m):
    # Where 1 - theta * D**beta > 0
    return D > m.saturation_point


def perf(D, m):
    """Performance of a model trained (federated) on a data total ``D``."""
    D0 = _as_array(D)
    safe = np.where(D0 > 0, D0, 1.0)
    value = m.degeneration * (1.0 - m.theta * safe**m.beta)
    value = np.where(_positive_region(D0, m), value, 0.0)
    return _result(value, D)


def perf_deriv(D, m):
    """First derivative of ``perf``; zero in the clamped region."""
    D0 = _as_array(D)
    safe = np.where(D0 > 0, D0, 1.0)
    value = m.degeneration * (-m.theta * m.beta) * safe ** (m.beta - 1)
    return _result(np.where(_positive_region(D0, m), value, 0.0), D)


def perf_second_deriv(D, m):
    """Second derivative of ``perf``; non-positive everywhere."""
    D0 = _as_array(D)
    safe = np.where(D0 > 0, D0, 1.0)
    value = m.degeneration * (-m.theta * m.beta * (m.beta - 1)) * safe ** (m.beta - 2)
    return _result(np.where(_positive_region(D0, m), value, 0.0), D)


def cost(d, m):
    """Participation cost of contributing ``d`` points."""
    d0 = _as_array(d)
    return _result(m.linear * d0 + m.quadratic * d0**2, d)


def cost_deriv(d, m):
    d0 = _as_array(d)
    return _result(m.linear + 2 * m.quadratic * d0, d)


def cost_second_deriv(d, m):
    d0 = _as_array(d)
    return _result(np.full_like(d0, 2 * m.quadratic), d)


# ===== The population model


def _density(x, dist):
    x = np.asarray(x, dtype=np.float64)
    if dist.kind == SizeKind.uniform:
        return np.where((x >= 0) & (x <= dist.d_max), 1.0 / dist.d_max, 0.0)
    elif dist.kind == SizeKind.pareto:
        a, xm = dist.shape, dist.scale
        safe = np.where(x >= xm, x, xm)
        return np.where(x >= xm, a * xm**a / safe ** (a + 1), 0.0)
    elif dist.kind == SizeKind.exponential:
        with np.errstate(under="ignore"):
            return np.where(x >= 0, dist.rate * np.exp(-dist.rate * np.maximum(x, 0)), 0.0)
    raise ValueError("An explicit population has no density.")


def _smoothed_step_total(d, pop):
    # The explicit step sum, with each step replaced by a narrow normal CDF
    sizes = np.asarray(pop.dist.sizes, dtype=np.float64)
    width = pop.dist.support_max() / 100.0
    d = np.asarray(d, dtype=np.float64)
    with np.errstate(under="ignore"):
        steps = special.ndtr((d[..., None] - sizes) / width)
    return steps @ sizes


def d_others(d, pop):
    """The data total of the clients ranked below a client contributing ``d``.

    Rank order equals size order, so for a continuous distribution with
    density ``f`` this is ``(n - 1) * integral_0^d x f(x) dx``. An explicit
    population gives the step sum of the other sizes that are ``<= d``.
    """
    d0 = _as_array(d)
    dist, m = pop.dist, pop.n - 1
    if dist.kind == SizeKind.uniform:
        clipped = np.minimum(d0, dist.d_max)
        value = m * clipped**2 / (2 * dist.d_max)
    elif dist.kind == SizeKind.pareto:
        a, xm = dist.shape, dist.scale
        safe = np.where(d0 >= xm, d0, xm)
        value = m * (a * xm / (a - 1)) * (1.0 - (xm / safe) ** (a - 1))
        value = np.where(d0 >= xm, value, 0.0)
    elif dist.kind == SizeKind.exponential:
        lam = dist.rate
        with np.errstate(under="ignore"):
            value = m * (1.0 - np.exp(-lam * d0) * (1.0 + lam * d0)) / lam
    else:
        sizes = np.asarray(dist.sizes, dtype=np.float64)
        value = (sizes <= d0[..., None]) @ sizes
    return _result(value, d)


def d_others_numeric(d, pop):
    """``d_others`` by numeric quadrature of the density. Used as an oracle."""
    d = float(d)
    dist = pop.dist
    if dist.kind == SizeKind.explicit:
        return d_others(d, pop)
    lower = dist.scale if dist.kind == SizeKind.pareto else 0.0
    if d <= lower:
        return 0.0
    upper = min(d, dist.d_max) if dist.kind == SizeKind.uniform else d
    value, _ = integrate.quad(
        lambda x: x * float(_density(x, dist)), lower, upper, epsabs=1e-12, epsrel=1e-12, limit=200
    )
    return (pop.n - 1) * value


class DerivativePair(NamedTuple):
    first: float
    second: float
    one_sided: bool = False


def _discontinuities(pop):
    dist = pop.dist
    if dist.kind == SizeKind.uniform:
        return [dist.d_max]
    elif dist.kind == SizeKind.pareto:
        return [dist.scale]
    return []


def _d_others_derivs(d, pop):
    # Vectorized closed forms (finite differences for explicit populations).
    # At density jumps the left-hand value is used.
    d = np.asarray(d, dtype=np.float64)
    dist, m = pop.dist, pop.n - 1
    if dist.kind == SizeKind.uniform:
        inside = d <= dist.d_max
        first = np.where(inside, m * d / dist.d_max, 0.0)
        second = np.where(inside, m / dist.d_max, 0.0)
    elif dist.kind == SizeKind.pareto:
        a, xm = dist.shape, dist.scale
        inside = d > xm
        safe = np.where(inside, d, xm)
        first = np.where(inside, m * a * xm**a * safe ** (-a), 0.0)
        second = np.where(inside, -m * a * a * xm**a * safe ** (-a - 1), 0.0)
    elif dist.kind == SizeKind.exponential:
        lam = dist.rate
        with np.errstate(under="ignore"):
            decay = np.exp(-lam * d)
        first = m * lam * d * decay
        second = m * lam * decay * (1.0 - lam * d)
    else:
        h = dist.support_max() / 1e4
        d = np.maximum(d, h)
        lo, mid, hi = (_smoothed_step_total(x, pop) for x in (d - h, d, d + h))
        first = (hi - lo) / (2 * h)
        second = (hi - 2 * mid + lo) / h**2
    return first, second


def d_others_deriv(d, pop):
    """First and second derivative of ``d_others`` at an interior point ``d``.

    Returns a DerivativePair. At a discontinuity of the density the
    derivatives do not exist; a warning is logged and left-sided finite
    differences are returned, with ``one_sided`` set.
    """
    d = float(d)
    if d < 0:
        raise ValueError("Data amounts must be non-negative.")
    for point in _discontinuities(pop):
        if d > 0 and math.isclose(d, point, rel_tol=1e-12):
            logger.warning(
                f"d_others_deriv at a density discontinuity (d={d}); using one-sided differences."
            )
            h = max(d, 1.0) * 1e-4
            f0, f1, f2 = (d_others(x, pop) for x in (d, d - h, d - 2 * h))
            first = (3 * f0 - 4 * f1 + f2) / (2 * h)
            g0, g1, g2 = (float(_d_others_derivs(x, pop)[0]) for x in (d, d - h, d - 2 * h))
            second = (3 * g0 - 4 * g1 + g2) / (2 * h)
            return DerivativePair(first, second, True)
    first, second = _d_others_derivs(d, pop)
    return DerivativePair(float(first), float(second))


# ===== Utility


def _check_contribution(d, params):
    d0 = np.asarray(d, dtype=np.float64)
    if np.any(d0 < 0) or np.any(d0 > params.cap):
        raise ValueError(f"Contribution must be within [0, {params.cap}].")


def _mode(mode):
    return str_to_enum_value(MechanismMode, mode)


def _vanilla_default(params):
    # Without a given D_fixed, the vanilla global model holds everyone's expected data
    pop = params.population
    if pop.dist.kind == SizeKind.explicit:
        return float(sum(pop.dist.sizes))
    return (pop.n - 1) * pop.dist.mean()


def _utility(d, params, mode, D_fixed=None):
    d = np.asarray(d, dtype=np.float64)
    if mode == MechanismMode.incentive:
        D = d_others(d, params.population)
    else:
        D = _vanilla_default(params) if D_fixed is None else D_fixed
    return params.gamma * perf(d + D, params.performance) - params.alpha * cost(d, params.cost)


def utility_vanilla(d, params, D_fixed):
    """Utility under vanilla FL, where the others' data total ``D_fixed`` does not depend on ``d``."""
    _check_contribution(d, params)
    return _result(_utility(d, params, MechanismMode.vanilla, float(D_fixed)), d)


def utility_incentive(d, params):
    """Utility under the incentive mechanism, where ``D_others`` grows with ``d``."""
    _check_contribution(d, params)
    return _result(_utility(d, params, MechanismMode.incentive), d)


def _utility_derivs(d, params, mode, D_fixed=None):
    d = np.asarray(d, dtype=np.float64)
    g, a = params.gamma, params.alpha
    pm, cm = params.performance, params.cost
    if mode == MechanismMode.incentive:
        D = d_others(d, params.population)
        D1, D2 = _d_others_derivs(d, params.population)
        p1, p2 = perf_deriv(d + D, pm), perf_second_deriv(d + D, pm)
        first = g * p1 * (1.0 + D1) - a * cost_deriv(d, cm)
        second = g * p2 * (1.0 + D1) ** 2 + g * p1 * D2 - a * cost_second_deriv(d, cm)
    else:
        D = d_others(d, params.population) if D_fixed is None else D_fixed
        first = g * perf_deriv(d + D, pm) - a * cost_deriv(d, cm)
        second = g * perf_second_deriv(d + D, pm) - a * cost_second_deriv(d, cm)
    return first, second


def utility_deriv(d, params, mode, D_fixed=None):
    """Derivative of the utility with respect to ``d``.

    Incentive: ``gamma * p'(d + D) * (1 + D') - alpha * c'(d)``. Vanilla
    drops the ``D'`` term; ``D_fixed`` defaults to ``d_others(d)``, so both
    modes evaluate ``p'`` at the same point.
    """
    _check_contribution(d, params)
    return _result(_utility_derivs(d, params, _mode(mode), D_fixed)[0], d)


def utility_second_deriv(d, params, mode, D_fixed=None):
    """Second derivative of the utility with respect to ``d``."""
    _check_contribution(d, params)
    return _result(_utility_derivs(d, params, _mode(mode), D_fixed)[1], d)


# ===== Checks


class EqLargeCheck(NamedTuple):
    holds: bool
    lhs: float
    rhs: float


def check_eq_large(params):
    """Check whether ``D_others'`` is large enough at the cap to make the
    incentive utility increasing there::

        D'(d^t) > ((alpha / gamma) * c'(d^t) - p'(d^t + D(d^t))) / p'(d^t + D(d^t))

    Raises DegenerateError when ``p'`` vanishes at the cap (saturation).
    """
    cap = params.cap
    pop = params.population
    lhs = d_others_deriv(cap, pop).first
    p1 = perf_deriv(cap + d_others(cap, pop), params.performance)
    if p1 == 0 or params.gamma == 0:
        raise DegenerateError(f"Performance derivative vanishes at the cap d^t={cap}.")
    rhs = ((params.alpha / params.gamma) * cost_deriv(cap, params.cost) - p1) / p1
    return EqLargeCheck(bool(lhs > rhs), float(lhs), float(rhs))


class ConcavityReport(NamedTuple):
    concave: bool  #: the analytic second derivative is <= 0 on the grid
    max_second: float
    argmax_second: float
    kinks: List[float]  #: points where the first derivative jumps up
    active_from: float  #: first grid point where performance is positive

    @property
    def grid_concave(self):
        """Concave including kinks, i.e. the first derivative never increases."""
        return self.concave and not self.kinks


def check_concavity(params, mode=MechanismMode.incentive, D_fixed=None, num=2001):
    """Check concavity of the utility on a grid over the open interval (0, d^t).

    Only the part of the grid where performance is positive is checked.
    Below it the utility is the negated cost, and the clamp of the
    performance function makes a kink at the boundary.

    Besides the sign of the second derivative, the first derivative is
    scanned for upward jumps, which happen at density discontinuities.
    """
    mode = _mode(mode)
    grid = np.linspace(0.0, params.cap, num + 2)[1:-1]
    if mode == MechanismMode.incentive:
        D = d_others(grid, params.population)
    else:
        D = d_others(grid, params.population) if D_fixed is None else D_fixed
    grid = grid[_positive_region(grid + D, params.performance)]
    if not len(grid):
        return ConcavityReport(True, -math.inf, params.cap, [], params.cap)

    first, second = _utility_derivs(grid, params, mode, D_fixed)
    i = int(np.argmax(second))
    max_second = float(second[i])

    h = grid[1] - grid[0] if len(grid) > 1 else 0.0
    allowed = h * np.maximum(np.maximum(second[:-1], second[1:]), 0.0)
    slack = 1e-9 * (np.abs(first[:-1]) + np.abs(first[1:])) + 1e-15
    jumps = np.nonzero(np.diff(first) > allowed + slack)[0]
    kinks = [float(0.5 * (grid[j] + grid[j + 1])) for j in jumps]
    return ConcavityReport(
        bool(max_second <= 0.0), max_second, float(grid[i]), kinks, float(grid[0])
    )


PHI = (math.sqrt(5) - 1) / 2


def golden_section_max(f, lo, hi, tol=1e-9, max_iterations=200):
    """Maximize a unimodal function on ``[lo, hi]``. Returns ``(x, f(x))``."""
    x1 = hi - PHI * (hi - lo)
    x2 = lo + PHI * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(max_iterations):
        if abs(hi - lo) <= tol:
            break
        if f1 >= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - PHI * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + PHI * (hi - lo)
            f2 = f(x2)
    x = 0.5 * (lo + hi)
    return x, f(x)


def optimal_contribution(params, mode, D_fixed=None, num=10_001):
    """The contribution in ``[0, d^t]`` that maximizes the utility.

    A dense grid locates the best bracket, golden-section search refines
    it. The leftmost maximizer is returned on ties. For vanilla mode,
    ``D_fixed`` defaults to the expected data total of the other clients.
    """
    mode = _mode(mode)
    grid = np.linspace(0.0, params.cap, num)
    values = _utility(grid, params, mode, D_fixed)
    i = int(np.argmax(values))
    best, best_value = float(grid[i]), float(values[i])

    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, num - 1)]
    if hi > lo:
        x, fx = golden_section_max(
            lambda x: float(_utility(x, params, mode, D_fixed)), lo, hi, tol=1e-9 * params.cap
        )
        if fx > best_value:
            best = float(x)
    return best


class OptimaComparison(NamedTuple):
    d_opt: float  #: optimum under the incentive mechanism
    d_opt_star: float  #: optimum under vanilla FL
    d_fixed: float
    grid_step: float
    holds: bool  #: d_opt >= d_opt_star, up to one grid step


def compare_optima(params, num=10_001):
    """Compare the optimal contribution under both mechanisms.

    The vanilla utility is evaluated with ``D_fixed = d_others(d_opt)``,
    the others' data total the incentive optimum is aggregated with.
    """
    d_opt = optimal_contribution(params, MechanismMode.incentive, num=num)
    d_fixed = d_others(d_opt, params.population)
    d_opt_star = optimal_contribution(params, MechanismMode.vanilla, d_fixed, num=num)
    step = params.cap / (num - 1)
    return OptimaComparison(d_opt, d_opt_star, d_fixed, step, d_opt >= d_opt_star - step)


def utility_curve(params, num=201, D_fixed=None):
    """Rows ``(d, u_vanilla, u_incentive, du_incentive, D_others)`` over ``[0, d^t]``, for plotting."""
    grid = np.linspace(0.0, params.cap, num)
    if D_fixed is None:
        D_fixed = _vanilla_default(params)
    u_vanilla = _utility(grid, params, MechanismMode.vanilla, D_fixed)
    u_incentive = _utility(grid, params, MechanismMode.incentive)
    du_incentive, _ = _utility_derivs(grid, params, MechanismMode.incentive)
    D = d_others(grid, params.population)
    return [tuple(float(v) for v in row) for row in zip(grid, u_vanilla, u_incentive, du_incentive, D)]


def sample_params(rng, kinds=(SizeKind.uniform, SizeKind.pareto), cost_scale=1.0):
    """Draw a random admissible UtilityParams.

    theta in [0.5, 2], beta in {-0.5, -1}, linear cost in [0, 1e-2],
    quadratic cost in [0, 1e-5] (both times ``cost_scale``), gamma and alpha in [0.5, 2], and a
    uniform or Pareto population of 2 to 20 clients.
    """
    kind = kinds[int(rng.integers(len(kinds)))]
    n = int(rng.integers(2, 21))
    if kind == SizeKind.pareto:
        xm = float(rng.uniform(5, 50))
        dist = SizeDistribution.pareto(float(rng.uniform(1.5, 3.0)), xm)
        cap = float(rng.uniform(xm, 10 * xm))
    elif kind == SizeKind.exponential:
        dist = SizeDistribution.exponential(1.0 / float(rng.uniform(20, 200)))
        cap = float(rng.uniform(10, 3.0 / dist.rate))
    else:
        dist = SizeDistribution.uniform(float(rng.uniform(50, 1000)))
        cap = float(rng.uniform(0.2, 1.0) * dist.d_max)
    return UtilityParams(
        gamma=float(rng.uniform(0.5, 2.0)),
        alpha=float(rng.uniform(0.5, 2.0)),
        performance=PerformanceModel(float(rng.uniform(0.5, 2.0)), float(rng.choice([-0.5, -1.0]))),
        cost=CostModel(
            float(rng.uniform(0, 1e-2 * cost_scale)), float(rng.uniform(0, 1e-5 * cost_scale))
        ),
        population=PopulationModel(n, dist),
        cap=cap,
    )
