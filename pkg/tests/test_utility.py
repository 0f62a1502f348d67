import math

import numpy as np
from pytest import approx, raises

from incentfl import DegenerateError, SizeDistribution
from incentfl.utility import (
    UTILITY_CURVE_HEADER,
    CostModel,
    PerformanceModel,
    PopulationModel,
    UtilityParams,
    check_concavity,
    check_eq_large,
    compare_optima,
    cost,
    cost_deriv,
    d_others,
    d_others_deriv,
    d_others_numeric,
    golden_section_max,
    optimal_contribution,
    perf,
    perf_deriv,
    perf_second_deriv,
    sample_params,
    utility_curve,
    utility_deriv,
    utility_incentive,
    utility_second_deriv,
    utility_vanilla,
)
from testutils import run_tests, finite_difference


def pareto_params(**kwargs):
    """Pareto(a=2, x_m=10) population of 11 clients, linear cost, cap 100."""
    kwargs.setdefault("cost", CostModel(1e-4))
    return UtilityParams(
        population=PopulationModel(11, SizeDistribution.pareto(2, 10)), cap=100.0, **kwargs
    )


all_populations = [
    PopulationModel(11, SizeDistribution.uniform(100)),
    PopulationModel(11, SizeDistribution.pareto(2, 10)),
    PopulationModel(4, SizeDistribution.exponential(0.01)),
    PopulationModel(4, SizeDistribution.explicit([10, 20, 30])),
]


# %% Models


def test_model_validation():
    with raises(ValueError):
        PerformanceModel(theta=0)
    with raises(ValueError):
        PerformanceModel(beta=0)
    with raises(ValueError):
        PerformanceModel(degeneration=1.5)
    with raises(ValueError):
        CostModel(-1)
    with raises(ValueError):
        PopulationModel(1)
    with raises(ValueError):
        PopulationModel(3, SizeDistribution.explicit([1, 2, 3]))  # needs n - 1 sizes
    with raises(ValueError):
        UtilityParams(gamma=-1)
    with raises(ValueError):
        UtilityParams(alpha=math.nan)
    with raises(ValueError):
        UtilityParams(cap=0)


def test_perf():
    m = PerformanceModel(1.0, -0.5)
    assert perf(4, m) == 0.5
    assert perf(0, m) == 0.0
    assert perf(10, PerformanceModel(1.0, -1.0)) == approx(0.9)
    assert perf(4, PerformanceModel(1.0, -0.5, 0.8)) == approx(0.4)

    # Clamped below the saturation point
    m = PerformanceModel(4.0, -0.5)
    assert m.saturation_point == 16
    assert perf(10, m) == 0.0
    assert perf_deriv(10, m) == 0.0
    assert perf(64, m) == 0.5

    with raises(ValueError):
        perf(-1, m)


def test_perf_shape():
    m = PerformanceModel(1.5, -1.0)
    D = np.linspace(0, 500, 1001)
    values = perf(D, m)
    assert isinstance(values, np.ndarray)
    assert np.all(np.diff(values) >= 0)
    assert np.all((values >= 0) & (values < 1))
    assert np.all(perf_deriv(D, m) >= 0)
    assert np.all(perf_second_deriv(D, m) <= 0)
    assert isinstance(perf(3.0, m), float)


def test_perf_derivatives_match_finite_differences():
    m = PerformanceModel(1.0, -0.5)
    for D in [2.0, 10.0, 77.0, 1000.0]:
        assert perf_deriv(D, m) == approx(finite_difference(lambda x: perf(x, m), D, 1e-5), rel=1e-6)
        fd2 = finite_difference(lambda x: perf_deriv(x, m), D, 1e-5)
        assert perf_second_deriv(D, m) == approx(fd2, rel=1e-6)


def test_cost():
    assert cost(0, CostModel(1.0, 1.0)) == 0
    assert cost(7, CostModel(1.0, 0.0)) == 7
    assert cost(100, CostModel(0.0, 1e-4)) == approx(1.0)
    assert cost_deriv(100, CostModel(2.0, 1e-4)) == approx(2.02)


# %% Population model


def test_d_others_uniform():
    pop = PopulationModel(11, SizeDistribution.uniform(100))
    assert d_others(100, pop) == 500
    assert d_others(0, pop) == 0
    # Beyond the support everyone else is below
    assert d_others(1000, pop) == 500


def test_d_others_pareto():
    pop = PopulationModel(11, SizeDistribution.pareto(2, 10))
    assert d_others(50, pop) == approx(160)
    assert d_others(5, pop) == 0
    assert abs(d_others_numeric(50, pop) - 160) < 1e-6


def test_d_others_exponential():
    pop = PopulationModel(3, SizeDistribution.exponential(0.01))
    assert d_others(0, pop) == 0
    # All other clients' expected data
    assert d_others(1e5, pop) == approx(200, rel=1e-9)


def test_d_others_explicit():
    pop = PopulationModel(4, SizeDistribution.explicit([10, 20, 30]))
    assert d_others(5, pop) == 0
    assert d_others(10, pop) == 10
    assert d_others(25, pop) == 30
    assert d_others(30, pop) == 60
    assert d_others_numeric(25, pop) == 30


def test_d_others_is_monotone():
    d = np.linspace(0, 1000, 2001)
    for pop in all_populations:
        values = d_others(d, pop)
        assert values[0] == 0
        assert np.all(np.diff(values) >= -1e-12)


def test_d_others_matches_quadrature():
    for pop in all_populations[:3]:
        for d in [0.0, 3.0, 10.0, 55.5, 99.0, 150.0, 700.0]:
            exact = d_others(d, pop)
            assert d_others_numeric(d, pop) == approx(exact, rel=1e-8, abs=1e-8)


def test_d_others_deriv_pareto():
    pop = PopulationModel(11, SizeDistribution.pareto(2, 10))
    first, second, one_sided = d_others_deriv(20, pop)
    assert first == approx(5.0)
    assert second == approx(-0.5)
    assert not one_sided

    assert first == approx(finite_difference(lambda x: d_others(x, pop), 20.0, 1e-4), rel=1e-6)
    fd2 = finite_difference(lambda x: d_others_deriv(x, pop).first, 20.0, 1e-4)
    assert second == approx(fd2, rel=1e-6)


def test_d_others_deriv_uniform():
    pop = PopulationModel(11, SizeDistribution.uniform(100))
    first, second, _ = d_others_deriv(40, pop)
    assert first == approx(4.0)
    assert second == approx(0.1)
    # Constant density beyond the support
    assert d_others_deriv(150, pop)[:2] == (0.0, 0.0)


def test_d_others_deriv_is_non_negative():
    d = np.linspace(0.5, 999.5, 500)
    for pop in all_populations:
        for x in d:
            assert d_others_deriv(x, pop).first >= 0


def test_d_others_deriv_explicit():
    pop = PopulationModel(4, SizeDistribution.explicit([10, 20, 30]))
    # Flat between the steps, a bump at a step
    assert d_others_deriv(15, pop).first == approx(0, abs=1e-9)
    assert d_others_deriv(10, pop).first > 1


def test_d_others_deriv_at_discontinuity(caplog):
    pop = PopulationModel(11, SizeDistribution.uniform(100))
    first, second, one_sided = d_others_deriv(100, pop)
    assert one_sided
    assert first == approx(10.0, rel=1e-6)
    assert second == approx(0.1, rel=1e-6)
    assert "discontinuity" in caplog.text

    with raises(ValueError):
        d_others_deriv(-1, pop)


# %% Utility and its derivatives


def test_utility_values():
    params = pareto_params()
    # D_others(50) = 160
    assert utility_incentive(50, params) == approx(perf(210, params.performance) - 1e-4 * 50)
    assert utility_vanilla(50, params, 40) == approx(perf(90, params.performance) - 1e-4 * 50)

    # Zero contribution, nobody below, no performance
    assert utility_incentive(0, params) == 0

    # No performance weight: just the negated cost
    params = pareto_params(gamma=0)
    for d in [0, 30, 100]:
        assert utility_incentive(d, params) == -cost(d, params.cost)
        assert utility_vanilla(d, params, 500) == -cost(d, params.cost)


def test_utility_rejects_contributions_outside_the_cap():
    params = pareto_params()
    for d in [-1, 100.5]:
        with raises(ValueError):
            utility_incentive(d, params)
        with raises(ValueError):
            utility_vanilla(d, params, 10)
        with raises(ValueError):
            utility_deriv(d, params, "incentive")


def test_utility_without_cost_is_monotone():
    params = pareto_params(alpha=0)
    d = np.linspace(0, 100, 501)
    assert np.all(np.diff(utility_incentive(d, params)) >= 0)
    assert np.all(np.diff(utility_vanilla(d, params, 30)) >= 0)


def test_incentive_utility_is_at_least_vanilla():
    # D_fixed = D_others(0) = 0 is never more than what the incentive mechanism gives
    rng = np.random.default_rng(21)
    for _ in range(10):
        params = sample_params(rng)
        d = np.linspace(0, params.cap, 101)
        assert np.all(utility_incentive(d, params) >= utility_vanilla(d, params, 0.0))


def test_utility_deriv_matches_finite_differences():
    rng = np.random.default_rng(2)
    for params in [pareto_params(alpha=0), pareto_params(alpha=1.5, cost=CostModel(1e-4, 1e-6))]:
        for d in rng.uniform(15, 95, 20):
            u = lambda x: utility_incentive(x, params)
            assert utility_deriv(d, params, "incentive") == approx(
                finite_difference(u, d, 1e-3), rel=1e-5
            )
            fd2 = (u(d + 1e-2) - 2 * u(d) + u(d - 1e-2)) / 1e-4
            assert utility_second_deriv(d, params, "incentive") == approx(fd2, rel=1e-3)

            v = lambda x: utility_vanilla(x, params, 60.0)
            assert utility_deriv(d, params, "vanilla", 60.0) == approx(
                finite_difference(v, d, 1e-3), rel=1e-5
            )


def test_incentive_derivative_exceeds_vanilla():
    params = pareto_params()
    pop = params.population
    for d in [12.0, 30.0, 50.0, 99.0]:
        D = d_others(d, pop)
        diff = utility_deriv(d, params, "incentive") - utility_deriv(d, params, "vanilla")
        expected = params.gamma * perf_deriv(d + D, params.performance) * d_others_deriv(d, pop).first
        assert diff == approx(expected, rel=1e-9)
        assert diff >= 0


def test_vanilla_derivatives():
    d = np.linspace(0.1, 99.9, 200)
    # Without cost, more data is always better
    assert np.all(utility_deriv(d, UtilityParams(alpha=0), "vanilla", 50.0) > 0)
    # Concave performance minus convex cost
    params = UtilityParams(cost=CostModel(1e-3, 1e-5))
    assert np.all(utility_second_deriv(d, params, "vanilla", 50.0) <= 0)


def test_incentive_second_deriv_pareto_is_non_positive():
    d = np.linspace(10.5, 99.5, 200)
    assert np.all(utility_second_deriv(d, pareto_params(), "incentive") <= 0)


# %% Checks


def test_check_eq_large_without_cost():
    params = UtilityParams(alpha=0, cap=80)
    holds, lhs, rhs = check_eq_large(params)
    assert rhs == -1
    assert lhs >= 0
    assert holds


def test_check_eq_large_at_balance():
    params = pareto_params()
    X = 100 + d_others(100, params.population)
    p1 = perf_deriv(X, params.performance)
    balanced = pareto_params(cost=CostModel(p1))
    holds, lhs, rhs = check_eq_large(balanced)
    assert rhs == approx(0, abs=1e-12)
    assert lhs == approx(0.2)
    assert holds


def test_check_eq_large_degenerate():
    params = UtilityParams(
        performance=PerformanceModel(4.0, -0.5),
        population=PopulationModel(2, SizeDistribution.uniform(100)),
        cap=5,
    )
    with raises(DegenerateError):
        check_eq_large(params)
    with raises(DegenerateError):
        check_eq_large(UtilityParams(gamma=0, cap=80))


def test_large_derivative_gives_optimum_at_cap():
    params = pareto_params()
    assert check_eq_large(params).holds
    assert optimal_contribution(params, "incentive") == 100

    # Brute force
    d = np.linspace(0, 100, 1001)
    assert d[np.argmax(utility_incentive(d, params))] == 100


def test_check_concavity_pareto():
    report = check_concavity(pareto_params())
    assert report.concave
    assert report.max_second <= 0
    # The density jumps at x_m, so the first derivative jumps up there
    assert any(abs(k - 10) < 0.1 for k in report.kinks)
    assert not report.grid_concave
    # Performance is clamped until d exceeds 1
    assert 1 < report.active_from < 1.1


def test_check_concavity_vanilla():
    params = UtilityParams(cost=CostModel(1e-3, 1e-5))
    report = check_concavity(params, "vanilla", 50.0)
    assert report.grid_concave
    assert report.active_from < 0.1


def test_check_concavity_all_clamped():
    params = UtilityParams(
        performance=PerformanceModel(4.0, -0.5),
        population=PopulationModel(2, SizeDistribution.uniform(100)),
        cap=5,
    )
    report = check_concavity(params)
    assert report.concave
    assert report.kinks == []
    assert report.active_from == 5


# %% Optimization


def test_golden_section_max():
    x, fx = golden_section_max(lambda x: -((x - 2) ** 2), 0, 5)
    assert abs(x - 2) < 1e-6
    assert fx == approx(0, abs=1e-12)


def test_optimal_contribution_vanilla_stationary_point():
    params = UtilityParams(cost=CostModel(1e-4), cap=1e4)
    # 0.5 * (d + 100) ** -1.5 == 1e-4
    expected = 5000 ** (2 / 3) - 100
    assert abs(expected - 192.4) < 0.05
    assert abs(optimal_contribution(params, "vanilla", 100.0) - expected) < 0.5


def test_optimal_contribution_edge_cases():
    params = UtilityParams(alpha=0, cost=CostModel(1e-3))
    assert optimal_contribution(params, "incentive") == params.cap
    assert optimal_contribution(params, "vanilla") == params.cap

    params = UtilityParams(gamma=0, cost=CostModel(1e-3))
    assert optimal_contribution(params, "incentive") == 0
    assert optimal_contribution(params, "vanilla", 10.0) == 0


def test_incentive_optimum_is_at_least_vanilla_optimum():
    rng = np.random.default_rng(99)
    for _ in range(50):
        params = sample_params(rng)
        result = compare_optima(params)
        assert result.holds, (params, result)
        assert result.d_fixed == d_others(result.d_opt, params.population)
        assert 0 <= result.d_opt_star <= params.cap


def test_utility_curve():
    params = pareto_params()
    rows = utility_curve(params)
    assert len(rows) == 201
    assert all(len(row) == len(UTILITY_CURVE_HEADER) for row in rows)
    d, u_vanilla, u_incentive, du, D = rows[0]
    assert (d, u_incentive, D) == (0.0, 0.0, 0.0)
    assert rows[-1][0] == 100
    assert rows[-1][4] == approx(180)
    # The vanilla curve uses the expected total of the others: 10 * 20
    assert rows[50][1] == approx(utility_vanilla(25.0, params, 200.0))


def test_sample_params():
    rng = np.random.default_rng(0)
    kinds = set()
    for _ in range(40):
        params = sample_params(rng)
        dist = params.population.dist
        kinds.add(dist.kind)
        assert 2 <= params.population.n <= 20
        assert params.performance.beta in (-0.5, -1.0)
        if dist.kind == "uniform":
            assert params.cap <= dist.d_max
        else:
            assert dist.scale <= params.cap <= 10 * dist.scale
    assert kinds == {"uniform", "pareto"}

    a = sample_params(np.random.default_rng(5))
    b = sample_params(np.random.default_rng(5))
    assert a == b


if __name__ == "__main__":
    run_tests(globals())
