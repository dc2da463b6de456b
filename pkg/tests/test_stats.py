"""Forecast statistics: exceedance rates, record probabilities, scoring."""
import math
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailcast.distcore import std_normal_cdf, std_normal_quantile
from tailcast.ingest import EventSpec, RawMark, build_performance_list
from tailcast.stats import (
    ANCHOR_RATE,
    AnchorNotFound,
    ForecastContext,
    IntegrationUnstable,
    NotConverged,
    ReferenceMark,
    UndefinedCorrelation,
    anchor_mark,
    build_score_table,
    expected_best,
    expected_exceedances,
    improvement,
    mark_for_points,
    pearson,
    record_probability,
    reference_mark,
    render_score_tables,
    score,
    substituted_sigma_draws,
)

from conftest import field_event, make_fit, point_mass_fit, running_event

MU = math.log(11.28)
SIG = 0.033
N_K = 300
N_POP = 20_000
W_K = MU + SIG * std_normal_quantile(N_K / N_POP)

# expected minimum of M i.i.d. standard normals, frozen from a quadrature
# evaluation of the order-statistic integral in a scratch session
EXPECTED_MIN = {
    10: -1.5387527308351727,
    100: -2.5075936364416838,
    1000: -3.241435769133471,
}
ONE_MINUS_INV_E_ISH = 0.632120742768355  # 1 - (1 - 1e-6)^1e6


def event_ctx(t_f=1.0, **kwargs):
    defaults = dict(n_k=N_K, w_k=W_K, best_x=MU - 0.15)
    defaults.update(kwargs)
    fit = point_mass_fit(MU, SIG, math.log(N_POP), **defaults)
    return ForecastContext(fit, t_f=t_f, t_m=1.0)


def unit_ctx(M, t_f=1.0):
    fit = point_mass_fit(0.0, 1.0, math.log(M), n_k=10, w_k=-0.5, best_x=-4.0)
    return ForecastContext(fit, t_f=t_f, t_m=1.0)


def test_context_validation():
    good = point_mass_fit(MU, SIG, 9.0, n_k=N_K, w_k=W_K, t_m=2.5)
    assert ForecastContext(good, t_f=1.0).t_m == 2.5  # falls back to the fit
    assert ForecastContext(good, t_f=1.0, t_m=4.0).t_m == 4.0
    with pytest.raises(ValueError):
        ForecastContext(good, t_f=-1.0)
    with pytest.raises(ValueError):
        ForecastContext(good, t_f=1.0, t_m=0.0)

    bad = point_mass_fit(MU, SIG, 9.0, n_k=N_K, w_k=W_K, mpsrf=2.0)
    with pytest.raises(NotConverged):
        ForecastContext(bad, t_f=1.0)
    forced = ForecastContext(bad, t_f=1.0, force=True)
    assert forced.fit is bad


def test_exceedances_point_mass_analytic():
    ctx = event_ctx()
    for a in (W_K - 0.05, W_K - 0.02, W_K):
        want = N_POP * std_normal_cdf((a - MU) / SIG)
        assert expected_exceedances(ctx, a) == pytest.approx(want, rel=1e-12)


def test_exceedances_tail_mass_identity_at_worst_mark():
    # the sampler derives sigma from the identity, so the rate at w_k must
    # reproduce n_k/t_m to numerical precision
    ctx = event_ctx()
    assert expected_exceedances(ctx, W_K) == pytest.approx(N_K, rel=1e-12)
    half = ForecastContext(ctx.fit, t_f=1.0, t_m=2.0)
    assert expected_exceedances(half, W_K) == pytest.approx(N_K / 2.0, rel=1e-12)


def test_exceedances_limits_and_monotonicity():
    ctx = event_ctx()
    assert expected_exceedances(ctx, MU - 40.0) == 0.0
    grid = np.linspace(MU - 0.3, W_K, 50)
    rates = [expected_exceedances(ctx, a) for a in grid]
    assert all(r >= 0.0 for r in rates)
    assert all(b >= a for a, b in zip(rates, rates[1:]))


def test_exceedances_match_simulated_seasons():
    # independent oracle: draw whole seasons of performances and count them
    pop, a = 500, -2.5
    fit = point_mass_fit(0.0, 1.0, math.log(pop), n_k=10, w_k=-2.0, best_x=-4.0)
    ctx = ForecastContext(fit, t_f=1.0, t_m=1.0)

    rng = np.random.default_rng(91)
    seasons, chunk, total = 200_000, 2_000, 0
    for _ in range(seasons // chunk):
        draws = rng.standard_normal((chunk, pop))
        total += int(np.count_nonzero(draws < a))
    simulated = total / seasons
    assert expected_exceedances(ctx, a) == pytest.approx(simulated, rel=0.05)


def test_record_probability_limits():
    ctx = event_ctx(t_f=2.0)
    assert record_probability(ctx, MU - 40.0) == 0.0
    assert record_probability(ctx, MU) > 1.0 - 1e-12  # population median
    grid = np.linspace(MU - 0.25, W_K, 40)
    probs = [record_probability(ctx, a) for a in grid]
    assert all(0.0 <= p <= 1.0 for p in probs)
    assert all(b >= a for a, b in zip(probs, probs[1:]))


def test_record_probability_union_bound():
    ctx = event_ctx(t_f=2.0)
    for a in np.linspace(MU - 0.3, W_K, 60):
        p = record_probability(ctx, a)
        bound = min(1.0, ctx.t_f * expected_exceedances(ctx, a))
        assert p <= bound + 1e-12


def test_record_probability_closed_form():
    # tail mass 1e-6 per draw, one million future performances
    M = 1e6
    fit = point_mass_fit(0.0, 1.0, math.log(M), n_k=10, w_k=-0.5)
    ctx = ForecastContext(fit, t_f=1.0, t_m=1.0)
    a = std_normal_quantile(1e-6)
    assert record_probability(ctx, a) == pytest.approx(ONE_MINUS_INV_E_ISH, abs=1e-6)
    assert record_probability(ForecastContext(fit, t_f=0.0, t_m=1.0), a) == 0.0


def test_record_probability_dense_tail_is_likely():
    # a record sitting just ahead of a crowded tail should look fragile:
    # three expected exceedances per year make a new record odds-on
    pop = 5e5
    fit = point_mass_fit(0.0, 1.0, math.log(pop), n_k=50, w_k=-2.0, best_x=-4.5)
    ctx = ForecastContext(fit, t_f=1.0, t_m=1.0)
    a = std_normal_quantile(3.0 / pop)
    assert record_probability(ctx, a) > 0.5


@pytest.mark.parametrize("M", [10, 100, 1000])
def test_expected_best_point_mass_oracle(M):
    got = expected_best(unit_ctx(M))
    assert got.x == pytest.approx(EXPECTED_MIN[M], abs=1e-4)
    assert got.raw == pytest.approx(math.exp(got.x))


def test_expected_best_single_draw_recovers_mean():
    got = expected_best(unit_ctx(1))
    assert got.x == pytest.approx(0.0, abs=1e-3)


def test_expected_best_improves_with_horizon():
    one = expected_best(unit_ctx(100, t_f=1.0)).x
    two = expected_best(unit_ctx(100, t_f=2.0)).x
    assert two < one


def test_expected_best_needs_positive_horizon():
    with pytest.raises(ValueError):
        expected_best(unit_ctx(100, t_f=0.0))


def test_expected_best_unstable_without_refinement():
    with pytest.raises(IntegrationUnstable):
        expected_best(unit_ctx(100), max_refinements=0, abs_tol=1e-12)


def test_expected_best_rejects_bimodal_density():
    n = 1000
    mu = np.concatenate([np.zeros(n // 2), np.full(n // 2, 8.0)])
    fit = make_fit(
        mu=mu,
        logN=np.full(n, math.log(10.0)),
        sigma=np.full(n, 0.5),
        n_k=10,
        w_k=9.0,
        best_x=-1.5,
    )
    ctx = ForecastContext(fit, t_f=1.0, t_m=1.0)
    with pytest.raises(IntegrationUnstable):
        expected_best(ctx)


def test_expected_best_record_probability_band():
    # the expected future best sits inside the central mass of the minimum's
    # distribution, so a new record at that mark is neither sure nor unlikely
    for M in (10, 100, 1000):
        ctx = unit_ctx(M)
        p = record_probability(ctx, expected_best(ctx).x)
        assert 0.3 <= p <= 0.8


def test_score_anchor_and_reference_pairs():
    running = running_event()
    assert score(9.58, running, a0=9.58) == 1300.0
    # published sample table pairs, reconstructed to the displayed precision
    assert score(10.10, running, a0=9.58) == pytest.approx(1200.0, abs=1.0)
    marathon = EventSpec.running("marathon")
    a_new = 2 * 3600 + 9 * 60 + 18.50
    a_old = 2 * 3600 + 2 * 60 + 35.66
    assert score(a_new, marathon, a0=a_old) == pytest.approx(1200.0, abs=1.0)


def test_score_hundred_point_ratio():
    running = running_event()
    a0 = 9.58
    ratio = 2.0 ** (100.0 / 1300.0)
    m1200 = mark_for_points(running, a0, 1200.0)
    m1300 = mark_for_points(running, a0, 1300.0)
    assert m1200 / m1300 == pytest.approx(ratio, rel=1e-12)
    assert m1300 == pytest.approx(a0, rel=1e-12)
    assert score(mark_for_points(running, a0, 850.0), running, a0) == pytest.approx(850.0)


def test_score_field_direction():
    field = field_event()
    assert score(895.0, field, a0=895.0) == 1300.0
    assert score(890.0, field, a0=895.0) < 1300.0  # shorter jump scores less
    assert score(900.0, field, a0=895.0) > 1300.0


def test_score_rejects_nonpositive():
    with pytest.raises(ValueError):
        score(0.0, running_event(), a0=9.58)
    with pytest.raises(ValueError):
        mark_for_points(running_event(), -1.0, 1200.0)


@settings(max_examples=200, deadline=None)
@given(
    a=st.floats(min_value=1.0, max_value=1e5),
    b=st.floats(min_value=1.0, max_value=1e5),
)
def test_score_monotone_per_direction(a, b):
    if a == b:
        return
    fast, slow = min(a, b), max(a, b)
    run_fast = score(fast, running_event(), a0=100.0)
    run_slow = score(slow, running_event(), a0=100.0)
    field_fast = score(fast, field_event(), a0=100.0)
    field_slow = score(slow, field_event(), a0=100.0)
    assert run_fast >= run_slow
    assert field_fast <= field_slow
    # marks a few ulps apart can quantize to the same log ratio; strictness
    # is only meaningful once the marks differ measurably
    if (slow - fast) / slow > 1e-12:
        assert run_fast > run_slow
        assert field_fast < field_slow


def test_improvement_values():
    running = running_event()
    field = field_event()
    assert improvement(9.58, 9.58, running) == 0.0
    assert improvement(9.58, 9.69, running) == pytest.approx(math.log(9.69 / 9.58), rel=1e-12)
    assert improvement(9.58, 9.69, running) == pytest.approx(0.011416, abs=1e-6)
    assert improvement(895.0, 890.0, field) == pytest.approx(0.005602, abs=1e-6)
    assert improvement(9.69, 9.58, running) == pytest.approx(
        -improvement(9.58, 9.69, running), rel=1e-12
    )
    with pytest.raises(ValueError):
        improvement(0.0, 9.58, running)


def test_anchor_mark_point_mass_analytic():
    ctx = event_ctx()
    got = anchor_mark(ctx)
    want = MU + SIG * std_normal_quantile(ANCHOR_RATE / N_POP)
    assert got == pytest.approx(want, abs=1e-4)
    residual = expected_exceedances(ctx, got)
    assert abs(residual - ANCHOR_RATE) <= 1e-3 * ANCHOR_RATE


def test_anchor_mark_boundary_target():
    ctx = event_ctx()
    at_worst = expected_exceedances(ctx, W_K)
    assert anchor_mark(ctx, target_rate=at_worst) == W_K


def test_anchor_mark_unreachable_target():
    ctx = event_ctx()
    with pytest.raises(AnchorNotFound):
        anchor_mark(ctx, target_rate=10.0 * N_POP)
    with pytest.raises(ValueError):
        anchor_mark(ctx, target_rate=0.0)


def test_substituted_sigma_draws_recomputes_identity():
    ctx = event_ctx()
    borrowed = np.full(ctx.fit.pooled_size, math.log(4.0 * N_POP))
    mu, sigma, logN = substituted_sigma_draws(ctx, borrowed)
    assert len(mu) == len(sigma) == len(logN) == ctx.fit.pooled_size
    z = std_normal_quantile(N_K / (4.0 * N_POP))
    assert sigma == pytest.approx((W_K - MU) / z, rel=1e-12)

    with pytest.raises(ValueError):
        substituted_sigma_draws(ctx, borrowed[:-1])
    with pytest.raises(ValueError):
        # borrowed population below n_k pushes the tail mass out of domain
        substituted_sigma_draws(ctx, np.full(ctx.fit.pooled_size, math.log(N_K / 2)))


def test_anchor_substitution_direction():
    # borrowing a larger population (the 1500 m pool for the mile) weakens
    # the anchor: the same observed tail spread over more athletes makes
    # extreme marks rarer, so the 0.125-rate mark sits closer to w_k
    ctx = event_ctx()
    plain = anchor_mark(ctx)
    borrowed = anchor_mark(
        ctx, population_logN=np.full(ctx.fit.pooled_size, math.log(4.0 * N_POP))
    )
    assert borrowed > plain


def test_build_score_table():
    ctx = event_ctx()
    table = build_score_table(ctx, points=(500, 1300, 1000, 500))
    assert [p for p, _ in table.rows] == [500, 1000, 1300]
    assert table.low_data is False
    row_1300 = dict(table.rows)[1300]
    assert row_1300 == pytest.approx(table.a0_raw, rel=1e-12)
    rate = expected_exceedances(ctx, table.a0)
    assert rate == pytest.approx(ANCHOR_RATE, rel=1e-3)

    sparse = event_ctx(n_k=12)
    assert build_score_table(sparse, points=(1300,)).low_data is True


def test_render_score_tables():
    ctx = event_ctx()
    table = build_score_table(ctx, points=(1200, 1300))
    sparse = build_score_table(event_ctx(n_k=12), points=(1200, 1300))
    text = render_score_tables([table, sparse])
    lines = text.strip().split("\n")
    assert lines[0] == "event\t1200\t1300\tflags"
    assert len(lines) == 3
    cells = lines[1].split("\t")
    assert cells[0] == table.event_id
    assert cells[-1] == ""
    # marks render event-native: a running mark prints as a time
    assert float(cells[2]) == pytest.approx(table.a0_raw, abs=0.005)
    assert lines[2].split("\t")[-1] == "low_data"

    with pytest.raises(ValueError):
        render_score_tables([])
    other = build_score_table(ctx, points=(1000, 1300))
    with pytest.raises(ValueError):
        render_score_tables([table, other])


def test_pearson_reference_values(rng):
    xs = [1.0, 2.0, 4.0, 8.0]
    assert pearson(xs, [2 * v + 1 for v in xs]) == pytest.approx(1.0)
    assert pearson(xs, [-v for v in xs]) == pytest.approx(-1.0)
    assert pearson([1, 2, 3], [2, 1, 3]) == pytest.approx(0.5)

    a = rng.normal(size=40)
    b = rng.normal(size=40) + 0.5 * a
    assert pearson(a, b) == pytest.approx(np.corrcoef(a, b)[0, 1], rel=1e-12)

    with pytest.raises(UndefinedCorrelation):
        pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        pearson([1.0, 2.0], [3.0, 4.0])
    with pytest.raises(ValueError):
        pearson([1.0, 2.0, 3.0], [1.0, 2.0])


def test_reference_mark_rank_and_cutoff():
    spec = running_event()
    records = [
        RawMark(9.58, date(2009, 8, 16)),
        RawMark(9.69, date(2008, 8, 16)),
        RawMark(9.72, date(2008, 5, 31)),
        RawMark(9.63, date(2012, 8, 5)),
    ]
    data = build_performance_list(spec, records)
    ref = reference_mark(data, rank=2, as_of=date(2010, 1, 1))
    assert ref.mark == pytest.approx(math.log(9.69))
    assert ref.rank == 2 and ref.event_id == spec.event_id

    # the 2012 run is visible only to a later cutoff
    later = reference_mark(data, rank=2, as_of=date(2013, 1, 1))
    assert later.mark == pytest.approx(math.log(9.63))

    with pytest.raises(ValueError):
        reference_mark(data, rank=5, as_of=date(2013, 1, 1))
    with pytest.raises(ValueError):
        ReferenceMark(event_id="x", rank=0, mark=1.0, as_of=date(2013, 1, 1))


def test_statistics_stable_under_pool_size(rng):
    n_big = 4000
    mu = rng.normal(MU, 0.01, n_big)
    logN = rng.normal(math.log(N_POP), 0.15, n_big)
    z = std_normal_quantile(N_K * np.exp(-logN))
    sigma = (W_K - mu) / z
    fits = {
        n: make_fit(mu[:n], logN[:n], sigma[:n], n_k=N_K, w_k=W_K, best_x=MU - 0.15)
        for n in (1000, n_big)
    }
    probe = W_K - 0.05

    def rel_gap(fn):
        small, big = (fn(ForecastContext(fits[n], t_f=1.0, t_m=1.0)) for n in (1000, n_big))
        return abs(small - big) / abs(big)

    assert rel_gap(lambda c: expected_exceedances(c, probe)) < 0.02
    assert rel_gap(lambda c: record_probability(c, probe)) < 0.02
    assert rel_gap(lambda c: expected_best(c).x) < 0.02
    assert rel_gap(anchor_mark) < 0.02
