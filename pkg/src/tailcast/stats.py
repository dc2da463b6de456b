"""Forecast statistics and the scoring system built on fitted posteriors.

Every statistic is a posterior expectation taken as an equal-weight average
over the pooled draws of a FitResult: exceedance rates, record-breaking
probabilities, the expected best mark of a future window, and the 1300-point
scoring tables anchored at the mark with exceedance rate 0.125.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date
from typing import NamedTuple, Sequence

import numpy as np

from .distcore import log_std_normal_cdf, std_normal_cdf, std_normal_quantile
from .errors import TailcastError
from .ingest import EventSpec, PerformanceList, decode_mark, encode_mark, format_raw_mark
from .sampler import FitResult

LN2 = math.log(2.0)
ANCHOR_POINTS = 1300.0
ANCHOR_RATE = 0.125
DEFAULT_POINT_GRID = tuple(range(0, 1401, 50))

_CDF_CHUNK = 2048


class NotConverged(TailcastError):
    """The fit failed its convergence diagnostic and force was not set."""


class AnchorNotFound(TailcastError):
    """No mark on the (extended) search bracket reaches the target rate."""


class IntegrationUnstable(TailcastError):
    """The expected-best quadrature failed to stabilize; message carries diagnostics."""


class UndefinedCorrelation(TailcastError):
    """Pearson correlation is undefined when either list has zero variance."""


@dataclass(frozen=True)
class ForecastContext:
    """A converged fit plus the forecast horizon its statistics refer to.

    t_m is the span of data behind the fit (years) and defaults to the value
    recorded at fit time; t_f is the forecast horizon in years. Forecasting
    from an unconverged fit is refused unless force is set.
    """

    fit: FitResult
    t_f: float
    t_m: float | None = None
    force: bool = False

    def __post_init__(self) -> None:
        if not (math.isfinite(self.t_f) and self.t_f >= 0.0):
            raise ValueError(f"t_f must be a nonnegative number of years, got {self.t_f}")
        if self.t_m is None:
            object.__setattr__(self, "t_m", self.fit.meta.t_m)
        if not (math.isfinite(self.t_m) and self.t_m > 0.0):
            raise ValueError(f"t_m must be a positive number of years, got {self.t_m}")
        if not self.fit.converged and not self.force:
            raise NotConverged(
                f"{self.fit.event_id}: mpsrf={self.fit.mpsrf:.4g} >= 1.1; "
                "pass force=True to forecast anyway"
            )

    @property
    def event(self) -> EventSpec:
        return self.fit.meta.event


def expected_exceedances(ctx: ForecastContext, a: float) -> float:
    """Posterior-expected number of marks better than `a` per calendar year."""
    fit = ctx.fit
    z = (a - fit.pooled_mu) / fit.pooled_sigma
    rates = np.exp(fit.pooled_logN) / ctx.t_m * std_normal_cdf(z)
    return float(np.mean(rates))


def _min_log_survival(fit: FitResult, a) -> np.ndarray:
    """log P(one future mark is worse than a), per pooled draw."""
    return log_std_normal_cdf((fit.pooled_mu - np.asarray(a)) / fit.pooled_sigma)


def record_probability(ctx: ForecastContext, a: float) -> float:
    """Posterior probability that some mark within t_f years beats `a`."""
    if ctx.t_f == 0.0:
        return 0.0
    fit = ctx.fit
    exponent = ctx.t_f * np.exp(fit.pooled_logN) / ctx.t_m
    with np.errstate(invalid="ignore"):
        per_draw = -np.expm1(exponent * _min_log_survival(fit, a))
    return float(np.mean(per_draw))


class ExpectedBest(NamedTuple):
    x: float
    raw: float


def _min_cdf_grid(ctx: ForecastContext, ys: np.ndarray) -> np.ndarray:
    """CDF of the best mark over t_f years, evaluated on a grid of marks."""
    fit = ctx.fit
    exponent = ctx.t_f * np.exp(fit.pooled_logN) / ctx.t_m
    out = np.empty(len(ys))
    for start in range(0, len(ys), _CDF_CHUNK):
        block = ys[start:start + _CDF_CHUNK, None]
        log_sf = log_std_normal_cdf((fit.pooled_mu[None, :] - block) / fit.pooled_sigma[None, :])
        out[start:start + _CDF_CHUNK] = np.mean(-np.expm1(exponent[None, :] * log_sf), axis=1)
    return out


def _count_modes(cell_mass: np.ndarray, floor: float) -> int:
    """Number of local maxima with prominence above `floor` (hysteresis scan)."""
    modes = 0
    rising = True
    extreme = float(cell_mass[0])
    for value in cell_mass[1:]:
        v = float(value)
        if rising:
            if v > extreme:
                extreme = v
            elif extreme - v > floor:
                modes += 1
                rising = False
                extreme = v
        else:
            if v < extreme:
                extreme = v
            elif v - extreme > floor:
                rising = True
                extreme = v
    return modes


def expected_best(ctx: ForecastContext, *, abs_tol: float = 1e-4,
                  mass_tol: float = 1e-6, max_refinements: int = 10,
                  initial_cells: int = 128) -> ExpectedBest:
    """Posterior-expected best transformed mark over the next t_f years.

    Integrates y against the finite-difference density of the future-minimum
    CDF on a grid spanning the observed tail, extending the grid until the
    captured mass reaches 1 - mass_tol and halving the spacing until two
    successive estimates agree to abs_tol in transformed space.
    """
    if ctx.t_f <= 0.0:
        raise ValueError("expected_best needs a positive forecast horizon")
    fit = ctx.fit
    sigma_grid = float(np.mean(fit.pooled_sigma))
    lo = fit.meta.best_x - 6.0 * sigma_grid
    hi = fit.meta.w_k + 2.0 * sigma_grid

    def cdf(y: float) -> float:
        return float(_min_cdf_grid(ctx, np.array([y]))[0])

    for _ in range(400):
        if cdf(lo) <= mass_tol / 2.0:
            break
        lo -= sigma_grid
    else:
        raise IntegrationUnstable(
            f"{fit.event_id}: lower grid edge never reached cdf {mass_tol / 2.0:g}"
        )
    for _ in range(400):
        if 1.0 - cdf(hi) <= mass_tol / 2.0:
            break
        hi += sigma_grid
    else:
        raise IntegrationUnstable(
            f"{fit.event_id}: upper grid edge never captured the density mass"
        )

    cells = initial_cells
    previous = None
    for _ in range(max_refinements + 1):
        ys = np.linspace(lo, hi, cells + 1)
        p = _min_cdf_grid(ctx, ys)
        cell_mass = np.diff(p)
        mass = float(p[-1] - p[0])
        estimate = float(np.sum(0.5 * (ys[:-1] + ys[1:]) * cell_mass))
        if previous is not None and abs(estimate - previous) < abs_tol:
            if mass < 1.0 - 2.0 * mass_tol:
                raise IntegrationUnstable(
                    f"{fit.event_id}: captured mass {mass:.9f} < {1.0 - 2.0 * mass_tol:.9f} "
                    f"on [{lo:.6g}, {hi:.6g}]"
                )
            modes = _count_modes(cell_mass, 1e-3 * float(cell_mass.max()))
            if modes > 1:
                raise IntegrationUnstable(
                    f"{fit.event_id}: future-best density has {modes} modes "
                    f"({cells} cells on [{lo:.6g}, {hi:.6g}])"
                )
            return ExpectedBest(estimate, decode_mark(fit.meta.event, estimate))
        previous = estimate
        cells *= 2
    raise IntegrationUnstable(
        f"{fit.event_id}: estimate still moving by >= {abs_tol:g} after "
        f"{max_refinements} refinements ({cells // 2} cells)"
    )


def score(a: float, event: EventSpec, a0: float) -> float:
    """Points for raw mark `a` on the table anchored at raw mark `a0`."""
    x = encode_mark(event, a)
    x0 = encode_mark(event, a0)
    return ANCHOR_POINTS * (1.0 - (x - x0) / LN2)


def mark_for_points(event: EventSpec, a0: float, points: float) -> float:
    """Raw mark worth `points` on the table anchored at raw mark `a0`."""
    x0 = encode_mark(event, a0)
    return decode_mark(event, x0 + (1.0 - points / ANCHOR_POINTS) * LN2)


def improvement(a_new: float, a_old: float, event: EventSpec) -> float:
    """Signed relative improvement of a_new over a_old; positive is better."""
    return encode_mark(event, a_old) - encode_mark(event, a_new)


def substituted_sigma_draws(ctx: ForecastContext, population_logN: np.ndarray):
    """Redo the tail-mass identity with borrowed population draws.

    Returns (mu, sigma, logN) restricted to draws where the identity stays
    in-domain for this event's n_k and w_k.
    """
    fit = ctx.fit
    mu = fit.pooled_mu
    logN = np.asarray(population_logN, dtype=float)
    if logN.shape != mu.shape:
        raise ValueError(
            f"need one borrowed population draw per pooled draw "
            f"({mu.shape[0]}), got shape {logN.shape}"
        )
    with np.errstate(over="ignore"):
        q = fit.meta.n_k * np.exp(-logN)
    valid = (q > 0.0) & (q < 0.5) & (mu > fit.meta.w_k) & np.isfinite(q)
    if not valid.any():
        raise ValueError(
            f"{fit.event_id}: no borrowed population draw keeps the tail-mass "
            "identity in-domain"
        )
    z = std_normal_quantile(q[valid])
    sigma = (fit.meta.w_k - mu[valid]) / z
    return mu[valid], sigma, logN[valid]


def anchor_mark(ctx: ForecastContext, target_rate: float = ANCHOR_RATE,
                population_logN: np.ndarray | None = None,
                rel_tol: float = 1e-3, max_expansions: int = 60) -> float:
    """Transformed mark whose expected exceedance rate equals target_rate.

    Solved by bisection on the event's posterior rate curve. When
    population_logN is given (mile events borrowing their 1500 m population),
    sigma is recomputed per draw from the borrowed population before solving.
    """
    if not target_rate > 0.0:
        raise ValueError("target_rate must be positive")
    fit = ctx.fit
    if population_logN is None:
        mu, sigma, logN = fit.pooled_mu, fit.pooled_sigma, fit.pooled_logN
    else:
        mu, sigma, logN = substituted_sigma_draws(ctx, population_logN)
    pop_per_year = np.exp(logN) / ctx.t_m

    def rate(a: float) -> float:
        return float(np.mean(pop_per_year * std_normal_cdf((a - mu) / sigma)))

    def solved(value: float) -> bool:
        return abs(value - target_rate) <= rel_tol * target_rate

    sigma_step = float(np.mean(sigma))
    lo = fit.meta.best_x - 5.0 * sigma_step
    hi = fit.meta.w_k
    r_hi = rate(hi)
    if solved(r_hi):
        return hi
    for _ in range(max_expansions):
        if r_hi > target_rate:
            break
        hi += sigma_step
        r_hi = rate(hi)
    else:
        raise AnchorNotFound(
            f"{fit.event_id}: rate only reaches {r_hi:.6g} < {target_rate} "
            f"after extending the bracket to {hi:.6g}"
        )
    r_lo = rate(lo)
    for _ in range(max_expansions):
        if r_lo < target_rate:
            break
        lo -= sigma_step
        r_lo = rate(lo)
    else:
        raise AnchorNotFound(
            f"{fit.event_id}: rate already {r_lo:.6g} >= {target_rate} at the "
            f"extended lower bracket {lo:.6g}"
        )
    for _ in range(500):
        mid = 0.5 * (lo + hi)
        r_mid = rate(mid)
        if solved(r_mid):
            return mid
        if r_mid < target_rate:
            lo = mid
        else:
            hi = mid
    raise AnchorNotFound(f"{fit.event_id}: bisection failed to reach the target rate")


@dataclass(frozen=True)
class ScoreTable:
    """One event's scoring table: the 1300-point anchor plus a point grid."""

    event: EventSpec
    a0: float
    rows: tuple[tuple[int, float], ...]
    low_data: bool = False

    @property
    def event_id(self) -> str:
        return self.event.event_id

    @property
    def a0_raw(self) -> float:
        return decode_mark(self.event, self.a0)


def build_score_table(ctx: ForecastContext, points: Sequence[int] = DEFAULT_POINT_GRID,
                      population_logN: np.ndarray | None = None,
                      target_rate: float = ANCHOR_RATE) -> ScoreTable:
    a0_x = anchor_mark(ctx, target_rate, population_logN=population_logN)
    event = ctx.fit.meta.event
    a0_raw = decode_mark(event, a0_x)
    rows = tuple((int(p), mark_for_points(event, a0_raw, p)) for p in sorted(set(points)))
    return ScoreTable(event=event, a0=a0_x, rows=rows, low_data=ctx.fit.meta.n_k < 20)


def render_score_tables(tables: Sequence[ScoreTable], delimiter: str = "\t") -> str:
    """Delimiter-separated table text, one event per line, marks event-native."""
    if not tables:
        raise ValueError("no score tables to render")
    grids = {tuple(p for p, _ in t.rows) for t in tables}
    if len(grids) != 1:
        raise ValueError("score tables use differing point grids")
    (grid,) = grids
    lines = [delimiter.join(["event"] + [str(p) for p in grid] + ["flags"])]
    for t in tables:
        marks = [format_raw_mark(t.event, raw) for _, raw in t.rows]
        flags = "low_data" if t.low_data else ""
        lines.append(delimiter.join([t.event_id] + marks + [flags]))
    return "\n".join(lines) + "\n"


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Product-moment correlation of two equal-length lists."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be equal-length 1-d lists")
    if len(x) < 3:
        raise ValueError(f"need at least 3 pairs, got {len(x)}")
    xd = x - x.mean()
    yd = y - y.mean()
    sx = float(np.sqrt(np.sum(xd * xd)))
    sy = float(np.sqrt(np.sum(yd * yd)))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelation("a list with zero variance has no correlation")
    r = float(np.sum(xd * yd) / (sx * sy))
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class ReferenceMark:
    """The rank-th best all-time mark strictly before a date."""

    event_id: str
    rank: int
    mark: float
    as_of: date

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")


def reference_mark(data: PerformanceList, rank: int, as_of: date) -> ReferenceMark:
    """Extract the rank-th best mark among records dated strictly before as_of."""
    marks = sorted(
        x for r, x in zip(data.records, data.marks) if r.date < as_of
    )
    if len(marks) < rank:
        raise ValueError(
            f"{data.event.event_id}: only {len(marks)} marks before {as_of}, "
            f"need rank {rank}"
        )
    return ReferenceMark(
        event_id=data.event.event_id, rank=rank, mark=marks[rank - 1], as_of=as_of
    )
