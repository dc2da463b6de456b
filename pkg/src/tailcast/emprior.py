"""Two-pass empirical-Bayes construction of the population-size prior.

Pass 1 fits every event under a deliberately near-flat prior; the
posterior-mean population sizes of all events then define a shared
log-normal prior (robust location from the median, robust scale from the
tightest 75% subset) under which pass 2 refits everything.
"""
from __future__ import annotations

import enum
import math
import warnings
import zlib
from dataclasses import dataclass, replace

import numpy as np

from .errors import TailcastError
from .sampler import FitFailed, FitResult, SamplerConfig, fit_event

WEAK_MU_N = math.log(10_000.0)
WEAK_SIGMA2_N = math.exp(20.0)
VARIANCE_FLOOR = 1e-4
SUBSET_FRACTION = 0.75


class InsufficientEvents(TailcastError):
    """The empirical prior needs at least four usable events."""


class Provenance(enum.Enum):
    WEAKLY_INFORMATIVE = "weak"
    EMPIRICAL = "empirical"


@dataclass(frozen=True)
class HyperPrior:
    """Log-normal prior on population size: log N ~ Normal(mu_N, sigma2_N)."""

    mu_N: float
    sigma2_N: float
    provenance: Provenance
    contributing_events: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not (math.isfinite(self.sigma2_N) and self.sigma2_N > 0.0):
            raise ValueError("sigma2_N must be positive and finite")

    @property
    def provenance_name(self) -> str:
        return self.provenance.value

    @staticmethod
    def weakly_informative() -> "HyperPrior":
        return HyperPrior(WEAK_MU_N, WEAK_SIGMA2_N, Provenance.WEAKLY_INFORMATIVE)


def min_subset_variance(values, subset_size: int) -> float:
    """Smallest sample variance among all subsets of the given size.

    A minimum-variance fixed-size subset of reals is contiguous in sorted
    order, so a sliding window over the sorted values finds it exactly.
    """
    v = np.sort(np.asarray(values, dtype=float))
    m = len(v)
    if not 2 <= subset_size <= m:
        raise ValueError(f"subset_size must be in [2, {m}], got {subset_size}")
    best = math.inf
    for start in range(m - subset_size + 1):
        window = v[start:start + subset_size]
        best = min(best, float(np.var(window, ddof=1)))
    return best


def robust_hyperprior(point_estimates) -> HyperPrior:
    """Empirical prior from per-event posterior-mean population sizes.

    Accepts a mapping event_id -> E[N] or a plain iterable of estimates.
    Location is the median of the logs; scale is the minimum variance over
    the tightest ~75% contiguous subset, floored so the prior stays proper.
    """
    if hasattr(point_estimates, "items"):
        items = sorted(point_estimates.items())
    else:
        items = [(f"event{i}", v) for i, v in enumerate(point_estimates)]
    usable = []
    for event_id, value in items:
        if math.isfinite(value) and value > 0.0:
            usable.append((event_id, value))
        else:
            warnings.warn(f"{event_id}: discarding unusable population estimate {value!r}")
    if len(usable) < 4:
        raise InsufficientEvents(
            f"empirical prior needs >= 4 events with usable estimates, have {len(usable)}"
        )
    logs = np.log([v for _, v in usable])
    subset = math.ceil(SUBSET_FRACTION * len(logs))
    sigma2 = max(min_subset_variance(logs, subset), VARIANCE_FLOOR)
    return HyperPrior(
        mu_N=float(np.median(logs)),
        sigma2_N=sigma2,
        provenance=Provenance.EMPIRICAL,
        contributing_events=tuple(e for e, _ in usable),
    )


def expected_population(fit: FitResult) -> float:
    """Posterior mean of N on the natural scale, over the pooled draws."""
    with np.errstate(over="ignore"):
        return float(np.mean(np.exp(fit.pooled_logN)))


def event_seed(base_seed: int, event_id: str) -> int:
    """Stable per-event seed, independent of event ordering."""
    return (base_seed ^ zlib.crc32(event_id.encode("utf-8"))) & 0x7FFFFFFF


@dataclass(frozen=True)
class TwoPassResult:
    prior: HyperPrior
    fits: dict[str, FitResult]
    pass1_fits: dict[str, FitResult]
    pass1_estimates: dict[str, float]
    failures: dict[str, str]


def _fit_all(lists, prior, config, t_m):
    fits: dict[str, FitResult] = {}
    failures: dict[str, str] = {}
    for data in lists:
        event_id = data.event.event_id
        cfg = replace(config, seed=event_seed(config.seed, event_id))
        event_t_m = t_m.get(event_id) if hasattr(t_m, "get") else t_m
        try:
            fits[event_id] = fit_event(data, prior, cfg, t_m=event_t_m)
        except FitFailed as exc:
            failures[event_id] = str(exc)
    return fits, failures


def two_pass_fit(all_events, config: SamplerConfig, t_m=None,
                 second_prior: HyperPrior | None = None) -> TwoPassResult:
    """Fit every event twice: weak prior, then the prior learned from pass 1.

    `t_m` may be a single float, a mapping event_id -> years, or None to
    derive per event. `second_prior` overrides the learned prior (used by
    plumbing tests); both passes reuse the same SamplerConfig and per-event
    seeds, so identical priors reproduce identical fits.
    """
    lists = list(all_events.values() if hasattr(all_events, "values") else all_events)
    if len(lists) < 4:
        raise InsufficientEvents(f"two-pass fitting needs >= 4 events, have {len(lists)}")
    weak = HyperPrior.weakly_informative()
    pass1_fits, failures1 = _fit_all(lists, weak, config, t_m)
    estimates = {event_id: expected_population(fit) for event_id, fit in pass1_fits.items()}
    prior = second_prior if second_prior is not None else robust_hyperprior(estimates)
    pass2_fits, failures2 = _fit_all(lists, prior, config, t_m)
    failures = dict(failures1)
    for event_id, msg in failures2.items():
        failures[event_id] = f"{failures.get(event_id, '')}; pass 2: {msg}".lstrip("; ")
    return TwoPassResult(
        prior=prior,
        fits=pass2_fits,
        pass1_fits=pass1_fits,
        pass1_estimates=estimates,
        failures=failures,
    )
