"""Log-normal tail modeling of elite performance lists.

Fit a truncated-normal tail plus population size to each event's all-time
list by MCMC, share a population prior across events empirically, and turn
the posteriors into forecasts: exceedance rates, record probabilities,
expected bests, scoring tables, and backtests against held-out years.
"""
from .backtest import (
    BacktestCell,
    BacktestReport,
    BacktestSpec,
    DataMode,
    MissingOutcome,
    realized_exceedances,
    realized_improvement,
    run_backtest,
)
from .distcore import (
    NormalParams,
    PopulationParams,
    ReparamOutOfDomain,
    exceedance_prob,
    log_posterior,
    population_from_sigma,
    sigma_from_population,
    std_normal_cdf,
    std_normal_quantile,
    truncnorm_logpdf,
)
from .emprior import (
    HyperPrior,
    InsufficientEvents,
    TwoPassResult,
    expected_population,
    robust_hyperprior,
    two_pass_fit,
)
from .errors import TailcastError
from .fitfile import FitFileError, load_fit, save_fit
from .ingest import (
    DateWindow,
    Direction,
    EventSpec,
    PerformanceList,
    RawMark,
    Unit,
    build_performance_list,
    decode_mark,
    encode_mark,
    load_performance_list,
    write_list_file,
)
from .sampler import (
    FitFailed,
    FitResult,
    PosteriorChain,
    SamplerConfig,
    TuningFailed,
    fit_event,
    gelman_rubin_mpsrf,
)
from .stats import (
    AnchorNotFound,
    ForecastContext,
    IntegrationUnstable,
    NotConverged,
    ReferenceMark,
    ScoreTable,
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
    score,
)

__version__ = "0.1.0"

__all__ = [
    "AnchorNotFound",
    "BacktestCell",
    "BacktestReport",
    "BacktestSpec",
    "DataMode",
    "DateWindow",
    "Direction",
    "EventSpec",
    "FitFailed",
    "FitFileError",
    "FitResult",
    "ForecastContext",
    "HyperPrior",
    "InsufficientEvents",
    "IntegrationUnstable",
    "MissingOutcome",
    "NormalParams",
    "NotConverged",
    "PerformanceList",
    "PopulationParams",
    "PosteriorChain",
    "RawMark",
    "ReferenceMark",
    "ReparamOutOfDomain",
    "SamplerConfig",
    "ScoreTable",
    "TailcastError",
    "TuningFailed",
    "TwoPassResult",
    "Unit",
    "UndefinedCorrelation",
    "anchor_mark",
    "build_performance_list",
    "build_score_table",
    "decode_mark",
    "encode_mark",
    "exceedance_prob",
    "expected_best",
    "expected_exceedances",
    "expected_population",
    "fit_event",
    "gelman_rubin_mpsrf",
    "improvement",
    "load_fit",
    "load_performance_list",
    "log_posterior",
    "mark_for_points",
    "pearson",
    "population_from_sigma",
    "realized_exceedances",
    "realized_improvement",
    "record_probability",
    "reference_mark",
    "robust_hyperprior",
    "run_backtest",
    "save_fit",
    "score",
    "sigma_from_population",
    "std_normal_cdf",
    "std_normal_quantile",
    "truncnorm_logpdf",
    "two_pass_fit",
    "write_list_file",
]
