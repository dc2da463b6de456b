"""Backtesting harness: fit before a cutoff, forecast, score against reality.

Each event is refitted using only data dated before the cutoff year, in one
of two modes (all prior data, or exactly the prior five years). Predictions
for held-out evaluation windows are then correlated with realized outcomes:
exceedance counts over reference marks, improvements of the window best over
those references, and record-breaking indicators.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from datetime import date

from .emprior import HyperPrior, two_pass_fit
from .errors import TailcastError
from .ingest import DateWindow, EmptyListError, PerformanceList, build_performance_list
from .sampler import SamplerConfig
from .stats import (
    ForecastContext,
    IntegrationUnstable,
    ReferenceMark,
    UndefinedCorrelation,
    expected_best,
    expected_exceedances,
    pearson,
    record_probability,
    reference_mark,
)

ALLOWED_RANKS = (10, 25, 50, 100)


class MissingOutcome(TailcastError):
    """The evaluation window holds no marks, so no realized value exists."""


class DataMode(enum.Enum):
    ALL_PRIOR = "all"
    FIVE_YEARS = "five-years"


@dataclass(frozen=True)
class BacktestSpec:
    """What to hold out and what to predict."""

    cutoff_year: int
    windows: tuple[int, ...] = (1, 2, 5, 12)
    data_mode: DataMode = DataMode.ALL_PRIOR
    reference_ranks: tuple[int, ...] = ALLOWED_RANKS

    def __post_init__(self) -> None:
        if not self.windows:
            raise ValueError("need at least one evaluation window")
        if any(not isinstance(w, int) or w < 1 for w in self.windows):
            raise ValueError(f"window lengths must be whole years >= 1, got {self.windows}")
        bad = [r for r in self.reference_ranks if r not in ALLOWED_RANKS]
        if bad or not self.reference_ranks:
            raise ValueError(f"reference_ranks must be a nonempty subset of {ALLOWED_RANKS}")

    @property
    def cutoff_date(self) -> date:
        return date(self.cutoff_year, 1, 1)

    def fit_window(self) -> DateWindow:
        if self.data_mode is DataMode.FIVE_YEARS:
            return DateWindow.years_before(self.cutoff_year, 5)
        return DateWindow.before(self.cutoff_year)

    def fit_t_m(self) -> float | None:
        """Exactly 5.0 for five-year mode; None lets the data span decide."""
        return 5.0 if self.data_mode is DataMode.FIVE_YEARS else None

    def evaluation_window(self, length: int) -> DateWindow:
        return DateWindow.calendar_years(self.cutoff_year, self.cutoff_year + length - 1)


def realized_exceedances(data: PerformanceList, reference: ReferenceMark,
                         window: DateWindow) -> int:
    """Marks inside the window strictly better than the reference."""
    if data.event.event_id != reference.event_id:
        raise ValueError(
            f"reference is for {reference.event_id}, data is {data.event.event_id}"
        )
    return sum(
        1
        for record, x in zip(data.records, data.marks)
        if window.contains(record.date) and x < reference.mark
    )


def realized_improvement(data: PerformanceList, reference: ReferenceMark,
                         window: DateWindow) -> float:
    """Improvement of the window's best mark over the reference.

    Negative when nothing in the window beats the reference; an empty window
    has no outcome at all and raises MissingOutcome.
    """
    if data.event.event_id != reference.event_id:
        raise ValueError(
            f"reference is for {reference.event_id}, data is {data.event.event_id}"
        )
    in_window = [x for record, x in zip(data.records, data.marks)
                 if window.contains(record.date)]
    if not in_window:
        raise MissingOutcome(
            f"{data.event.event_id}: no marks in [{window.start}, {window.end})"
        )
    return reference.mark - min(in_window)


@dataclass(frozen=True)
class BacktestCell:
    """One correlation: a statistic over one window (and rank, if ranked)."""

    statistic: str
    window_years: int
    rank: int | None
    event_ids: tuple[str, ...]
    predicted: tuple[float, ...]
    actual: tuple[float, ...]
    pearson_r: float | None
    note: str = ""

    @property
    def valid(self) -> bool:
        return self.pearson_r is not None


@dataclass(frozen=True)
class BacktestReport:
    spec: BacktestSpec
    prior: HyperPrior
    cells: tuple[BacktestCell, ...]
    event_notes: tuple[tuple[str, str], ...]

    def cell(self, statistic: str, window_years: int, rank: int | None = None) -> BacktestCell:
        for c in self.cells:
            if (c.statistic, c.window_years, c.rank) == (statistic, window_years, rank):
                return c
        raise KeyError(f"no cell for ({statistic}, {window_years}, {rank})")


def _correlate(statistic: str, window_years: int, rank: int | None,
               rows: list[tuple[str, float, float]]) -> BacktestCell:
    rows = sorted(rows)
    ids = tuple(e for e, _, _ in rows)
    predicted = tuple(p for _, p, _ in rows)
    actual = tuple(a for _, _, a in rows)
    note = ""
    r = None
    if len(rows) < 3:
        note = f"only {len(rows)} events with outcomes"
    else:
        try:
            r = pearson(predicted, actual)
        except UndefinedCorrelation as exc:
            note = str(exc)
    return BacktestCell(
        statistic=statistic,
        window_years=window_years,
        rank=rank,
        event_ids=ids,
        predicted=predicted,
        actual=actual,
        pearson_r=r,
        note=note,
    )


def _add_note(notes: dict[str, str], event_id: str, message: str) -> None:
    if event_id in notes:
        notes[event_id] = f"{notes[event_id]}; {message}"
    else:
        notes[event_id] = message


def run_backtest(corpus, spec: BacktestSpec, config: SamplerConfig) -> BacktestReport:
    """Fit pre-cutoff data for every event, then correlate forecasts with reality.

    `corpus` is an iterable of full-history PerformanceLists. Events whose
    pre-cutoff slice is empty or whose fit fails are dropped with a note;
    forecasting proceeds even on unconverged fits (noted per event).
    """
    full: dict[str, PerformanceList] = {}
    for data in corpus:
        full[data.event.event_id] = data
    notes: dict[str, str] = {}

    fit_window = spec.fit_window()
    pre_lists = []
    for event_id in sorted(full):
        data = full[event_id]
        try:
            pre_lists.append(
                build_performance_list(data.event, list(data.records), window=fit_window)
            )
        except EmptyListError:
            _add_note(notes, event_id, "no marks before cutoff")
    if len(pre_lists) < 4:
        raise ValueError(
            f"backtest needs >= 4 events with pre-cutoff data, have {len(pre_lists)}"
        )

    result = two_pass_fit(pre_lists, config, t_m=spec.fit_t_m())
    for event_id, msg in sorted(result.failures.items()):
        _add_note(notes, event_id, f"fit failed: {msg}")

    contexts: dict[int, dict[str, ForecastContext]] = {}
    for length in spec.windows:
        contexts[length] = {
            event_id: ForecastContext(fit, t_f=float(length), force=True)
            for event_id, fit in result.fits.items()
        }
    for event_id, fit in result.fits.items():
        if not fit.converged:
            _add_note(notes, event_id, f"forecast from unconverged fit (mpsrf={fit.mpsrf:.3f})")

    references: dict[tuple[str, int], ReferenceMark] = {}
    for event_id in result.fits:
        missing_rank = None
        for rank in sorted(spec.reference_ranks):
            try:
                references[(event_id, rank)] = reference_mark(
                    full[event_id], rank, spec.cutoff_date
                )
            except ValueError:
                if missing_rank is None:
                    missing_rank = rank
        if missing_rank is not None:
            _add_note(notes, event_id, f"fewer than {missing_rank} marks before cutoff")

    cells: list[BacktestCell] = []
    for length in spec.windows:
        window = spec.evaluation_window(length)
        expected_best_x: dict[str, float | None] = {}
        for event_id, ctx in contexts[length].items():
            try:
                expected_best_x[event_id] = expected_best(ctx).x
            except IntegrationUnstable as exc:
                expected_best_x[event_id] = None
                _add_note(notes, event_id, f"expected_best failed: {exc}")
        for rank in spec.reference_ranks:
            exceed_rows: list[tuple[str, float, float]] = []
            improv_rows: list[tuple[str, float, float]] = []
            for event_id, ctx in contexts[length].items():
                ref = references.get((event_id, rank))
                if ref is None:
                    continue
                data = full[event_id]
                predicted_count = float(length) * expected_exceedances(ctx, ref.mark)
                exceed_rows.append(
                    (event_id, predicted_count,
                     float(realized_exceedances(data, ref, window)))
                )
                best_x = expected_best_x[event_id]
                if best_x is None:
                    continue
                try:
                    actual_impr = realized_improvement(data, ref, window)
                except MissingOutcome:
                    continue
                improv_rows.append((event_id, ref.mark - best_x, actual_impr))
            cells.append(_correlate("exceedances", length, rank, exceed_rows))
            cells.append(_correlate("improvement", length, rank, improv_rows))

        record_rows: list[tuple[str, float, float]] = []
        for event_id, ctx in contexts[length].items():
            data = full[event_id]
            record_mark = ctx.fit.meta.best_x
            occurred = any(
                window.contains(record.date) and x < record_mark
                for record, x in zip(data.records, data.marks)
            )
            record_rows.append(
                (event_id, record_probability(ctx, record_mark), float(occurred))
            )
        cells.append(_correlate("record", length, None, record_rows))

    return BacktestReport(
        spec=spec,
        prior=result.prior,
        cells=tuple(cells),
        event_notes=tuple(sorted(notes.items())),
    )


def render_report_table(report: BacktestReport) -> str:
    """Human-readable summary: one block per statistic, windows by ranks."""
    ranks = list(report.spec.reference_ranks)
    lines = [
        f"backtest cutoff={report.spec.cutoff_year} mode={report.spec.data_mode.value}",
        f"prior: mu_N={report.prior.mu_N:.4f} sigma2_N={report.prior.sigma2_N:.4f} "
        f"({report.prior.provenance_name})",
        "",
    ]

    def fmt(cell: BacktestCell) -> str:
        if cell.pearson_r is None:
            return "invalid"
        return f"{cell.pearson_r:.3f}"

    for statistic in ("exceedances", "improvement"):
        lines.append(f"[{statistic}] Pearson r, windows x reference ranks")
        header = ["window"] + [f"rank{r}" for r in ranks]
        widths = [max(8, len(h)) for h in header]
        rows = [header]
        for length in report.spec.windows:
            row = [f"{length}y"]
            for rank in ranks:
                row.append(fmt(report.cell(statistic, length, rank)))
            rows.append(row)
        for row in rows:
            lines.append("  ".join(v.rjust(w) for v, w in zip(row, widths)))
        lines.append("")

    lines.append("[record] Pearson r, probability vs occurred")
    for length in report.spec.windows:
        lines.append(f"  {length}y".ljust(10) + fmt(report.cell("record", length)))
    if report.event_notes:
        lines.append("")
        lines.append("notes:")
        for event_id, note in report.event_notes:
            lines.append(f"  {event_id}: {note}")
    return "\n".join(lines) + "\n"


def render_summary_records(report: BacktestReport) -> str:
    """Machine-readable per-cell records."""
    lines = ["statistic\twindow_years\trank\tn_events\tpearson\tnote"]
    for c in report.cells:
        rank = "" if c.rank is None else str(c.rank)
        r = "" if c.pearson_r is None else repr(c.pearson_r)
        lines.append(f"{c.statistic}\t{c.window_years}\t{rank}\t{len(c.event_ids)}\t{r}\t{c.note}")
    return "\n".join(lines) + "\n"


def render_detail_records(report: BacktestReport) -> str:
    """Machine-readable per-event predicted/actual pairs for every cell."""
    lines = ["statistic\twindow_years\trank\tevent\tpredicted\tactual"]
    for c in report.cells:
        rank = "" if c.rank is None else str(c.rank)
        for event_id, p, a in zip(c.event_ids, c.predicted, c.actual):
            lines.append(f"{c.statistic}\t{c.window_years}\t{rank}\t{event_id}\t{p!r}\t{a!r}")
    return "\n".join(lines) + "\n"
