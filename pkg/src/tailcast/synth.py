"""Synthetic corpora drawn from the model itself.

Used by the test suite and by the bundled demo fixtures: performance lists
whose true population parameters are known, either as a single windowed tail
(the best `keep` of `population` draws) or as a dated multi-year history
thresholded at a fixed qualifying mark, the way real top lists are built.
"""
from __future__ import annotations

from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .distcore import std_normal_quantile
from .ingest import (
    EventSpec,
    PerformanceList,
    RawMark,
    build_performance_list,
    decode_mark,
    write_list_file,
)


def sample_tail(seed, mu: float, sigma: float, population: int, keep: int) -> np.ndarray:
    """The `keep` best transformed marks among `population` normal draws, sorted."""
    if not 1 <= keep <= population:
        raise ValueError(f"keep must be in [1, {population}], got {keep}")
    rng = np.random.default_rng(seed)
    draws = rng.normal(mu, sigma, population)
    draws.sort()
    return draws[:keep].copy()


def tail_performance_list(event: EventSpec, tail: Sequence[float],
                          first_year: int, last_year: int, seed) -> PerformanceList:
    """Wrap a tail of transformed marks into a dated PerformanceList.

    Dates are uniform over the calendar span; they carry no signal beyond
    fixing the data span, so pass an explicit t_m to the fitter when the
    exact value matters.
    """
    rng = np.random.default_rng(seed)
    start = date(first_year, 1, 1)
    span_days = (date(last_year + 1, 1, 1) - start).days
    offsets = rng.integers(0, span_days, len(tail))
    records = [
        RawMark(value=decode_mark(event, float(x)), date=start + timedelta(days=int(d)))
        for x, d in zip(tail, offsets)
    ]
    return build_performance_list(event, records)


def synth_event(event: EventSpec, mu: float, sigma: float,
                attempts_by_year: Mapping[int, int], list_size: int,
                seed) -> PerformanceList:
    """A dated history kept above a fixed qualifying mark.

    Each year contributes its scheduled number of attempts; every attempt
    better than the qualifying mark goes on the list. The mark is chosen so
    the expected list length equals list_size, which must stay below half
    the total attempts to keep the list a genuine tail.
    """
    if not attempts_by_year:
        raise ValueError("attempts_by_year is empty")
    total = sum(attempts_by_year.values())
    if not 1 <= list_size < total / 2:
        raise ValueError(f"list_size must be in [1, {total // 2}), got {list_size}")
    cut = mu + sigma * std_normal_quantile(list_size / total)
    rng = np.random.default_rng(seed)
    records = []
    for year in sorted(attempts_by_year):
        n = attempts_by_year[year]
        if n < 1:
            raise ValueError(f"year {year} has {n} attempts")
        draws = rng.normal(mu, sigma, n)
        kept = np.sort(draws[draws <= cut])
        offsets = rng.integers(0, 365, len(kept))
        start = date(year, 1, 1)
        records.extend(
            RawMark(value=decode_mark(event, float(x)), date=start + timedelta(days=int(d)))
            for x, d in zip(kept, offsets)
        )
    return build_performance_list(event, records)


def write_corpus(out_dir: Path, lists: Iterable[PerformanceList]) -> list[Path]:
    """Write one data file per event; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for data in lists:
        path = out_dir / f"{data.event.event_id}.tsv"
        write_list_file(path, data.event, data.records)
        paths.append(path)
    return paths
