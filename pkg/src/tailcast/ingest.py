"""Performance-list ingestion and mark encoding.

Marks are normalized into a transformed space where lower is always
better: x = ln(seconds) for running events, x = -ln(centimeters) for
field events. Every downstream module works in that space and only
decodes back to raw units at the presentation edge.
"""
from __future__ import annotations

import datetime as dt
import enum
import math
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import TailcastError

TransformedMark = float


class MarkParseError(TailcastError):
    """A mark, date or header field could not be parsed."""


class EmptyListError(TailcastError):
    """No records survived windowing; there is nothing to fit."""


class Direction(enum.Enum):
    LOWER_IS_BETTER = "lower"
    HIGHER_IS_BETTER = "higher"


class Unit(enum.Enum):
    SECONDS = "s"
    CENTIMETERS = "cm"


@dataclass(frozen=True)
class EventSpec:
    """Identity and mark semantics of one athletic event."""

    event_id: str
    direction: Direction
    unit: Unit
    display_name: str = ""

    def __post_init__(self) -> None:
        pairs = {
            Direction.LOWER_IS_BETTER: Unit.SECONDS,
            Direction.HIGHER_IS_BETTER: Unit.CENTIMETERS,
        }
        if pairs[self.direction] is not self.unit:
            raise ValueError(
                f"{self.event_id}: direction {self.direction.value} pairs with "
                f"unit {pairs[self.direction].value}, not {self.unit.value}"
            )
        if not self.event_id:
            raise ValueError("event_id must be nonempty")

    @staticmethod
    def running(event_id: str, display_name: str = "") -> "EventSpec":
        return EventSpec(event_id, Direction.LOWER_IS_BETTER, Unit.SECONDS, display_name)

    @staticmethod
    def field(event_id: str, display_name: str = "") -> "EventSpec":
        return EventSpec(event_id, Direction.HIGHER_IS_BETTER, Unit.CENTIMETERS, display_name)


@dataclass(frozen=True)
class RawMark:
    value: float
    date: dt.date
    athlete: str | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.value) and self.value > 0.0):
            raise ValueError(f"mark value must be positive, got {self.value}")


@dataclass(frozen=True)
class DateWindow:
    """Half-open date interval [start, end); start=None means unbounded."""

    start: dt.date | None
    end: dt.date

    def contains(self, day: dt.date) -> bool:
        if self.start is not None and day < self.start:
            return False
        return day < self.end

    @staticmethod
    def calendar_years(first_year: int, last_year: int) -> "DateWindow":
        """Whole calendar years first_year..last_year inclusive."""
        if last_year < first_year:
            raise ValueError("last_year must be >= first_year")
        return DateWindow(dt.date(first_year, 1, 1), dt.date(last_year + 1, 1, 1))

    @staticmethod
    def years_before(cutoff_year: int, span: int) -> "DateWindow":
        """The `span` whole calendar years immediately before cutoff_year."""
        return DateWindow(dt.date(cutoff_year - span, 1, 1), dt.date(cutoff_year, 1, 1))

    @staticmethod
    def before(cutoff_year: int) -> "DateWindow":
        return DateWindow(None, dt.date(cutoff_year, 1, 1))

    def span_years(self) -> float | None:
        if self.start is None:
            return None
        return (self.end - self.start).days / 365.25


def parse_time(text: str) -> float:
    """Total seconds of a `[[H:]M:]S[.fff]` string.

    Only the leading field may reach 60; "65:50" is minutes:seconds.
    """
    raw = text.strip()
    parts = raw.split(":")
    if not raw or len(parts) > 3 or any(p == "" for p in parts):
        raise MarkParseError(f"malformed time {text!r}")
    names = ("hours", "minutes", "seconds")[3 - len(parts):]
    values = []
    for name, part in zip(names, parts):
        is_last = name == "seconds"
        pattern = r"\d+(\.\d+)?" if is_last else r"\d+"
        if not re.fullmatch(pattern, part):
            raise MarkParseError(f"invalid {name} field {part!r} in {text!r}")
        v = float(part)
        if name != names[0] and v >= 60.0:
            raise MarkParseError(f"{name} field {part!r} must be < 60 in {text!r}")
        values.append(v)
    total = 0.0
    for v in values:
        total = total * 60.0 + v
    return total


def format_seconds(seconds: float, decimals: int = 2) -> str:
    """Canonical `h:mm:ss.ff` form, dropping leading zero fields."""
    if seconds < 0.0:
        raise ValueError("seconds must be nonnegative")
    scale = 10 ** decimals
    units = round(seconds * scale)
    whole, frac = divmod(units, scale)
    h, rem = divmod(whole, 3600)
    m, s = divmod(rem, 60)
    tail = f".{frac:0{decimals}d}" if decimals > 0 else ""
    if h:
        return f"{h}:{m:02d}:{s:02d}{tail}"
    if m:
        return f"{m}:{s:02d}{tail}"
    return f"{s}{tail}"


def format_raw_mark(event: EventSpec, value: float) -> str:
    """Event-native presentation: times as h:mm:ss.ff, distances in meters."""
    if event.unit is Unit.SECONDS:
        return format_seconds(value)
    return f"{value / 100.0:.2f}"


def encode_mark(event: EventSpec, value: float) -> TransformedMark:
    """Map a raw mark into transformed space (smaller is better)."""
    if not (math.isfinite(value) and value > 0.0):
        raise ValueError(f"mark value must be positive, got {value}")
    x = math.log(value)
    return x if event.direction is Direction.LOWER_IS_BETTER else -x


def decode_mark(event: EventSpec, x: TransformedMark) -> float:
    if event.direction is Direction.LOWER_IS_BETTER:
        return math.exp(x)
    return math.exp(-x)


@dataclass(frozen=True)
class PerformanceList:
    """One event's observed tail. Records and transformed marks are kept
    aligned and sorted best (smallest x) first; c_k is the truncation
    point, normally the worst retained mark."""

    event: EventSpec
    records: tuple[RawMark, ...]
    marks: tuple[TransformedMark, ...]
    c_k: float
    window: DateWindow | None = None

    @property
    def n_k(self) -> int:
        return len(self.marks)

    @property
    def w_k(self) -> float:
        return self.marks[-1]

    @property
    def best(self) -> float:
        return self.marks[0]

    def span_years(self) -> float:
        dates = [r.date for r in self.records]
        return (max(dates) - min(dates)).days / 365.25


def build_performance_list(
    event: EventSpec,
    records: list[RawMark],
    window: DateWindow | None = None,
    c_k: float | None = None,
) -> PerformanceList:
    """Window, encode and order records into a PerformanceList.

    Ties are kept as repeated values (they are real, especially in sprints).
    c_k defaults to the worst retained mark; an override may only move the
    truncation point further out.
    """
    kept = [r for r in records if window is None or window.contains(r.date)]
    if not kept:
        raise EmptyListError(f"{event.event_id}: no records inside the requested window")
    decorated = sorted(
        kept, key=lambda r: (encode_mark(event, r.value), r.date, r.athlete or "")
    )
    marks = tuple(encode_mark(event, r.value) for r in decorated)
    worst = marks[-1]
    if c_k is None:
        c_k = worst
    elif c_k < worst:
        raise ValueError(f"c_k override {c_k} is below the worst retained mark {worst}")
    return PerformanceList(
        event=event, records=tuple(decorated), marks=marks, c_k=c_k, window=window
    )


_UNIT_TOKENS = {
    "s": (Unit.SECONDS, 1.0),
    "sec": (Unit.SECONDS, 1.0),
    "seconds": (Unit.SECONDS, 1.0),
    "cm": (Unit.CENTIMETERS, 1.0),
    "centimeters": (Unit.CENTIMETERS, 1.0),
    "m": (Unit.CENTIMETERS, 100.0),
    "meters": (Unit.CENTIMETERS, 100.0),
}
_DIRECTION_TOKENS = {
    "lower": Direction.LOWER_IS_BETTER,
    "higher": Direction.HIGHER_IS_BETTER,
}


def _parse_value(text: str, unit: Unit, scale: float) -> float:
    if unit is Unit.SECONDS:
        return parse_time(text)
    try:
        v = float(text)
    except ValueError as exc:
        raise MarkParseError(f"invalid mark value {text!r}") from exc
    return v * scale


def _parse_iso_date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError as exc:
        raise MarkParseError(f"invalid ISO date {text!r}") from exc


def read_list_file(path: str | Path) -> tuple[EventSpec, list[RawMark]]:
    """Read a canonical tab-separated list file.

    Header lines start with `#` and carry `key=value` pairs; records are
    `value<TAB>ISO-date<TAB>athlete?`. Meter-valued files are scaled to
    centimeters here, so callers always see the internal unit.
    """
    path = Path(path)
    header: dict[str, str] = {}
    rows: list[tuple[str, str, str | None]] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        if line.lstrip().startswith("#"):
            body = line.lstrip()[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                header[key.strip()] = value.strip()
            continue
        cells = line.split("\t")
        if len(cells) < 2:
            raise MarkParseError(f"{path.name}:{lineno}: expected value<TAB>date, got {line!r}")
        athlete = cells[2].strip() if len(cells) > 2 and cells[2].strip() else None
        rows.append((cells[0].strip(), cells[1].strip(), athlete))

    try:
        direction = _DIRECTION_TOKENS[header.get("direction", "").lower()]
    except KeyError:
        raise MarkParseError(f"{path.name}: header must declare direction=lower|higher")
    unit_token = header.get("unit", "").lower()
    if unit_token not in _UNIT_TOKENS:
        raise MarkParseError(f"{path.name}: header must declare unit= one of {sorted(_UNIT_TOKENS)}")
    unit, scale = _UNIT_TOKENS[unit_token]
    event_id = header.get("event", path.stem)
    event = EventSpec(event_id, direction, unit, header.get("display_name", ""))

    records = []
    for value_text, date_text, athlete in rows:
        value = _parse_value(value_text, unit, scale)
        records.append(RawMark(value=value, date=_parse_iso_date(date_text), athlete=athlete))
    return event, records


def load_performance_list(
    path: str | Path,
    event: EventSpec | None = None,
    window: DateWindow | None = None,
    c_k: float | None = None,
) -> PerformanceList:
    """Load, window and encode one event's list from a canonical file."""
    file_event, records = read_list_file(path)
    spec = event if event is not None else file_event
    try:
        return build_performance_list(spec, records, window=window, c_k=c_k)
    except EmptyListError:
        raise EmptyListError(
            f"{spec.event_id}: no records from {Path(path).name} inside the requested window"
        )


def write_list_file(path: str | Path, event: EventSpec, records: list[RawMark] | tuple) -> None:
    """Serialize records in the canonical format read_list_file accepts.

    Values are written with full float precision so a load/write/load trip
    is lossless.
    """
    lines = [
        f"# event={event.event_id}",
        f"# unit={event.unit.value}",
        f"# direction={event.direction.value}",
    ]
    if event.display_name:
        lines.append(f"# display_name={event.display_name}")
    for r in records:
        cells = [repr(r.value), r.date.isoformat()]
        if r.athlete:
            cells.append(r.athlete)
        lines.append("\t".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_DATE_PATTERNS = (
    (re.compile(r"^\d{4}-\d{2}-\d{2}$"), "%Y-%m-%d"),
    (re.compile(r"^\d{1,2}\.\d{1,2}\.\d{4}$"), "%d.%m.%Y"),
)
_WIND_RE = re.compile(r"^[+-]\d+(\.\d+)?$")


def _tolerant_date(token: str) -> dt.date | None:
    for pattern, fmt in _DATE_PATTERNS:
        if pattern.match(token):
            try:
                return dt.datetime.strptime(token, fmt).date()
            except ValueError:
                return None
    if re.fullmatch(r"(19|20)\d{2}", token):
        return dt.date(int(token), 12, 31)
    return None


def read_tolerant_list(path: str | Path, event: EventSpec) -> list[RawMark]:
    """Best-effort import of whitespace-aligned public all-time lists.

    The mark is the first token of each line and the date the last
    date-like token; tokens in between that look like names are kept as
    the athlete. Field-event values below 100 are taken to be meters.
    """
    path = Path(path)
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        tokens = line.split()
        mark_token = tokens[0]
        date = None
        date_idx = None
        for i in range(len(tokens) - 1, 0, -1):
            date = _tolerant_date(tokens[i])
            if date is not None:
                date_idx = i
                break
        if date is None:
            raise MarkParseError(f"{path.name}:{lineno}: no date-like token in {line!r}")
        value = _parse_value(mark_token, event.unit, 1.0)
        if event.unit is Unit.CENTIMETERS and value < 100.0:
            value *= 100.0
        name_tokens = [
            t for t in tokens[1:date_idx]
            if not _WIND_RE.match(t) and not re.fullmatch(r"[\d.:]+", t)
        ]
        athlete = " ".join(name_tokens) or None
        records.append(RawMark(value=value, date=date, athlete=athlete))
    return records
