"""
Streaming record readers and writers for the command-line tool.

Training records are either CSV rows ``x1,...,xp,y`` (an ``x1..xp,y`` header
line is optional) or JSON lines ``{"x": [...], "y": ...}``. Query files use
the same formats without the response. Records are parsed one line at a
time so a fit never holds the input in memory.
"""

import csv
import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from .errors import DomainError, MalformedRecordError
from .learner import Sample

logger = logging.getLogger(__name__)

Parsed = Tuple[List[float], Optional[float]]


class RecordFormat(str, Enum):
    """Input file formats."""

    CSV = "csv"
    JSONL = "jsonl"


@dataclass
class IngestStats:
    """Counts of records read from one stream."""

    accepted: int = 0
    skipped: int = 0
    first_error: Optional[str] = None

    def reject(self, error: MalformedRecordError) -> None:
        self.skipped += 1
        if self.first_error is None:
            self.first_error = str(error)


def _header(p: int, with_response: bool) -> List[str]:
    names = [f"x{k}" for k in range(1, p + 1)]
    return names + ["y"] if with_response else names


def _parse_floats(fields: Sequence, line_number: int) -> List[float]:
    try:
        return [float(v) for v in fields]
    except (TypeError, ValueError) as e:
        raise MalformedRecordError(line_number, f"non-numeric field ({e})") from e


def _csv_fields(line: str) -> List[str]:
    return [f.strip() for f in next(csv.reader([line]))]


def _parse_csv(line: str, line_number: int, p: int, with_response: bool) -> Parsed:
    fields = _csv_fields(line)
    expected = p + 1 if with_response else p
    if len(fields) != expected:
        raise MalformedRecordError(line_number, f"expected {expected} fields, got {len(fields)}")
    values = _parse_floats(fields, line_number)
    if with_response:
        return values[:-1], values[-1]
    return values, None


def _parse_jsonl(line: str, line_number: int, p: int, with_response: bool) -> Parsed:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise MalformedRecordError(line_number, f"invalid JSON ({e.msg})") from e
    if not isinstance(record, dict) or "x" not in record:
        raise MalformedRecordError(line_number, 'expected an object with an "x" field')
    x = record["x"]
    if not isinstance(x, list) or len(x) != p:
        raise MalformedRecordError(line_number, f'"x" must be a list of {p} numbers')
    x = _parse_floats(x, line_number)
    if not with_response:
        return x, None
    if "y" not in record:
        raise MalformedRecordError(line_number, 'missing "y" field')
    return x, _parse_floats([record["y"]], line_number)[0]


_PARSERS = {
    RecordFormat.CSV: _parse_csv,
    RecordFormat.JSONL: _parse_jsonl,
}


def _records(stream: TextIO, fmt: RecordFormat, p: int,
             with_response: bool) -> Iterator[Tuple[int, Optional[Parsed], Optional[MalformedRecordError]]]:
    fmt = RecordFormat(fmt)
    parse = _PARSERS[fmt]
    header = _header(p, with_response)
    seen_content = False
    for line_number, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        if fmt is RecordFormat.CSV and not seen_content:
            seen_content = True
            if [f.lower() for f in _csv_fields(line)] == header:
                continue
        try:
            yield line_number, parse(line, line_number, p, with_response), None
        except MalformedRecordError as e:
            yield line_number, None, e


def iter_samples(stream: TextIO, fmt: RecordFormat, p: int, strict: bool = True,
                 stats: Optional[IngestStats] = None) -> Iterator[Tuple[int, Sample]]:
    """Yield (line_number, Sample) for every valid training record.

    Args:
        stream: Text stream positioned at the start of the input
        fmt: Record format
        p: Number of covariates
        strict: Raise on the first malformed record instead of skipping it
        stats: Optional counters updated as records are read

    Raises:
        MalformedRecordError: In strict mode, naming the offending line
    """
    stats = stats if stats is not None else IngestStats()
    for line_number, parsed, error in _records(stream, fmt, p, with_response=True):
        if error is None:
            x, y = parsed
            try:
                sample = Sample(x=np.array(x), y=y)
            except DomainError as e:
                error = MalformedRecordError(line_number, str(e))
        if error is not None:
            if strict:
                raise error
            stats.reject(error)
            logger.warning(f"Skipping record: {error}")
            continue
        stats.accepted += 1
        yield line_number, sample


def iter_query_points(stream: TextIO, fmt: RecordFormat, p: int) -> Iterator[Tuple[int, np.ndarray]]:
    """Yield (line_number, x) for every query row; any bad row raises MalformedRecordError."""
    for line_number, parsed, error in _records(stream, fmt, p, with_response=False):
        if error is not None:
            raise error
        x = np.array(parsed[0])
        if not np.all(np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
            raise MalformedRecordError(line_number, f"query point must lie in [0, 1]^{p}, got {x}")
        yield line_number, x


def write_predictions(stream: TextIO, predictions: Sequence[float]) -> int:
    """One prediction per line in shortest round-trip form."""
    count = 0
    for value in predictions:
        stream.write(f"{float(value)!r}\n")
        count += 1
    return count
