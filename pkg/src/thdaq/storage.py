"""CSV persistence for acquired samples.

Schema (exact header, one data row per sample):

    timestamp,ch0_raw,ch1_raw,ch2_raw,ch3_raw,temp_c,rh_pct,flags

Timestamps are ISO-8601 UTC with millisecond precision and a Z suffix.
Raw codes are stored for all four channels so recalibration is always
possible; temp_c and rh_pct carry the calibrated values of whichever
enabled channels report °C and %RH (empty when disabled).  Reals are
printed with 6 significant digits.  flags lists flagged channels as
``ch1;ch3`` or is empty.
"""

import csv
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone

from thdaq.calibration import (
    ADC_FULL_SCALE_V,
    ADC_MAX_CODE,
    UNIT_CELSIUS,
    UNIT_RH,
    UNIT_VOLTS,
    EngineeringValue,
    Sample,
)
from thdaq.protocol import NUM_CHANNELS, Frame

CSV_HEADER = (
    "timestamp",
    "ch0_raw",
    "ch1_raw",
    "ch2_raw",
    "ch3_raw",
    "temp_c",
    "rh_pct",
    "flags",
)

FLUSH_INTERVAL_S = 1.0


class SchemaError(ValueError):
    """CSV header does not match the expected schema."""


def format_timestamp(ts: datetime) -> str:
    """ISO-8601 UTC with millisecond precision, e.g. 2024-01-01T00:00:00.000Z."""
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc)
    return f"{ts.strftime('%Y-%m-%dT%H:%M:%S')}.{ts.microsecond // 1000:03d}Z"


def parse_timestamp(text: str) -> datetime:
    ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_real(x: float) -> str:
    return f"{x:.6g}"


def _flags_text(sample: Sample) -> str:
    return ";".join(f"ch{i}" for i, flagged in enumerate(sample.flags) if flagged)


class CsvWriter:
    """Single-owner CSV sink for one session.

    Appends are buffered and flushed at least once per second, bounding
    loss on a crash to about a second of data.  With ``append=True`` an
    existing file is continued and the header is only written when the
    file is new or empty.
    """

    def __init__(self, path, *, append: bool = False, channels_enabled=(0, 1, 2, 3)):
        self.path = str(path)
        self.channels_enabled = frozenset(channels_enabled)
        self.rows_written = 0
        mode = "a" if append else "w"
        try:
            self._file = open(self.path, mode, newline="", encoding="utf-8")
            self._writer = csv.writer(self._file)
            if mode == "w" or self._file.tell() == 0:
                self._writer.writerow(CSV_HEADER)
                self._file.flush()
        except OSError as exc:
            raise OSError(f"{self.path}: cannot open CSV sink: {exc}") from exc
        self._last_flush = time.monotonic()

    def _pick(self, sample: Sample, unit: str) -> str:
        for ch in range(NUM_CHANNELS):
            if ch in self.channels_enabled and sample.values[ch].unit == unit:
                return format_real(sample.values[ch].value)
        return ""

    def write_sample(self, sample: Sample):
        row = [
            format_timestamp(sample.timestamp),
            *(str(code) for code in sample.raw.codes),
            self._pick(sample, UNIT_CELSIUS),
            self._pick(sample, UNIT_RH),
            _flags_text(sample),
        ]
        try:
            self._writer.writerow(row)
            now = time.monotonic()
            if now - self._last_flush >= FLUSH_INTERVAL_S:
                self._file.flush()
                self._last_flush = now
        except OSError as exc:
            raise OSError(
                f"{self.path}: write failed at data row {self.rows_written + 1}: {exc}"
            ) from exc
        self.rows_written += 1

    def close(self):
        if not self._file.closed:
            self._file.flush()
            self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


def write_csv(samples, path, *, append: bool = False) -> int:
    """Write a sample stream to path; returns the number of data rows."""
    with CsvWriter(path, append=append) as writer:
        for sample in samples:
            writer.write_sample(sample)
        return writer.rows_written


@dataclass
class CsvReadResult:
    samples: list[Sample] = field(default_factory=list)
    skipped: list[tuple[int, str]] = field(default_factory=list)  # (line number, reason)


def read_csv(path) -> CsvReadResult:
    """Read a session CSV back into samples.

    Raw codes are restored bit-exactly.  temp_c/rh_pct become the °C/%RH
    values of channels 0/1 when present; channels without a stored
    engineering value are reported in bus volts recomputed from their raw
    code.  Malformed rows are skipped and reported with their line number;
    a header that does not match the schema raises SchemaError naming the
    first offending column.
    """
    result = CsvReadResult()
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        _check_header(header, path)
        for row in reader:
            line_no = reader.line_num
            if not row:
                continue
            try:
                result.samples.append(_parse_row(row))
            except (ValueError, IndexError) as exc:
                result.skipped.append((line_no, str(exc)))
    return result


def _check_header(header, path):
    if header is None:
        raise SchemaError(f"{path}: empty file, expected header {','.join(CSV_HEADER)}")
    for i, expected in enumerate(CSV_HEADER):
        found = header[i].strip() if i < len(header) else "<missing>"
        if found != expected:
            raise SchemaError(
                f"{path}: bad header column {i + 1}: expected {expected!r}, found {found!r}"
            )
    if len(header) > len(CSV_HEADER):
        raise SchemaError(
            f"{path}: bad header column {len(CSV_HEADER) + 1}: unexpected "
            f"{header[len(CSV_HEADER)]!r}"
        )


def _parse_row(row) -> Sample:
    if len(row) != len(CSV_HEADER):
        raise ValueError(f"expected {len(CSV_HEADER)} fields, got {len(row)}")
    timestamp = parse_timestamp(row[0])
    frame = Frame(tuple(int(c) for c in row[1:5]))
    flagged = set(row[7].split(";")) if row[7] else set()
    values = []
    for ch in range(NUM_CHANNELS):
        flag = f"ch{ch}" in flagged
        stored = row[5] if ch == 0 else row[6] if ch == 1 else ""
        if stored:
            unit = UNIT_CELSIUS if ch == 0 else UNIT_RH
            values.append(EngineeringValue(float(stored), unit, flag))
        else:
            volts = frame.codes[ch] * ADC_FULL_SCALE_V / ADC_MAX_CODE
            values.append(EngineeringValue(volts, UNIT_VOLTS, flag))
    return Sample(timestamp, frame, tuple(values))


def load_column(path, column: str) -> tuple[list[datetime], list[float]]:
    """Load (timestamps, values) for one named column of any CSV that has a
    ``timestamp`` column.

    Rows with an empty or unparsable value are skipped; rows whose
    timestamp does not advance past the previous kept row are dropped so
    the result is strictly increasing in time.
    """
    stamps: list[datetime] = []
    values: list[float] = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        fields = reader.fieldnames or []
        if "timestamp" not in fields:
            raise SchemaError(f"{path}: no 'timestamp' column (found {fields})")
        if column not in fields:
            raise SchemaError(f"{path}: no column {column!r} (found {fields})")
        for row in reader:
            raw = (row.get(column) or "").strip()
            if not raw:
                continue
            try:
                ts = parse_timestamp(row["timestamp"])
                value = float(raw)
            except ValueError:
                continue
            if stamps and ts <= stamps[-1]:
                continue
            stamps.append(ts)
            values.append(value)
    return stamps, values
