"""Waveform reconstruction and series comparison for recorded sessions.

Comparison aligns the second series to the first by nearest timestamp,
accepting only pairs closer than half the first series' median sampling
interval; instruments with unsynchronized clocks never get paired across
more than half a sample period.  Deviation statistics are computed over
the aligned pairs.

Reconstruction renders one figure (a self-contained vector graphic by
default) with a polyline per series plus a plain two-column text table
(seconds offset, value) consumable by external plotters.
"""

import statistics
from bisect import bisect_left
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.dates as mdates
import matplotlib.pyplot as plt

from thdaq.calibration import UNIT_CELSIUS, UNIT_RH
from thdaq.storage import load_column


class AlignmentError(ValueError):
    """No aligned pairs between the two series."""


@dataclass(frozen=True)
class Series:
    """A labeled, strictly time-ordered sequence of values in one unit."""

    label: str
    unit: str
    times: tuple[datetime, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(self.times))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.times) != len(self.values):
            raise ValueError("times and values must have equal length")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError(f"series {self.label!r}: timestamps must strictly increase")

    def __len__(self) -> int:
        return len(self.times)

    def median_interval_s(self) -> float | None:
        if len(self.times) < 2:
            return None
        gaps = [
            (b - a).total_seconds() for a, b in zip(self.times, self.times[1:])
        ]
        return statistics.median(gaps)


@dataclass(frozen=True)
class SeriesComparison:
    max_abs_dev: float
    mean_abs_dev: float
    n_compared: int
    tolerance: float
    within_tolerance: bool

    def __str__(self) -> str:
        return (
            f"n_compared={self.n_compared} max_abs_dev={self.max_abs_dev:.6g} "
            f"mean_abs_dev={self.mean_abs_dev:.6g} "
            f"within_tolerance={'true' if self.within_tolerance else 'false'} "
            f"(tolerance {self.tolerance:.6g})"
        )


def compare_series(a: Series, b: Series, tolerance: float) -> SeriesComparison:
    """Deviation statistics of b against a over nearest-neighbor pairs.

    Raises ValueError on unit mismatch and AlignmentError when no b point
    falls within half of a's median sampling interval of any a point.
    """
    if a.unit != b.unit:
        raise ValueError(f"unit mismatch: {a.unit!r} vs {b.unit!r}")
    if len(a) == 0 or len(b) == 0:
        raise AlignmentError("cannot compare empty series")
    median = a.median_interval_s()
    window = median / 2.0 if median is not None else 0.0
    deviations = []
    for t, value in zip(a.times, a.values):
        idx = bisect_left(b.times, t)
        best = None
        for j in (idx - 1, idx):
            if 0 <= j < len(b):
                dt = abs((b.times[j] - t).total_seconds())
                if best is None or dt < best[0]:
                    best = (dt, j)
        if best is not None and best[0] <= window:
            deviations.append(abs(value - b.values[best[1]]))
    if not deviations:
        raise AlignmentError(
            f"no overlapping points within {window:.6g} s between "
            f"{a.label!r} and {b.label!r}"
        )
    max_dev = max(deviations)
    return SeriesComparison(
        max_abs_dev=max_dev,
        mean_abs_dev=sum(deviations) / len(deviations),
        n_compared=len(deviations),
        tolerance=tolerance,
        within_tolerance=max_dev <= tolerance,
    )


_COLUMN_UNITS = {"temp_c": UNIT_CELSIUS, "rh_pct": UNIT_RH}


def load_series(path, column: str, label: str | None = None) -> Series:
    """Build a Series from one column of a CSV with a timestamp column."""
    stamps, values = load_column(path, column)
    if label is None:
        label = f"{Path(path).stem}:{column}"
    return Series(label, _COLUMN_UNITS.get(column, column), tuple(stamps), tuple(values))


def write_plot_table(series_list, path) -> str:
    """Write the plain-text companion table: one block per series with
    '# label (unit)' heading and 'seconds value' rows, blocks separated by
    blank lines (gnuplot index convention)."""
    origin = min(s.times[0] for s in series_list)
    with open(path, "w", encoding="utf-8") as f:
        for k, series in enumerate(series_list):
            if k:
                f.write("\n\n")
            f.write(f"# {series.label} ({series.unit})\n")
            f.write("# seconds value\n")
            for t, v in zip(series.times, series.values):
                f.write(f"{(t - origin).total_seconds():.6f} {v:.6g}\n")
    return str(path)


def reconstruct_waveform(
    series_list,
    out_path,
    *,
    table_path=None,
    title: str | None = None,
) -> tuple[str, str | None]:
    """Render series as one time-axis figure plus the companion text table.

    The figure format follows the file extension (.svg default when none);
    series are grouped by unit, with a second unit drawn against a right
    axis.  Returns (figure path, table path or None).
    """
    series_list = list(series_list)
    if not series_list:
        raise ValueError("nothing to plot: no series given")
    for s in series_list:
        if len(s) == 0:
            raise ValueError(f"series {s.label!r} is empty")
    out_path = Path(out_path)
    if not out_path.suffix:
        out_path = out_path.with_suffix(".svg")

    units = []
    for s in series_list:
        if s.unit not in units:
            units.append(s.unit)

    fig, ax_left = plt.subplots(figsize=(9, 4.5))
    axes_by_unit = {units[0]: ax_left}
    if len(units) == 2:
        axes_by_unit[units[1]] = ax_left.twinx()
    handles, labels = [], []
    cycle = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, s in enumerate(series_list):
        ax = axes_by_unit.get(s.unit, ax_left)
        (line,) = ax.plot(s.times, s.values, label=s.label, color=cycle[i % len(cycle)])
        handles.append(line)
        labels.append(s.label)
    ax_left.set_xlabel("time (UTC)")
    ax_left.set_ylabel(units[0])
    if len(units) == 2:
        axes_by_unit[units[1]].set_ylabel(units[1])
    elif len(units) > 2:
        ax_left.set_ylabel(" / ".join(units))
    ax_left.xaxis.set_major_formatter(mdates.DateFormatter("%H:%M:%S"))
    fig.autofmt_xdate()
    ax_left.grid(True, alpha=0.3)
    if title:
        ax_left.set_title(title)
    ax_left.legend(handles, labels, loc="best")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)

    table = write_plot_table(series_list, table_path) if table_path else None
    return str(out_path), table
