"""Host-side acquisition: transport -> decoder -> calibration -> sinks.

One reader context owns the transport and the decoder, polls for bytes
with a 250 ms timeout, and delivers every decoded frame as a timestamped,
calibrated sample to the configured sinks in wire order: the CSV writer,
the live readout, and any callback.  Decoder rejections are counted, never
fatal; a sink failure (e.g. disk full) ends the session with the partial
statistics filled in.  A stop event may be set from any other thread and
takes effect within one poll timeout.

Timestamps are host receive time (the wire carries none).  For
reproducible sessions a fixed timestamp base can be configured, in which
case sample i is stamped base + i * step.
"""

import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

from thdaq.calibration import ChannelProfile, Sample, calibrate_frame, default_profiles
from thdaq.protocol import NUM_CHANNELS, FrameDecoder
from thdaq.storage import CsvWriter, format_timestamp
from thdaq.transport import TransportError, open_read_transport


@dataclass
class SessionConfig:
    """Where to read, how to calibrate, where to deliver."""

    transport: object  # spec string (see thdaq.transport) or an open transport
    profiles: tuple[ChannelProfile, ...] = field(default_factory=default_profiles)
    csv_path: str | None = None
    csv_append: bool = False
    channels_enabled: frozenset = frozenset(range(NUM_CHANNELS))
    max_duration_s: float | None = None
    timestamp_base: datetime | None = None
    timestamp_step_s: float = 1.0

    def __post_init__(self):
        if not self.channels_enabled:
            raise ValueError("at least one channel must be enabled")
        bad = [ch for ch in self.channels_enabled if not 0 <= ch < NUM_CHANNELS]
        if bad:
            raise ValueError(f"invalid channels {bad}")


@dataclass
class AcquisitionStats:
    frames_ok: int = 0
    frames_rejected: int = 0
    bytes_total: int = 0
    first_timestamp: datetime | None = None
    last_timestamp: datetime | None = None
    effective_rate_hz: float = 0.0
    error: str | None = None

    def summary_block(self) -> str:
        lines = [
            "acquisition summary:",
            f"  frames ok        {self.frames_ok}",
            f"  frames rejected  {self.frames_rejected}",
            f"  bytes read       {self.bytes_total}",
        ]
        if self.first_timestamp is not None:
            lines.append(f"  first sample     {format_timestamp(self.first_timestamp)}")
            lines.append(f"  last sample      {format_timestamp(self.last_timestamp)}")
            lines.append(f"  effective rate   {self.effective_rate_hz:.3f} Hz")
        if self.error:
            lines.append(f"  error            {self.error}")
        return "\n".join(lines)


def open_transport(config: SessionConfig):
    """Open the configured byte-stream source."""
    if isinstance(config.transport, str):
        return open_read_transport(config.transport)
    return config.transport


def live_readout(sample: Sample, channels_enabled=frozenset(range(NUM_CHANNELS))) -> str:
    """One fixed-width line: timestamp, then value/unit per enabled channel,
    with flagged values suffixed '!'."""
    parts = [format_timestamp(sample.timestamp)]
    for ch in range(NUM_CHANNELS):
        if ch not in channels_enabled:
            continue
        v = sample.values[ch]
        mark = "!" if v.flagged else ""
        parts.append(f"ch{ch} {v.value:7.2f} {v.unit}{mark}")
    return "  ".join(parts)


def acquire(
    config: SessionConfig,
    *,
    stop=None,
    on_sample=None,
    live_stream=None,
) -> AcquisitionStats:
    """Run one acquisition session to completion and return its statistics.

    Ends at end-of-stream, after ``max_duration_s``, or once ``stop`` is
    set.  ``on_sample(sample)`` is invoked for every frame; ``live_stream``
    (a text file object) receives one readout line per sample.  No decoded
    frame is dropped once its bytes arrive: every frame the decoder yields
    is delivered to every sink before the next chunk is read.
    """
    stats = AcquisitionStats()
    transport = open_transport(config)
    decoder = FrameDecoder()
    writer = None
    if config.csv_path is not None:
        writer = CsvWriter(
            config.csv_path,
            append=config.csv_append,
            channels_enabled=config.channels_enabled,
        )
    started = time.monotonic()
    try:
        while True:
            if stop is not None and stop.is_set():
                break
            if (
                config.max_duration_s is not None
                and time.monotonic() - started >= config.max_duration_s
            ):
                break
            chunk = transport.read_chunk()
            if chunk is None:
                break
            if not chunk:
                continue
            stats.bytes_total += len(chunk)
            frames, delta = decoder.feed(chunk)
            stats.frames_rejected += delta.frames_rejected
            for frame in frames:
                if config.timestamp_base is not None:
                    ts = config.timestamp_base + timedelta(
                        seconds=stats.frames_ok * config.timestamp_step_s
                    )
                else:
                    ts = datetime.now(timezone.utc)
                sample = calibrate_frame(frame, config.profiles, ts)
                try:
                    if writer is not None:
                        writer.write_sample(sample)
                    if live_stream is not None:
                        print(
                            live_readout(sample, config.channels_enabled),
                            file=live_stream,
                        )
                    if on_sample is not None:
                        on_sample(sample)
                except Exception as exc:  # sink failure: stop with partial stats
                    stats.error = f"sink failure: {exc}"
                    return stats
                stats.frames_ok += 1
                if stats.first_timestamp is None:
                    stats.first_timestamp = ts
                stats.last_timestamp = ts
    except TransportError as exc:
        stats.error = str(exc)
    finally:
        if writer is not None:
            writer.close()
        transport.close()
        span = (
            (stats.last_timestamp - stats.first_timestamp).total_seconds()
            if stats.frames_ok >= 2
            else 0.0
        )
        stats.effective_rate_hz = (stats.frames_ok - 1) / span if span > 0 else 0.0
    return stats


def print_summary(stats: AcquisitionStats, stream=None):
    print(stats.summary_block(), file=stream or sys.stderr)
