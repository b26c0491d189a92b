"""Serial wire format: encoder and resynchronizing stream decoder.

One record carries the four channel codes of a single sampling instant:

    [dddd][dddd][dddd][dddd]\n

Four zero-padded 4-digit ASCII decimal fields, channel 0 first, terminated
by a single line feed (0x0A) -- 17 bytes per record.  Each field is a
10-bit ADC code, so a record is valid iff it is exactly 16 digits and every
field parses to at most 1023.  The format carries no checksum or sequence
number; integrity relies on record-shape validation.

Fixed width plus a one-byte delimiter makes the stream self-resynchronizing:
after any burst of corrupted bytes the decoder is realigned by the next line
feed, and at most the record whose delimiter was swallowed is lost with it.
Real hardware variants of this device class may frame differently; the
decoder assumes the records produced by the firmware emulator in
``thdaq.simulator``.
"""

from dataclasses import dataclass

NUM_CHANNELS = 4
MAX_CODE = 1023  # full scale of the 10-bit converter
FIELD_WIDTH = 4
RECORD_DIGITS = NUM_CHANNELS * FIELD_WIDTH
RECORD_SIZE = RECORD_DIGITS + 1  # including the line feed
DELIMITER = 0x0A


@dataclass(frozen=True)
class Frame:
    """Four ADC codes (0..1023) for one sampling instant, channel 0 first."""

    codes: tuple[int, int, int, int]

    def __post_init__(self):
        codes = tuple(int(c) for c in self.codes)
        if len(codes) != NUM_CHANNELS:
            raise ValueError(f"frame needs exactly {NUM_CHANNELS} codes, got {len(codes)}")
        for i, c in enumerate(codes):
            if not 0 <= c <= MAX_CODE:
                raise ValueError(f"channel {i} code {c} outside 0..{MAX_CODE}")
        object.__setattr__(self, "codes", codes)

    def __getitem__(self, channel: int) -> int:
        return self.codes[channel]


@dataclass
class DecodeDiagnostics:
    """Counters over decoded input; all monotonically non-decreasing."""

    frames_ok: int = 0
    frames_rejected: int = 0
    bytes_skipped: int = 0

    def __add__(self, other: "DecodeDiagnostics") -> "DecodeDiagnostics":
        return DecodeDiagnostics(
            self.frames_ok + other.frames_ok,
            self.frames_rejected + other.frames_rejected,
            self.bytes_skipped + other.bytes_skipped,
        )


def encode_frame(frame: Frame) -> bytes:
    """Encode a frame as one 17-byte LF-terminated wire record."""
    return ("".join(f"{c:04d}" for c in frame.codes) + "\n").encode("ascii")


def _parse_record(segment: bytes) -> Frame | None:
    """Parse one delimiter-stripped record; None if it is not a valid frame."""
    if len(segment) != RECORD_DIGITS or not segment.isdigit():
        return None
    codes = tuple(
        int(segment[i : i + FIELD_WIDTH]) for i in range(0, RECORD_DIGITS, FIELD_WIDTH)
    )
    if any(c > MAX_CODE for c in codes):
        return None
    return Frame(codes)


class FrameDecoder:
    """Incremental decoder for one byte stream.

    Feed arbitrary chunks in arrival order; complete valid records are
    returned as frames, anything else is discarded up to and including the
    next line feed and counted.  Corruption never aborts decoding, and the
    output is invariant under how the stream is chunked.

    One decoder instance owns one stream; distinct instances are independent.
    """

    def __init__(self):
        self._buf = bytearray()
        self._discarding = False  # skipping a known-invalid record until the next LF
        self.diagnostics = DecodeDiagnostics()

    @property
    def pending_bytes(self) -> int:
        """Bytes of the trailing partial record held back for the next feed."""
        return len(self._buf)

    def feed(self, data: bytes) -> tuple[list[Frame], DecodeDiagnostics]:
        """Decode a chunk; returns (frames, counter delta for this call)."""
        frames: list[Frame] = []
        delta = DecodeDiagnostics()
        buf = self._buf
        buf.extend(data)
        start = 0
        while True:
            end = buf.find(DELIMITER, start)
            if end < 0:
                break
            if self._discarding:
                # Tail of an oversized record whose start was already dropped.
                delta.frames_rejected += 1
                delta.bytes_skipped += end - start + 1
                self._discarding = False
            else:
                frame = _parse_record(bytes(buf[start:end]))
                if frame is None:
                    delta.frames_rejected += 1
                    delta.bytes_skipped += end - start + 1
                else:
                    delta.frames_ok += 1
                    frames.append(frame)
            start = end + 1
        del buf[:start]
        # Bound memory: anything longer than a record body cannot become valid,
        # so drop it now and stay in discard mode until the delimiter arrives.
        if not self._discarding and len(buf) > RECORD_DIGITS:
            delta.bytes_skipped += len(buf)
            buf.clear()
            self._discarding = True
        elif self._discarding and buf:
            delta.bytes_skipped += len(buf)
            buf.clear()
        self.diagnostics = self.diagnostics + delta
        return frames, delta


def decode_frames(data: bytes) -> list[Frame]:
    """Decode a complete captured buffer with a fresh decoder."""
    frames, _ = FrameDecoder().feed(data)
    return frames
