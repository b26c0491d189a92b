"""Software stand-in for the logger firmware and its analog front end.

At a fixed sample rate the simulator evaluates an ambient scenario (true
temperature and relative humidity as functions of time), pushes the values
through sensor models, signal-conditioning chains and 10-bit quantization,
and writes one wire record per tick to a byte-stream sink.  Channel scan
order is 0 through 3 within each tick.

Channel mapping matches the stock host profiles: 0 carries the LM35
temperature path (10 mV/°C, conditioned x10 to 0-5 V), 1 the TPS-00715
humidity path (1-3 V sensor span, conditioned to 1-5 V via 2v-1), 2 and 3
are spare inputs held at a configurable constant voltage.  Every chain is
clamped at 5.1 V, the protective zener level, and the converter saturates
at full scale, so over-range inputs degrade to code 1023 rather than to a
malformed frame.

The humidity sensor model is the exact inverse of the host's calibration
polynomial, which makes the full loop exact up to quantization; there is no
independent dataset that would justify modelling the sensor separately.
"""

import bisect
import math
import random
import time
from dataclasses import dataclass

from thdaq.calibration import (
    RH_CALIBRATION,
    RH_SENSOR_SPAN_V,
    invert_monotone,
)
from thdaq.protocol import Frame, encode_frame
from thdaq.transport import TransportError

DEFAULT_TEMP_ENVELOPE = (0.0, 50.0)
DEFAULT_RH_ENVELOPE = (12.0, 88.0)

SAMPLE_RATE_RANGE = (0.1, 1000.0)


@dataclass(frozen=True)
class Constant:
    """Source holding one value forever."""

    value: float

    def value_at(self, t: float) -> float:
        return self.value


@dataclass(frozen=True)
class Sinusoid:
    """mean + amplitude * sin(2*pi*t/period + phase)."""

    mean: float
    amplitude: float
    period_s: float
    phase_rad: float = 0.0

    def __post_init__(self):
        if self.period_s <= 0:
            raise ValueError("sinusoid period must be positive")

    def value_at(self, t: float) -> float:
        return self.mean + self.amplitude * math.sin(
            2.0 * math.pi * t / self.period_s + self.phase_rad
        )


@dataclass(frozen=True)
class CsvReplay:
    """Replays a recorded CSV column, step-holding between points.

    Time is taken relative to the first row's timestamp; before the first
    point the first value holds, after the last the last one does.
    """

    path: str
    column: str

    def __post_init__(self):
        from thdaq.storage import load_column

        stamps, values = load_column(self.path, self.column)
        if not values:
            raise ValueError(f"{self.path}: column {self.column!r} has no data")
        t0 = stamps[0]
        offsets = [(ts - t0).total_seconds() for ts in stamps]
        object.__setattr__(self, "_offsets", offsets)
        object.__setattr__(self, "_values", values)

    def value_at(self, t: float) -> float:
        idx = bisect.bisect_right(self._offsets, t) - 1
        return self._values[max(idx, 0)]


def parse_source(text: str):
    """Parse a source spec: const:V | sin:mean,amp,period[,phase] |
    csv:path,column | off."""
    spec = text.strip()
    if spec.lower() in ("off", "none", ""):
        return None
    kind, _, args = spec.partition(":")
    kind = kind.lower()
    parts = [p.strip() for p in args.split(",")] if args else []
    if kind in ("const", "constant"):
        if len(parts) != 1:
            raise ValueError(f"const source needs one value, got {text!r}")
        return Constant(float(parts[0]))
    if kind in ("sin", "sinusoid"):
        if len(parts) not in (3, 4):
            raise ValueError(f"sin source needs mean,amp,period[,phase], got {text!r}")
        return Sinusoid(*(float(p) for p in parts))
    if kind == "csv":
        if len(parts) != 2:
            raise ValueError(f"csv source needs path,column, got {text!r}")
        return CsvReplay(parts[0], parts[1])
    raise ValueError(f"unknown source spec {text!r}")


@dataclass(frozen=True)
class AmbientScenario:
    """True ambient conditions over time, bounded by declared envelopes."""

    temperature: object = None
    humidity: object = None
    duration_s: float | None = None
    temperature_envelope: tuple[float, float] = DEFAULT_TEMP_ENVELOPE
    humidity_envelope: tuple[float, float] = DEFAULT_RH_ENVELOPE
    ch2_volts: float = 0.0
    ch3_volts: float = 0.0

    def conditions_at(self, t: float) -> tuple[float | None, float | None]:
        temp = rh = None
        if self.temperature is not None:
            lo, hi = self.temperature_envelope
            temp = min(max(self.temperature.value_at(t), lo), hi)
        if self.humidity is not None:
            lo, hi = self.humidity_envelope
            rh = min(max(self.humidity.value_at(t), lo), hi)
        return temp, rh


@dataclass(frozen=True)
class SignalChain:
    """Conditioning stage: gain/offset into a clamped 0-5.1 V output."""

    gain: float
    offset: float = 0.0
    clamp_min: float = 0.0
    clamp_max: float = 5.1

    def __post_init__(self):
        if self.gain <= 0:
            raise ValueError("chain gain must be positive")
        if not self.clamp_min < self.clamp_max:
            raise ValueError("clamp_min must be below clamp_max")

    def apply(self, v: float) -> float:
        return min(max(self.gain * v + self.offset, self.clamp_min), self.clamp_max)


@dataclass(frozen=True)
class AdcModel:
    """Ideal 10-bit converter: 0..vref maps to 0..2^bits - 1, saturating."""

    vref: float = 5.0
    bits: int = 10

    @property
    def max_code(self) -> int:
        return (1 << self.bits) - 1

    @property
    def lsb_volts(self) -> float:
        return self.vref / self.max_code

    def quantize(self, v: float) -> int:
        code = math.floor(v / self.vref * self.max_code + 0.5)
        return min(max(code, 0), self.max_code)


def lm35_voltage(t_celsius: float) -> float:
    """LM35 output: 10 mV per °C, linear."""
    return 0.010 * t_celsius


def tps_voltage(rh_percent: float) -> float:
    """TPS-00715 output voltage for a true %RH.

    Exact inverse of the host calibration polynomial on the 1-3 V span;
    raises ValueError for humidity outside the polynomial's image.
    """
    return invert_monotone(RH_CALIBRATION, rh_percent, *RH_SENSOR_SPAN_V)


@dataclass(frozen=True)
class DeviceModel:
    """Per-channel signal path from true conditions to one frame."""

    adc: AdcModel = AdcModel()
    temperature_chain: SignalChain = SignalChain(gain=10.0)
    humidity_chain: SignalChain = SignalChain(gain=2.0, offset=-1.0)
    spare_chain: SignalChain = SignalChain(gain=1.0)

    def frame_for(
        self,
        temperature: float | None,
        humidity: float | None,
        scenario: AmbientScenario,
        rng: random.Random | None = None,
    ) -> Frame:
        # A disabled source leaves the sensor terminal grounded.
        sensor_t = lm35_voltage(temperature) if temperature is not None else 0.0
        sensor_rh = tps_voltage(humidity) if humidity is not None else 0.0
        bus = [
            self.temperature_chain.apply(sensor_t),
            self.humidity_chain.apply(sensor_rh),
            self.spare_chain.apply(scenario.ch2_volts),
            self.spare_chain.apply(scenario.ch3_volts),
        ]
        if rng is not None:
            half_lsb = self.adc.lsb_volts / 2.0
            bus = [v + rng.uniform(-half_lsb, half_lsb) for v in bus]
        return Frame(tuple(self.adc.quantize(v) for v in bus))


@dataclass
class RunSummary:
    frames_emitted: int = 0
    elapsed_s: float = 0.0


def run_simulator(
    scenario: AmbientScenario,
    sample_rate: float,
    transport,
    *,
    count: int | None = None,
    realtime: bool = False,
    noise: bool = False,
    seed: int | None = None,
    device: DeviceModel | None = None,
    on_tick=None,
    stop=None,
) -> RunSummary:
    """Emit frames for the scenario at the given rate into a writable sink.

    ``count`` overrides the scenario duration; with neither set the run is
    unbounded and needs ``stop`` (an object whose ``is_set()`` turns true)
    to finish.  ``realtime`` paces ticks against the wall clock with
    sleep-until-deadline; otherwise the run goes as fast as possible with
    tick times still spaced 1/sample_rate in simulated time.  ``on_tick``
    is called as on_tick(index, t_seconds, true_temp, true_rh, frame) after
    each frame is written.

    A failed transport write raises TransportError with the partial summary
    attached as ``.summary``.
    """
    lo, hi = SAMPLE_RATE_RANGE
    if not lo <= sample_rate <= hi:
        raise ValueError(f"sample rate {sample_rate} outside [{lo}, {hi}] Hz")
    if count is None and scenario.duration_s is not None:
        count = round(scenario.duration_s * sample_rate)
    if count is None and stop is None and not realtime:
        raise ValueError("unbounded run needs a stop event or realtime pacing")
    device = device or DeviceModel()
    rng = random.Random(seed) if noise else None
    summary = RunSummary()
    started = time.monotonic()
    i = 0
    while count is None or i < count:
        if stop is not None and stop.is_set():
            break
        t = i / sample_rate
        temperature, humidity = scenario.conditions_at(t)
        frame = device.frame_for(temperature, humidity, scenario, rng)
        try:
            transport.write(encode_frame(frame))
            transport.flush()
        except OSError as exc:
            summary.elapsed_s = time.monotonic() - started
            error = TransportError(f"transport write failed after {i} frames: {exc}")
            error.summary = summary
            raise error from exc
        summary.frames_emitted += 1
        if on_tick is not None:
            on_tick(i, t, temperature, humidity, frame)
        i += 1
        if realtime and (count is None or i < count):
            deadline = started + i / sample_rate
            delay = deadline - time.monotonic()
            if delay > 0:
                time.sleep(delay)
    summary.elapsed_s = time.monotonic() - started
    return summary


def load_scenario(path) -> AmbientScenario:
    """Read an ambient scenario from an INI file.

    ``[scenario]`` keys: temperature, rh (source specs as for
    parse_source), duration, temperature_envelope, rh_envelope,
    ch2_volts, ch3_volts.
    """
    import configparser

    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(f"scenario file not found: {path}")
    if not parser.has_section("scenario"):
        raise ValueError(f"{path}: missing [scenario] section")
    sec = parser["scenario"]
    duration = sec.getfloat("duration", fallback=None)
    return AmbientScenario(
        temperature=parse_source(sec.get("temperature", "off")),
        humidity=parse_source(sec.get("rh", "off")),
        duration_s=duration,
        temperature_envelope=_envelope(sec.get("temperature_envelope"), DEFAULT_TEMP_ENVELOPE),
        humidity_envelope=_envelope(sec.get("rh_envelope"), DEFAULT_RH_ENVELOPE),
        ch2_volts=sec.getfloat("ch2_volts", 0.0),
        ch3_volts=sec.getfloat("ch3_volts", 0.0),
    )


def _envelope(text: str | None, default: tuple[float, float]) -> tuple[float, float]:
    if text is None or not text.strip():
        return default
    parts = [float(tok) for tok in text.replace(",", " ").split()]
    if len(parts) != 2 or not parts[0] < parts[1]:
        raise ValueError(f"envelope must be 'low, high', got {text!r}")
    return (parts[0], parts[1])
