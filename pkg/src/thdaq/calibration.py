"""Raw ADC codes to engineering units.

A channel reading is converted in three stages:

    code -> bus volts -> sensor volts -> engineering value

Bus volts is the conditioned voltage at the converter input (code * 5/1023).
The conditioning stage is inverted with a linear map, then the sensor's own
transfer is applied: a linear scale for the temperature channel, the
fifth-order voltage-to-%RH calibration polynomial for the humidity channel,
or nothing for spare channels reported in volts.

Out-of-range readings are computed and flagged, never clamped: a full-scale
code (ADC rail), a sensor voltage outside the sensor's stated span, or a
result outside its physical range all mark the value, and display or
analysis layers decide what to do with it.
"""

import configparser
import warnings
from dataclasses import dataclass
from datetime import datetime
from typing import NamedTuple

import numpy as np

from thdaq.protocol import MAX_CODE, NUM_CHANNELS, Frame

ADC_FULL_SCALE_V = 5.0
ADC_MAX_CODE = MAX_CODE

UNIT_CELSIUS = "°C"
UNIT_RH = "%RH"
UNIT_VOLTS = "V"

_UNIT_ALIASES = {
    "degc": UNIT_CELSIUS,
    "c": UNIT_CELSIUS,
    "°c": UNIT_CELSIUS,
    "%rh": UNIT_RH,
    "rh": UNIT_RH,
    "v": UNIT_VOLTS,
    "volts": UNIT_VOLTS,
}


class NonMonotonicError(ValueError):
    """A polynomial assumed monotone on an interval is not."""


class FlaggedValue(NamedTuple):
    value: float
    out_of_range: bool


@dataclass(frozen=True)
class Polynomial:
    """Real polynomial with coefficients stored in ascending degree."""

    coefficients: tuple[float, ...]

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        if not coeffs:
            raise ValueError("polynomial needs at least one coefficient")
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def from_descending(cls, coefficients) -> "Polynomial":
        """Build from highest-degree-first coefficients (the conventional
        written order)."""
        return cls(tuple(reversed(tuple(coefficients))))

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, x: float) -> float:
        # Horner evaluation.
        acc = 0.0
        for c in reversed(self.coefficients):
            acc = acc * x + c
        return acc

    def derivative(self) -> "Polynomial":
        if self.degree == 0:
            return Polynomial((0.0,))
        return Polynomial(tuple(i * c for i, c in enumerate(self.coefficients) if i > 0))


#: Fifth-order voltage-to-%RH calibration for the TPS-00715 humidity sensor;
#: x is the sensor output voltage (1-3 V nominal span).
RH_CALIBRATION = Polynomial.from_descending(
    (15.538, -161.37, 655.54, -1289.1, 1259.3, -472.15)
)

#: Sensor voltage span over which RH_CALIBRATION applies.
RH_SENSOR_SPAN_V = (1.0, 3.0)


def eval_polynomial(p: Polynomial, x: float) -> float:
    """Evaluate p at x in Horner order."""
    return p(x)


@dataclass(frozen=True)
class LinearMap:
    """Invertible y = gain * x + offset."""

    gain: float
    offset: float = 0.0

    def __post_init__(self):
        if self.gain == 0:
            raise ValueError("linear map gain must be nonzero")

    def __call__(self, x: float) -> float:
        return self.gain * x + self.offset

    def inverse(self) -> "LinearMap":
        return LinearMap(1.0 / self.gain, -self.offset / self.gain)


def code_to_bus_voltage(code: int) -> float:
    """Converter-input volts for a 10-bit code (0 -> 0 V, 1023 -> 5 V)."""
    if not 0 <= code <= ADC_MAX_CODE:
        raise ValueError(f"code {code} outside 0..{ADC_MAX_CODE}")
    return code * ADC_FULL_SCALE_V / ADC_MAX_CODE


def temperature_from_bus(v_bus: float) -> FlaggedValue:
    """Temperature for a conditioned bus voltage (0-5 V spans 0-50 °C).

    Voltages outside [0, 5.1] (past the protective clamp) are still
    converted but flagged.
    """
    return FlaggedValue(10.0 * v_bus, not 0.0 <= v_bus <= 5.1)


def bus_to_sensor_voltage_rh(v_bus: float) -> float:
    """Undo the humidity channel's conditioning (bus = 2 * sensor - 1)."""
    return (v_bus + 1.0) / 2.0


def rh_from_sensor_voltage(x: float) -> FlaggedValue:
    """%RH for a humidity-sensor voltage via the fifth-order calibration.

    Flagged when x is outside the sensor's 1-3 V span or the result falls
    outside 0-100 %RH; the value is computed either way.
    """
    rh = RH_CALIBRATION(x)
    lo, hi = RH_SENSOR_SPAN_V
    flagged = not (lo <= x <= hi) or not (0.0 <= rh <= 100.0)
    return FlaggedValue(rh, flagged)


def fit_polynomial(points, degree: int) -> Polynomial:
    """Least-squares polynomial fit, ascending coefficients.

    Solved via SVD on the Vandermonde matrix rather than normal equations;
    degree-5 fits on a narrow interval are already poorly scaled and the
    squared condition number of A^T A would cost real digits.

    Raises ValueError for underdetermined input (need more points than the
    degree, with at least two distinct x); warns when the system is
    rank-deficient or severely ill-conditioned.
    """
    pts = [(float(x), float(y)) for x, y in points]
    if degree < 0:
        raise ValueError("degree must be >= 0")
    if len(pts) <= degree:
        raise ValueError(
            f"need more than {degree} points for a degree-{degree} fit, got {len(pts)}"
        )
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    if degree > 0 and np.all(xs == xs[0]):
        raise ValueError("all x values identical; fit is underdetermined")
    vander = np.vander(xs, degree + 1, increasing=True)
    coeffs, _, rank, sv = np.linalg.lstsq(vander, ys, rcond=None)
    if rank < degree + 1:
        warnings.warn(
            f"rank-deficient fit (rank {rank} < {degree + 1}); coefficients are "
            "a minimum-norm solution",
            RuntimeWarning,
            stacklevel=2,
        )
    elif sv[-1] > 0 and sv[0] / sv[-1] > 1e12:
        warnings.warn(
            f"ill-conditioned fit (condition number {sv[0] / sv[-1]:.2e})",
            RuntimeWarning,
            stacklevel=2,
        )
    return Polynomial(tuple(coeffs))


def invert_monotone(
    p: Polynomial, y: float, lo: float, hi: float, *, tol: float = 1e-9
) -> float:
    """Solve p(x) = y on [lo, hi] by bisection, for strictly monotone p.

    Monotonicity is verified by sampling the derivative's sign across the
    interval; a sign change raises NonMonotonicError.  y outside the image
    [p(lo), p(hi)] raises ValueError.  The returned x is within tol of the
    true root.
    """
    if not lo < hi:
        raise ValueError(f"invalid interval [{lo}, {hi}]")
    dp = p.derivative()
    signs = [dp(lo + (hi - lo) * i / 32.0) for i in range(33)]
    if all(s > 0 for s in signs):
        increasing = True
    elif all(s < 0 for s in signs):
        increasing = False
    else:
        raise NonMonotonicError(
            f"polynomial is not strictly monotone on [{lo}, {hi}]"
        )
    y_lo, y_hi = p(lo), p(hi)
    if not increasing:
        y_lo, y_hi = y_hi, y_lo
    if not (min(y_lo, y_hi) <= y <= max(y_lo, y_hi)):
        raise ValueError(f"target {y} outside image [{y_lo}, {y_hi}] of [{lo}, {hi}]")
    a, b = lo, hi
    while b - a > tol:
        mid = (a + b) / 2.0
        if (p(mid) < y) == increasing:
            a = mid
        else:
            b = mid
    return (a + b) / 2.0


@dataclass(frozen=True)
class ChannelProfile:
    """Full raw-code -> engineering-unit transform for one channel.

    ``conditioning_inverse`` maps bus volts back to sensor volts (None for
    channels read directly).  ``transform`` is the sensor transfer applied
    afterwards: a LinearMap, a Polynomial, or None to report sensor volts
    as-is.  ``domain`` bounds the sensor voltage the transform is valid
    over, ``output_range`` the physically meaningful result span; readings
    outside either are flagged.
    """

    channel: int
    unit: str
    conditioning_inverse: LinearMap | None = None
    transform: LinearMap | Polynomial | None = None
    domain: tuple[float, float] | None = None
    output_range: tuple[float, float] | None = None
    adc_full_scale: float = ADC_FULL_SCALE_V
    adc_max_code: int = ADC_MAX_CODE

    def __post_init__(self):
        if not 0 <= self.channel < NUM_CHANNELS:
            raise ValueError(f"channel {self.channel} outside 0..{NUM_CHANNELS - 1}")

    def convert(self, code: int) -> "EngineeringValue":
        v_bus = code * self.adc_full_scale / self.adc_max_code
        v_sensor = self.conditioning_inverse(v_bus) if self.conditioning_inverse else v_bus
        value = self.transform(v_sensor) if self.transform is not None else v_sensor
        flagged = code >= self.adc_max_code  # rail: saturation is indistinguishable
        if self.domain is not None:
            flagged = flagged or not self.domain[0] <= v_sensor <= self.domain[1]
        if self.output_range is not None:
            flagged = flagged or not self.output_range[0] <= value <= self.output_range[1]
        return EngineeringValue(value, self.unit, flagged)


@dataclass(frozen=True)
class EngineeringValue:
    value: float
    unit: str
    flagged: bool = False


@dataclass(frozen=True)
class Sample:
    """One timestamped frame with its calibrated per-channel values."""

    timestamp: datetime
    raw: Frame
    values: tuple[EngineeringValue, ...]

    @property
    def flags(self) -> tuple[bool, ...]:
        return tuple(v.flagged for v in self.values)


def default_profiles() -> tuple[ChannelProfile, ...]:
    """The stock channel assignment: 0 = temperature, 1 = humidity,
    2 and 3 = spare inputs reported in volts."""
    temperature = ChannelProfile(
        channel=0,
        unit=UNIT_CELSIUS,
        conditioning_inverse=LinearMap(10.0).inverse(),  # bus = 10 * sensor
        transform=LinearMap(100.0),  # LM35: 10 mV/°C
        domain=(0.0, 0.51),  # bus clamp at 5.1 V, seen through the divider
    )
    humidity = ChannelProfile(
        channel=1,
        unit=UNIT_RH,
        conditioning_inverse=LinearMap(2.0, -1.0).inverse(),  # bus = 2 * sensor - 1
        transform=RH_CALIBRATION,
        domain=RH_SENSOR_SPAN_V,
        output_range=(0.0, 100.0),
    )
    spares = tuple(
        ChannelProfile(channel=ch, unit=UNIT_VOLTS) for ch in (2, 3)
    )
    return (temperature, humidity) + spares


def calibrate_frame(
    frame: Frame, profiles: tuple[ChannelProfile, ...], timestamp: datetime
) -> Sample:
    """Apply one profile per channel to a decoded frame."""
    if len(profiles) != NUM_CHANNELS:
        raise ValueError(f"need {NUM_CHANNELS} profiles, got {len(profiles)}")
    values = tuple(profile.convert(code) for profile, code in zip(profiles, frame.codes))
    return Sample(timestamp, frame, values)


def load_profiles(path) -> tuple[ChannelProfile, ...]:
    """Read channel profiles from an INI file.

    One ``[channelN]`` section per channel (missing sections fall back to
    the defaults).  Keys: ``kind`` (linear | polynomial | volts), ``unit``,
    ``conditioning_gain``/``conditioning_offset`` (the forward device-side
    map, inverted on load), ``gain``/``offset`` for linear sensors,
    ``coefficients`` (descending degree, as conventionally written) for
    polynomial sensors, optional ``domain`` and ``range`` bounds.
    """
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"profiles config not found: {path}")
    profiles = list(default_profiles())
    for ch in range(NUM_CHANNELS):
        section = f"channel{ch}"
        if not parser.has_section(section):
            continue
        sec = parser[section]
        kind = sec.get("kind", "volts").strip().lower()
        unit = _UNIT_ALIASES.get(sec.get("unit", "V").strip().lower(), sec.get("unit", "V").strip())
        conditioning = None
        if "conditioning_gain" in sec or "conditioning_offset" in sec:
            conditioning = LinearMap(
                sec.getfloat("conditioning_gain", 1.0),
                sec.getfloat("conditioning_offset", 0.0),
            ).inverse()
        if kind == "linear":
            transform = LinearMap(sec.getfloat("gain", 1.0), sec.getfloat("offset", 0.0))
        elif kind == "polynomial":
            raw = sec.get("coefficients", "")
            coeffs = [float(tok) for tok in raw.replace(",", " ").split()]
            if not coeffs:
                raise ValueError(f"[{section}] polynomial kind needs coefficients")
            transform = Polynomial.from_descending(coeffs)
        elif kind == "volts":
            transform = None
        else:
            raise ValueError(f"[{section}] unknown kind {kind!r}")
        profiles[ch] = ChannelProfile(
            channel=ch,
            unit=unit,
            conditioning_inverse=conditioning,
            transform=transform,
            domain=_parse_bounds(sec.get("domain")),
            output_range=_parse_bounds(sec.get("range")),
        )
    return tuple(profiles)


def _parse_bounds(text: str | None) -> tuple[float, float] | None:
    if text is None or not text.strip():
        return None
    parts = [float(tok) for tok in text.replace(",", " ").split()]
    if len(parts) != 2 or not parts[0] < parts[1]:
        raise ValueError(f"bounds must be 'low, high', got {text!r}")
    return (parts[0], parts[1])


def verify_rh_calibration_monotone(samples: int = 1000) -> bool:
    """Check the RH calibration derivative is positive across the sensor span."""
    dp = RH_CALIBRATION.derivative()
    lo, hi = RH_SENSOR_SPAN_V
    return all(dp(lo + (hi - lo) * i / (samples - 1)) > 0 for i in range(samples))
