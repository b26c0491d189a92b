"""Temperature/humidity data-acquisition toolkit.

Emulates a 4-channel, 10-bit serial data logger (LM35 temperature and
TPS-00715 relative-humidity front ends) and provides the matching host
pipeline: wire-format decoding, calibration to engineering units, CSV
storage, waveform reconstruction and series comparison.
"""

from thdaq.protocol import Frame, FrameDecoder, encode_frame
from thdaq.calibration import (
    ChannelProfile,
    LinearMap,
    Polynomial,
    RH_CALIBRATION,
    calibrate_frame,
    default_profiles,
)

__version__ = "0.1.0"

__all__ = [
    "Frame",
    "FrameDecoder",
    "encode_frame",
    "Polynomial",
    "LinearMap",
    "ChannelProfile",
    "RH_CALIBRATION",
    "calibrate_frame",
    "default_profiles",
]
