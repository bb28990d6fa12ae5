"""Log-power-spectrogram feature extraction.

A 20 ms Hamming-windowed frame with 10 ms hop and a 320-point FFT turns a
9 s / 16 kHz segment into a 900 x 161 matrix of dB values. Deliberately no
normalization of any kind: absolute level must survive into the features.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .audio_io import Segment
from .errors import CorruptFile, SegmentTooShort

DEFAULT_FLOOR_DB = -100.0


@dataclass(frozen=True)
class StftConfig:
    frame_len: int = 320   # 20 ms @ 16 kHz
    hop_len: int = 160     # 10 ms
    fft_size: int = 320
    power_floor_db: float = DEFAULT_FLOOR_DB

    def __post_init__(self):
        if min(self.frame_len, self.hop_len, self.fft_size) <= 0:
            raise ValueError("frame_len, hop_len and fft_size must be positive")
        if self.fft_size < self.frame_len:
            raise ValueError("fft_size must be >= frame_len")
        if self.hop_len > self.frame_len:
            raise ValueError("hop_len must be <= frame_len")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def num_frames(self, segment_len: int) -> int:
        return segment_len // self.hop_len


def hamming_window(n: int) -> np.ndarray:
    """Symmetric Hamming window: w[k] = 0.54 - 0.46*cos(2*pi*k/(n-1))."""
    if n < 1:
        raise ValueError("window length must be >= 1")
    if n == 1:
        return np.ones(1)
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def stft_power(segment: Segment, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Linear power spectrogram, shape (segment_len/hop, fft_size/2+1).

    The segment is zero-padded by hop/2 on each side before framing so that
    the frame count comes out to exactly segment_len/hop (900 for the
    default 9 s segment) rather than the 899 raw framing would give.
    """
    x = segment.samples
    if len(x) < cfg.frame_len:
        raise SegmentTooShort(
            f"segment of {len(x)} samples is shorter than one frame ({cfg.frame_len})"
        )
    pad = cfg.hop_len // 2
    x = np.pad(x, (pad, pad))
    n_frames = cfg.num_frames(len(segment.samples))
    window = hamming_window(cfg.frame_len)

    offsets = np.arange(n_frames) * cfg.hop_len
    idx = offsets[:, None] + np.arange(cfg.frame_len)[None, :]
    frames = x[idx] * window
    spectrum = np.fft.rfft(frames, n=cfg.fft_size, axis=1)
    return (spectrum.real ** 2 + spectrum.imag ** 2)


def power_to_db(power: np.ndarray, floor_db: float = DEFAULT_FLOOR_DB) -> np.ndarray:
    """10*log10(power) re 1.0, clamped at floor_db (zeros never produce -inf)."""
    power = np.asarray(power, dtype=np.float64)
    if np.any(power < 0):
        raise ValueError("power values must be non-negative")
    floor_power = 10.0 ** (floor_db / 10.0)
    return 10.0 * np.log10(np.maximum(power, floor_power))


def extract_features(segment: Segment, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Log power spectrogram in dB for one segment; (T, F), unnormalized."""
    return power_to_db(stft_power(segment, cfg), cfg.power_floor_db)


_DUMP_MAGIC = b"SQAF"
_DUMP_VERSION = 1


def write_features(path, features: np.ndarray) -> None:
    """Binary feature dump: magic, version, T, F (little-endian u32), then
    row-major float32 values."""
    t, f = features.shape
    with open(path, "wb") as fh:
        fh.write(_DUMP_MAGIC)
        fh.write(struct.pack("<III", _DUMP_VERSION, t, f))
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16 or data[:4] != _DUMP_MAGIC:
        raise CorruptFile(f"{path}: not a feature dump")
    version, t, f = struct.unpack_from("<III", data, 4)
    if version != _DUMP_VERSION:
        raise CorruptFile(f"{path}: unsupported feature dump version {version}")
    expected = 16 + 4 * t * f
    if len(data) < expected:
        raise CorruptFile(f"{path}: truncated feature dump")
    values = np.frombuffer(data, dtype="<f4", count=t * f, offset=16)
    return values.reshape(t, f).astype(np.float64)
