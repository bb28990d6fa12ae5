"""WAV loading, resampling and fixed-length segmentation.

All audio is canonicalized to mono float arrays in [-1, 1]. The scoring
pipeline expects 16 kHz input; `resample` provides a convenience path for
other rates (linear interpolation, so lossy above Nyquist of the coarser
rate -- the canonical corpus is already 16 kHz).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptFile, EmptyAudio, UnsupportedFormat

TARGET_RATE = 16_000
DEFAULT_SEGMENT_LEN = 9 * TARGET_RATE  # 9 s at 16 kHz


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform with sample rate and provenance id."""

    samples: np.ndarray  # float64, values in [-1, 1]
    sample_rate: int
    clip_id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if samples.ndim != 1:
            raise ValueError("AudioClip samples must be 1-D (mono)")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("AudioClip samples must be finite")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class Segment:
    """Fixed-length window of a clip, zero-padded if needed."""

    samples: np.ndarray
    source_clip: str
    offset: int

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))


_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


def load_wav(path) -> AudioClip:
    """Read a RIFF/WAVE file (PCM16 or float32) as a mono AudioClip.

    Multichannel input is downmixed by the arithmetic mean of channels.
    16-bit samples are scaled by 1/32768.
    """
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CorruptFile(f"cannot read {path}: {e}") from e

    clip_id = os.path.splitext(os.path.basename(str(path)))[0]
    return decode_wav(data, clip_id=clip_id, name=str(path))


def decode_wav(data: bytes, clip_id: str = "", name: str = "<bytes>") -> AudioClip:
    """Decode WAV bytes; same contract as load_wav."""
    path = name
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise CorruptFile(f"{path}: not a RIFF/WAVE file")

    fmt = None
    raw = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (chunk_len,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + chunk_len]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise CorruptFile(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            if len(body) < chunk_len:
                raise CorruptFile(f"{path}: truncated data chunk")
            raw = body
        pos += 8 + chunk_len + (chunk_len & 1)  # chunks are word-aligned

    if fmt is None or raw is None:
        raise CorruptFile(f"{path}: missing fmt or data chunk")

    audio_format, channels, sample_rate, _, _, bits = fmt
    if audio_format == _WAVE_FORMAT_EXTENSIBLE:
        raise UnsupportedFormat(f"{path}: WAVE_FORMAT_EXTENSIBLE not supported")
    if channels < 1 or sample_rate <= 0:
        raise CorruptFile(f"{path}: invalid fmt chunk")

    if audio_format == _WAVE_FORMAT_PCM and bits == 16:
        samples = np.frombuffer(raw[: len(raw) - len(raw) % 2], dtype="<i2")
        samples = samples.astype(np.float64) / 32768.0
    elif audio_format == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(raw[: len(raw) - len(raw) % 4], dtype="<f4")
        samples = samples.astype(np.float64)
    else:
        raise UnsupportedFormat(
            f"{path}: format {audio_format} / {bits}-bit not supported (PCM16 or float32 only)"
        )

    if samples.size == 0:
        raise EmptyAudio(f"{path}: no samples")
    if samples.size % channels:
        raise CorruptFile(f"{path}: data chunk not a whole number of frames")
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    if not np.all(np.isfinite(samples)):
        raise CorruptFile(f"{path}: non-finite sample values")

    return AudioClip(samples=samples, sample_rate=sample_rate, clip_id=clip_id)


def write_wav(path, clip: AudioClip) -> None:
    """Write a mono float32 WAV (round-trips losslessly through load_wav)."""
    samples = clip.samples.astype("<f4")
    payload = samples.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        _WAVE_FORMAT_IEEE_FLOAT,
        1,
        clip.sample_rate,
        clip.sample_rate * 4,
        4,
        32,
        b"data",
        len(payload),
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def write_wav_pcm16(path, clip: AudioClip) -> None:
    """Write a mono 16-bit PCM WAV (quantizes; use write_wav for round trips)."""
    q = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    payload = q.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        _WAVE_FORMAT_PCM,
        1,
        clip.sample_rate,
        clip.sample_rate * 2,
        2,
        16,
        b"data",
        len(payload),
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Linear-interpolation resampling to target_rate.

    Output length is round(len * target/source). Identity when rates match.
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == clip.sample_rate:
        return clip
    n_in = len(clip.samples)
    if n_in == 0:
        raise EmptyAudio("cannot resample an empty clip")
    n_out = int(round(n_in * target_rate / clip.sample_rate))
    t_out = np.arange(n_out) * (clip.sample_rate / target_rate)
    samples = np.interp(t_out, np.arange(n_in), clip.samples)
    return AudioClip(samples=samples, sample_rate=target_rate, clip_id=clip.clip_id)


def segment(
    clip: AudioClip,
    segment_len: int = DEFAULT_SEGMENT_LEN,
    policy: str = "pad_last",
) -> list[Segment]:
    """Split a clip into non-overlapping fixed-length windows.

    pad_last zero-pads the final short window; drop_last discards it. A clip
    shorter than segment_len always yields one zero-padded segment.
    """
    if segment_len <= 0:
        raise ValueError("segment_len must be positive")
    if policy not in ("pad_last", "drop_last"):
        raise ValueError(f"unknown policy {policy!r}")
    n = len(clip.samples)
    if n == 0:
        raise EmptyAudio(f"clip {clip.clip_id!r} has no samples")

    segments = []
    n_full = n // segment_len
    for i in range(n_full):
        off = i * segment_len
        segments.append(
            Segment(clip.samples[off:off + segment_len], clip.clip_id, off)
        )
    tail = n - n_full * segment_len
    if tail and (policy == "pad_last" or n_full == 0):
        off = n_full * segment_len
        padded = np.zeros(segment_len)
        padded[:tail] = clip.samples[off:]
        segments.append(Segment(padded, clip.clip_id, off))
    return segments
