"""Rated-clip manifests, a synthetic corpus with a closed-form quality
oracle, and simulated-rater machinery.

The synthetic generator stands in for a large human-rated corpus: each
synthetic "model" (condition) mixes a speech-like harmonic carrier with
noise at a characteristic SNR and applies a characteristic clipping
distortion. Oracle labels are closed-form functions of those parameters:

    bak_true = 1 + 4 * sigmoid((snr_db - 10) / 8)
    sig_true = 5 - 4 * distortion
    ovrl_true = clamp(0.5*sig + 0.4*bak + 0.1, 1, 5)

The OVRL constants are a generator convention, exported as OVRL_COEFFS so
the evaluation-side linear fit can be checked against them.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .audio_io import AudioClip, write_wav
from .errors import DuplicateClipId, IoFailure, ParseError

OVRL_COEFFS = (0.5, 0.4, 0.1)  # ovrl = a*sig + b*bak + c, clamped to [1, 5]

MANIFEST_HEADER = ["clip_id", "clip_path", "model_id",
                   "mos_sig", "mos_bak", "mos_ovrl", "num_ratings"]


@dataclass(frozen=True)
class RatedClip:
    clip_id: str
    clip_path: str
    model_id: str
    mos_sig: float
    mos_bak: float
    mos_ovrl: float
    num_ratings: int = 1

    def __post_init__(self):
        for name in ("mos_sig", "mos_bak", "mos_ovrl"):
            v = getattr(self, name)
            if not 1.0 <= v <= 5.0:
                raise ValueError(f"{name}={v} outside [1, 5]")
        if self.num_ratings < 1:
            raise ValueError("num_ratings must be >= 1")


@dataclass(frozen=True)
class Manifest:
    clips: tuple
    split: str = ""

    def __post_init__(self):
        object.__setattr__(self, "clips", tuple(self.clips))
        seen = set()
        for c in self.clips:
            if c.clip_id in seen:
                raise DuplicateClipId(f"duplicate clip_id {c.clip_id!r}")
            seen.add(c.clip_id)

    def __len__(self):
        return len(self.clips)

    def clip_ids(self) -> set:
        return {c.clip_id for c in self.clips}


def assert_disjoint_splits(*manifests: Manifest) -> None:
    """No clip_id may appear in two splits."""
    seen: dict[str, str] = {}
    for m in manifests:
        for c in m.clips:
            if c.clip_id in seen:
                raise DuplicateClipId(
                    f"clip_id {c.clip_id!r} appears in splits "
                    f"{seen[c.clip_id]!r} and {m.split!r}"
                )
            seen[c.clip_id] = m.split


@dataclass(frozen=True)
class SynthSpec:
    num_models: int = 10
    clips_per_model: int = 50
    snr_range: tuple = (-5.0, 35.0)
    distortion_range: tuple = (0.0, 0.8)
    level_range: tuple = (-35.0, -15.0)
    duration_s: float = 1.0
    sample_rate: int = 16_000
    seed: int = 0

    def __post_init__(self):
        if self.num_models < 1 or self.clips_per_model < 1:
            raise ValueError("num_models and clips_per_model must be >= 1")
        for name in ("snr_range", "distortion_range", "level_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} is empty")
        if not 0.0 <= self.distortion_range[0] <= self.distortion_range[1] <= 1.0:
            raise ValueError("distortion_range must lie within [0, 1]")


def bak_oracle(snr_db: float) -> float:
    """Background-noise MOS from SNR; saturates at 5 for clean audio."""
    return float(1.0 + 4.0 / (1.0 + np.exp(-(snr_db - 10.0) / 8.0)))


def sig_oracle(distortion: float) -> float:
    """Speech MOS from clipping-distortion strength in [0, 1]."""
    return float(5.0 - 4.0 * distortion)


def ovrl_oracle(sig: float, bak: float) -> float:
    a, b, c = OVRL_COEFFS
    return float(np.clip(a * sig + b * bak + c, 1.0, 5.0))


def _harmonic_carrier(n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    """Amplitude-modulated harmonic complex, unit RMS; a crude voiced-speech
    stand-in whose spectrum has well-defined harmonic peaks."""
    t = np.arange(n) / sr
    f0 = rng.uniform(120.0, 260.0)
    x = np.zeros(n)
    k = 1
    while k * f0 < 4000.0:
        x += (1.0 / k) * np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi))
        k += 1
    fm = rng.uniform(2.0, 6.0)
    x *= 0.55 + 0.45 * np.sin(2 * np.pi * fm * t + rng.uniform(0, 2 * np.pi))
    return x / _rms(x)


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x))) or 1e-12


def _noise(n: int, color: str, rng: np.random.Generator) -> np.ndarray:
    white = rng.standard_normal(n)
    if color == "white":
        return white / _rms(white)
    # pink: shape the spectrum by 1/sqrt(f)
    spectrum = np.fft.rfft(white)
    f = np.fft.rfftfreq(n)
    f[0] = f[1]
    spectrum /= np.sqrt(f)
    pink = np.fft.irfft(spectrum, n)
    return pink / _rms(pink)


def _clip_distort(x: np.ndarray, d: float) -> np.ndarray:
    """Hard clipping with strength d in [0, 1]; d=0 is identity."""
    if d <= 0:
        return x
    threshold = (1.0 - 0.95 * d) * np.max(np.abs(x))
    y = np.clip(x, -threshold, threshold)
    return y / _rms(y)


def synthesize_clip(spec: SynthSpec, snr_db: float, distortion: float,
                    level_db: float, noise_color: str,
                    rng: np.random.Generator) -> np.ndarray:
    n = int(round(spec.duration_s * spec.sample_rate))
    speech = _clip_distort(_harmonic_carrier(n, spec.sample_rate, rng), distortion)
    noise = _noise(n, noise_color, rng) * 10.0 ** (-snr_db / 20.0)
    mix = speech + noise
    mix *= 10.0 ** (level_db / 20.0) / _rms(mix)
    return np.clip(mix, -1.0, 1.0)


def _pick_distortion_order(spec: SynthSpec, snr_centers: np.ndarray,
                           d_centers: np.ndarray) -> np.ndarray:
    """Assign distortion centers to models so the label design is useful.

    A uniformly random assignment has two failure modes. It can leave two
    models with nearly equal OVRL means (a weighted mix of SIG and BAK),
    making condition ranking ill-posed for any rater or predictor. And it
    can pair heavy clipping with very low SNR, where the distortion is
    buried under the noise and the speech-quality attribute is not
    observable in the signal at all — real listening-test plans avoid such
    confounded conditions for the same reason. Among seeded candidate
    permutations that (a) keep model-level SIG/BAK correlation low, so the
    heads carry independent signal, and (b) keep distortion mild for
    models below 5 dB SNR, pick the one with the widest minimum gap
    between sorted OVRL means. Deterministic for a fixed seed.
    """
    n = spec.num_models
    rng = np.random.default_rng((spec.seed, 0xD0))
    if n < 3:
        return rng.permutation(n)
    bak_means = np.array([bak_oracle(s) for s in snr_centers])
    low_snr = snr_centers < 5.0
    d_mid = 0.5 * (d_centers[0] + d_centers[-1])
    best_perm = None
    best_gap = -1.0
    for trial in range(8192):
        perm = rng.permutation(n)
        if np.any(d_centers[perm[low_snr]] > d_mid):
            continue
        sig_means = np.array([sig_oracle(d_centers[p]) for p in perm])
        r = np.corrcoef(sig_means, bak_means)[0, 1]
        if abs(r) > 0.35:
            continue
        ovrl_means = np.clip(OVRL_COEFFS[0] * sig_means
                             + OVRL_COEFFS[1] * bak_means
                             + OVRL_COEFFS[2], 1.0, 5.0)
        gap = float(np.min(np.diff(np.sort(ovrl_means))))
        if gap > best_gap:
            best_gap = gap
            best_perm = perm
    return best_perm if best_perm is not None else rng.permutation(n)


def generate_synthetic_corpus(spec: SynthSpec, out_dir, split: str = "train") -> Manifest:
    """Write the WAV corpus under out_dir/<model_id>/<clip_id>.wav and return
    its manifest with oracle labels.

    Deterministic for a fixed seed: every clip derives its own RNG from
    (seed, clip index), so generation order does not matter.
    """
    snr_lo, snr_hi = spec.snr_range
    d_lo, d_hi = spec.distortion_range
    snr_centers = np.linspace(snr_lo, snr_hi, spec.num_models)
    d_centers = np.linspace(d_lo, d_hi, spec.num_models)
    d_order = _pick_distortion_order(spec, snr_centers, d_centers)

    clips = []
    for m in range(spec.num_models):
        model_id = f"m{m:03d}"
        model_dir = os.path.join(out_dir, model_id)
        try:
            os.makedirs(model_dir, exist_ok=True)
        except OSError as e:
            raise IoFailure(f"cannot create {model_dir}: {e}") from e
        noise_color = "pink" if m % 2 else "white"
        for j in range(spec.clips_per_model):
            index = m * spec.clips_per_model + j
            rng = np.random.default_rng((spec.seed, 1, index))
            snr = float(snr_centers[m] + rng.normal(0.0, 2.0))
            d = float(np.clip(d_centers[d_order[m]] + rng.normal(0.0, 0.05), 0.0, 1.0))
            level = float(rng.uniform(*spec.level_range))
            samples = synthesize_clip(spec, snr, d, level, noise_color, rng)

            clip_id = f"{split}_{model_id}_c{j:04d}"
            path = os.path.join(model_dir, f"{clip_id}.wav")
            try:
                write_wav(path, AudioClip(samples, spec.sample_rate, clip_id))
            except OSError as e:
                raise IoFailure(f"cannot write {path}: {e}") from e

            sig = sig_oracle(d)
            bak = bak_oracle(snr)
            clips.append(RatedClip(
                clip_id=clip_id, clip_path=path, model_id=model_id,
                mos_sig=sig, mos_bak=bak, mos_ovrl=ovrl_oracle(sig, bak),
            ))
    return Manifest(clips=tuple(clips), split=split)


def simulate_ratings(true_mos: float, n_raters: int, noise_sd: float,
                     seed) -> np.ndarray:
    """Discrete 1..5 ballots: round(clamp(true + gaussian(0, sd), 1, 5))."""
    if n_raters < 1:
        raise ValueError("n_raters must be >= 1")
    if noise_sd < 0:
        raise ValueError("noise_sd must be >= 0")
    rng = np.random.default_rng(seed)
    votes = np.clip(true_mos + rng.normal(0.0, noise_sd, size=n_raters), 1.0, 5.0)
    return np.round(votes).astype(int)


def write_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_HEADER)
        for c in manifest.clips:
            writer.writerow([
                c.clip_id, c.clip_path, c.model_id,
                f"{c.mos_sig:.6f}", f"{c.mos_bak:.6f}", f"{c.mos_ovrl:.6f}",
                c.num_ratings,
            ])


def read_manifest(path, split: str = "") -> Manifest:
    clips = []
    try:
        f = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot read manifest {path}: {e}") from e
    with f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty manifest file", line=1) from None
        if header != MANIFEST_HEADER:
            raise ParseError(f"bad header {header!r}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ParseError(f"expected {len(MANIFEST_HEADER)} fields, got {len(row)}",
                                 line=lineno)
            try:
                clips.append(RatedClip(
                    clip_id=row[0], clip_path=row[1], model_id=row[2],
                    mos_sig=float(row[3]), mos_bak=float(row[4]),
                    mos_ovrl=float(row[5]), num_ratings=int(row[6]),
                ))
            except ValueError as e:
                raise ParseError(str(e), line=lineno) from e
    return Manifest(clips=tuple(clips), split=split)
