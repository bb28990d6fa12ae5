"""Table-style CNN predictor: architecture assembly, weight files, scoring,
and Adam/MSE training.

Two variants share one trunk: `three_output` emits (SIG, BAK, OVRL),
`sig_only` emits SIG alone. Channel counts scale by `channel_scale` for
desk-sized training runs. Scores are clamped to the 1..5 MOS range at the
scoring boundary; training sees raw outputs.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .audio_io import AudioClip, TARGET_RATE, load_wav, resample, segment
from .errors import (
    ChecksumFailure,
    ConfigInvalid,
    DataUnavailable,
    DivergedLoss,
    FormatVersionMismatch,
    IoFailure,
    ShapeMismatch,
)
from .features import StftConfig, extract_features

HEADS = ("sig", "bak", "ovrl")

# trunk layout: conv channel counts with pooling interleaved, then dense head
_CONV_STACK = (128, 64, 64, 32, "pool", 32, "pool", 32, "pool", 64)
_DENSE_STACK = (128, 64)

# init conditioning: input features are dB values of magnitude O(100), so the
# first conv's He init is shrunk to keep early activations O(1), and the head
# bias starts at the middle of the 1..5 MOS scale
_FIRST_CONV_INIT_SCALE = 0.01
_HEAD_BIAS_INIT = 3.0


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "three_output"  # or "sig_only"
    input_frames: int = 900
    input_bins: int = 161
    channel_scale: float = 1.0
    dropout_rate: float = 0.3
    hop_len: int = 160

    def __post_init__(self):
        if self.variant not in ("three_output", "sig_only"):
            raise ConfigInvalid(f"unknown variant {self.variant!r}")
        if self.input_frames < 8 or self.input_bins < 8:
            raise ConfigInvalid("input must be at least 8x8 for three 2x2 pools")
        if self.channel_scale <= 0:
            raise ConfigInvalid("channel_scale must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigInvalid("dropout_rate must be in [0, 1)")

    @property
    def num_outputs(self) -> int:
        return 3 if self.variant == "three_output" else 1

    @property
    def segment_len(self) -> int:
        return self.input_frames * self.hop_len

    def scaled(self, base_channels: int) -> int:
        return max(1, int(np.ceil(base_channels * self.channel_scale)))

    def config_str(self) -> str:
        return (
            f"{self.variant}|{self.input_frames}|{self.input_bins}|"
            f"{self.channel_scale!r}|{self.dropout_rate!r}|{self.hop_len}"
        )

    @classmethod
    def from_str(cls, s: str) -> "ModelConfig":
        try:
            variant, frames, bins, scale, dropout, hop = s.split("|")
            return cls(variant=variant, input_frames=int(frames),
                       input_bins=int(bins), channel_scale=float(scale),
                       dropout_rate=float(dropout), hop_len=int(hop))
        except (ValueError, TypeError) as e:
            raise ConfigInvalid(f"bad config string {s!r}: {e}") from e

    def config_hash(self) -> str:
        return hashlib.sha256(self.config_str().encode()).hexdigest()[:16]


@dataclass(frozen=True)
class MosScores:
    sig: float
    bak: float | None = None
    ovrl: float | None = None

    def as_dict(self) -> dict:
        d = {"sig": self.sig}
        if self.bak is not None:
            d["bak"] = self.bak
        if self.ovrl is not None:
            d["ovrl"] = self.ovrl
        return d


class Model:
    """Layer stack plus the bookkeeping needed to train and serialize it."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.dropouts: list[nn.Dropout] = []
        self.layers: list[nn.Layer] = []
        self.named_params: list[tuple[str, nn.Layer]] = []

        c_in = 1
        conv_i = 0
        for item in _CONV_STACK:
            if item == "pool":
                self.layers.append(nn.MaxPool2D())
                drop = nn.Dropout(cfg.dropout_rate)
                self.dropouts.append(drop)
                self.layers.append(drop)
            else:
                conv_i += 1
                c_out = cfg.scaled(item)
                conv = nn.Conv2D(c_in, c_out, rng, dtype)
                self.layers.append(conv)
                self.named_params.append((f"conv{conv_i}", conv))
                self.layers.append(nn.ReLU())
                c_in = c_out
        self.layers.append(nn.GlobalMaxPool())
        for i, width in enumerate(_DENSE_STACK, start=1):
            d_out = cfg.scaled(width)
            dense = nn.Dense(c_in, d_out, rng, dtype)
            self.layers.append(dense)
            self.named_params.append((f"dense{i}", dense))
            self.layers.append(nn.ReLU())
            c_in = d_out
        head = nn.Dense(c_in, cfg.num_outputs, rng, dtype)
        self.layers.append(head)
        self.named_params.append(("head", head))

        self.named_params[0][1].weights *= _FIRST_CONV_INIT_SCALE
        head.bias[:] = _HEAD_BIAS_INIT

    def params(self) -> list[np.ndarray]:
        return [p for _, layer in self.named_params for p in layer.params()]

    def grads(self) -> list[np.ndarray]:
        return [g for _, layer in self.named_params for g in layer.grads()]

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, training=training)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def seed_dropout(self, seed: int) -> None:
        for i, drop in enumerate(self.dropouts):
            drop.rng = np.random.default_rng((seed, i))

    def to_bundle(self) -> "WeightBundle":
        entries = [
            (f"{name}.{attr}", getattr(layer, attr).astype(np.float32))
            for name, layer in self.named_params
            for attr in ("weights", "bias")
        ]
        return WeightBundle(
            variant=self.cfg.variant,
            config_str=self.cfg.config_str(),
            entries=entries,
        )

    def load_bundle(self, bundle: "WeightBundle") -> None:
        if bundle.variant != self.cfg.variant or bundle.config_hash != self.cfg.config_hash():
            raise ShapeMismatch(
                f"bundle is for variant {bundle.variant!r} / config {bundle.config_hash}, "
                f"model is {self.cfg.variant!r} / {self.cfg.config_hash()}"
            )
        by_name = dict(bundle.entries)
        for name, layer in self.named_params:
            for attr in ("weights", "bias"):
                key = f"{name}.{attr}"
                if key not in by_name:
                    raise ShapeMismatch(f"bundle missing tensor {key}")
                value = by_name[key]
                target = getattr(layer, attr)
                if value.shape != target.shape:
                    raise ShapeMismatch(
                        f"{key}: bundle shape {value.shape} != model shape {target.shape}"
                    )
                target[:] = value.astype(self.dtype)


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    return Model(cfg, seed=seed, dtype=dtype)


def predict_segment(model: Model, features: np.ndarray, clamp: bool = False) -> np.ndarray:
    """Forward one (T, F) feature matrix; dropout disabled. Raw outputs unless
    clamp=True, which maps into [1, 5]."""
    t, f = model.cfg.input_frames, model.cfg.input_bins
    if features.shape != (t, f):
        raise ShapeMismatch(f"expected features of shape {(t, f)}, got {features.shape}")
    x = features.astype(model.dtype)[None, :, :, None]
    out = model.forward(x, training=False)[0]
    return np.clip(out, 1.0, 5.0) if clamp else out


def _stft_config(cfg: ModelConfig) -> StftConfig:
    return StftConfig(hop_len=cfg.hop_len)


def score_clip_detailed(model: Model, clip: AudioClip) -> tuple[MosScores, int]:
    """Segment (pad_last), score each window, mean the raw outputs, clamp to
    [1, 5]. Returns (scores, number of segments)."""
    if clip.sample_rate != TARGET_RATE:
        clip = resample(clip, TARGET_RATE)
    stft_cfg = _stft_config(model.cfg)
    segments = segment(clip, model.cfg.segment_len, policy="pad_last")
    raw = [predict_segment(model, extract_features(seg, stft_cfg)) for seg in segments]
    scores = np.clip(np.mean(raw, axis=0), 1.0, 5.0)
    if model.cfg.variant == "sig_only":
        return MosScores(sig=float(scores[0])), len(segments)
    return (
        MosScores(sig=float(scores[0]), bak=float(scores[1]), ovrl=float(scores[2])),
        len(segments),
    )


def score_clip(model: Model, clip: AudioClip) -> MosScores:
    return score_clip_detailed(model, clip)[0]


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 20
    patience: int = 5
    channel_scale: float = 1.0
    variant: str = "three_output"
    val_split: float = 0.1
    input_frames: int = 900
    input_bins: int = 161
    dropout_rate: float = 0.3
    # per-epoch multiplicative learning-rate decay; 1.0 = constant lr
    lr_decay: float = 1.0
    # per-step exponential moving average of the weights; the averaged
    # weights are what get validated and checkpointed. 0 disables. Averaging
    # damps the step-to-step jitter of late-training SGD iterates, which
    # otherwise makes model ranking unstable between adjacent epochs.
    ema_decay: float = 0.0
    # relative loss weight per head (sig, bak, ovrl); lets training spend
    # capacity on the hardest attribute instead of splitting it evenly
    sig_loss_weight: float = 1.0
    bak_loss_weight: float = 1.0
    ovrl_loss_weight: float = 1.0

    def head_weights(self) -> np.ndarray:
        if self.variant == "sig_only":
            return np.array([self.sig_loss_weight])
        return np.array([self.sig_loss_weight, self.bak_loss_weight,
                         self.ovrl_loss_weight])

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            variant=self.variant,
            input_frames=self.input_frames,
            input_bins=self.input_bins,
            channel_scale=self.channel_scale,
            dropout_rate=self.dropout_rate,
        )

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        """Flat key=value config file; '#' starts a comment."""
        kwargs = {}
        casts = {
            "seed": int, "lr": float, "batch_size": int, "epochs": int,
            "patience": int, "channel_scale": float, "variant": str,
            "val_split": float, "input_frames": int, "input_bins": int,
            "dropout_rate": float, "lr_decay": float, "ema_decay": float,
            "sig_loss_weight": float, "bak_loss_weight": float,
            "ovrl_loss_weight": float,
        }
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigInvalid(f"{path}:{lineno}: expected key=value")
                key, _, value = line.partition("=")
                key = key.strip()
                if key not in casts:
                    raise ConfigInvalid(f"{path}:{lineno}: unknown key {key!r}")
                kwargs[key] = casts[key](value.strip())
        return cls(**kwargs)


def _clip_features(rated, cfg: ModelConfig, stft_cfg: StftConfig) -> np.ndarray:
    """Exactly one segment per training clip: pad or truncate to segment_len."""
    try:
        clip = load_wav(rated.clip_path)
    except Exception as e:
        raise DataUnavailable(f"clip {rated.clip_id}: {e}") from e
    if clip.sample_rate != TARGET_RATE:
        clip = resample(clip, TARGET_RATE)
    samples = clip.samples[: cfg.segment_len]
    if len(samples) < cfg.segment_len:
        samples = np.pad(samples, (0, cfg.segment_len - len(samples)))
    seg = segment(
        AudioClip(samples, TARGET_RATE, clip.clip_id), cfg.segment_len
    )[0]
    return extract_features(seg, stft_cfg)


def _targets(rated_clips, variant: str) -> np.ndarray:
    if variant == "sig_only":
        return np.array([[c.mos_sig] for c in rated_clips])
    return np.array([[c.mos_sig, c.mos_bak, c.mos_ovrl] for c in rated_clips])


def _batched_mse(model: Model, x: np.ndarray, y: np.ndarray, batch: int) -> float:
    se_sum = 0.0
    for i in range(0, len(x), batch):
        pred = model.forward(x[i:i + batch], training=False)
        diff = pred.astype(np.float64) - y[i:i + batch]
        se_sum += float(np.sum(diff * diff))
    return se_sum / y.size


def train(
    model: Model,
    manifest,
    hyper: TrainConfig,
    val_manifest=None,
    progress=None,
) -> tuple["WeightBundle", list[tuple[int, float, float]]]:
    """Mini-batch Adam/MSE training on mean MOS labels.

    Checkpoints the best validation loss and returns (best WeightBundle,
    loss curve rows (epoch, train_mse, val_mse)). Deterministic for a fixed
    seed: data order, dropout masks and init all derive from hyper.seed.

    The training objective is a per-head weighted MSE (weights normalized to
    mean 1, so defaults reproduce plain MSE); the reported validation MSE is
    always unweighted.
    """
    clips = list(manifest.clips)
    if not clips:
        raise DataUnavailable("manifest is empty")
    stft_cfg = _stft_config(model.cfg)

    feats = np.stack([_clip_features(c, model.cfg, stft_cfg) for c in clips])
    targets = _targets(clips, model.cfg.variant)

    if val_manifest is not None:
        val_clips = list(val_manifest.clips)
        val_x = np.stack([_clip_features(c, model.cfg, stft_cfg) for c in val_clips])
        val_y = _targets(val_clips, model.cfg.variant)
        train_x, train_y = feats, targets
    else:
        rng_split = np.random.default_rng((hyper.seed, 0xA5))
        order = rng_split.permutation(len(clips))
        n_val = max(1, int(round(hyper.val_split * len(clips)))) if len(clips) > 1 else 0
        val_idx, train_idx = order[:n_val], order[n_val:]
        if len(train_idx) == 0:
            train_idx, val_idx = order, order
        train_x, train_y = feats[train_idx], targets[train_idx]
        val_x, val_y = feats[val_idx], targets[val_idx]

    train_x = train_x.astype(model.dtype)[:, :, :, None]
    val_x = val_x.astype(model.dtype)[:, :, :, None]

    model.seed_dropout(hyper.seed)
    state = nn.AdamState(lr=hyper.lr)
    params = model.params()
    head_w = hyper.head_weights()
    if np.any(head_w <= 0) or hyper.lr_decay <= 0:
        raise ConfigInvalid("loss weights and lr_decay must be positive")
    if not 0.0 <= hyper.ema_decay < 1.0:
        raise ConfigInvalid("ema_decay must be in [0, 1)")
    # weighted MSE via sqrt-scaling: mse(sq*pred, sq*y) = mean(w * diff^2)
    sqrt_w = np.sqrt(head_w / head_w.mean())
    ema = [p.copy() for p in params] if hyper.ema_decay > 0 else None

    best_val = np.inf
    best_weights = [p.copy() for p in params]
    best_epoch = 0
    curve = []
    rng = np.random.default_rng((hyper.seed, 1))

    for epoch in range(1, hyper.epochs + 1):
        state.lr = hyper.lr * hyper.lr_decay ** (epoch - 1)
        order = rng.permutation(len(train_x))
        se_sum = 0.0
        for i in range(0, len(order), hyper.batch_size):
            idx = order[i:i + hyper.batch_size]
            xb, yb = train_x[idx], train_y[idx]
            pred = model.forward(xb, training=True)
            loss, grad = nn.mse_loss(sqrt_w * pred,
                                     sqrt_w * yb.astype(pred.dtype))
            grad = (grad * sqrt_w).astype(pred.dtype)
            if not np.isfinite(loss):
                raise DivergedLoss(f"loss became non-finite at epoch {epoch}")
            se_sum += loss * pred.size
            model.backward(grad)
            adam_grads = model.grads()
            nn.adam_step(params, adam_grads, state)
            if ema is not None:
                d = hyper.ema_decay
                for avg, p in zip(ema, params):
                    avg *= d
                    avg += (1.0 - d) * p
        train_mse = se_sum / (len(train_x) * model.cfg.num_outputs)
        if ema is not None:
            # validate (and checkpoint) the averaged weights
            raw = [p.copy() for p in params]
            for p, avg in zip(params, ema):
                p[:] = avg
            val_mse = _batched_mse(model, val_x, val_y, hyper.batch_size)
            for p, r in zip(params, raw):
                p[:] = r
        else:
            val_mse = _batched_mse(model, val_x, val_y, hyper.batch_size)
        curve.append((epoch, train_mse, val_mse))
        if progress is not None:
            progress(epoch, train_mse, val_mse)
        if val_mse < best_val:
            best_val = val_mse
            best_epoch = epoch
            best_weights = [p.copy() for p in (ema if ema is not None else params)]
        elif epoch - best_epoch >= hyper.patience:
            break

    for p, best in zip(params, best_weights):
        p[:] = best
    return model.to_bundle(), curve


# -- weight bundle serialization ---------------------------------------------

_BUNDLE_MAGIC = b"SQAW"
_BUNDLE_VERSION = 1


@dataclass(frozen=True)
class WeightBundle:
    variant: str
    config_str: str
    entries: list[tuple[str, np.ndarray]] = field(default_factory=list)
    version: int = _BUNDLE_VERSION

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.config_str.encode()).hexdigest()[:16]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, values in self.entries:
            h.update(name.encode())
            h.update(values.astype("<f4").tobytes())
        return h.hexdigest()


def save_weights(bundle: WeightBundle, path) -> None:
    """Little-endian container: magic, version, variant, config hash,
    per-tensor name/shape/float32 payload, trailing CRC32."""
    buf = bytearray()
    buf += _BUNDLE_MAGIC
    buf += struct.pack("<I", bundle.version)
    for s in (bundle.variant, bundle.config_str):
        raw = s.encode()
        buf += struct.pack("<H", len(raw)) + raw
    buf += struct.pack("<I", len(bundle.entries))
    for name, values in bundle.entries:
        raw = name.encode()
        buf += struct.pack("<H", len(raw)) + raw
        buf += struct.pack("<I", values.ndim)
        buf += struct.pack(f"<{values.ndim}I", *values.shape)
        buf += np.ascontiguousarray(values, dtype="<f4").tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    with open(path, "wb") as f:
        f.write(bytes(buf))


def load_weights(path) -> WeightBundle:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise IoFailure(f"cannot read weight bundle {path}: {e}") from e
    if len(data) < 12 or data[:4] != _BUNDLE_MAGIC:
        raise ChecksumFailure(f"{path}: not a weight bundle")
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != stored_crc:
        raise ChecksumFailure(f"{path}: CRC mismatch (truncated or corrupt)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != _BUNDLE_VERSION:
        raise FormatVersionMismatch(f"{path}: version {version}, expected {_BUNDLE_VERSION}")

    pos = 8

    def read_str():
        nonlocal pos
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        s = data[pos:pos + n].decode()
        pos += n
        return s

    try:
        variant = read_str()
        config_str = read_str()
        (n_entries,) = struct.unpack_from("<I", data, pos)
        pos += 4
        entries = []
        for _ in range(n_entries):
            name = read_str()
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            values = np.frombuffer(data, dtype="<f4", count=count, offset=pos)
            pos += 4 * count
            entries.append((name, values.reshape(shape).copy()))
    except (struct.error, ValueError) as e:
        raise ChecksumFailure(f"{path}: malformed bundle body: {e}") from e
    return WeightBundle(variant=variant, config_str=config_str,
                        entries=entries, version=version)


def model_from_bundle(bundle: WeightBundle, dtype=np.float32) -> Model:
    """Rebuild a scoring-ready model from a loaded bundle."""
    cfg = ModelConfig.from_str(bundle.config_str)
    m = build_model(cfg, seed=0, dtype=dtype)
    m.load_bundle(bundle)
    return m
