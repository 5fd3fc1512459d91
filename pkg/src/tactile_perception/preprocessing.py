"""Raw sensor streams to model-ready 28x28 image sequences.

Accelerometers: per-node magnitude, z-scored, resampled 700 -> 600 Hz, then a
log-mel spectrogram (window 800, hop 20, 49 mel bins over 0-300 Hz) tiled into
a 28x28 image per frame.  FSR: moving-mean low-pass, sampled at the 30 Hz frame
times, then bilinear 16x16 -> 28x28 per layer.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage, signal

PREPROCESSING_VERSION = "pp-1"

RAW_RATE_HZ = 700
ACCEL_RATE_HZ = 600
FRAME_RATE_HZ = 30
N_FRAMES = 300
WIN_LENGTH = 800
N_FFT = 800
HOP_LENGTH = 20
N_MELS = 49
MEL_FMIN = 0.0
MEL_FMAX = 300.0
FSR_MEAN_WINDOW = 23
IMAGE_SIZE = 28
TILE = 7


class FusionMode(enum.Enum):
    ACC = "ACC"
    FSR_T = "FSR_T"
    FSR_B = "FSR_B"
    FSR_TB = "FSR_TB"
    MULTI_E = "MULTI_E"
    MULTI_L = "MULTI_L"


# channels of each encoder stream, in order
STREAM_CHANNELS = {
    FusionMode.ACC: (1,),
    FusionMode.FSR_T: (1,),
    FusionMode.FSR_B: (1,),
    FusionMode.FSR_TB: (2,),
    FusionMode.MULTI_E: (3,),
    FusionMode.MULTI_L: (1, 2),
}


@dataclass
class NormalizationStats:
    """Statistics fitted on the training split and reused verbatim elsewhere."""

    accel_mean: np.ndarray  # (4, 4) raw magnitude mean per node
    accel_std: np.ndarray  # (4, 4)
    spec_mean: float = 0.0  # log-mel image, after reshaping
    spec_std: float = 1.0
    fsr_mean: np.ndarray = field(default_factory=lambda: np.zeros(2))  # per layer, after resampling
    fsr_std: np.ndarray = field(default_factory=lambda: np.ones(2))

    def to_dict(self) -> dict:
        return {
            "accel_mean": np.asarray(self.accel_mean).tolist(),
            "accel_std": np.asarray(self.accel_std).tolist(),
            "spec_mean": float(self.spec_mean),
            "spec_std": float(self.spec_std),
            "fsr_mean": np.asarray(self.fsr_mean).tolist(),
            "fsr_std": np.asarray(self.fsr_std).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(
            accel_mean=np.asarray(d["accel_mean"]),
            accel_std=np.asarray(d["accel_std"]),
            spec_mean=d["spec_mean"],
            spec_std=d["spec_std"],
            fsr_mean=np.asarray(d["fsr_mean"]),
            fsr_std=np.asarray(d["fsr_std"]),
        )


@dataclass
class ObservationSequence:
    """One or two image streams, each shaped ``(T, C, 28, 28)``."""

    streams: tuple
    mode: FusionMode

    @property
    def n_frames(self) -> int:
        return self.streams[0].shape[0]


@dataclass
class ProcessedTrial:
    accel_spec: np.ndarray  # (300, 28, 28)
    fsr_proc: np.ndarray  # (300, 28, 28, 2)
    actions: np.ndarray  # (300, 6) pose deltas per frame
    metadata: dict

    def observations(self, mode: FusionMode) -> ObservationSequence:
        return fuse(self.accel_spec, self.fsr_proc, mode)


def accel_magnitude(accel: np.ndarray) -> np.ndarray:
    accel = np.asarray(accel)
    if accel.ndim != 4 or accel.shape[1:] != (4, 4, 3):
        raise ValueError(f"expected accelerometer array (T, 4, 4, 3), got {accel.shape}")
    return np.linalg.norm(accel.astype(np.float64), axis=-1)


def accel_magnitude_downsample(accel: np.ndarray, stats: NormalizationStats | None = None) -> np.ndarray:
    """(7000, 4, 4, 3) at 700 Hz -> (6000, 4, 4) z-scored magnitude at 600 Hz.

    Without ``stats`` the input is normalized by its own per-node statistics.
    """
    mag = accel_magnitude(accel)
    if stats is None:
        mean, std = mag.mean(axis=0), mag.std(axis=0)
    else:
        mean, std = stats.accel_mean, stats.accel_std
    z = (mag - mean) / np.maximum(std, 1e-8)
    return signal.resample_poly(z, ACCEL_RATE_HZ // 100, RAW_RATE_HZ // 100, axis=0)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int = N_MELS, fmin: float = MEL_FMIN, fmax: float = MEL_FMAX) -> np.ndarray:
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))[1:-1]


def mel_filterbank(
    sr: float = ACCEL_RATE_HZ,
    n_fft: int = N_FFT,
    n_mels: int = N_MELS,
    fmin: float = MEL_FMIN,
    fmax: float = MEL_FMAX,
) -> np.ndarray:
    """Triangular filters with unit peak on the HTK mel scale, shape (n_mels, n_fft//2 + 1)."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sr)
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (centre - lower)
    falling = (upper - freqs) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


def stft_power(x: np.ndarray, n_fft: int = N_FFT, hop: int = HOP_LENGTH, n_frames: int | None = None) -> np.ndarray:
    """Centred Hann-window power spectrogram along axis 0.

    Frame ``k`` is centred on sample ``k * hop`` (zero padding at both ends).
    Returns ``(n_frames, n_fft//2 + 1, *x.shape[1:])``, scaled by the window
    energy.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n_frames is None:
        n_frames = 1 + n // hop
    pad = n_fft // 2
    padded = np.pad(x, [(pad, pad)] + [(0, 0)] * (x.ndim - 1))
    window = signal.get_window("hann", n_fft, fftbins=True)
    starts = np.arange(n_frames) * hop
    frames = padded[starts[:, None] + np.arange(n_fft)[None, :]]  # (F, n_fft, ...)
    frames = frames * window.reshape((1, n_fft) + (1,) * (x.ndim - 1))
    spec = np.fft.rfft(frames, axis=1)
    return (spec.real**2 + spec.imag**2) / np.sum(window**2)


def log_mel_spectrogram(sig: np.ndarray) -> np.ndarray:
    """(6000, 4, 4) at 600 Hz -> (300, 49, 4, 4) of log(1 + mel power)."""
    sig = np.asarray(sig)
    n_frames = sig.shape[0] // HOP_LENGTH
    power = stft_power(sig, N_FFT, HOP_LENGTH, n_frames)
    mel = np.einsum("mf,tf...->tm...", mel_filterbank(), power)
    return np.log1p(mel)


def reshape_spec(spec: np.ndarray) -> np.ndarray:
    """(T, 49, 4, 4) -> (T, 28, 28).

    Node ``(i, j)`` occupies the 7x7 tile at rows ``7i:7i+7``, cols
    ``7j:7j+7``; mel bin ``m`` sits at ``(m // 7, m % 7)`` inside the tile.
    """
    spec = np.asarray(spec)
    if spec.shape[1:] != (N_MELS, 4, 4):
        raise ValueError(f"expected (T, 49, 4, 4), got {spec.shape}")
    t = spec.shape[0]
    tiles = spec.reshape(t, TILE, TILE, 4, 4)  # (T, r, c, i, j)
    return tiles.transpose(0, 3, 1, 4, 2).reshape(t, IMAGE_SIZE, IMAGE_SIZE)


def unreshape_spec(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    t = img.shape[0]
    tiles = img.reshape(t, 4, TILE, 4, TILE)  # (T, i, r, j, c)
    return tiles.transpose(0, 2, 4, 1, 3).reshape(t, N_MELS, 4, 4)


def frame_times(n_frames: int = N_FRAMES, rate: float = FRAME_RATE_HZ) -> np.ndarray:
    return np.arange(n_frames) / rate


def resample_to_frames(x: np.ndarray, rate: float, n_frames: int = N_FRAMES) -> np.ndarray:
    """Sample a stream (axis 0) at the model frame times by linear interpolation."""
    x = np.asarray(x, dtype=np.float64)
    pos = frame_times(n_frames) * rate
    i0 = np.clip(np.floor(pos).astype(int), 0, x.shape[0] - 1)
    i1 = np.minimum(i0 + 1, x.shape[0] - 1)
    w = (pos - i0).reshape((-1,) + (1,) * (x.ndim - 1))
    return x[i0] * (1 - w) + x[i1] * w


def bilinear_resize(frames: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """(T, H, W) -> (T, size, size), half-pixel-centre bilinear interpolation."""
    t = torch.from_numpy(np.ascontiguousarray(frames, dtype=np.float64))[:, None]
    out = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    return out[:, 0].numpy()


def fsr_preprocess(fsr: np.ndarray, rate: float = RAW_RATE_HZ, n_frames: int = N_FRAMES) -> np.ndarray:
    """(7000, 16, 16, 2) -> (300, 28, 28, 2): moving mean, 30 Hz sampling, bilinear upscale."""
    fsr = np.asarray(fsr, dtype=np.float64)
    if fsr.ndim != 4 or fsr.shape[-1] != 2:
        raise ValueError(f"expected FSR array (T, H, W, 2), got {fsr.shape}")
    smooth = ndimage.uniform_filter1d(fsr, FSR_MEAN_WINDOW, axis=0, mode="nearest")
    frames = resample_to_frames(smooth, rate, n_frames)
    layers = [bilinear_resize(frames[..., k]) for k in range(2)]
    return np.stack(layers, axis=-1)


def fuse(accel_img: np.ndarray, fsr_img: np.ndarray, mode: FusionMode) -> ObservationSequence:
    mode = FusionMode(mode)
    if accel_img.shape[0] != fsr_img.shape[0]:
        raise ValueError(f"frame mismatch: accel {accel_img.shape[0]} vs fsr {fsr_img.shape[0]}")
    acc = accel_img[:, None]
    fsr = np.moveaxis(fsr_img, -1, 1)
    if mode is FusionMode.ACC:
        streams = (acc,)
    elif mode is FusionMode.FSR_T:
        streams = (fsr[:, :1],)
    elif mode is FusionMode.FSR_B:
        streams = (fsr[:, 1:2],)
    elif mode is FusionMode.FSR_TB:
        streams = (fsr,)
    elif mode is FusionMode.MULTI_E:
        streams = (np.concatenate([acc, fsr], axis=1),)
    else:
        streams = (acc, fsr)
    return ObservationSequence(streams, mode)


def pose_deltas(poses: np.ndarray) -> np.ndarray:
    """Per-frame 6-D pose change; the first frame has zero delta."""
    d = np.diff(poses, axis=0, prepend=poses[:1])
    return d


def fit_normalization(raw_trials) -> NormalizationStats:
    """Per-channel statistics from the training split.

    ``raw_trials`` is an iterable of objects with ``accel`` and ``fsr`` arrays
    (e.g. :class:`~tactile_perception.contact_sim.RawTrial`).  Two passes are
    made: raw accelerometer magnitudes first, then the log-mel and FSR images
    they produce.
    """
    trials = list(raw_trials)
    if not trials:
        raise ValueError("need at least one training trial")
    s1 = np.zeros((4, 4))
    s2 = np.zeros((4, 4))
    count = 0
    for tr in trials:
        mag = accel_magnitude(tr.accel)
        s1 += mag.sum(axis=0)
        s2 += (mag**2).sum(axis=0)
        count += mag.shape[0]
    mean = s1 / count
    std = np.sqrt(np.maximum(s2 / count - mean**2, 0.0))
    stats = NormalizationStats(accel_mean=mean, accel_std=std)

    spec_sum = spec_sq = 0.0
    n_spec = 0
    fsr_sum = np.zeros(2)
    fsr_sq = np.zeros(2)
    n_fsr = 0
    for tr in trials:
        spec = reshape_spec(log_mel_spectrogram(accel_magnitude_downsample(tr.accel, stats)))
        spec_sum += spec.sum()
        spec_sq += (spec**2).sum()
        n_spec += spec.size
        fsr = fsr_preprocess(tr.fsr)
        fsr_sum += fsr.sum(axis=(0, 1, 2))
        fsr_sq += (fsr**2).sum(axis=(0, 1, 2))
        n_fsr += fsr[..., 0].size
    stats.spec_mean = spec_sum / n_spec
    stats.spec_std = float(max(np.sqrt(max(spec_sq / n_spec - stats.spec_mean**2, 0.0)), 1e-8))
    stats.fsr_mean = fsr_sum / n_fsr
    stats.fsr_std = np.maximum(np.sqrt(np.maximum(fsr_sq / n_fsr - stats.fsr_mean**2, 0.0)), 1e-8)
    return stats


def process_trial(raw, stats: NormalizationStats, actions: np.ndarray | None = None) -> ProcessedTrial:
    """Full pipeline for one raw trial, normalized with training statistics."""
    spec = reshape_spec(log_mel_spectrogram(accel_magnitude_downsample(raw.accel, stats)))
    spec = (spec - stats.spec_mean) / stats.spec_std
    fsr = (fsr_preprocess(raw.fsr) - stats.fsr_mean) / stats.fsr_std
    if actions is None:
        actions = np.zeros((spec.shape[0], 6))
    return ProcessedTrial(
        accel_spec=spec.astype(np.float32),
        fsr_proc=fsr.astype(np.float32),
        actions=np.asarray(actions, dtype=np.float32),
        metadata=dict(getattr(raw, "metadata", {})),
    )
