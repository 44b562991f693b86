"""Frame-level and utterance-level acoustic features.

Everything here operates on clips at the canonical 16 kHz rate. The pooled
88-d vector is the classifier input: 40 log-mel band means, 40 log-mel band
standard deviations, then pitch mean/std/min/max over voiced frames, RMS
energy mean/std and spectral flux mean/std.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window
from sklearn.base import BaseEstimator, TransformerMixin

from .corpus import CANONICAL_RATE, AudioClip, resample
from .exceptions import DataError

N_MELS = 40
MEL_FMIN = 50.0
MEL_FMAX = 8000.0
LOG_FLOOR = 1e-10
F0_MIN = 50.0
F0_MAX = 600.0
YIN_THRESHOLD = 0.15

PROSODY_NAMES = (
    "pitch_mean", "pitch_std", "pitch_min", "pitch_max",
    "energy_mean", "energy_std", "flux_mean", "flux_std",
)
FEATURE_NAMES = (
    tuple(f"logmel_mean_{i}" for i in range(N_MELS))
    + tuple(f"logmel_std_{i}" for i in range(N_MELS))
    + PROSODY_NAMES
)
N_FEATURES = len(FEATURE_NAMES)


@dataclass(frozen=True)
class FrameConfig:
    frame_len: int = 400
    hop: int = 160

    def __post_init__(self):
        if not (0 < self.hop <= self.frame_len <= 8192):
            raise ValueError(
                f"need 0 < hop <= frame_len <= 8192, got hop={self.hop}, frame_len={self.frame_len}"
            )

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_len:
            raise DataError(
                f"clip of {n_samples} samples is shorter than one frame ({self.frame_len})"
            )
        return 1 + (n_samples - self.frame_len) // self.hop


@dataclass(frozen=True)
class Spectrogram:
    magnitudes: np.ndarray  # frames x bins
    bin_hz: float

    @property
    def n_frames(self):
        return self.magnitudes.shape[0]


@dataclass(frozen=True)
class PitchTrack:
    f0: np.ndarray  # Hz, NaN where unvoiced
    voiced: np.ndarray

    @property
    def voiced_f0(self) -> np.ndarray:
        return self.f0[self.voiced]


def _frames(x: np.ndarray, cfg: FrameConfig, extra: int = 0) -> np.ndarray:
    n = cfg.n_frames(x.size)
    need = (n - 1) * cfg.hop + cfg.frame_len + extra
    if need > x.size:
        x = np.concatenate([x, np.zeros(need - x.size)])
    return sliding_window_view(x, cfg.frame_len + extra)[: (n - 1) * cfg.hop + 1 : cfg.hop]


def _check_rate(clip: AudioClip):
    if clip.sample_rate != CANONICAL_RATE:
        raise DataError(
            f"expected a {CANONICAL_RATE} Hz clip, got {clip.sample_rate} Hz; resample first"
        )


def stft_magnitude(clip: AudioClip, cfg: FrameConfig = FrameConfig()) -> Spectrogram:
    """Hann-windowed magnitude spectrum; frame t covers [t*hop, t*hop + frame_len)."""
    _check_rate(clip)
    frames = _frames(clip.samples, cfg)
    window = get_window("hann", cfg.frame_len)
    mags = np.abs(np.fft.rfft(frames * window, n=cfg.frame_len, axis=1))
    return Spectrogram(mags, clip.sample_rate / cfg.frame_len)


def rms_energy(clip: AudioClip, cfg: FrameConfig = FrameConfig()) -> np.ndarray:
    _check_rate(clip)
    frames = _frames(clip.samples, cfg)
    return np.sqrt(np.mean(frames ** 2, axis=1))


def _cmnd(frames: np.ndarray, window: int, tau_max: int) -> np.ndarray:
    """Cumulative-mean-normalized difference, shape (frames, tau_max + 1)."""
    base = frames[:, :window]
    diff = np.zeros((frames.shape[0], tau_max + 1))
    for tau in range(1, tau_max + 1):
        d = base - frames[:, tau:tau + window]
        diff[:, tau] = np.einsum("ij,ij->i", d, d)
    cum = np.cumsum(diff[:, 1:], axis=1)
    taus = np.arange(1, tau_max + 1)
    out = np.ones_like(diff)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = diff[:, 1:] * taus / cum
    out[:, 1:] = np.where(cum > 0, ratio, 1.0)
    return out


def pitch_yin(
    clip: AudioClip, cfg: FrameConfig = FrameConfig(), threshold: float = YIN_THRESHOLD
) -> PitchTrack:
    """YIN f0 tracking in the 50-600 Hz band.

    Each analysis frame integrates over ``frame_len`` samples starting at
    ``t * hop`` and looks ahead by the longest lag, zero-padding past the end
    of the clip. Frames whose normalized difference never dips below
    ``threshold`` are unvoiced.
    """
    _check_rate(clip)
    sr = clip.sample_rate
    tau_min = max(2, int(np.floor(sr / F0_MAX)))
    tau_max = int(np.ceil(sr / F0_MIN))
    frames = _frames(clip.samples, cfg, extra=tau_max)
    cmnd = _cmnd(frames, cfg.frame_len, tau_max)

    n = cmnd.shape[0]
    f0 = np.full(n, np.nan)
    below = cmnd[:, tau_min:tau_max] < threshold
    has_dip = below.any(axis=1)
    first = np.argmax(below, axis=1) + tau_min
    for t in np.flatnonzero(has_dip):
        row = cmnd[t]
        tau = first[t]
        while tau + 1 < tau_max and row[tau + 1] < row[tau]:
            tau += 1
        # parabolic refinement around the local minimum
        a, b, c = row[tau - 1], row[tau], row[tau + 1]
        denom = a - 2.0 * b + c
        shift = 0.5 * (a - c) / denom if denom > 0 else 0.0
        freq = sr / (tau + shift)
        if F0_MIN <= freq <= F0_MAX:
            f0[t] = freq
    return PitchTrack(f0, ~np.isnan(f0))


def spectral_flux(spec: Spectrogram) -> np.ndarray:
    """L2 norm of the rectified change between L1-normalized frames; flux[0] = 0."""
    m = spec.magnitudes
    if m.shape[0] < 2:
        raise DataError("spectral flux needs at least 2 frames")
    totals = m.sum(axis=1, keepdims=True)
    norm = np.divide(m, totals, out=np.zeros_like(m), where=totals > 0)
    rise = np.maximum(np.diff(norm, axis=0), 0.0)
    return np.concatenate([[0.0], np.sqrt(np.sum(rise ** 2, axis=1))])


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(
    n_bins: int, bin_hz: float, n_mels: int = N_MELS, fmin: float = MEL_FMIN, fmax: float = MEL_FMAX
) -> np.ndarray:
    """Triangular filters on the HTK mel scale, shape (n_mels, n_bins)."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_bins) * bin_hz
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def log_mel(spec: Spectrogram) -> np.ndarray:
    fb = mel_filterbank(spec.magnitudes.shape[1], spec.bin_hz)
    return np.log(np.maximum(spec.magnitudes @ fb.T, LOG_FLOOR))


def pooled_features(clip: AudioClip, cfg: FrameConfig = FrameConfig()) -> np.ndarray:
    """88-d utterance descriptor for one canonical-rate clip."""
    if clip.samples.size < cfg.frame_len or cfg.n_frames(clip.samples.size) < 3:
        raise DataError(f"clip too short: need at least 3 frames of {cfg.frame_len} samples")
    spec = stft_magnitude(clip, cfg)
    lm = log_mel(spec)
    f0 = pitch_yin(clip, cfg).voiced_f0
    energy = rms_energy(clip, cfg)
    flux = spectral_flux(spec)
    if f0.size:
        pitch = [f0.mean(), f0.std(), f0.min(), f0.max()]
    else:
        pitch = [0.0] * 4
    prosody = pitch + [energy.mean(), energy.std(), flux.mean(), flux.std()]
    return np.concatenate([lm.mean(axis=0), lm.std(axis=0), prosody])


def quantize(x, digits: int = 6) -> np.ndarray:
    """Round to ``digits`` significant decimal digits, as the feature cache stores them."""
    x = np.asarray(x, dtype=float)
    return np.array([float(f"{v:.{digits}g}") for v in x.ravel()]).reshape(x.shape)


class FeatureExtractor(TransformerMixin, BaseEstimator):
    """Map a sequence of AudioClips to a (n_clips, 88) feature matrix.

    Clips at other rates are resampled to 16 kHz first. Output is rounded to
    ``digits`` significant digits, the precision of the feature cache, so a
    vector computed in memory equals the one read back from disk. Stateless,
    so ``fit`` is a no-op kept for pipeline compatibility.
    """

    def __init__(self, frame_len=400, hop=160, digits=6):
        self.frame_len = frame_len
        self.hop = hop
        self.digits = digits

    def fit(self, X=None, y=None):
        FrameConfig(self.frame_len, self.hop)
        return self

    def transform(self, X):
        cfg = FrameConfig(self.frame_len, self.hop)
        F = np.vstack([pooled_features(resample(c, CANONICAL_RATE), cfg) for c in X])
        return F if self.digits is None else quantize(F, self.digits)

    def __sklearn_is_fitted__(self):
        return True


def write_feature_csv(path, clip_ids, X):
    X = np.asarray(X, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["clip_id"] + [f"f{i}" for i in range(X.shape[1])])
        for cid, row in zip(clip_ids, X):
            w.writerow([cid] + [f"{v:.6g}" for v in row])


def read_feature_csv(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"feature file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "clip_id":
        raise DataError(f"{path}: missing clip_id header")
    width = len(rows[0]) - 1
    ids, data = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width + 1:
            raise DataError(f"{path}: wrong column count at line {lineno}")
        ids.append(row[0])
        data.append([float(v) for v in row[1:]])
    return ids, np.array(data, dtype=float).reshape(len(ids), width)
