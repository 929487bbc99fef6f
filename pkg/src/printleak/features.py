"""Frame features for the acoustic and magnetometer channels.

Time-domain and spectral functions operate on the last axis, so they accept a
single frame ``(N,)`` or a stack of frames ``(F, N)``. Magnetometer statistics
take ``(M, 3)`` or ``(F, M, 3)`` arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

QUALITY_SILENT = 1
QUALITY_DEGENERATE_AXIS = 2

_MAG_AXES = ("x", "y", "z")
_MAG_STATS = ("mean", "std", "skew", "kurt")


class SilentFrameError(ValueError):
    """Spectral statistic requested for a frame with no spectral energy."""


class DegenerateAxisError(ValueError):
    """Skewness or kurtosis requested for a magnetometer axis with zero variance."""


@dataclass(frozen=True)
class MfccConfig:
    n_mels: int = 26
    n_coeffs: int = 13
    fmin: float = 0.0
    fmax: Optional[float] = None  # None -> Nyquist
    log_floor: float = 1e-10

    def resolve(self, rate: float) -> tuple:
        """Validated ``(fmin, fmax)`` for a sample rate."""
        fmax = rate / 2.0 if self.fmax is None else float(self.fmax)
        if self.n_coeffs > self.n_mels or self.n_coeffs < 1:
            raise ValueError("n_coeffs must be in [1, n_mels]")
        if fmax > rate / 2.0 + 1e-9:
            raise ValueError(f"fmax {fmax} Hz exceeds the Nyquist frequency {rate / 2.0} Hz")
        if not 0 <= self.fmin < fmax:
            raise ValueError("need 0 <= fmin < fmax")
        return float(self.fmin), fmax


@dataclass(frozen=True)
class SpectrumFrame:
    freqs: np.ndarray
    magnitudes: np.ndarray


def feature_names(cfg: MfccConfig = MfccConfig()) -> list:
    names = ["zcr", "ste", "rms", "centroid", "bandwidth"]
    names += [f"mfcc_{i}" for i in range(1, cfg.n_coeffs + 1)]
    names += [f"mag_{a}_{s}" for a in _MAG_AXES for s in _MAG_STATS]
    return names


def acoustic_columns(cfg: MfccConfig = MfccConfig()) -> list:
    return list(range(5 + cfg.n_coeffs))


def magnetic_columns(cfg: MfccConfig = MfccConfig()) -> list:
    start = 5 + cfg.n_coeffs
    return list(range(start, start + 12))


# ---------------------------------------------------------------------------
# Time domain


def zcr(x) -> np.ndarray:
    """Fraction of adjacent sample pairs whose product is negative."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if n < 2:
        raise ValueError("zero-crossing rate needs at least 2 samples")
    crossings = np.count_nonzero(x[..., 1:] * x[..., :-1] < 0, axis=-1)
    return crossings / (n - 1)


def short_time_energy(x) -> np.ndarray:
    """Sum of squares over the whole frame (rectangular window)."""
    x = np.asarray(x, dtype=float)
    return np.sum(x * x, axis=-1)


def rms(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.sqrt(short_time_energy(x) / x.shape[-1])


# ---------------------------------------------------------------------------
# Spectral


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def spectrum(x, rate: float) -> SpectrumFrame:
    """Hann-windowed magnitude spectrum, bins 0..N/2."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    mags = np.abs(np.fft.rfft(x * hann(n), axis=-1))
    freqs = np.arange(mags.shape[-1]) * (rate / n)
    return SpectrumFrame(freqs, mags)


def _spectral_moments(sf: SpectrumFrame) -> tuple:
    total = np.sum(sf.magnitudes, axis=-1)
    silent = total <= 0
    safe = np.where(silent, 1.0, total)
    centroid = np.sum(sf.freqs * sf.magnitudes, axis=-1) / safe
    spread = (sf.freqs - np.expand_dims(centroid, -1)) ** 2
    bandwidth = np.sqrt(np.sum(spread * sf.magnitudes, axis=-1) / safe)
    return centroid, bandwidth, silent


def spectral_centroid(sf: SpectrumFrame) -> np.ndarray:
    """Magnitude-weighted mean frequency in Hz."""
    centroid, _, silent = _spectral_moments(sf)
    if np.any(silent):
        raise SilentFrameError("silent frame: spectrum is all zero")
    return centroid


def spectral_bandwidth(sf: SpectrumFrame) -> np.ndarray:
    """Magnitude-weighted spread around the centroid, in Hz."""
    _, bandwidth, silent = _spectral_moments(sf)
    if np.any(silent):
        raise SilentFrameError("silent frame: spectrum is all zero")
    return bandwidth


# ---------------------------------------------------------------------------
# Smoothing


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Gaussian weights on offsets -r..r with r = ceil(3 sigma), summing to 1."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=float)
    w = np.exp(-(x**2) / (2.0 * sigma**2)) / math.sqrt(2.0 * math.pi * sigma**2)
    return w / w.sum()


def gaussian_smooth(series, sigma: float, axis: int = 0) -> np.ndarray:
    """Convolve with a truncated Gaussian, mirroring the series at both ends.

    Padding repeats the edge sample (``d c b a | a b c d``), which keeps the
    total weight on every input sample at exactly one, so the mean survives.
    """
    series = np.asarray(series, dtype=float)
    if series.shape[axis] == 0:
        return series.copy()
    w = gaussian_kernel(sigma)
    r = len(w) // 2
    moved = np.moveaxis(series, axis, 0)
    pad = [(r, r)] + [(0, 0)] * (moved.ndim - 1)
    padded = np.pad(moved, pad, mode="symmetric")
    n = moved.shape[0]
    out = np.zeros_like(moved)
    for k, wk in enumerate(w):
        out += wk * padded[k : k + n]
    return np.moveaxis(out, 0, axis)


# ---------------------------------------------------------------------------
# MFCC


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, freqs: np.ndarray, fmin: float, fmax: float) -> np.ndarray:
    """Triangular filters (n_mels, len(freqs)) on the HTK mel scale, peak height 1."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def dct_matrix(n_coeffs: int, n_mels: int) -> np.ndarray:
    """cos[n (m - 0.5) pi / M] for n = 1..n_coeffs, m = 1..M."""
    n = np.arange(1, n_coeffs + 1)[:, None]
    m = np.arange(1, n_mels + 1)[None, :]
    return np.cos(n * (m - 0.5) * np.pi / n_mels)


def mel_spectrum(x, rate: float, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    fmin, fmax = cfg.resolve(rate)
    sf = spectrum(x, rate)
    bank = mel_filterbank(cfg.n_mels, sf.freqs, fmin, fmax)
    return (sf.magnitudes**2) @ bank.T


def mfcc(x, rate: float, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """Cepstral coefficients 1..n_coeffs of the log mel power spectrum."""
    s = mel_spectrum(x, rate, cfg)
    logs = np.log(np.maximum(s, cfg.log_floor))
    return logs @ dct_matrix(cfg.n_coeffs, cfg.n_mels).T


# ---------------------------------------------------------------------------
# Magnetometer


def _exact_mean(a):
    """Mean over axis -2 from correctly rounded sums, so exact cancellations stay exact."""
    cols = np.moveaxis(a, -2, -1)
    flat = cols.reshape(-1, cols.shape[-1])
    sums = np.fromiter((math.fsum(row) for row in flat), dtype=float, count=len(flat))
    return sums.reshape(cols.shape[:-1]) / a.shape[-2]


def _moments(m):
    m = np.asarray(m, dtype=float)
    if m.shape[-2] < 2:
        raise ValueError("magnetic statistics need at least 2 samples")
    mean = _exact_mean(m)
    dev = m - mean[..., None, :]
    sq = dev * dev  # plain products keep (-d)^3 == -(d^3) bit for bit; vectorized pow does not
    m2 = np.mean(sq, axis=-2)
    m3 = _exact_mean(sq * dev)
    m4 = np.mean(sq * sq, axis=-2)
    scale = np.maximum(np.abs(mean), 1.0)
    degenerate = m2 <= (1e-12 * scale) ** 2
    return mean, m2, m3, m4, degenerate


def _stats_from_moments(mean, m2, m3, m4, degenerate):
    safe = np.where(degenerate, 1.0, m2)
    std = np.sqrt(m2)
    skew = np.where(degenerate, 0.0, m3 / safe**1.5)
    kurt = np.where(degenerate, 0.0, m4 / safe**2 - 3.0)
    stats = np.stack([mean, std, skew, kurt], axis=-1)  # (..., 3 axes, 4 stats)
    return stats.reshape(stats.shape[:-2] + (12,))


def magnetic_stats(m) -> np.ndarray:
    """Per axis mean, std, skewness and excess kurtosis (population moments).

    Returns 12 values ordered x(mean, std, skew, kurt), y(...), z(...).
    Raises :class:`DegenerateAxisError` if any axis has zero variance.
    """
    moments = _moments(m)
    if np.any(moments[-1]):
        raise DegenerateAxisError("degenerate axis: zero variance, skewness/kurtosis undefined")
    return _stats_from_moments(*moments)


# ---------------------------------------------------------------------------
# Assembly


@dataclass(frozen=True, eq=False)
class FeatureVector:
    zcr: float
    ste: float
    rms: float
    centroid: float
    bandwidth: float
    mfcc: np.ndarray
    magnetic: np.ndarray  # 12 values, see magnetic_stats
    quality: int = 0

    def as_array(self) -> np.ndarray:
        head = [self.zcr, self.ste, self.rms, self.centroid, self.bandwidth]
        return np.concatenate([head, self.mfcc, self.magnetic])

    def __len__(self):
        return 5 + len(self.mfcc) + 12


def feature_matrix(acoustic, magnetic, rate: float, cfg: MfccConfig = MfccConfig()) -> tuple:
    """Features for stacked frames.

    ``acoustic`` is (F, N), ``magnetic`` is (F, M, 3). Returns ``(X, quality)``
    where X is (F, 5 + n_coeffs + 12) and ``quality`` holds per-frame bit
    flags; silent spectra and degenerate magnetometer axes yield zeros there.
    """
    acoustic = np.asarray(acoustic, dtype=float)
    magnetic = np.asarray(magnetic, dtype=float)
    if acoustic.ndim != 2 or magnetic.ndim != 3 or len(acoustic) != len(magnetic):
        raise ValueError("expected acoustic (F, N) and magnetic (F, M, 3) with equal F")
    n_frames = len(acoustic)
    quality = np.zeros(n_frames, dtype=np.int64)

    sf = spectrum(acoustic, rate)
    centroid, bandwidth, silent = _spectral_moments(sf)
    fmin, fmax = cfg.resolve(rate)
    bank = mel_filterbank(cfg.n_mels, sf.freqs, fmin, fmax)
    logs = np.log(np.maximum((sf.magnitudes**2) @ bank.T, cfg.log_floor))
    coeffs = logs @ dct_matrix(cfg.n_coeffs, cfg.n_mels).T
    centroid = np.where(silent, 0.0, centroid)
    bandwidth = np.where(silent, 0.0, bandwidth)
    coeffs = np.where(silent[:, None], 0.0, coeffs)
    quality[silent] |= QUALITY_SILENT

    moments = _moments(magnetic)
    degenerate = np.any(moments[-1], axis=-1)
    quality[degenerate] |= QUALITY_DEGENERATE_AXIS
    mag = _stats_from_moments(*moments)

    X = np.column_stack(
        [zcr(acoustic), short_time_energy(acoustic), rms(acoustic), centroid, bandwidth, coeffs, mag]
    )
    return X, quality


def build_feature_vector(frame, cfg: MfccConfig = MfccConfig()) -> FeatureVector:
    """Feature summary of one :class:`~printleak.ingest.Frame`."""
    X, quality = feature_matrix(frame.acoustic[None, :], frame.magnetic[None, :, :], frame.acoustic_rate, cfg)
    row = X[0]
    k = cfg.n_coeffs
    return FeatureVector(
        zcr=float(row[0]),
        ste=float(row[1]),
        rms=float(row[2]),
        centroid=float(row[3]),
        bandwidth=float(row[4]),
        mfcc=row[5 : 5 + k].copy(),
        magnetic=row[5 + k :].copy(),
        quality=int(quality[0]),
    )


def write_feature_csv(stream, X, labels: Optional[Sequence] = None, names: Optional[Sequence[str]] = None) -> None:
    """Write ``frame_idx,label,<feature names...>``; labels may be None.

    Values are written with full precision so a re-read matrix is bit-identical.
    """
    X = np.asarray(X, dtype=float)
    names = list(names) if names is not None else feature_names(MfccConfig(n_coeffs=X.shape[1] - 17))
    stream.write(",".join(["frame_idx", "label"] + names) + "\n")
    for i, row in enumerate(X):
        label = "" if labels is None else str(labels[i])
        stream.write(",".join([str(i), label] + [repr(float(v)) for v in row]) + "\n")


def read_feature_csv(stream) -> tuple:
    """Inverse of :func:`write_feature_csv`: ``(X, labels, names)``; labels are strings."""
    header = stream.readline().strip().split(",")
    if header[:2] != ["frame_idx", "label"]:
        raise ValueError("feature CSV must start with frame_idx,label")
    names = header[2:]
    rows, labels = [], []
    for line in stream:
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        labels.append(parts[1])
        rows.append([float(v) for v in parts[2:]])
    return np.array(rows, dtype=float).reshape(-1, len(names)), labels, names
