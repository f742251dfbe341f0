"""Log-mel + delta feature maps for the CNN and MFCC/CMVN frames for the GMM baseline.

Framing is 25 ms Hamming windows every 10 ms at 16 kHz with a 512-point
FFT. A 1 s crop is zero-padded to 16240 samples so that it yields exactly
100 frames.
"""

import functools
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct

from .audio_io import CLIP_SAMPLES, SAMPLE_RATE
from .errors import ShapeMismatch, TooShort, VeridError, WrongLength

FRAME_LEN = 400
FRAME_STEP = 160
N_FFT = 512
N_BINS = N_FFT // 2 + 1
N_MELS = 40
N_FRAMES = 100
PADDED_LEN = (N_FRAMES - 1) * FRAME_STEP + FRAME_LEN  # 16240
LOG_FLOOR = 1e-10
CMVN_STD_FLOOR = 1e-8
DELTA_WIDTH = 2

FEATURE_SHAPE = (3, N_MELS, N_FRAMES)
FEAT_MAGIC = b"VERID-FEAT 1 3 40 100\n"


@dataclass
class FeatureMap:
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape != FEATURE_SHAPE:
            raise ShapeMismatch(f"feature map shape {self.data.shape}, expected {FEATURE_SHAPE}")


@dataclass
class MfccFrames:
    data: np.ndarray
    cmvn_applied: bool = False


def hamming(n=FRAME_LEN):
    """Periodic Hamming window."""
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _frame(x, n_frames):
    windows = sliding_window_view(x, FRAME_LEN)[::FRAME_STEP][:n_frames]
    return windows * hamming()


def frame_signal(samples):
    x = np.asarray(samples, dtype=np.float64)
    if x.shape != (CLIP_SAMPLES,):
        raise WrongLength(f"expected {CLIP_SAMPLES} samples, got {x.shape}")
    padded = np.zeros(PADDED_LEN)
    padded[:CLIP_SAMPLES] = x
    return _frame(padded, N_FRAMES)


def power_spectrum(frames):
    if frames.ndim != 2 or frames.shape[1] > N_FFT:
        raise ShapeMismatch(f"bad frame matrix shape {frames.shape}")
    spec = np.fft.rfft(frames, n=N_FFT, axis=1)
    return spec.real ** 2 + spec.imag ** 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_edges(n_filters=N_MELS, fmin=0.0, fmax=SAMPLE_RATE / 2):
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))


@functools.lru_cache(maxsize=None)
def _filterbank(n_filters, n_fft, sample_rate):
    edges = mel_edges(n_filters, 0.0, sample_rate / 2)
    # edge frequencies snap to the nearest FFT bin so every peak is exactly 1
    bins = np.floor(edges * n_fft / sample_rate + 0.5).astype(int)
    k = np.arange(n_fft // 2 + 1)
    fb = np.zeros((n_filters, n_fft // 2 + 1))
    for i in range(n_filters):
        lo, mid, hi = bins[i], bins[i + 1], bins[i + 2]
        if mid > lo:
            rise = (k >= lo) & (k <= mid)
            fb[i, rise] = (k[rise] - lo) / (mid - lo)
        if hi > mid:
            fall = (k >= mid) & (k <= hi)
            fb[i, fall] = (hi - k[fall]) / (hi - mid)
        fb[i, mid] = 1.0
    fb.setflags(write=False)
    return fb


def mel_filterbank(n_filters=N_MELS, n_fft=N_FFT, sample_rate=SAMPLE_RATE):
    """Triangular mel filters, shape (n_filters, n_fft // 2 + 1). The result is read-only and cached."""
    return _filterbank(n_filters, n_fft, sample_rate)


def log_mel(spectrum, fbank=None):
    """Natural-log filterbank energies, returned as (band, frame)."""
    if fbank is None:
        fbank = mel_filterbank()
    if spectrum.shape[1] != fbank.shape[1]:
        raise ShapeMismatch(f"spectrum has {spectrum.shape[1]} bins, filterbank {fbank.shape[1]}")
    energies = spectrum @ fbank.T
    return np.log(np.maximum(energies, LOG_FLOOR)).T


def deltas(x, width=DELTA_WIDTH):
    """Regression deltas along the last (time) axis with edge-replicated padding."""
    x = np.asarray(x, dtype=np.float64)
    n_t = x.shape[-1]
    pad = [(0, 0)] * (x.ndim - 1) + [(width, width)]
    padded = np.pad(x, pad, mode="edge")
    num = np.zeros_like(x)
    for n in range(1, width + 1):
        num += n * (padded[..., width + n : width + n + n_t] - padded[..., width - n : width - n + n_t])
    return num / (2 * sum(n * n for n in range(1, width + 1)))


def feature_map(clip):
    samples = clip.samples if hasattr(clip, "samples") else clip
    static = log_mel(power_spectrum(frame_signal(samples)))
    d1 = deltas(static)
    d2 = deltas(d1)
    return FeatureMap(np.stack([static, d1, d2]))


def feature_batch(clips):
    """Stack feature maps of 1 s clips into a float32 (B, 3, 40, 100) array."""
    return np.stack([feature_map(c).data for c in clips]).astype(np.float32)


def mfcc(clip):
    """40 orthonormal DCT-II coefficients of the log-mel energies for every full frame."""
    x = np.asarray(clip.samples if hasattr(clip, "samples") else clip, dtype=np.float64)
    if len(x) < FRAME_LEN:
        raise TooShort(f"{len(x)} samples is shorter than one {FRAME_LEN}-sample frame")
    n_frames = 1 + (len(x) - FRAME_LEN) // FRAME_STEP
    energies = log_mel(power_spectrum(_frame(x, n_frames)))
    return MfccFrames(dct(energies.T, type=2, axis=1, norm="ortho"), cmvn_applied=False)


def cmvn(frames):
    data = frames.data
    mean = data.mean(axis=0)
    std = np.maximum(data.std(axis=0), CMVN_STD_FLOOR)
    return MfccFrames((data - mean) / std, cmvn_applied=True)


def write_feature_map(path, fmap):
    with open(path, "wb") as fh:
        fh.write(FEAT_MAGIC)
        fh.write(np.ascontiguousarray(fmap.data, dtype="<f4").tobytes())


def read_feature_map(path):
    with open(path, "rb") as fh:
        header = fh.readline()
        if header != FEAT_MAGIC:
            raise VeridError(f"{path}: bad feature header {header[:40]!r}")
        blob = fh.read()
    expected = int(np.prod(FEATURE_SHAPE)) * 4
    if len(blob) != expected:
        raise VeridError(f"{path}: expected {expected} payload bytes, got {len(blob)}")
    return FeatureMap(np.frombuffer(blob, dtype="<f4").reshape(FEATURE_SHAPE).astype(np.float64))
