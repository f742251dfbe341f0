import math
import struct
from fractions import Fraction

import numpy as np
import pytest

from verid.audio_io import DatasetManifest, write_wav


def numeric_grad(f, x, h=1e-4):
    """Central finite differences of scalar ``f`` w.r.t. every entry of ``x`` (mutated and restored)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def rel_error(analytic, numeric):
    """Largest elementwise |a - n| / max(|a| + |n|, 1e-8)."""
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))))


def raw_wav(path, pcm, rate=16000, channels=1, bits=16, fmt_tag=1, declared_data=None):
    """Hand-rolled RIFF writer so tests can produce odd headers."""
    data = np.asarray(pcm, dtype="<i2").tobytes() if bits == 16 else bytes(pcm)
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, channels, rate, rate * block, block, bits)
    size = len(data) if declared_data is None else declared_data
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", size) + data
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)
    return path


@pytest.fixture
def wav_factory(tmp_path):
    counter = iter(range(10**6))

    def make(samples, rate=16000):
        path = tmp_path / f"clip{next(counter)}.wav"
        write_wav(path, samples, rate)
        return str(path)

    return make


def tone_speakers(n_speakers=2, n_utts=20, seed=0, duration=1.3):
    """Speakers defined by disjoint tone pairs over low-level noise; returns (manifest, clips)."""
    from verid.audio_io import AudioClip

    rng = np.random.default_rng(seed)
    t = np.arange(int(duration * 16000)) / 16000
    entries, clips = [], []
    for s in range(n_speakers):
        f1, f2 = 300.0 + 700.0 * s, 2000.0 + 1500.0 * s
        for u in range(n_utts):
            x = 0.3 * np.sin(2 * np.pi * f1 * (1 + rng.normal(0, 0.01)) * t + rng.uniform(0, 6.3))
            x += 0.2 * np.sin(2 * np.pi * f2 * (1 + rng.normal(0, 0.01)) * t + rng.uniform(0, 6.3))
            x += 0.02 * rng.standard_normal(len(t))
            path = f"s{s}/u{u}.wav"
            entries.append((path, f"s{s}"))
            clips.append(AudioClip(x, 16000, path, f"s{s}"))
    index = {f"s{s}": s for s in range(n_speakers)}
    return DatasetManifest(entries, index, "."), clips


def brute_eer(genuine, impostor):
    """Exhaustive sweep with explicit comparisons; returns (eer, threshold)."""
    gen = np.asarray(genuine, dtype=np.float64)
    imp = np.asarray(impostor, dtype=np.float64)
    candidates = [-math.inf] + sorted(set(gen.tolist()) | set(imp.tolist())) + [math.inf]
    cand = np.array(candidates)
    frr = (gen[None, :] < cand[:, None]).sum(axis=1)
    far = (imp[None, :] >= cand[:, None]).sum(axis=1)
    gap = [abs(Fraction(int(a), len(imp)) - Fraction(int(r), len(gen))) for a, r in zip(far, frr)]
    best = min(range(len(cand)), key=lambda k: (gap[k], cand[k]))
    return (far[best] / len(imp) + frr[best] / len(gen)) / 2, cand[best]
