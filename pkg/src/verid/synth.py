"""Deterministic synthetic-speaker corpus for self-contained tests.

Each pseudo-speaker has a pitch range, a formant-like spectral envelope
and a band of coloured noise. Every utterance perturbs those (pitch and
formant jitter, syllable-rate amplitude modulation) and adds nuisance that
carries no identity: an interfering tone at a random frequency, white
noise at a random SNR and a random gain.
"""

import os
from dataclasses import dataclass

import numpy as np

from .audio_io import SAMPLE_RATE, write_manifest, write_wav

NYQUIST = SAMPLE_RATE / 2


@dataclass(frozen=True)
class SpeakerProfile:
    f0: float
    formants: tuple
    bandwidths: tuple
    noise_center: float
    noise_width: float
    noise_level: float


def speaker_profile(rng):
    formants = np.sort(rng.uniform([250.0, 800.0, 1800.0], [900.0, 2200.0, 3800.0]))
    return SpeakerProfile(
        f0=float(rng.uniform(90.0, 260.0)),
        formants=tuple(float(f) for f in formants),
        bandwidths=tuple(float(b) for b in rng.uniform(80.0, 260.0, size=3)),
        noise_center=float(rng.uniform(1500.0, 6500.0)),
        noise_width=float(rng.uniform(200.0, 900.0)),
        noise_level=float(rng.uniform(0.2, 0.6)),
    )


def _envelope(freqs, centers, widths):
    env = np.zeros_like(freqs, dtype=np.float64)
    for c, w in zip(centers, widths):
        env += np.exp(-0.5 * ((freqs - c) / w) ** 2)
    return env


def _band_noise(rng, n, center, width):
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
    out = np.fft.irfft(spec * np.exp(-0.5 * ((freqs - center) / width) ** 2), n)
    return out / (np.sqrt(np.mean(out ** 2)) + 1e-12)


def _rms(x):
    return float(np.sqrt(np.mean(x ** 2))) + 1e-12


def synth_utterance(profile, rng, duration_s):
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    jitter = 1.0 + rng.normal(0.0, 0.04)
    f0_track = profile.f0 * jitter * (1.0 + 0.03 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0_track) / SAMPLE_RATE
    formants = np.array(profile.formants) * (1.0 + rng.normal(0.0, 0.03, size=3))
    widths = np.array(profile.bandwidths)
    f0_mean = profile.f0 * jitter

    voiced = np.zeros(n)
    for h in range(1, int(0.95 * NYQUIST / f0_mean) + 1):
        amp = _envelope(np.array([h * f0_mean]), formants, widths)[0] + 0.02
        voiced += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    voiced /= _rms(voiced)

    coloured = profile.noise_level * _band_noise(rng, n, profile.noise_center, profile.noise_width)
    syllables = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(2.0, 5.0) * t + rng.uniform(0, 2 * np.pi))
    speech = syllables * voiced + coloured

    tone = rng.uniform(0.0, 0.6) * np.sqrt(2) * np.sin(2 * np.pi * rng.uniform(150.0, 7000.0) * t + rng.uniform(0, 2 * np.pi))
    snr_db = rng.uniform(8.0, 25.0)
    white = rng.standard_normal(n) * _rms(speech) * 10 ** (-snr_db / 20)
    x = speech + tone + white
    return x / np.max(np.abs(x)) * rng.uniform(0.2, 0.8)


def make_fixture(n_speakers=20, n_utterances=20, seed=0, min_dur=1.5, max_dur=2.5):
    """Return ``[(speaker_id, [samples, ...]), ...]`` for a deterministic corpus."""
    rng = np.random.default_rng(seed)
    corpus = []
    for s in range(n_speakers):
        profile = speaker_profile(rng)
        utts = [synth_utterance(profile, rng, rng.uniform(min_dur, max_dur)) for _ in range(n_utterances)]
        corpus.append((f"spk{s:02d}", utts))
    return corpus


def write_fixture(out_dir, n_speakers=20, n_utterances=20, seed=0, heldout=5):
    """Write WAVs plus ``manifest.tsv``, ``train.tsv`` and ``heldout.tsv``.

    The last ``heldout`` utterances of every speaker go to ``heldout.tsv``
    and the rest to ``train.tsv``. Returns the three manifest paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    all_entries, train, held = [], [], []
    for spk, utts in make_fixture(n_speakers, n_utterances, seed):
        os.makedirs(os.path.join(out_dir, spk), exist_ok=True)
        for u, samples in enumerate(utts):
            rel = f"{spk}/utt{u:02d}.wav"
            write_wav(os.path.join(out_dir, rel), samples)
            all_entries.append((rel, spk))
            (held if u >= n_utterances - heldout else train).append((rel, spk))
    paths = {}
    for name, entries in (("manifest", all_entries), ("train", train), ("heldout", held)):
        paths[name] = os.path.join(out_dir, f"{name}.tsv")
        write_manifest(paths[name], entries)
    return paths
