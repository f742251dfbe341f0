"""WAV ingestion, 1-second cropping and dataset manifests."""

import os
import struct
import wave
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DuplicatePath,
    EmptyAudio,
    MalformedWav,
    OffsetBeyondClip,
    ParseError,
    UnsupportedFormat,
)

SAMPLE_RATE = 16000
CLIP_SAMPLES = SAMPLE_RATE
SUPPORTED_RATES = (8000, 16000, 22050, 44100, 48000)

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE
    source_path: str = ""
    speaker_label: Optional[str] = None

    def __len__(self):
        return len(self.samples)


@dataclass
class DatasetManifest:
    entries: list
    speaker_index: dict = field(default_factory=dict)
    root: str = "."

    @property
    def n_speakers(self):
        return len(self.speaker_index)

    def labels(self):
        """Dense class index of every entry, in entry order."""
        return np.array([self.speaker_index[s] for _, s in self.entries], dtype=np.int64)

    def resolve(self, utterance_path):
        if os.path.isabs(utterance_path):
            return utterance_path
        return os.path.join(self.root, utterance_path)

    def by_speaker(self):
        groups = {}
        for i, (_, spk) in enumerate(self.entries):
            groups.setdefault(spk, []).append(i)
        return groups


def _read_chunks(data, path):
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWav(f"{path}: not a RIFF/WAVE file")
    chunks = {}
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            if cid == b"data":
                raise MalformedWav(f"{path}: data chunk truncated ({len(body)} of {size} bytes)")
            raise MalformedWav(f"{path}: chunk {cid!r} truncated")
        chunks.setdefault(cid, body)
        pos += 8 + size + (size & 1)
    return chunks


def _parse_fmt(fmt, path):
    if fmt is None or len(fmt) < 16:
        raise MalformedWav(f"{path}: missing or short fmt chunk")
    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if tag == _WAVE_FORMAT_EXTENSIBLE and len(fmt) >= 26:
        tag = struct.unpack_from("<H", fmt, 24)[0]
    if tag != _WAVE_FORMAT_PCM:
        raise UnsupportedFormat(f"{path}: format tag {tag:#06x} is not PCM")
    if bits != 16:
        raise UnsupportedFormat(f"{path}: {bits}-bit samples, only 16-bit supported")
    if channels < 1 or block_align != 2 * channels:
        raise MalformedWav(f"{path}: inconsistent channel count / block align")
    if rate not in SUPPORTED_RATES:
        raise UnsupportedFormat(f"{path}: sample rate {rate} Hz not supported")
    return channels, rate


def resample_linear(samples, src_rate, dst_rate=SAMPLE_RATE):
    """Linear-interpolation resampling; the last input sample is held past the end."""
    if src_rate == dst_rate:
        return np.asarray(samples, dtype=np.float64)
    n_out = int(round(len(samples) * dst_rate / src_rate))
    positions = np.arange(n_out) * (src_rate / dst_rate)
    return np.interp(positions, np.arange(len(samples)), samples)


def ingest(path, speaker_label=None):
    """Read a 16-bit PCM WAV file as a mono 16 kHz clip scaled to [-1, 1)."""
    with open(path, "rb") as fh:
        data = fh.read()
    chunks = _read_chunks(data, path)
    channels, rate = _parse_fmt(chunks.get(b"fmt "), path)
    if b"data" not in chunks:
        raise MalformedWav(f"{path}: no data chunk")
    raw = chunks[b"data"]
    n_frames = len(raw) // (2 * channels)
    if n_frames == 0:
        raise EmptyAudio(f"{path}: no samples")
    pcm = np.frombuffer(raw[: n_frames * 2 * channels], dtype="<i2").reshape(n_frames, channels)
    mono = pcm.astype(np.float64).mean(axis=1) / 32768.0
    samples = resample_linear(mono, rate)
    return AudioClip(samples, SAMPLE_RATE, str(path), speaker_label)


def write_wav(path, samples, sample_rate=SAMPLE_RATE):
    """Write mono samples in [-1, 1] as 16-bit PCM (round to nearest, clipped)."""
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.astype("<i2").tobytes())


def crop_1s(clip, offset_samples=0):
    """Return the 16000-sample window starting at ``offset_samples``, zero-padded at the tail."""
    if offset_samples < 0:
        raise ValueError("offset_samples must be non-negative")
    n = len(clip.samples)
    if offset_samples >= n:
        raise OffsetBeyondClip(f"offset {offset_samples} >= clip length {n}")
    out = np.zeros(CLIP_SAMPLES, dtype=np.float64)
    piece = clip.samples[offset_samples : offset_samples + CLIP_SAMPLES]
    out[: len(piece)] = piece
    return AudioClip(out, clip.sample_rate_hz, clip.source_path, clip.speaker_label)


def load_manifest(path):
    entries = []
    speaker_index = {}
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2 or not fields[0] or not fields[1]:
                raise ParseError("expected '<utterance_path>\\t<speaker_id>'", lineno)
            utt, spk = fields
            if utt in seen:
                raise DuplicatePath(f"line {lineno}: duplicate utterance path {utt!r}")
            seen.add(utt)
            speaker_index.setdefault(spk, len(speaker_index))
            entries.append((utt, spk))
    root = os.path.dirname(os.path.abspath(path))
    return DatasetManifest(entries, speaker_index, root)


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8") as fh:
        for utt, spk in entries:
            fh.write(f"{utt}\t{spk}\n")


def load_clips(manifest):
    """Ingest every manifest entry, in entry order."""
    return [ingest(manifest.resolve(utt), spk) for utt, spk in manifest.entries]
