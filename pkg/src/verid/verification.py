"""Enrollment, cosine scoring, trial generation and EER evaluation."""

from dataclasses import dataclass, field

import numpy as np

from .audio_io import CLIP_SAMPLES, crop_1s, ingest
from .dsp import feature_batch
from .errors import DimMismatch, EmptyAudio, EmptySide, Infeasible, NoEmbeddings, VeridError, ZeroVector

WINDOW_HOP = CLIP_SAMPLES // 2
_NORM_FLOOR = 1e-12


@dataclass
class SpeakerModel:
    speaker_id: str
    embedding: np.ndarray
    n_utterances: int = 1


@dataclass
class Trial:
    label: int  # 1 genuine, 0 impostor
    a: str
    b: str


@dataclass
class TrialList:
    trials: list = field(default_factory=list)

    def __len__(self):
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)


@dataclass
class EerReport:
    eer: float
    threshold: float
    curve: list
    n_genuine: int
    n_impostor: int

    def summary(self):
        return (
            f"EER {self.eer:.4f}\n"
            f"threshold {self.threshold!r}\n"
            f"n_genuine {self.n_genuine}\n"
            f"n_impostor {self.n_impostor}\n"
        )


def _normalize(v):
    norm = float(np.linalg.norm(v))
    if norm < _NORM_FLOOR:
        raise ZeroVector("cannot normalize a zero vector")
    return v / norm


def window_offsets(n_samples):
    """Start offsets of the 1 s windows, hop 0.5 s; one (padded) window for short clips."""
    if n_samples <= CLIP_SAMPLES:
        return [0]
    return list(range(0, n_samples - CLIP_SAMPLES + 1, WINDOW_HOP))


def embed_utterance(network, clip):
    """Mean fc-2 embedding over sliding 1 s windows, L2-normalized."""
    if len(clip.samples) == 0:
        raise EmptyAudio(f"{clip.source_path}: empty clip")
    windows = [crop_1s(clip, off) for off in window_offsets(len(clip.samples))]
    emb = network.forward(feature_batch(windows), mode="eval", head="embedding")
    return _normalize(emb.astype(np.float64).mean(axis=0))


def enroll_speaker(speaker_id, embeddings):
    embeddings = [np.asarray(e, dtype=np.float64) for e in embeddings]
    if not embeddings:
        raise NoEmbeddings(f"no embeddings for speaker {speaker_id!r}")
    mean = np.mean(embeddings, axis=0)
    try:
        unit = _normalize(mean)
    except ZeroVector:
        raise ZeroVector(f"mean embedding of speaker {speaker_id!r} is zero") from None
    return SpeakerModel(speaker_id, unit, len(embeddings))


def cosine_score(model, test_embedding):
    e = np.asarray(test_embedding, dtype=np.float64)
    if e.shape != model.embedding.shape:
        raise DimMismatch(f"model dim {model.embedding.shape}, test dim {e.shape}")
    return float(np.clip(model.embedding @ _normalize(e), -1.0, 1.0))


def compute_eer(genuine_scores, impostor_scores):
    """EER by sweeping every observed score as a threshold.

    A trial is accepted when score >= threshold. FRR is the fraction of
    genuine scores below the threshold, FAR the fraction of impostor scores
    at or above it. The operating point minimizes |FAR - FRR| (lowest
    threshold on ties) and the EER is the mean of the two rates there.
    """
    gen = np.sort(np.asarray(genuine_scores, dtype=np.float64))
    imp = np.sort(np.asarray(impostor_scores, dtype=np.float64))
    if gen.size == 0 or imp.size == 0:
        raise EmptySide("both genuine and impostor scores are required")
    thresholds = np.concatenate(([-np.inf], np.unique(np.concatenate([gen, imp])), [np.inf]))
    n_reject = np.searchsorted(gen, thresholds, side="left")
    n_accept = imp.size - np.searchsorted(imp, thresholds, side="left")
    # compare |FAR - FRR| on integer counts so exact ties stay ties
    gap = np.abs(n_accept * gen.size - n_reject * imp.size)
    best = int(np.argmin(gap))
    frr = n_reject / gen.size
    far = n_accept / imp.size
    curve = list(zip(thresholds.tolist(), far.tolist(), frr.tolist()))
    return EerReport(
        eer=float((far[best] + frr[best]) / 2),
        threshold=float(thresholds[best]),
        curve=curve,
        n_genuine=int(gen.size),
        n_impostor=int(imp.size),
    )


def generate_trials(manifest, n_genuine, n_impostor, seed):
    """Sample distinct utterance pairs: genuine from the same speaker, impostor across speakers."""
    if manifest.n_speakers < 2:
        raise Infeasible("trial generation needs at least two speakers")
    entries = manifest.entries
    genuine, impostor = [], []
    for i in range(len(entries)):
        for j in range(i + 1, len(entries)):
            (genuine if entries[i][1] == entries[j][1] else impostor).append((i, j))
    if n_genuine > len(genuine) or n_impostor > len(impostor):
        raise Infeasible(
            f"requested {n_genuine} genuine / {n_impostor} impostor trials, "
            f"only {len(genuine)} / {len(impostor)} distinct pairs exist"
        )
    rng = np.random.default_rng(seed)
    trials = []
    for label, pool, count in ((1, genuine, n_genuine), (0, impostor, n_impostor)):
        for k in rng.choice(len(pool), size=count, replace=False):
            i, j = pool[k]
            trials.append(Trial(label, entries[i][0], entries[j][0]))
    return TrialList(trials)


class TrialScorer:
    """Cosine-scores trials, caching one embedding per utterance path.

    The b side of a trial may name an enrolled speaker instead of a file.
    """

    def __init__(self, network, resolve=lambda p: p, models=None):
        self.network = network
        self.resolve = resolve
        self.models = models or {}
        self._cache = {}

    def embedding(self, path):
        if path not in self._cache:
            self._cache[path] = embed_utterance(self.network, ingest(self.resolve(path)))
        return self._cache[path]

    def score(self, trial):
        if trial.b in self.models:
            model = self.models[trial.b]
        else:
            model = SpeakerModel(trial.b, self.embedding(trial.b))
        return cosine_score(model, self.embedding(trial.a))

    def score_all(self, trials):
        return [(t.label, self.score(t)) for t in trials]


def split_scores(labelled):
    gen = [s for lab, s in labelled if lab == 1]
    imp = [s for lab, s in labelled if lab == 0]
    return gen, imp


def write_trials(path, trials):
    with open(path, "w", encoding="utf-8") as fh:
        for t in trials:
            fh.write(f"{t.label}\t{t.a}\t{t.b}\n")


def read_trials(path):
    trials = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3 or fields[0] not in ("0", "1"):
                raise VeridError(f"{path}: line {lineno}: expected '<1|0>\\t<a>\\t<b>'")
            trials.append(Trial(int(fields[0]), fields[1], fields[2]))
    return TrialList(trials)


def write_scores(path, labelled):
    with open(path, "w", encoding="utf-8") as fh:
        for label, score in labelled:
            fh.write(f"{label}\t{score!r}\n")


def read_scores(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            try:
                label, score = int(fields[0]), float(fields[1])
            except (IndexError, ValueError):
                raise VeridError(f"{path}: line {lineno}: expected '<label>\\t<score>'") from None
            if label not in (0, 1) or len(fields) != 2:
                raise VeridError(f"{path}: line {lineno}: label must be 0 or 1")
            out.append((label, score))
    return out


def write_report(path, report, curve_path=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report.summary())
    curve_path = curve_path or f"{path}.curve"
    with open(curve_path, "w", encoding="utf-8") as fh:
        for thr, far, frr in report.curve:
            fh.write(f"{thr!r}\t{far!r}\t{frr!r}\n")
    return curve_path


def write_speaker_models(path, models):
    with open(path, "w", encoding="utf-8") as fh:
        for m in models:
            vec = " ".join(repr(float(v)) for v in m.embedding)
            fh.write(f"{m.speaker_id}\t{m.n_utterances}\t{vec}\n")


def read_speaker_models(path):
    models = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.rstrip("\r\n").split("\t")
            if len(fields) != 3:
                raise VeridError(f"{path}: line {lineno}: expected '<speaker>\\t<n>\\t<vector>'")
            vec = np.array([float(v) for v in fields[2].split()])
            models[fields[0]] = SpeakerModel(fields[0], vec, int(fields[1]))
    return models


def embed_clip_list(network, clips):
    return [embed_utterance(network, c) for c in clips]

