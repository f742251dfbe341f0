"""Two-phase training: softmax speaker classification, then Siamese fine-tuning.

Both phases draw a random 1 s crop per utterance per visit. Every random
choice comes from generators spawned off ``cfg.seed``, so a run is fully
reproducible.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .audio_io import CLIP_SAMPLES, crop_1s, load_clips
from .dsp import feature_map
from .errors import BatchTooSmall, SpecMismatch, TooFewSpeakers, VeridError
from .nn.checkpoint import ModelCheckpoint
from .nn.losses import ContrastiveConfig, contrastive_loss, embedding_distance, l2_penalty, softmax_xent
from .nn.model import Network, is_weight, sgd_step

PHASE_DEFAULTS = {
    "softmax": {"lr": 0.001, "epochs": 10},
    "siamese": {"lr": 0.00001, "epochs": 20},
}


@dataclass
class TrainConfig:
    phase: str = "softmax"
    lr: Optional[float] = None
    epochs: Optional[int] = None
    batch_size: int = 32
    margin: float = 1.0
    lam: float = 1e-4
    seed: int = 0
    pair_strategy: str = "hard-negative"
    momentum: float = 0.9
    speakers_per_batch: int = 8
    crops_per_speaker: int = 4
    workers: int = 1

    def __post_init__(self):
        if self.phase not in PHASE_DEFAULTS:
            raise ValueError(f"phase must be one of {sorted(PHASE_DEFAULTS)}")
        if self.lr is None:
            self.lr = PHASE_DEFAULTS[self.phase]["lr"]
        if self.epochs is None:
            self.epochs = PHASE_DEFAULTS[self.phase]["epochs"]
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.pair_strategy not in ("all", "hard-negative"):
            raise ValueError("pair_strategy must be 'all' or 'hard-negative'")
        if self.phase == "softmax" and self.batch_size < 2:
            raise BatchTooSmall("softmax batches need at least 2 items")
        if self.phase == "siamese" and self.speakers_per_batch * self.crops_per_speaker < 4:
            raise BatchTooSmall("siamese batches need at least 4 items")


_CONFIG_TYPES = {
    "phase": str,
    "lr": float,
    "epochs": int,
    "batch_size": int,
    "margin": float,
    "lam": float,
    "seed": int,
    "pair_strategy": str,
    "momentum": float,
    "speakers_per_batch": int,
    "crops_per_speaker": int,
    "workers": int,
}


def parse_config(text):
    """Parse flat ``key=value`` lines into TrainConfig keyword arguments."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or key not in _CONFIG_TYPES:
            raise VeridError(f"config line {lineno}: unknown or malformed entry {raw!r}")
        try:
            out[key] = _CONFIG_TYPES[key](value)
        except ValueError:
            raise VeridError(f"config line {lineno}: bad value for {key}: {value!r}") from None
    return out


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


@dataclass
class PairBatch:
    i: np.ndarray
    j: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)


def select_pairs(embeddings, labels, strategy="hard-negative"):
    """Pick training pairs from a batch.

    ``all`` returns every unordered pair. ``hard-negative`` returns every
    genuine pair plus the same number of impostor pairs with the smallest
    embedding distance (ties go to the lower index pair). Pairs come back in
    lexicographic (i, j) order.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if n < 4:
        raise BatchTooSmall(f"pair selection needs at least 4 items, got {n}")
    iu, ju = np.triu_indices(n, k=1)
    y = (labels[iu] == labels[ju]).astype(np.int64)
    if strategy == "all":
        return PairBatch(iu, ju, y)
    if strategy != "hard-negative":
        raise ValueError(f"unknown pair strategy {strategy!r}")
    emb = np.asarray(embeddings, dtype=np.float64)
    d = embedding_distance(emb[iu], emb[ju])
    genuine = np.flatnonzero(y == 1)
    impostor = np.flatnonzero(y == 0)
    order = np.lexsort((ju[impostor], iu[impostor], d[impostor]))
    keep = np.sort(np.concatenate([genuine, impostor[order[: len(genuine)]]]))
    return PairBatch(iu[keep], ju[keep], y[keep])


def _seeds(seed):
    """Independent generators for init, softmax data order and siamese sampling."""
    init, softmax, siamese = np.random.SeedSequence(seed).spawn(3)
    return init, np.random.default_rng(softmax), np.random.default_rng(siamese)


def random_offset(rng, n_samples):
    return int(rng.integers(0, max(1, n_samples - CLIP_SAMPLES + 1)))


class _Featurizer:
    def __init__(self, workers):
        self.pool = ThreadPoolExecutor(workers) if workers > 1 else None

    def __call__(self, clips, offsets):
        crops = [crop_1s(c, o) for c, o in zip(clips, offsets)]
        mapper = self.pool.map if self.pool else map
        return np.stack(list(mapper(lambda c: feature_map(c).data, crops))).astype(np.float32)

    def close(self):
        if self.pool:
            self.pool.shutdown()


def _decay(grads, params, lam):
    names = [n for n in grads if is_weight(n)]
    _, extra = l2_penalty([params[n] for n in names], lam)
    for name, g in zip(names, extra):
        grads[name] = grads[name] + g.astype(grads[name].dtype)
    return grads


def _emit(log, entry):
    if log is not None:
        log(f"epoch {entry['epoch']} loss {entry['loss']:.6f} acc {entry['acc']:.4f}")


def pretrain_softmax(manifest, spec, cfg, clips=None, log=None):
    """Train the classifier head on the manifest's speakers."""
    if manifest.n_speakers < 2:
        raise TooFewSpeakers(f"softmax pretraining needs >= 2 speakers, manifest has {manifest.n_speakers}")
    if spec.n_classes != manifest.n_speakers:
        raise SpecMismatch(f"spec has {spec.n_classes} classes, manifest {manifest.n_speakers} speakers")
    clips = load_clips(manifest) if clips is None else clips
    labels = manifest.labels()
    init_seed, rng, _ = _seeds(cfg.seed)
    net = Network(spec, seed=init_seed)
    velocity = {}
    featurize = _Featurizer(cfg.workers)
    history = []
    n = len(clips)
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(n)
            total_loss, correct, seen = 0.0, 0, 0
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                if len(idx) < 2:
                    continue
                offsets = [random_offset(rng, len(clips[k].samples)) for k in idx]
                x = featurize([clips[k] for k in idx], offsets)
                logits = net.forward(x, mode="train", head="classifier")
                loss, grad = softmax_xent(logits, labels[idx])
                grads, _ = net.backward(grad.astype(np.float32))
                sgd_step(net.params, _decay(grads, net.params, cfg.lam), velocity, cfg.lr, cfg.momentum)
                total_loss += loss * len(idx)
                correct += int((logits.argmax(axis=1) == labels[idx]).sum())
                seen += len(idx)
            entry = {"phase": "softmax", "epoch": epoch, "loss": total_loss / seen, "acc": correct / seen}
            history.append(entry)
            _emit(log, entry)
    finally:
        featurize.close()
    return ModelCheckpoint(spec, net.params, "softmax", cfg.seed, cfg.epochs, history)


def siamese_batches(rng, groups, cfg):
    """Yield (utterance indices, speaker labels) for P speakers x K crops batches."""
    speakers = sorted(groups)
    n_utts = sum(len(v) for v in groups.values())
    p = min(cfg.speakers_per_batch, len(speakers))
    per_batch = p * cfg.crops_per_speaker
    for _ in range(max(1, n_utts // per_batch)):
        idx, labs = [], []
        for s in rng.choice(len(speakers), size=p, replace=False):
            pool = groups[speakers[s]]
            picks = rng.choice(pool, size=cfg.crops_per_speaker, replace=len(pool) < cfg.crops_per_speaker)
            idx.extend(int(k) for k in picks)
            labs.extend([int(s)] * cfg.crops_per_speaker)
        yield np.array(idx), np.array(labs)


def finetune_siamese(checkpoint, manifest, cfg, clips=None, log=None):
    """Fine-tune the embedding layers with the contrastive loss.

    One network computes the embeddings of every batch item, so both
    branches of each pair share weights by construction. Batch norm
    normalizes with the running statistics from pretraining (gamma and beta
    stay trainable); fc-3 receives no gradient.
    """
    if manifest.n_speakers < 2:
        raise TooFewSpeakers(f"siamese fine-tuning needs >= 2 speakers, manifest has {manifest.n_speakers}")
    if cfg.speakers_per_batch * cfg.crops_per_speaker < 4:
        raise BatchTooSmall("siamese batches need at least 4 items")
    net = Network(checkpoint.spec, {k: v.copy() for k, v in checkpoint.params.items()})
    clips = load_clips(manifest) if clips is None else clips
    _, _, rng = _seeds(cfg.seed)
    loss_cfg = ContrastiveConfig(cfg.margin, cfg.lam)
    groups = manifest.by_speaker()
    velocity = {}
    featurize = _Featurizer(cfg.workers)
    history = []
    try:
        for epoch in range(1, cfg.epochs + 1):
            total_loss, n_batches, correct, n_pairs = 0.0, 0, 0, 0
            for idx, labs in siamese_batches(rng, groups, cfg):
                offsets = [random_offset(rng, len(clips[k].samples)) for k in idx]
                x = featurize([clips[k] for k in idx], offsets)
                emb = net.forward(x, mode="eval", head="embedding")
                pairs = select_pairs(emb, labs, cfg.pair_strategy)
                if len(pairs) == 0:
                    continue
                weights = [net.params[n] for n in net.params if is_weight(n) and n != "fc3.W"]
                loss, g1, g2 = contrastive_loss(emb[pairs.i], emb[pairs.j], pairs.y, loss_cfg, weights)
                grad_emb = np.zeros_like(emb)
                np.add.at(grad_emb, pairs.i, g1)
                np.add.at(grad_emb, pairs.j, g2)
                grads, _ = net.backward(grad_emb)
                sgd_step(net.params, _decay(grads, net.params, cfg.lam), velocity, cfg.lr, cfg.momentum)
                d = embedding_distance(emb[pairs.i], emb[pairs.j])
                correct += int(((d < cfg.margin / 2) == (pairs.y == 1)).sum())
                n_pairs += len(pairs)
                total_loss += loss
                n_batches += 1
            entry = {
                "phase": "siamese",
                "epoch": epoch,
                "loss": total_loss / max(n_batches, 1),
                "acc": correct / max(n_pairs, 1),
            }
            history.append(entry)
            _emit(log, entry)
    finally:
        featurize.close()
    return ModelCheckpoint(
        checkpoint.spec, net.params, "siamese", cfg.seed, checkpoint.epoch + cfg.epochs, checkpoint.history + history
    )


def classification_accuracy(network, clips, labels, batch_size=64):
    """Eval-mode accuracy of the classifier head on centered 1 s crops."""
    correct = 0
    for start in range(0, len(clips), batch_size):
        chunk = clips[start : start + batch_size]
        offsets = [max(0, (len(c.samples) - CLIP_SAMPLES) // 2) for c in chunk]
        x = _Featurizer(1)(chunk, offsets)
        pred = network.forward(x, mode="eval", head="classifier").argmax(axis=1)
        correct += int((pred == np.asarray(labels[start : start + batch_size])).sum())
    return correct / len(clips)
