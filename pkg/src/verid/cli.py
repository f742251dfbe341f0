"""Command-line entry point: ``verid <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data or model error.
"""

import argparse
import hashlib
import os
import platform
import sys

import numpy as np

from . import __version__
from .audio_io import crop_1s, ingest, load_clips, load_manifest
from .dsp import cmvn, feature_map, mfcc, write_feature_map
from .errors import VeridError
from .gmm_ubm import llr_score, load_gmm, map_adapt, save_gmm, train_ubm
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.model import ModelSpec
from .synth import write_fixture
from .training import TrainConfig, finetune_siamese, load_config, pretrain_softmax
from .verification import (
    TrialScorer,
    compute_eer,
    embed_utterance,
    enroll_speaker,
    generate_trials,
    read_scores,
    read_speaker_models,
    read_trials,
    split_scores,
    write_report,
    write_scores,
    write_speaker_models,
    write_trials,
)

SUBCOMMANDS = (
    "extract",
    "train-softmax",
    "train-siamese",
    "enroll",
    "trials",
    "score",
    "eer",
    "evaluate",
    "ubm-train",
    "ubm-adapt",
    "ubm-score",
    "synth-fixture",
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()[:16]


def _summary(args):
    inputs = []
    for key in ("manifest", "checkpoint", "config", "trials", "scores", "ubm"):
        path = getattr(args, key, None)
        if path and os.path.isfile(path):
            inputs.append(f"{key}:{_digest(path)}")
    return (
        f"run command={args.command} verid={__version__} python={platform.python_version()} "
        f"numpy={np.__version__} seed={args.seed} inputs={','.join(inputs) or '-'}"
    )


def _check_out(path):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise VeridError(f"output directory {parent} does not exist")


class _Log:
    """Writes training lines to stdout and to a log file."""

    def __init__(self, path):
        self.fh = open(path, "w", encoding="utf-8") if path else None

    def __call__(self, line):
        print(line, flush=True)
        if self.fh:
            self.fh.write(line + "\n")

    def close(self):
        if self.fh:
            self.fh.close()


def _train_config(args, phase):
    kwargs = load_config(args.config) if args.config else {}
    kwargs["phase"] = phase
    for key in ("lr", "epochs", "batch_size", "margin", "lam", "pair_strategy", "speakers_per_batch", "crops_per_speaker"):
        value = getattr(args, key, None)
        if value is not None:
            kwargs[key] = value
    if args.seed is not None:
        kwargs["seed"] = args.seed
    kwargs.setdefault("seed", 0)
    kwargs["workers"] = args.workers
    cfg = TrainConfig(**kwargs)
    args.seed = cfg.seed
    return cfg


def _resolver(args, anchor):
    if getattr(args, "manifest", None):
        return load_manifest(args.manifest).resolve
    root = os.path.dirname(os.path.abspath(anchor))
    return lambda p: p if os.path.isabs(p) else os.path.join(root, p)


def cmd_extract(args):
    manifest = load_manifest(args.manifest)
    os.makedirs(args.out, exist_ok=True)
    for utt, spk in manifest.entries:
        clip = crop_1s(ingest(manifest.resolve(utt), spk), args.offset)
        name = utt.replace("/", "__").replace("\\", "__")
        write_feature_map(os.path.join(args.out, os.path.splitext(name)[0] + ".feat"), feature_map(clip))
    print(f"extracted {len(manifest.entries)} feature maps to {args.out}")


def cmd_train_softmax(args):
    _check_out(args.out)
    cfg = _train_config(args, "softmax")
    manifest = load_manifest(args.manifest)
    spec = ModelSpec.scaled(manifest.n_speakers, args.width, args.embedding_dim)
    log = _Log(args.log or args.out + ".log")
    try:
        ckpt = pretrain_softmax(manifest, spec, cfg, log=log)
    finally:
        log.close()
    save_checkpoint(args.out, ckpt)


def cmd_train_siamese(args):
    _check_out(args.out)
    cfg = _train_config(args, "siamese")
    manifest = load_manifest(args.manifest)
    log = _Log(args.log or args.out + ".log")
    try:
        ckpt = finetune_siamese(load_checkpoint(args.checkpoint), manifest, cfg, log=log)
    finally:
        log.close()
    save_checkpoint(args.out, ckpt)


def cmd_enroll(args):
    _check_out(args.out)
    net = load_checkpoint(args.checkpoint).network()
    manifest = load_manifest(args.manifest)
    models = []
    for spk, idx in manifest.by_speaker().items():
        embs = [embed_utterance(net, ingest(manifest.resolve(manifest.entries[i][0]))) for i in idx]
        models.append(enroll_speaker(spk, embs))
    write_speaker_models(args.out, models)
    print(f"enrolled {len(models)} speakers")


def cmd_trials(args):
    _check_out(args.out)
    trials = generate_trials(load_manifest(args.manifest), args.n_genuine, args.n_impostor, args.seed or 0)
    write_trials(args.out, trials)
    print(f"wrote {len(trials)} trials")


def cmd_score(args):
    _check_out(args.out)
    net = load_checkpoint(args.checkpoint).network()
    models = read_speaker_models(args.models) if args.models else None
    scorer = TrialScorer(net, _resolver(args, args.trials), models)
    write_scores(args.out, scorer.score_all(read_trials(args.trials)))


def _report(labelled, out):
    report = compute_eer(*split_scores(labelled))
    if out:
        _check_out(out)
        write_report(out, report)
    print(f"EER {report.eer:.4f}")
    return report


def cmd_eer(args):
    _report(read_scores(args.scores), args.out)


def cmd_evaluate(args):
    manifest = load_manifest(args.manifest)
    net = load_checkpoint(args.checkpoint).network()
    groups = manifest.by_speaker()
    n_gen = sum(len(v) * (len(v) - 1) // 2 for v in groups.values())
    n_all = len(manifest.entries) * (len(manifest.entries) - 1) // 2
    trials = generate_trials(
        manifest, min(args.n_genuine, n_gen), min(args.n_impostor, n_all - n_gen), args.seed or 0
    )
    scorer = TrialScorer(net, manifest.resolve)
    _report(scorer.score_all(trials), args.out)


def _frames(path):
    return cmvn(mfcc(ingest(path))).data


def cmd_ubm_train(args):
    _check_out(args.out)
    manifest = load_manifest(args.manifest)
    frames = np.concatenate([cmvn(mfcc(c)).data for c in load_clips(manifest)])
    ubm = train_ubm(frames, args.components, args.iters, args.seed or 0)
    for i, ll in enumerate(ubm.trace, start=1):
        print(f"iter {i} loglik {ll:.6f}")
    save_gmm(args.out, ubm)


def cmd_ubm_adapt(args):
    ubm = load_gmm(args.ubm)
    manifest = load_manifest(args.manifest)
    os.makedirs(args.out, exist_ok=True)
    for spk, idx in manifest.by_speaker().items():
        frames = np.concatenate([_frames(manifest.resolve(manifest.entries[i][0])) for i in idx])
        save_gmm(os.path.join(args.out, f"{spk}.gmm"), map_adapt(ubm, frames, args.relevance))
    print(f"adapted {len(manifest.by_speaker())} speaker models")


def cmd_ubm_score(args):
    _check_out(args.out)
    ubm = load_gmm(args.ubm)
    resolve = _resolver(args, args.trials)
    labelled = []
    for t in read_trials(args.trials):
        model_path = os.path.join(args.models, f"{t.b}.gmm") if args.models else None
        test = _frames(resolve(t.a))
        if model_path and os.path.isfile(model_path):
            speaker = load_gmm(model_path)
        else:
            speaker = map_adapt(ubm, _frames(resolve(t.b)), args.relevance)
        labelled.append((t.label, llr_score(speaker, ubm, test)))
    write_scores(args.out, labelled)


def cmd_synth_fixture(args):
    paths = write_fixture(args.out, args.speakers, args.utterances, args.seed or 0, args.heldout)
    for name, path in paths.items():
        print(f"{name} {path}")


def build_parser():
    parser = _Parser(prog="verid", description="Speaker verification toolkit")
    parser.add_argument("--version", action="version", version=f"verid {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        p.add_argument("--config", default=None, help="flat key=value config file")
        return p

    p = add("extract", cmd_extract, "dump 3x40x100 feature maps for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--offset", type=int, default=0)

    for name, func in (("train-softmax", cmd_train_softmax), ("train-siamese", cmd_train_siamese)):
        p = add(name, func, f"{name.split('-')[1]} training phase")
        p.add_argument("--manifest", required=True)
        p.add_argument("--out", required=True, help="checkpoint to write")
        p.add_argument("--log", default=None)
        p.add_argument("--lr", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("--lam", type=float)
        if name == "train-softmax":
            p.add_argument("--batch-size", dest="batch_size", type=int)
            p.add_argument("--width", type=float, default=1.0, help="conv/fc width multiplier")
            p.add_argument("--embedding-dim", dest="embedding_dim", type=int, default=None)
        else:
            p.add_argument("--checkpoint", required=True)
            p.add_argument("--margin", type=float)
            p.add_argument("--pair-strategy", dest="pair_strategy", choices=("all", "hard-negative"))
            p.add_argument("--speakers-per-batch", dest="speakers_per_batch", type=int)
            p.add_argument("--crops-per-speaker", dest="crops_per_speaker", type=int)

    p = add("enroll", cmd_enroll, "build one speaker model per manifest speaker")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = add("trials", cmd_trials, "sample genuine/impostor trials from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-genuine", dest="n_genuine", type=int, required=True)
    p.add_argument("--n-impostor", dest="n_impostor", type=int, required=True)

    p = add("score", cmd_score, "cosine-score a trial file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--models", default=None, help="enrolled speaker models for speaker-id b sides")
    p.add_argument("--manifest", default=None, help="resolve relative paths against this manifest")

    p = add("eer", cmd_eer, "compute the EER of a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", default=None, help="report path; the curve goes to <out>.curve")

    p = add("evaluate", cmd_evaluate, "trials + score + eer on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--n-genuine", dest="n_genuine", type=int, default=200)
    p.add_argument("--n-impostor", dest="n_impostor", type=int, default=1000)

    p = add("ubm-train", cmd_ubm_train, "train the GMM universal background model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--components", type=int, default=64)
    p.add_argument("--iters", type=int, default=20)

    p = add("ubm-adapt", cmd_ubm_adapt, "MAP-adapt one GMM per speaker")
    p.add_argument("--ubm", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--relevance", type=float, default=16.0)

    p = add("ubm-score", cmd_ubm_score, "LLR-score a trial file against the UBM")
    p.add_argument("--ubm", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--models", default=None, help="directory of <speaker>.gmm files")
    p.add_argument("--manifest", default=None)
    p.add_argument("--relevance", type=float, default=16.0)

    p = add("synth-fixture", cmd_synth_fixture, "write the synthetic-speaker dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--speakers", type=int, default=20)
    p.add_argument("--utterances", type=int, default=20)
    p.add_argument("--heldout", type=int, default=5)
    return parser


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_help(sys.stderr)
        print(exc, file=sys.stderr)
        return 1
    try:
        args.func(args)
    except (VeridError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed is None:
        args.seed = 0
    print(_summary(args), file=sys.stderr)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
