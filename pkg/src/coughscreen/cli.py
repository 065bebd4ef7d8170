"""Command-line entry point: ``coughscreen <subcommand> [flags]``.

Exit codes: 0 success, 1 bad flags or manifest, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import augment as aug
from . import dataset, metrics, resnet, trainer
from ._fileio import atomic_write_text
from .audio_io import load_audio, write_wav
from .errors import (BadRow, CoughScreenError, EmptyManifest, InvalidConfig, MissingColumn)
from .features import FeatureConfig, save_spectrogram, spectrogram_to_csv, extract
from .preprocess import DEFAULT_P_TH

log = logging.getLogger("coughscreen")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
_MANIFEST_ERRORS = (BadRow, EmptyManifest, MissingColumn, InvalidConfig)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _FMT(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults only where there is a meaningful one."""

    def _get_help_string(self, action):
        if action.required or action.default in (None, False, argparse.SUPPRESS):
            return action.help
        return super()._get_help_string(action)


def _feature_flags(p):
    g = p.add_argument_group("audio and features")
    g.add_argument("--sample-rate", type=int, default=16000, help="analysis sample rate in Hz")
    g.add_argument("--clip-seconds", type=float, default=5.0, help="centre-crop length in seconds")
    g.add_argument("--vad-threshold", type=float, default=DEFAULT_P_TH,
                   help="activity probability a 100 ms window must exceed to start the clip")
    g.add_argument("--fft", type=int, default=1024, help="STFT window length in samples")
    g.add_argument("--hop", type=int, default=512, help="STFT hop in samples")
    g.add_argument("--mel-bands", type=int, default=32, help="number of Mel filters M")
    g.add_argument("--f-low", type=float, default=32.0, help="lowest filterbank frequency in Hz")
    g.add_argument("--f-high", type=float, default=8000.0, help="highest filterbank frequency in Hz")
    g.add_argument("--jobs", type=int, default=1,
                   help="worker threads for feature extraction and folds; 1 is bitwise reproducible")
    g.add_argument("--cache-dir", default=None, help="directory for cached MELS feature files")


def _train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--lr", type=float, default=1e-4, help="Adam learning rate")
    g.add_argument("--batch", type=int, default=20, help="mini-batch size")
    g.add_argument("--epochs", type=int, default=25, help="training epochs")
    g.add_argument("--val-fraction", type=float, default=0.10,
                   help="stratified validation share of the training records")
    g.add_argument("--tiny", action="store_true",
                   help="width factor 1/8 and one block per stage, for quick runs")
    g.add_argument("--augment-ratio", type=float, default=None,
                   help="grow the minority class by augmentation to this minority/majority ratio")
    g.add_argument("--class-weighted", action="store_true",
                   help="weight the loss by inverse class frequency")
    g.add_argument("--no-normalize", action="store_true",
                   help="skip per-spectrogram standardization")
    g.add_argument("--external", default=None,
                   help="external-corpus manifest; filtered records join training folds only")


def _seed_flag(p, required=True):
    p.add_argument("--seed", type=int, default=None, required=required,
                   help="random seed (required)" if required else "random seed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coughscreen",
                     description="Cough-sound screening: features, training, evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def add(name, help_):
        return sub.add_parser(name, help=help_, description=help_, formatter_class=_FMT)

    p = add("features", "extract log-Mel spectrograms for every manifest record")
    p.add_argument("--manifest", required=True, help="manifest CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", choices=("mels", "csv"), default="mels", help="output file format")
    _feature_flags(p)

    p = add("augment", "write augmented minority-class copies and an expanded manifest")
    p.add_argument("--manifest", required=True, help="manifest CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--target-ratio", type=float, default=1.0, help="minority/majority ratio to reach")
    p.add_argument("--sample-rate", type=int, default=16000, help="sample rate of written clips")
    _seed_flag(p)

    p = add("folds", "build a stratified fold plan")
    p.add_argument("--manifest", required=True, help="manifest CSV")
    p.add_argument("--out", required=True, help="fold plan CSV (index, fold)")
    p.add_argument("--folds", type=int, default=5, help="number of folds")
    _seed_flag(p)

    p = add("train", "train one model on a 90/10 stratified split")
    p.add_argument("--manifest", required=True, help="manifest CSV")
    p.add_argument("--out", required=True, help="output directory for checkpoints and logs")
    _feature_flags(p)
    _train_flags(p)
    _seed_flag(p)

    p = add("crossval", "k-fold cross-validation with mean-confusion reporting")
    p.add_argument("--manifest", required=True, help="manifest CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--folds", type=int, default=5, help="number of folds")
    p.add_argument("--fold-plan", default=None, help="existing fold plan CSV to reuse")
    _feature_flags(p)
    _train_flags(p)
    _seed_flag(p)

    p = add("sweep", "cross-validate once per Mel band count")
    p.add_argument("--manifest", required=True, help="manifest CSV")
    p.add_argument("--out", default=None, help="output directory (table also goes to stdout)")
    p.add_argument("--mels", default="32,64,128,256,512", help="comma-separated Mel band counts")
    p.add_argument("--folds", type=int, default=5, help="number of folds")
    p.add_argument("--fold-plan", default=None, help="existing fold plan CSV to reuse")
    _feature_flags(p)
    _train_flags(p)
    _seed_flag(p)

    p = add("eval", "score a labelled manifest with a checkpoint")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--manifest", required=True, help="manifest CSV")
    p.add_argument("--threshold", type=float, default=metrics.DEFAULT_THRESHOLD,
                   help="decision threshold on the positive-class probability")
    p.add_argument("--out", default=None, help="metrics CSV (default: stdout)")
    p.add_argument("--jobs", type=int, default=1, help="feature extraction threads")

    p = add("predict", "print path,probability,label for WAV files")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--wav", required=True, nargs="+", help="WAV files to score")
    p.add_argument("--threshold", type=float, default=metrics.DEFAULT_THRESHOLD,
                   help="decision threshold on the positive-class probability")

    p = add("roc", "write ROC points (threshold, fpr, tpr) as CSV")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scores", help="CSV with score,label columns")
    src.add_argument("--model", help="checkpoint file (requires --manifest)")
    p.add_argument("--manifest", help="manifest CSV scored with --model")
    p.add_argument("--out", default=None, help="ROC CSV (default: stdout)")

    p = add("config", "print the effective configuration as key=value lines")
    _feature_flags(p)
    _train_flags(p)
    p.add_argument("--folds", type=int, default=5, help="number of folds")
    _seed_flag(p, required=False)

    p = add("synth", "write the synthetic tone-versus-noise corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--per-class", type=int, default=20, help="clips per class")
    p.add_argument("--seed", type=int, default=7, help="random seed")
    return parser


# --- helpers ----------------------------------------------------------------------

def _feature_config(a) -> FeatureConfig:
    return FeatureConfig(n_fft=a.fft, hop=a.hop, n_mels=a.mel_bands, f_low_hz=a.f_low,
                         f_high_hz=a.f_high, sample_rate_hz=a.sample_rate)


def _train_config(a) -> trainer.TrainConfig:
    kw = dict(lr=a.lr, batch_size=a.batch, epochs=a.epochs, seed=a.seed or 0,
              val_fraction=a.val_fraction, normalize=not a.no_normalize,
              clip_seconds=a.clip_seconds, vad_threshold=a.vad_threshold,
              augment_ratio=a.augment_ratio, class_weighted=a.class_weighted)
    return trainer.TrainConfig.tiny(**kw) if a.tiny else trainer.TrainConfig(**kw)


def _store(a, fc) -> trainer.FeatureStore:
    return trainer.FeatureStore(fc, a.clip_seconds, a.vad_threshold, a.cache_dir, a.jobs)


def _external(a):
    if not getattr(a, "external", None):
        return []
    return dataset.filter_external(dataset.parse_manifest(a.external))


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _emit(text: str, out) -> None:
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _plan(a, records):
    if getattr(a, "fold_plan", None):
        return dataset.FoldPlan.load(a.fold_plan, len(records))
    return dataset.make_folds(records, a.folds, a.seed)


# --- subcommands ------------------------------------------------------------------

def cmd_features(a):
    records = dataset.parse_manifest(a.manifest)
    fc = _feature_config(a)
    store = _store(a, fc)
    out = Path(a.out)
    for i, r in enumerate(records):
        spec = extract(store.clip(r.audio_path), fc)
        stem = f"{i:05d}_{Path(r.audio_path).stem}"
        if a.format == "csv":
            atomic_write_text(out / f"{stem}.csv", spectrogram_to_csv(spec))
        else:
            save_spectrogram(out / f"{stem}.mels", spec)
    log.info("wrote %d spectrograms to %s", len(records), out)


def cmd_augment(a):
    records = [replace(r, audio_path=str(Path(r.audio_path).resolve()))
               for r in dataset.parse_manifest(a.manifest)]
    out = Path(a.out).resolve()
    items = [aug.LabeledClip(load_audio(r.audio_path, a.sample_rate), r.y, r.audio_path)
             for r in records]
    grown = aug.expand_minority(items, a.target_ratio, a.seed)
    by_path = {r.audio_path: r for r in records}
    new = []
    for i, item in enumerate(grown[len(items):]):
        path = out / f"aug_{i:05d}.wav"
        write_wav(path, item.clip)
        src = by_path[item.name.split("#")[0]]
        new.append(replace(src, audio_path=str(path)))
    dataset.write_manifest(out / "manifest.csv", list(records) + new, relative_to=out)
    print(f"{len(new)} augmented clips written to {out}")


def cmd_folds(a):
    records = dataset.parse_manifest(a.manifest)
    plan = dataset.make_folds(records, a.folds, a.seed)
    plan.save(a.out)
    print(",".join(str(int(s)) for s in plan.sizes()))


def _train_summary_csv(result, train_eval) -> str:
    final = result.log[-1]
    rows = [["metric", "value"],
            ["train_accuracy", repr(train_eval.summary["acc"])],
            ["train_auc", repr(train_eval.auc)],
            ["final_val_auc", repr(final.val_auc)],
            ["final_val_loss", repr(final.val_loss)],
            ["best_epoch", result.best_epoch]]
    return _csv(rows)


def cmd_train(a):
    records = dataset.parse_manifest(a.manifest)
    fc, tc = _feature_config(a), _train_config(a)
    store = _store(a, fc)
    external = _external(a)
    result = trainer.train(records, fc, tc, store, external)
    out = Path(a.out)
    resnet.save(result.final, out / "final.cghn")
    resnet.save(result.best, out / "best.cghn")
    atomic_write_text(out / "train_log.csv", result.log_csv())
    tr, _ = dataset.split_indices(dataset.labels_of(records), tc.val_fraction, tc.seed)
    train_eval = trainer.evaluate(result.final, [records[i] for i in tr] + external, fc, store)
    summary = _train_summary_csv(result, train_eval)
    atomic_write_text(out / "train_summary.csv", summary)
    sys.stdout.write(summary)


def cmd_crossval(a):
    records = dataset.parse_manifest(a.manifest)
    fc, tc = _feature_config(a), _train_config(a)
    plan = _plan(a, records)
    cv = trainer.crossvalidate(records, plan, fc, tc, _external(a), _store(a, fc), a.jobs)
    out = Path(a.out)
    plan.save(out / "folds.csv")
    for f in cv.folds:
        resnet.save(f.train.final, out / f"fold{f.fold}.cghn")
    atomic_write_text(out / "crossval.csv", cv.table_csv())
    try:
        atomic_write_text(out / "roc.csv", cv.pooled_roc().to_csv("pooled out-of-fold ROC"))
    except metrics.SingleClass:
        log.warning("pooled ROC skipped: a single class in the held-out scores")
    sys.stdout.write(cv.table_csv())


def cmd_sweep(a):
    try:
        mels = [int(m) for m in a.mels.split(",") if m.strip()]
    except ValueError:
        raise UsageError(f"--mels must be comma-separated integers, got {a.mels!r}") from None
    if not mels:
        raise UsageError("--mels is empty")
    records = dataset.parse_manifest(a.manifest)
    fc, tc = _feature_config(a), _train_config(a)
    for m in mels:
        replace(fc, n_mels=m)  # validates each band count up front
    plan = _plan(a, records)
    rows = trainer.sweep_mels(records, plan, fc, tc, mels, _external(a), a.out, a.jobs,
                              a.cache_dir)
    sys.stdout.write(trainer.sweep_table_csv(rows))


def cmd_eval(a):
    model = resnet.load(a.model)
    records = dataset.parse_manifest(a.manifest)
    fc = model.feature_config or FeatureConfig()
    meta = model.metadata or {}
    store = trainer.FeatureStore(fc, meta.get("clip_seconds", 5.0),
                                 meta.get("vad_threshold", DEFAULT_P_TH), jobs=a.jobs)
    ev = trainer.evaluate(model, records, fc, store, a.threshold)
    cm, s = ev.confusion, ev.summary
    rows = [["tp", "tn", "fp", "fn", "acc", "se", "sp", "pr", "f1", "auc"],
            cm.counts() + [repr(float(s[k])) for k in ("acc", "se", "sp", "pr", "f1")]
            + [repr(ev.auc)]]
    _emit(_csv(rows), a.out)


def cmd_predict(a):
    model = resnet.load(a.model)
    fc = model.feature_config or FeatureConfig()
    meta = model.metadata or {}
    store = trainer.FeatureStore(fc, meta.get("clip_seconds", 5.0),
                                 meta.get("vad_threshold", DEFAULT_P_TH))
    X = trainer.to_network_input(store.spectrograms(a.wav), meta.get("normalize", True))
    probs = resnet.predict_proba(model, X)
    rows = [[w, f"{p:.6f}", int(p >= a.threshold)] for w, p in zip(a.wav, probs)]
    sys.stdout.write(_csv(rows))


def cmd_roc(a):
    if a.scores:
        rows = list(csv.DictReader(io.StringIO(Path(a.scores).read_text())))
        if not rows or "score" not in rows[0] or "label" not in rows[0]:
            raise UsageError("--scores CSV needs score and label columns")
        scores = np.array([float(r["score"]) for r in rows])
        labels = np.array([int(r["label"]) for r in rows])
    else:
        if not a.manifest:
            raise UsageError("--model needs --manifest")
        model = resnet.load(a.model)
        ev = trainer.evaluate(model, dataset.parse_manifest(a.manifest))
        scores, labels = ev.scores, ev.labels
    curve = metrics.roc(scores, labels)
    _emit(curve.to_csv(f"AUC={metrics.auc(curve)!r}"), a.out)


def config_items(a) -> list[tuple[str, object]]:
    fc, tc = _feature_config(a), _train_config(a)
    return [("sample_rate_hz", fc.sample_rate_hz), ("clip_seconds", tc.clip_seconds),
            ("vad_threshold", tc.vad_threshold), ("n_fft", fc.n_fft), ("hop", fc.hop),
            ("n_mels", fc.n_mels), ("f_low_hz", fc.f_low_hz), ("f_high_hz", fc.f_high_hz),
            ("log_floor", fc.log_floor), ("lr", tc.lr), ("batch_size", tc.batch_size),
            ("epochs", tc.epochs), ("val_fraction", tc.val_fraction), ("folds", a.folds),
            ("normalize", tc.normalize), ("width_factor", tc.width_factor),
            ("stage_depths", ",".join(map(str, tc.stage_depths))), ("seed", a.seed),
            ("jobs", a.jobs)]


def cmd_config(a):
    for k, v in config_items(a):
        print(f"{k}={v}")


def cmd_synth(a):
    from .synthetic import make_corpus
    print(make_corpus(a.out, a.per_class, a.seed))


COMMANDS = {"features": cmd_features, "augment": cmd_augment, "folds": cmd_folds,
            "train": cmd_train, "crossval": cmd_crossval, "sweep": cmd_sweep,
            "eval": cmd_eval, "predict": cmd_predict, "roc": cmd_roc,
            "config": cmd_config, "synth": cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(a, "jobs", 1) < 1:
        print("coughscreen: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        COMMANDS[a.command](a)
    except UsageError as exc:
        print(f"coughscreen: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _MANIFEST_ERRORS as exc:
        print(f"coughscreen: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CoughScreenError, OSError, ValueError) as exc:
        print(f"coughscreen: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
