"""``padspace`` command line: generate -> features -> train -> fit -> predict/control -> analyze.

Exit status: 0 on success, 1 on internal errors, 2 on bad input or data.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from sklearn.preprocessing import StandardScaler

from . import analysis
from .classifier import MlpModel, train_classifier
from .config import STAGE_SYNTH, RunConfig, load_config, stage_seed
from .corpus import LabelRegistry, load_manifest, read_wav
from .exceptions import DataError
from .features import FeatureExtractor, read_feature_csv, write_feature_csv
from .predictor import EdPredictor, control_ed
from .reduction import AnchorTable, AnchoredReduction, EmbeddingLayout

log = logging.getLogger("padspace")
DEFAULTS = RunConfig()

TRAIN_KEYS = ("epochs", "batch_size", "lr", "seed")
FIT_KEYS = ("k", "min_dist", "layout_lr", "theta", "layout_epochs", "negative_sample_rate",
            "supervision_weight", "layout_scale", "k_pred", "seed")

_FLAG_HELP = {
    "epochs": "classifier training epochs",
    "batch_size": "classifier mini-batch size",
    "lr": "classifier Adam learning rate",
    "k": "neighbors in the kNN graph",
    "min_dist": "layout kernel minimum distance",
    "layout_lr": "initial layout learning rate",
    "theta": "std of the Gaussian jitter added to anchors",
    "layout_epochs": "layout optimization epochs",
    "negative_sample_rate": "repulsive samples per attractive edge update",
    "supervision_weight": "cross-class edge damping in [0, 1]",
    "layout_scale": "coordinate scale used during layout optimization",
    "k_pred": "neighbors used for out-of-sample prediction",
    "frame_len": "analysis frame length in samples",
    "hop": "frame hop in samples",
    "seed": "master random seed",
}


def _add_config_flags(p, keys):
    p.add_argument("--config", help="flat key=value config file; flags override it")
    for key in keys:
        typ = {"int": int, "float": float}[RunConfig.__dataclass_fields__[key].type]
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=typ, default=None,
                       help=f"{_FLAG_HELP[key]} (default: {getattr(DEFAULTS, key)})")


def _config(args, keys) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in keys}
    if getattr(args, "workdir", None):
        overrides["workdir"] = args.workdir
    return load_config(args.config, overrides)


def _in_workdir(cfg: RunConfig, value, default_name) -> Path:
    return Path(value) if value else cfg.workdir_path() / default_name


def _manifest_path(cfg: RunConfig, value) -> Path:
    path = value or cfg.manifest
    if not path:
        raise DataError("no manifest given (use --manifest or the manifest config key)")
    return Path(path)


def _labeled_training_rows(entries, ids, X):
    """Rows of the feature matrix for labeled train-split entries, in manifest order."""
    pos = {cid: i for i, cid in enumerate(ids)}
    rows, labels, clip_ids = [], [], []
    for e in entries:
        if e.split != "train":
            continue
        if e.label is None:
            raise DataError(f"unlabeled clip in training split: {e.clip_path}")
        if e.clip_path not in pos:
            raise DataError(f"no cached features for {e.clip_path}")
        rows.append(pos[e.clip_path])
        labels.append(e.label)
        clip_ids.append(e.clip_path)
    if not rows:
        raise DataError("manifest has no training clips")
    return X[rows], labels, clip_ids


def cmd_generate(args):
    cfg = _config(args, ("seed",))
    labels = args.labels.split(",") if args.labels else None
    specs = analysis.default_synth_specs(labels, n_clips=args.clips, duration=args.duration)
    manifest = analysis.generate_corpus(specs, args.out, seed=stage_seed(cfg.seed, STAGE_SYNTH),
                                        sample_rate=args.rate)
    log.info("wrote %s", manifest)
    print(manifest)


def cmd_features(args):
    cfg = _config(args, ("frame_len", "hop"))
    entries, _ = load_manifest(_manifest_path(cfg, args.manifest))
    if not entries:
        raise DataError("manifest lists no clips")
    clips = []
    for e in entries:
        if not e.path.is_file():
            raise DataError(f"missing audio file: {e.path}")
        clips.append(read_wav(e.path))
    X = FeatureExtractor(cfg.frame_len, cfg.hop).transform(clips)
    out = _in_workdir(cfg, args.out, "features.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_feature_csv(out, [e.clip_path for e in entries], X)
    log.info("wrote %d feature rows to %s", len(entries), out)


def cmd_train(args):
    cfg = _config(args, TRAIN_KEYS)
    log.info("train: %s", cfg.describe(TRAIN_KEYS))
    entries, _ = load_manifest(_manifest_path(cfg, args.manifest))
    ids, X = read_feature_csv(_in_workdir(cfg, args.features, "features.csv"))
    Xtr, labels, _ = _labeled_training_rows(entries, ids, X)
    registry_labels = sorted(set(labels))
    if len(registry_labels) < 2:
        raise DataError("need ≥2 classes in the training split")
    if cfg.epochs == 0:
        log.warning("epochs=0: writing an untrained model")
    registry = LabelRegistry(labels)
    scaler = StandardScaler().fit(Xtr)
    model, trace = train_classifier(scaler.transform(Xtr), registry.encode(labels),
                                    cfg.train_config(), registry, scaler.mean_, scaler.scale_)
    model_path = _in_workdir(cfg, args.model, "model.json")
    loss_path = _in_workdir(cfg, args.loss, "loss.csv")
    model_path.parent.mkdir(parents=True, exist_ok=True)
    model.save(model_path)
    with open(loss_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for i, v in enumerate(trace):
            fh.write(f"{i},{v:.6g}\n")
    if trace:
        log.info("final training loss %.4g", trace[-1])
    log.info("wrote %s and %s", model_path, loss_path)


def cmd_fit(args):
    cfg = _config(args, FIT_KEYS)
    log.info("fit: %s", cfg.describe(FIT_KEYS))
    anchors = AnchorTable.from_csv(args.anchors) if args.anchors else AnchorTable()
    entries, _ = load_manifest(_manifest_path(cfg, args.manifest))
    ids, X = read_feature_csv(_in_workdir(cfg, args.features, "features.csv"))
    Xtr, labels, clip_ids = _labeled_training_rows(entries, ids, X)
    for lab in sorted(set(labels)):
        if lab not in anchors:
            raise DataError(f"label {lab!r} has no anchor; available: {', '.join(anchors.labels)}")
    model = MlpModel.load(_in_workdir(cfg, args.model, "model.json"))
    E = model.embed(Xtr)
    rc = cfg.reduction_config()
    if cfg.k >= len(labels):
        raise DataError(f"k={cfg.k} needs more than {cfg.k} training clips, got {len(labels)}")
    reducer = AnchoredReduction(rc.n_neighbors, rc.min_dist, rc.layout_lr, rc.anchor_noise,
                                rc.epochs, rc.negative_sample_rate, rc.supervision_weight,
                                rc.layout_scale, anchors, rc.seed).fit(E, labels)
    if cfg.k_pred > len(labels):
        raise DataError(f"k_pred={cfg.k_pred} exceeds the {len(labels)} training clips")
    pred = EdPredictor(cfg.k_pred).fit(E, reducer.embedding_, clip_ids, labels, model)
    bundle = _in_workdir(cfg, args.bundle, "bundle")
    pred.save(bundle, anchors)
    for lab, c in reducer.layout_.centroids().items():
        drift = np.linalg.norm(c - anchors[lab])
        log.info("centroid %-10s P=%+.3f A=%+.3f D=%+.3f (drift %.3f)", lab, *c, drift)
    log.info("wrote bundle %s", bundle)


def cmd_predict(args):
    pred, _ = EdPredictor.load(args.bundle)
    clips = [read_wav(p) for p in args.wavs]
    pads = pred.predict(pred.embed_clips(clips))
    for path, pad in zip(args.wavs, pads):
        print(f"{path}," + ",".join(f"{v:.6g}" for v in pad))


def _parse_pad(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise DataError(f"--pad needs three comma-separated numbers, got {text!r}") from None
    if len(vals) != 3:
        raise DataError(f"--pad needs three comma-separated numbers, got {text!r}")
    return vals


def cmd_control(args):
    if args.bundle:
        pred, anchors = EdPredictor.load(args.bundle)
    else:
        pred, anchors = None, AnchorTable.from_csv(args.anchors) if args.anchors else AnchorTable()
    pad = control_ed(args.label if args.label is not None else _parse_pad(args.pad), anchors)
    print(pad.format(args.digits))
    if args.exemplars:
        if pred is None:
            raise DataError("--exemplars needs a bundle")
        for cid, dist in pred.nearest_exemplars(pad, args.exemplars):
            print(f"{cid},{dist:.6g}")


def cmd_analyze(args):
    cfg = _config(args, ("frame_len", "hop"))
    out = Path(args.out)
    fmt = args.format or ("json" if out.suffix.lower() == ".json" else "csv")
    if args.group == "separability":
        if args.bundle:
            pred, _ = EdPredictor.load(args.bundle)
            layout = EmbeddingLayout(pred.layout_, pred.labels_)
        else:
            anchors = AnchorTable.from_csv(args.anchors) if args.anchors else AnchorTable()
            layout = analysis.anchor_layout(anchors)
        report = analysis.separability_report(layout)
        for p in report["pairs"]:
            log.info("%s vs %s: dP=%+.3f dA=%+.3f dD=%+.3f", p["first"], p["second"],
                     *p["delta"].values())
        analysis.export_report(report, out, fmt)
    else:
        entries, _ = load_manifest(_manifest_path(cfg, args.manifest))
        if not entries:
            raise DataError("no clips in corpus")
        pred = EdPredictor.load(args.bundle)[0] if args.bundle else None
        stats = analysis.corpus_stats(entries, args.group, pred, cfg.frame_config())
        analysis.export_report(stats, out, fmt)
    log.info("wrote %s", out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="padspace", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic labeled corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--clips", type=int, default=20, help="clips per label (default: 20)")
    p.add_argument("--duration", type=float, default=1.0, help="seconds per clip (default: 1.0)")
    p.add_argument("--rate", type=int, default=16000, help="sample rate in Hz (default: 16000)")
    p.add_argument("--labels", help="comma-separated labels (default: all ten anchor labels)")
    _add_config_flags(p, ("seed",))
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("features", help="compute and cache pooled features")
    p.add_argument("--manifest", help="path,label,split CSV")
    p.add_argument("--out", help="feature CSV (default: WORKDIR/features.csv)")
    p.add_argument("--workdir", help="default directory for artifacts")
    _add_config_flags(p, ("frame_len", "hop"))
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train the emotion classifier")
    p.add_argument("--manifest", help="path,label,split CSV")
    p.add_argument("--features", help="feature CSV (default: WORKDIR/features.csv)")
    p.add_argument("--model", help="output model (default: WORKDIR/model.json)")
    p.add_argument("--loss", help="output loss trace (default: WORKDIR/loss.csv)")
    p.add_argument("--workdir", help="default directory for artifacts")
    _add_config_flags(p, TRAIN_KEYS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fit", help="fit the anchored PAD layout and write a predictor bundle")
    p.add_argument("--manifest", help="path,label,split CSV")
    p.add_argument("--features", help="feature CSV (default: WORKDIR/features.csv)")
    p.add_argument("--model", help="trained model (default: WORKDIR/model.json)")
    p.add_argument("--anchors", help="label,P,A,D CSV (default: built-in table)")
    p.add_argument("--bundle", help="output bundle directory (default: WORKDIR/bundle)")
    p.add_argument("--workdir", help="default directory for artifacts")
    _add_config_flags(p, FIT_KEYS)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="ED prediction: print path,P,A,D per WAV")
    p.add_argument("bundle", help="predictor bundle directory")
    p.add_argument("wavs", nargs="+", help="WAV files")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("control", help="ED control: resolve a label or PAD triple")
    p.add_argument("bundle", nargs="?", help="predictor bundle directory (optional)")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--label", help="anchor label, e.g. Surprise")
    g.add_argument("--pad", help="raw triple p,a,d (clamped to [-1, 1])")
    p.add_argument("--exemplars", type=int, default=0,
                   help="also list the n nearest training clips (default: 0)")
    p.add_argument("--anchors", help="label,P,A,D CSV when no bundle is given")
    p.add_argument("--digits", type=int, default=2, help="decimals printed (default: 2)")
    p.set_defaults(func=cmd_control)

    p = sub.add_parser("analyze", help="pitch/energy/flux statistics or separability report")
    p.add_argument("--manifest", help="corpus manifest for statistics")
    p.add_argument("--bundle", help="predictor bundle (octant grouping or fitted separability)")
    p.add_argument("--anchors", help="label,P,A,D CSV for anchors-only separability")
    p.add_argument("--group", choices=("label", "octant", "separability"), default="label",
                   help="grouping (default: label)")
    p.add_argument("--out", required=True, help="report path (.csv or .json)")
    p.add_argument("--format", choices=("csv", "json"), help="report format (default: from suffix)")
    _add_config_flags(p, ("frame_len", "hop"))
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
