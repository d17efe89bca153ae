"""Command-line interface: ``widur <command> [options]``.

Every command accepts ``--seed`` (default 42). On success a one-line JSON
summary is printed (to stderr when the command's data went to stdout).
Failures print one JSON object ``{"error": <type>, "message": <text>,
"path": <file or null>}`` on stderr and exit with status 1; usage errors
exit with status 2.

``WIDUR_THREADS`` caps BLAS threads; 0 (the default) means a single thread,
which is the bit-deterministic mode.
"""
import argparse
import csv
import hashlib
import io
import json
import os
import sys

import numpy as np

from . import __version__, nn
from .csi_model import (LABELS, LabeledInterval, parse_labels, parse_trace,
                        write_labels, write_trace)
from .errors import ConfigError, CsiFormatError, MalformedHeader, WidurError
from .experiment import (MODEL_NAMES, TARGETS, ExperimentConfig,
                         run_experiment)
from .features import FEATURE_MODES
from .pipeline import (featurize_intervals, read_features, segment_pc1,
                       stratified_split, trace_pc1, write_features)
from .segment import SegmenterConfig, mean_best_iou
from .synth import ScenarioConfig, generate_scenario, make_transfer_benchmark
from .transfer import (HEAD_KINDS, TransferConfig, evaluate, fit_head,
                       load_hybrid, pretrain_source, save_hybrid,
                       transfer_finetune)

DEFAULT_SEED = 42


class CliError(WidurError):
    """Error carrying the offending file path."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


def _read(path):
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise CliError(exc.strerror or str(exc), path) from None


def _read_json(path):
    try:
        return json.loads(_read(path))
    except json.JSONDecodeError as exc:
        raise CliError(f"invalid JSON: {exc}", path) from None


def _write(path, text):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _write_json(path, obj):
    _write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _with_path(fn, path, *args):
    """Run ``fn`` and attach ``path`` to any format error it raises."""
    try:
        return fn(*args)
    except (CsiFormatError, ConfigError, ValueError) as exc:
        raise CliError(f"{type(exc).__name__}: {exc}", path) from None


def _manifest_path(trace_path, manifest):
    return manifest or os.path.splitext(trace_path)[0] + ".json"


def load_trace(path, manifest=None):
    mpath = _manifest_path(path, manifest)
    return _with_path(parse_trace, path, _read(path), _read(mpath))


def write_intervals(intervals):
    lines = ["start_idx,end_idx"] + [f"{s},{e}" for s, e in intervals]
    return "\n".join(lines) + "\n"


def read_intervals(text, n_frames):
    """Accept a bare ``start_idx,end_idx`` file or a full label file."""
    header = text.split("\n", 1)[0].strip().split(",")
    if header == ["start_idx", "end_idx", "label"]:
        return parse_labels(text, n_frames)
    if header != ["start_idx", "end_idx"]:
        raise MalformedHeader("expected start_idx,end_idx[,label] header")
    out = []
    for row_no, row in enumerate(csv.reader(io.StringIO(text)), start=0):
        if row_no == 0 or not row:
            continue
        try:
            s, e = int(row[0]), int(row[1])
        except (ValueError, IndexError):
            raise CsiFormatError("indices must be integers",
                                 row=row_no) from None
        if not 0 <= s < e <= n_frames:
            raise CsiFormatError(f"interval [{s}, {e}) outside trace",
                                 row=row_no)
        out.append((s, e))
    return out


# -- commands ---------------------------------------------------------------

def cmd_synth(args):
    if args.config:
        d = _read_json(args.config)
        d.setdefault("domain", {}).setdefault("seed", args.seed)
        cfg = _with_path(ScenarioConfig.from_dict, args.config, d)
    else:
        cfg = make_transfer_benchmark(args.seed)[args.domain][args.session]
    trace, intervals = _with_path(generate_scenario, args.config, cfg)
    csv_text, manifest_text = write_trace(trace)
    _write(os.path.join(args.out, "trace.csv"), csv_text)
    _write(os.path.join(args.out, "trace.json"), manifest_text)
    _write(os.path.join(args.out, "labels.csv"), write_labels(intervals))
    _write_json(os.path.join(args.out, "scenario.json"), cfg.to_dict())
    return {"frames": len(trace), "intervals": len(intervals),
            "out": args.out}


def cmd_segment(args):
    trace = load_trace(args.trace, args.manifest)
    pc1 = trace_pc1(trace)
    detected, threshold = segment_pc1(pc1, args.calibration_s, trace.fs,
                                      SegmenterConfig())
    summary = {"intervals": len(detected), "threshold": threshold}
    if args.labels:
        truth = _with_path(parse_labels, args.labels, _read(args.labels),
                           trace)
        motion = [(iv.start_idx, iv.end_idx) for iv in truth
                  if iv.label in ("dress", "undress", "other")]
        summary["mean_iou"] = mean_best_iou(detected, motion)
    text = write_intervals(detected)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return summary


def cmd_featurize(args):
    trace = load_trace(args.trace, args.manifest)
    intervals = _with_path(read_intervals, args.intervals,
                           _read(args.intervals), len(trace))
    pc1 = trace_pc1(trace)
    X = featurize_intervals(pc1, intervals, args.mode)
    labelled = intervals and isinstance(intervals[0], LabeledInterval)
    y = [iv.label_index for iv in intervals] if labelled else None
    _write(args.out, write_features(X, y))
    return {"rows": int(X.shape[0]), "mode": args.mode, "out": args.out}


def _load_features(path, need_labels=True):
    X, y = _with_path(read_features, path, _read(path))
    if need_labels and y is None:
        raise CliError("feature file has no label column", path)
    return X, y


def cmd_train(args):
    X, y = _load_features(args.features)
    cfg = nn.TrainConfig(epochs=args.epochs, seed=args.seed)
    model, report = pretrain_source(X, y, cfg)
    model.meta["features_sha256"] = _sha256_file(args.features)
    nn.save_model(model, args.out)
    return {"heldout_accuracy": report["heldout"]["accuracy"],
            "out": args.out}


def cmd_transfer(args):
    source = _with_path(nn.load_model, args.source, args.source)
    X, y = _load_features(args.features)
    tcfg = TransferConfig(finetune_epochs=args.epochs, head_kind=args.head,
                          seed=args.seed)
    tr, te = stratified_split(y, args.test_fraction, args.seed)
    trunk = transfer_finetune(source, X[tr], y[tr], tcfg)
    metrics = {"source_only": evaluate(
        nn.predict_proba(source, X[te]).argmax(axis=1), y[te])}
    chosen = None
    for name, kind in (("tl_cnn", "none"), ("tl_cnn_svm", "svm"),
                       ("tl_cnn_rf", "rf")):
        model = fit_head(trunk, X[tr], y[tr], kind, args.seed, tcfg)
        metrics[name] = evaluate(model.predict(X[te]), y[te])
        if kind == args.head:
            chosen = model
    os.makedirs(args.out, exist_ok=True)
    nn.save_model(source, os.path.join(args.out, "source_model.ckpt"))
    save_hybrid(chosen, args.out)
    _write_json(os.path.join(args.out, "metrics.json"), {
        "schema": "widur-transfer", "version": 1, "head": args.head,
        "n_train": int(tr.size), "n_test": int(te.size),
        "models": metrics})
    _write_json(os.path.join(args.out, "config.json"), {
        "seed": args.seed, "transfer": tcfg.__dict__,
        "test_fraction": args.test_fraction,
        "inputs": {"source": _sha256_file(args.source),
                   "features": _sha256_file(args.features)},
        "conv_sha256": trunk.meta["conv_sha256"],
        "version": __version__})
    return {"accuracy": metrics[
        {"none": "tl_cnn", "svm": "tl_cnn_svm", "rf": "tl_cnn_rf"}[args.head]
    ]["accuracy"], "out": args.out}


def cmd_predict(args):
    model = load_hybrid(args.bundle)
    X, _ = _load_features(args.features, need_labels=False)
    probs = model.predict_proba(X)
    lines = ["index,label," + ",".join(f"p_{lab}" for lab in LABELS)]
    for i, p in enumerate(probs):
        lines.append(f"{i},{LABELS[int(np.argmax(p))]},"
                     + ",".join(repr(float(v)) for v in p))
    text = "\n".join(lines) + "\n"
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return {"rows": int(X.shape[0])}


def _matrix_csv(M):
    return "\n".join(",".join(repr(float(v)) for v in row) for row in M) \
        + "\n"


def cmd_experiment(args):
    d = _read_json(args.config) if args.config else {}
    d["seed"] = args.seed
    cfg = _with_path(ExperimentConfig.from_dict, args.config, d)

    def log(msg):
        if not args.quiet:
            print(f"[experiment] {msg}", file=sys.stderr, flush=True)

    report, artifacts = run_experiment(cfg, log=log)
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "metrics.json"), report)
    _write_json(os.path.join(args.out, "config.json"), {
        "experiment": cfg.to_dict(),
        "config_sha256": report["config_sha256"],
        "benchmark_sha256": report["benchmark_sha256"],
        "source_conv_sha256": {
            mode: m.param_digest(("conv1", "conv2", "conv3"))
            for mode, m in artifacts["source_models"].items()},
        "version": __version__})
    nn.save_model(artifacts["source_models"]["both"],
                  os.path.join(args.out, "source_model.ckpt"))
    plots = os.path.join(args.out, "plots")
    for c, (spec, wav) in artifacts["plots"].items():
        _write(os.path.join(plots, f"spectrogram_{LABELS[c]}.csv"),
               _matrix_csv(spec))
        _write(os.path.join(plots, f"wavelet_{LABELS[c]}.csv"),
               _matrix_csv(wav))
    rows = ["target,mode,model,accuracy,macro_f1"]
    for tgt in TARGETS:
        for mode, cell in report["targets"][tgt].items():
            for name in MODEL_NAMES:
                rows.append(f"{tgt},{mode},{name},"
                            f"{cell[name]['accuracy']!r},"
                            f"{cell[name]['macro_f1']!r}")
    _write(os.path.join(args.out, "summary.csv"), "\n".join(rows) + "\n")
    return {"out": args.out, "config_sha256": report["config_sha256"]}


# -- entry point ------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="widur", description=__doc__.split(
        "\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
        sp.set_defaults(func=fn)
        return sp

    sp = add("synth", cmd_synth, "render a synthetic trace and labels")
    sp.add_argument("--config", help="scenario JSON")
    sp.add_argument("--domain", choices=("A", "B", "C"), default="A")
    sp.add_argument("--session", type=int, default=0)
    sp.add_argument("--out", required=True, help="output directory")

    sp = add("segment", cmd_segment, "detect activity intervals")
    sp.add_argument("trace")
    sp.add_argument("--manifest")
    sp.add_argument("--calibration-s", type=float, default=10.0)
    sp.add_argument("--labels", help="ground truth for IoU reporting")
    sp.add_argument("--out", help="intervals CSV (default stdout)")

    sp = add("featurize", cmd_featurize, "feature vectors per interval")
    sp.add_argument("trace")
    sp.add_argument("--manifest")
    sp.add_argument("--intervals", required=True)
    sp.add_argument("--mode", choices=FEATURE_MODES, default="both")
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train a source CNN on a feature CSV")
    sp.add_argument("features")
    sp.add_argument("--epochs", type=int, default=30)
    sp.add_argument("--out", required=True)

    sp = add("transfer", cmd_transfer, "fine-tune on target features")
    sp.add_argument("source")
    sp.add_argument("features")
    sp.add_argument("--head", choices=HEAD_KINDS, default="svm")
    sp.add_argument("--epochs", type=int, default=15)
    sp.add_argument("--test-fraction", type=float, default=0.5)
    sp.add_argument("--out", required=True)

    sp = add("predict", cmd_predict, "predict with a transfer bundle")
    sp.add_argument("bundle")
    sp.add_argument("features")
    sp.add_argument("--out", help="predictions CSV (default stdout)")

    sp = add("experiment", cmd_experiment, "full benchmark experiment")
    sp.add_argument("--config", help="experiment JSON overrides")
    sp.add_argument("--out", required=True)
    sp.add_argument("--quiet", action="store_true")
    return p


def _thread_limit():
    raw = os.environ.get("WIDUR_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"WIDUR_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise ConfigError("WIDUR_THREADS must be >= 0")
    return n or 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=_thread_limit()):
            summary = args.func(args)
    except (WidurError, OSError, ValueError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc),
               "path": getattr(exc, "path", None)}
        print(json.dumps(err), file=sys.stderr)
        return 1
    # keep stdout clean when a command streamed its data there
    streamed = args.command in ("segment", "predict") and not args.out
    print(json.dumps(summary, sort_keys=True),
          file=sys.stderr if streamed else sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
