"""End-to-end transfer experiment on the synthetic benchmark.

For each feature mode a source CNN is pre-trained on domain A; for each
target domain (B, C) it is evaluated as-is ("source_only"), fine-tuned with
its own softmax head ("tl_cnn"), and combined with SVM and random-forest
heads ("tl_cnn_svm", "tl_cnn_rf"). Segmentation quality is measured on one
source session and on a purely static trace.
"""
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import nn
from .errors import ConfigError
from .features import FEATURE_MODES, ablate
from .pipeline import (domain_dataset, scenario_dataset, segment_pc1,
                       stratified_split, trace_pc1)
from .segment import SegmenterConfig, mean_best_iou
from .synth import ScenarioConfig, generate_scenario, make_transfer_benchmark
from .transfer import (TransferConfig, conv_digest, evaluate, fit_head,
                       pretrain_source, transfer_finetune)

REPORT_SCHEMA = "widur-eval"
REPORT_VERSION = 1
MODEL_NAMES = ("source_only", "tl_cnn", "tl_cnn_svm", "tl_cnn_rf")
TARGETS = ("B", "C")
MOTION_LABELS = ("dress", "undress", "other")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 42
    scale: float = 1.0
    source_epochs: int = 30
    source_lr: float = 1e-3
    finetune_epochs: int = 15
    finetune_lr: float = 1e-4
    target_test_fraction: float = 0.5
    source_val_fraction: float = 0.1
    modes: tuple = FEATURE_MODES
    segmenter: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.scale <= 1:
            raise ConfigError("scale must lie in (0, 1]")
        if any(m not in FEATURE_MODES for m in self.modes):
            raise ConfigError(f"modes must be drawn from {FEATURE_MODES}")
        if "both" not in self.modes:
            raise ConfigError("mode 'both' is required")
        if self.source_epochs < 1:
            raise ConfigError("source_epochs must be >= 1")
        TransferConfig(self.finetune_epochs, self.finetune_lr)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        d = dict(d)
        if "modes" in d:
            d["modes"] = tuple(d["modes"])
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["modes"] = list(self.modes)
        return d


def digest(obj):
    """SHA-256 of the canonical JSON form of ``obj``."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def segmentation_report(session_cfg, seg_cfg=None):
    """Mean best IoU over motion intervals, plus false alarms on a static
    trace rendered in the same domain."""
    seg_cfg = seg_cfg or SegmenterConfig()
    trace, truth = generate_scenario(session_cfg)
    pc1 = trace_pc1(trace)
    detected, threshold = segment_pc1(pc1, session_cfg.calibration_s,
                                      trace.fs, seg_cfg)
    motion = [(iv.start_idx, iv.end_idx) for iv in truth
              if iv.label in MOTION_LABELS]
    static_cfg = ScenarioConfig(session_cfg.domain, {}, calibration_s=60.0,
                                session=10_000 + session_cfg.session)
    static_trace, _ = generate_scenario(static_cfg)
    spc1 = trace_pc1(static_trace)
    static_det, _ = segment_pc1(spc1, 10.0, static_trace.fs, seg_cfg)
    return {"mean_iou": mean_best_iou(detected, motion),
            "n_truth": len(motion), "n_detected": len(detected),
            "threshold": threshold,
            "static_false_detections": len(static_det)}


def plot_data(session_cfg):
    """One spectrogram grid and wavelet map per class from a source
    session, keyed by label."""
    X, y, _, _, _ = scenario_dataset(session_cfg)
    out = {}
    for c in np.unique(y):
        row = X[np.flatnonzero(y == c)[0]]
        out[int(c)] = (row[:256].reshape(16, 16), row[256:].reshape(8, 16))
    return out


def run_transfer_cell(source_model, X, y, cfg, seed):
    """All four models on one target; returns ``{model: metrics}`` and the
    fine-tuned trunk."""
    tr, te = stratified_split(y, cfg.target_test_fraction, seed)
    out = {}
    out["source_only"] = evaluate(
        nn.predict_proba(source_model, X[te]).argmax(axis=1), y[te])
    tcfg = TransferConfig(cfg.finetune_epochs, cfg.finetune_lr, seed=seed)
    trunk = transfer_finetune(source_model, X[tr], y[tr], tcfg)
    for name, kind in (("tl_cnn", "none"), ("tl_cnn_svm", "svm"),
                       ("tl_cnn_rf", "rf")):
        model = fit_head(trunk, X[tr], y[tr], kind, seed, tcfg)
        out[name] = evaluate(model.predict(X[te]), y[te])
    # recomputed from the fine-tuned weights, not copied from the source
    out["trunk_conv_sha256"] = conv_digest(trunk)
    out["n_train"] = int(tr.size)
    out["n_test"] = int(te.size)
    return out, trunk


def run_experiment(cfg=None, datasets=None, log=None):
    """Run the full experiment matrix.

    Parameters
    ----------
    cfg : ExperimentConfig
    datasets : dict, optional
        Pre-computed ``{domain: (X, y)}`` in "both" mode for this seed;
        generated when absent.
    log : callable, optional
        Receives one progress string per finished stage.

    Returns
    -------
    report : dict
        JSON-ready evaluation report.
    artifacts : dict
        ``source_models`` per mode, ``trunks`` per (mode, target) and
        ``plots`` per class.
    """
    cfg = cfg or ExperimentConfig()
    log = log or (lambda msg: None)
    seed = int(cfg.seed)
    bench = make_transfer_benchmark(seed, scale=cfg.scale)
    if datasets is None:
        datasets = {dom: domain_dataset(confs)
                    for dom, confs in bench.items()}
        log("datasets ready")
    seg_cfg = SegmenterConfig(**cfg.segmenter)

    report = {"schema": REPORT_SCHEMA, "version": REPORT_VERSION,
              "seed": seed,
              "config_sha256": digest(cfg.to_dict()),
              "benchmark_sha256": digest(
                  {d: [c.to_dict() for c in confs]
                   for d, confs in bench.items()}),
              "n_segments": {d: int(v[1].size) for d, v in datasets.items()},
              "segmentation": segmentation_report(bench["A"][0], seg_cfg),
              "source": {}, "targets": {t: {} for t in TARGETS}}
    log("segmentation done")
    artifacts = {"source_models": {}, "trunks": {}}
    XA, yA = datasets["A"]
    for mode in cfg.modes:
        tcfg = nn.TrainConfig(epochs=cfg.source_epochs, lr=cfg.source_lr,
                              seed=seed)
        model, src = pretrain_source(ablate(XA, mode), yA, tcfg,
                                     cfg.source_val_fraction)
        src.pop("history")
        report["source"][mode] = src
        artifacts["source_models"][mode] = model
        log(f"source [{mode}] heldout acc "
            f"{src['heldout']['accuracy']:.3f}")
        for tgt in TARGETS:
            X, y = datasets[tgt]
            cell, trunk = run_transfer_cell(model, ablate(X, mode), y, cfg,
                                            seed)
            report["targets"][tgt][mode] = cell
            artifacts["trunks"][(mode, tgt)] = trunk
            log(f"target {tgt} [{mode}] " + " ".join(
                f"{m}={cell[m]['accuracy']:.3f}" for m in MODEL_NAMES))
    artifacts["plots"] = plot_data(bench["A"][0])
    return report, artifacts
