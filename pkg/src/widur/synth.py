"""Synthetic CSI amplitude traces with known activity intervals.

A trace is a per-subcarrier static baseline plus white Gaussian noise (and a
sprinkling of impulsive outliers). Each non-empty activity adds chirped
sinusoidal bursts, one per profile component, weighted across subcarriers.
Domains differ in baseline, noise level, burst gain and a frequency scale
that stands in for body size.

All randomness comes from numpy's PCG64 bit generator (``default_rng``)
seeded with the integer sequence ``[domain.seed, session]``, so a
``(config, seed)`` pair always yields the same bytes.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from .csi_model import (LABELS, N_SUBCARRIERS, CsiTrace, LabeledInterval,
                        TraceManifest)
from .errors import ConfigError, ConfigInfeasible

MAX_TRACE_S = 7200.0
NYQUIST_EFFECTIVE_HZ = 50.0
SESSION_SEGMENTS = 150
TAPER_S = 0.1


def _subcarrier_pattern(cycles, phase, floor=0.4):
    """Smooth positive weight profile across the 30 subcarriers."""
    k = np.arange(N_SUBCARRIERS) / N_SUBCARRIERS
    w = floor + (1 - floor) * 0.5 * (1 + np.cos(2 * np.pi * (cycles * k + phase)))
    return tuple(float(v) for v in w)


@dataclass(frozen=True)
class BurstComponent:
    """One chirp: instantaneous frequency moves linearly start -> end."""
    start_hz: float
    end_hz: float
    amplitude: float
    weights: tuple = field(default_factory=lambda: (1.0,) * N_SUBCARRIERS)
    part: str = "body"

    def __post_init__(self):
        if min(self.start_hz, self.end_hz) <= 0:
            raise ConfigError("component frequencies must be positive")
        if max(self.start_hz, self.end_hz) >= NYQUIST_EFFECTIVE_HZ:
            raise ConfigError("component frequency at or above 50 Hz")
        if len(self.weights) != N_SUBCARRIERS:
            raise ConfigError("weights need one entry per subcarrier")


@dataclass(frozen=True)
class ActivityProfile:
    label: str
    duration_s: tuple
    components: tuple = ()

    def __post_init__(self):
        lo, hi = self.duration_s
        if not 0 < lo <= hi:
            raise ConfigError(f"bad duration range {self.duration_s}")
        if self.label not in LABELS:
            raise ConfigError(f"unknown label {self.label!r}")

    @property
    def max_hz(self):
        return max((max(c.start_hz, c.end_hz) for c in self.components),
                   default=0.0)


def default_profiles():
    """Profiles for the five classes, keyed by label."""
    body = _subcarrier_pattern(1.0, 0.1)
    arms = _subcarrier_pattern(2.0, 0.6)
    return {
        "empty": ActivityProfile("empty", (2.0, 5.0)),
        "sit": ActivityProfile("sit", (2.0, 5.0), (
            BurstComponent(0.5, 1.0, 0.3, body, "body"),
            BurstComponent(1.5, 2.0, 0.2, body, "body"),
        )),
        "dress": ActivityProfile("dress", (2.0, 8.0), (
            BurstComponent(1.0, 8.0, 1.0, body, "body"),
            BurstComponent(0.5, 4.0, 0.5, arms, "arms"),
        )),
        "undress": ActivityProfile("undress", (2.0, 4.0), (
            BurstComponent(2.0, 10.0, 1.6, body, "body"),
            BurstComponent(4.0, 20.0, 0.4, arms, "arms"),
        )),
        "other": ActivityProfile("other", (3.0, 6.0), (
            BurstComponent(1.0, 15.0, 0.8, body, "body"),
            BurstComponent(15.0, 1.0, 0.8, arms, "arms"),
        )),
    }


@dataclass(frozen=True)
class DomainSpec:
    domain_id: str
    baseline: tuple
    noise_sigma: float = 0.5
    gain: float = 1.0
    freq_scale: float = 1.0
    seed: int = 0
    part_gains: tuple = ()

    def __post_init__(self):
        if len(self.baseline) != N_SUBCARRIERS:
            raise ConfigError("baseline needs one entry per subcarrier")
        if not self.noise_sigma > 0:
            raise ConfigError("noise_sigma must be > 0")
        if not self.gain > 0:
            raise ConfigError("gain must be > 0")
        if not 0.5 <= self.freq_scale <= 2.0:
            raise ConfigError("freq_scale must lie in [0.5, 2]")
        if any(g <= 0 for _, g in self.part_gains):
            raise ConfigError("part gains must be > 0")

    def part_gain(self, part):
        """Sensitivity of this room to one body-part channel (default 1)."""
        return dict(self.part_gains).get(part, 1.0)


@dataclass(frozen=True)
class ScenarioConfig:
    """One recording session.

    ``counts`` maps label -> number of segments. ``session`` separates the
    random streams of several sessions recorded in the same domain.
    """
    domain: DomainSpec
    counts: dict
    gap_s: tuple = (1.0, 2.0)
    calibration_s: float = 10.0
    session: int = 0
    outlier_rate: float = 1e-3
    fs: float = 200.0

    def __post_init__(self):
        for lab, c in self.counts.items():
            if lab not in LABELS:
                raise ConfigError(f"unknown label {lab!r}")
            if c < 0:
                raise ConfigError("counts must be >= 0")
        if self.calibration_s < 5:
            raise ConfigError("calibration_s must be >= 5")
        lo, hi = self.gap_s
        if not 0 <= lo <= hi:
            raise ConfigError(f"bad gap range {self.gap_s}")

    @property
    def n_segments(self):
        return int(sum(self.counts.values()))

    def to_dict(self):
        d = {"domain": {**self.domain.__dict__,
                        "baseline": list(self.domain.baseline),
                        "part_gains": [list(p)
                                       for p in self.domain.part_gains]},
             "counts": {lab: int(self.counts.get(lab, 0)) for lab in LABELS},
             "gap_s": list(self.gap_s), "calibration_s": self.calibration_s,
             "session": self.session, "outlier_rate": self.outlier_rate,
             "fs": self.fs}
        return d

    @classmethod
    def from_dict(cls, d):
        dom = dict(d["domain"])
        dom["baseline"] = tuple(dom["baseline"])
        dom["part_gains"] = tuple(tuple(p) for p in dom.get("part_gains", ()))
        return cls(domain=DomainSpec(**dom), counts=dict(d["counts"]),
                   gap_s=tuple(d.get("gap_s", (1.0, 2.0))),
                   calibration_s=d.get("calibration_s", 10.0),
                   session=d.get("session", 0),
                   outlier_rate=d.get("outlier_rate", 1e-3),
                   fs=d.get("fs", 200.0))


def _check_feasible(cfg, profiles):
    worst = cfg.calibration_s + cfg.gap_s[1]
    for lab, c in cfg.counts.items():
        worst += c * (profiles[lab].duration_s[1] + cfg.gap_s[1])
    if worst > MAX_TRACE_S:
        raise ConfigInfeasible(
            f"worst-case trace length {worst:.0f} s exceeds "
            f"{MAX_TRACE_S:.0f} s")
    top = max(p.max_hz for p in profiles.values()) * cfg.domain.freq_scale
    if top * 1.1 >= NYQUIST_EFFECTIVE_HZ:
        raise ConfigInfeasible(f"scaled frequency {top:.1f} Hz too close "
                               "to the 50 Hz effective Nyquist limit")


def _taper(n, fs):
    w = np.ones(n)
    k = min(int(TAPER_S * fs), n // 2)
    if k > 0:
        ramp = 0.5 * (1 - np.cos(np.pi * np.arange(k) / k))
        w[:k] = ramp
        w[n - k:] = ramp[::-1]
    return w


def burst(profile, n, fs, domain, rng):
    """Activity waveform, shape (n, 30), for one segment of ``n`` samples."""
    out = np.zeros((n, N_SUBCARRIERS))
    if not profile.components:
        return out
    t = np.arange(n) / fs
    dur = n / fs
    taper = _taper(n, fs)
    for comp in profile.components:
        jf = rng.uniform(0.9, 1.1)
        ja = rng.uniform(0.8, 1.2)
        phi0 = rng.uniform(0, 2 * np.pi)
        f0 = comp.start_hz * domain.freq_scale * jf
        f1 = comp.end_hz * domain.freq_scale * jf
        phase = 2 * np.pi * (f0 * t + (f1 - f0) * t ** 2 / (2 * dur)) + phi0
        amp = comp.amplitude * domain.gain * domain.part_gain(comp.part) * ja
        wave = amp * np.sin(phase) * taper
        out += wave[:, None] * np.asarray(comp.weights)[None, :]
    return out


def generate_scenario(cfg, profiles=None):
    """Render a session into a trace and its ground-truth intervals.

    The trace opens with ``calibration_s`` seconds of static signal, then the
    segments follow in a seeded random order, each preceded by a static gap
    drawn from ``gap_s``. A final gap closes the trace. "empty" segments are
    labelled but add nothing to the static signal.

    Returns
    -------
    trace : CsiTrace
    intervals : list of LabeledInterval, sorted by start
    """
    profiles = profiles or default_profiles()
    _check_feasible(cfg, profiles)
    dom = cfg.domain
    fs = cfg.fs
    rng = np.random.default_rng([dom.seed, cfg.session])

    order = np.repeat(np.arange(len(LABELS)),
                      [int(cfg.counts.get(lab, 0)) for lab in LABELS])
    order = rng.permutation(order)
    durations = [int(round(rng.uniform(*profiles[LABELS[c]].duration_s) * fs))
                 for c in order]
    gaps = [int(round(rng.uniform(*cfg.gap_s) * fs))
            for _ in range(len(order) + 1)]

    pos = int(round(cfg.calibration_s * fs))
    intervals = []
    for c, dur, gap in zip(order, durations, gaps):
        pos += gap
        intervals.append(LabeledInterval(pos, pos + dur, LABELS[c]))
        pos += dur
    n = pos + gaps[-1]

    amps = np.asarray(dom.baseline)[None, :] \
        + dom.noise_sigma * rng.standard_normal((n, N_SUBCARRIERS))
    spikes = rng.random((n, N_SUBCARRIERS)) < cfg.outlier_rate
    signs = rng.choice([-1.0, 1.0], size=(n, N_SUBCARRIERS))
    amps += np.where(spikes, 10 * dom.noise_sigma * signs, 0.0)
    for iv in intervals:
        amps[iv.start_idx:iv.end_idx] += burst(
            profiles[iv.label], iv.end_idx - iv.start_idx, fs, dom, rng)
    np.maximum(amps, 0.0, out=amps)

    manifest = TraceManifest(sampling_rate_hz=fs, domain_id=dom.domain_id,
                             trace_id=f"{dom.domain_id}-s{cfg.session}")
    trace = CsiTrace(manifest, np.arange(n) / fs, amps)
    return trace, intervals


def class_counts(total, ratios=(848, 852, 540, 541, 854)):
    """Split ``total`` over the classes by largest remainder.

    Default ratios are the per-class collection counts of the source
    subject; ties in the remainder go to the lower class index.
    """
    r = np.asarray(ratios, dtype=np.float64)
    exact = total * r / r.sum()
    base = np.floor(exact).astype(int)
    short = total - base.sum()
    order = np.argsort(-(exact - base), kind="stable")
    base[order[:short]] += 1
    return {lab: int(c) for lab, c in zip(LABELS, base)}


def split_sessions(counts, per_session=SESSION_SEGMENTS):
    """Deal per-class counts round-robin over ``ceil(total / per_session)``
    sessions.

    Per-class remainders go to the first sessions, so a session can end up a
    few segments above ``per_session``.
    """
    total = sum(counts.values())
    n_sess = max(1, -(-total // per_session))
    out = [dict.fromkeys(LABELS, 0) for _ in range(n_sess)]
    for lab in LABELS:
        q, r = divmod(counts.get(lab, 0), n_sess)
        for s in range(n_sess):
            out[s][lab] = q + (1 if s < r else 0)
    return out


BENCHMARK_DOMAINS = {
    # id: (segments, class ratios, noise factor, gain, freq scale, part gains)
    "A": (1500, (848, 852, 540, 541, 854), 1.0, 1.0, 1.0, ()),
    "B": (300, (150, 150, 96, 96, 150), 1.1, 0.5, 0.95,
          (("body", 0.6), ("arms", 1.8))),
    "C": (250, (150, 134, 79, 75, 150), 1.5, 0.6, 0.8,
          (("body", 0.5), ("arms", 2.0))),
}


def make_domain(domain_id, seed, noise_sigma=0.5, gain=1.0, freq_scale=1.0,
                part_gains=()):
    rng = np.random.default_rng([seed, 7919])
    baseline = tuple(float(v) for v in rng.uniform(15.0, 25.0, N_SUBCARRIERS))
    return DomainSpec(domain_id, baseline, noise_sigma, gain, freq_scale,
                      seed, tuple(part_gains))


def make_transfer_benchmark(seed, base_sigma=0.5, scale=1.0):
    """Source domain A and targets B (mild shift) and C (strong shift).

    Each domain is returned as a list of session configs of at most
    ``SESSION_SEGMENTS`` segments, since the full source set would not fit
    the trace length limit in one recording. ``scale`` shrinks every domain's
    segment count (for quick runs); class proportions are kept.
    """
    out = {}
    for k, (dom_id, (total, ratios, nf, gain, fscale, parts)) in enumerate(
            BENCHMARK_DOMAINS.items()):
        n = max(len(LABELS), int(round(total * scale)))
        dom = make_domain(dom_id, 3 * int(seed) + k, base_sigma * nf, gain,
                          fscale, parts)
        counts = class_counts(n, ratios)
        out[dom_id] = [ScenarioConfig(dom, c, session=s)
                       for s, c in enumerate(split_sessions(counts))]
    return out


def with_seed(cfg, seed):
    """Copy of ``cfg`` whose domain draws from a different seed."""
    return replace(cfg, domain=replace(cfg.domain, seed=int(seed)))
