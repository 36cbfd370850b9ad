"""Offline analysis of tag streams and source calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .detection import ChannelMap, DetectorConfig, TagArray, detect_batch
from .emitter import ARM_X, EmitterConfig, emit_pulse_train
from .estimators import CHSH_TERMS, InsufficientStatistics, estimate_chsh, estimate_qber, outcome_counts
from .sync import SyncError, match_coincidences, offset_histogram, track_offset


@dataclass
class G2Result:
    g2: float
    error: float
    centre: int
    side_mean: float
    histogram: np.ndarray
    bin_width: int
    span: int

    def delays(self) -> np.ndarray:
        return -self.span + self.bin_width * (np.arange(len(self.histogram)) + 0.5)


def g2_from_tags(tags: TagArray, period_ps: float = 3125.0, window: float = 800.0, side_peaks: int = 10,
                 bin_width: int = 25, channels=None) -> G2Result:
    """Cross-channel autocorrelation: counts with |tau| < window over the mean of side peaks at k * period."""
    if channels is not None:
        tags = tags.select(np.isin(tags.channels, channels))
    span = int(math.ceil((side_peaks * period_ps + window) / bin_width) * bin_width)
    hist = kernels.signed_autocorr(tags.timestamps, tags.channels, span, bin_width)
    centres = -span + bin_width * (np.arange(len(hist)) + 0.5)

    def peak(c):
        return int(hist[np.abs(centres - c) < window].sum())

    centre = peak(0.0)
    sides = [peak(s * k * period_ps) for k in range(1, side_peaks + 1) for s in (-1, 1)]
    side_mean = float(np.mean(sides))
    if side_mean == 0:
        raise InsufficientStatistics("no side-peak coincidences; stream too sparse for g2")
    g2 = centre / side_mean
    err = g2 * math.sqrt(1.0 / max(centre, 1) + 1.0 / (side_mean * len(sides)))
    return G2Result(g2, err, centre, side_mean, hist, bin_width, span)


def hbt_stream(emitter: EmitterConfig, detector: DetectorConfig, n_pulses: int, rng: np.random.Generator,
               arm: int = ARM_X, start_pulse: int = 0) -> TagArray:
    """One emission arm split 50:50 onto detector channels 0 and 1."""
    photons = emit_pulse_train(emitter, n_pulses, rng, start_pulse)
    sel = photons.arm == arm
    t = photons.true_time[sel]
    ch = (rng.random(len(t)) < 0.5).astype(np.uint8)
    order = np.argsort(t, kind="stable")
    period = 1e12 / emitter.rep_rate
    span = (int(start_pulse * period), int((start_pulse + n_pulses) * period))
    return detect_batch(t[order], ch[order], detector, None, rng, (0, 1), span)


def analyze(tags_a: TagArray, tags_b: TagArray, channel_map: ChannelMap | None = None, window: float = 800.0,
            period_ps: float = 3125.0, coarse_span: float = 5e6) -> dict:
    """Report: per-stream g2, clock offset, coincidence histogram, QBER and S."""
    cm = channel_map or ChannelMap.default()
    report: dict = {"alice_tags": len(tags_a), "bob_tags": len(tags_b)}
    for name, tags in (("alice", tags_a), ("bob", tags_b)):
        try:
            r = g2_from_tags(tags, period_ps, window)
            report[f"g2_{name}"] = {"g2": r.g2, "error": r.error, "centre": r.centre, "side_mean": r.side_mean}
        except InsufficientStatistics as exc:
            report[f"g2_{name}"] = {"error": str(exc)}
    try:
        track = track_offset(tags_a, tags_b, coarse_span=coarse_span)
    except SyncError as exc:
        report["sync_error"] = str(exc)
        return report
    offset = float(np.median(track.knots_offset))
    report["offset_ps"] = offset
    edges, counts = offset_histogram(tags_a, tags_b, 10 * period_ps, 50, centre=offset)
    report["coincidence_histogram"] = {"edges": edges.tolist(), "counts": counts.tolist()}
    co = match_coincidences(tags_a, tags_b, track, window, cm)
    basis_a, basis_b, out_a, out_b = co.decoded()
    report["coincidences"] = len(co)
    key = (basis_a == 0) & (basis_b == 0)
    report["key_fraction"] = float(key.mean()) if len(co) else float("nan")
    try:
        report["qber"] = estimate_qber(outcome_counts(out_a[key], out_b[key]))
    except InsufficientStatistics:
        report["qber"] = None
    mon = [outcome_counts(out_a[(basis_a == i) & (basis_b == j)], out_b[(basis_a == i) & (basis_b == j)])
           for i, j, _ in CHSH_TERMS]
    try:
        report["S"], report["S_err"] = estimate_chsh(mon)
    except InsufficientStatistics:
        report["S"] = report["S_err"] = None
    return report


class CalibrationError(ValueError):
    pass


@dataclass
class Calibration:
    pair_prob: float
    efficiency_product: float
    simulated_rate: float
    target: float
    stage: str


def _model_rate(cfg: EmitterConfig, p: float, eta: float) -> float:
    # main pair plus the uncorrelated extra pair, both on the X arm
    return cfg.rep_rate * eta * p * (1.0 + cfg.g2_x / 2.0)


def _simulate_source(cfg: EmitterConfig, eta: float, duration: float, rng) -> float:
    n = int(round(duration * cfg.rep_rate))
    photons = emit_pulse_train(cfg, n, rng)
    n_x = int(np.sum(photons.arm == ARM_X))
    return rng.binomial(n_x, eta) / duration


def _simulate_detector(cfg, eta_channel, detector, n_channels, duration, rng) -> float:
    n = int(round(duration * cfg.rep_rate))
    photons = emit_pulse_train(cfg, n, rng)
    t = np.sort(photons.true_time[photons.arm == ARM_X])
    t = t[rng.random(len(t)) < eta_channel]
    ch = rng.integers(0, n_channels, len(t)).astype(np.uint8)
    tags = detect_batch(t, ch, detector, None, rng, range(n_channels), (0, int(duration * 1e12)))
    return len(tags) / duration


def calibrate(target_rate: float, emitter: EmitterConfig | None = None, collection: float = 1.0,
              detector: DetectorConfig | None = None, transmission: float = 1.0, n_channels: int = 4,
              duration: float | None = None, seed: int = 0, tolerance: float = 0.02) -> Calibration:
    """Fit ``pair_prob`` so the simulated singles rate hits ``target_rate`` (cps).

    Without ``detector`` the rate is counted at the first fiber, after a
    ``collection`` efficiency. With ``detector`` it is the click rate of one
    party's ``n_channels`` detectors behind ``transmission``, dark counts included.
    """
    cfg = emitter or EmitterConfig()
    rng = np.random.default_rng(seed)
    if target_rate < 0:
        raise CalibrationError("target rate must be >= 0")
    if detector is None:
        eta, floor, stage = collection, 0.0, "source"
    else:
        eta, floor, stage = transmission * detector.efficiency, n_channels * detector.dark_rate, "detector"
    if eta <= 0 and target_rate > floor:
        raise CalibrationError("efficiency product is zero; no pair probability reaches a positive rate")
    if target_rate < floor:
        raise CalibrationError(f"target {target_rate:g} cps lies below the dark-count floor {floor:g} cps")
    if target_rate == 0:
        return Calibration(0.0, 0.0, 0.0, 0.0, stage)
    p = (target_rate - floor) / _model_rate(cfg, 1.0, eta)
    if p > 1.0:
        top = _model_rate(cfg, 1.0, eta) + floor
        raise CalibrationError(
            f"target {target_rate:g} cps needs pair_prob {p:.3g} > 1; binding constraint pair_prob <= 1 "
            f"caps the rate at {top:g} cps for efficiency {eta:g}")
    if duration is None:
        duration = min(2.0, max(0.01, 4e4 / target_rate))  # >= 4e4 expected counts, 0.5% noise
    rate = float("nan")
    for _ in range(6):
        trial = replace(cfg, pair_prob=min(p, 1.0))
        if detector is None:
            rate = _simulate_source(trial, eta, duration, rng)
        else:
            rate = _simulate_detector(trial, transmission, detector, n_channels, duration, rng)
        if abs(rate - target_rate) <= tolerance * target_rate:
            return Calibration(p, p * eta, rate, target_rate, stage)
        p *= (target_rate - floor) / max(rate - floor, 1e-9)
    raise CalibrationError(f"simulated rate {rate:g} cps did not converge to {target_rate:g} cps within "
                           f"{tolerance:.0%}")
