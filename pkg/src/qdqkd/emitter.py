"""Pulsed quantum-dot pair source: XX-X cascades plus uncorrelated multi-pair background."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .qstate import PairState, visibility_from_fidelity

HBAR_UEV_NS = 0.6582119  # reduced Planck constant in ueV * ns

ARM_XX = 0  # biexciton photon, kept by Bob next to the source
ARM_X = 1  # exciton photon, sent through the channel to Alice


@dataclass(frozen=True)
class EmitterConfig:
    rep_rate: float = 320e6
    pair_prob: float = 620e3 / 320e6
    g2_x: float = 0.0034
    g2_xx: float = 0.0041
    fss: float = 0.85
    exciton_lifetime: float = 0.23
    prep_fidelity: float = 0.943
    visibility_override: float | None = None
    visibility_x: float | None = None
    target_fidelity: float | None = None

    def __post_init__(self):
        if self.rep_rate <= 0:
            raise ValueError("rep_rate must be positive")
        if not 0.0 <= self.pair_prob <= 1.0:
            raise ValueError("pair_prob must lie in [0, 1]")
        for name in ("g2_x", "g2_xx", "prep_fidelity"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.fss < 0 or self.exciton_lifetime <= 0:
            raise ValueError("fss must be >= 0 and exciton_lifetime > 0")

    @property
    def period_ps(self) -> float:
        return 1e12 / self.rep_rate

    @property
    def multi_pair_prob(self) -> float:
        # an extra X photon in the same pulse shows up in the HBT centre peak with
        # weight 2*p*q against p**2 in each side peak, hence q = g2 * p / 2
        return self.g2_x * self.pair_prob / 2.0


class PhotonEvent(NamedTuple):
    pulse_index: int
    arm: int
    true_time: int
    pair_id: int


@dataclass
class PhotonBatch:
    """Columnar photon events; pair photons share ``pair_id``."""

    pulse_index: np.ndarray
    arm: np.ndarray
    true_time: np.ndarray
    pair_id: np.ndarray
    correlated: np.ndarray

    def __len__(self):
        return len(self.pulse_index)

    def __iter__(self) -> Iterator[PhotonEvent]:
        for row in zip(self.pulse_index.tolist(), self.arm.tolist(), self.true_time.tolist(), self.pair_id.tolist()):
            yield PhotonEvent(*row)

    def select(self, mask) -> "PhotonBatch":
        return PhotonBatch(self.pulse_index[mask], self.arm[mask], self.true_time[mask],
                           self.pair_id[mask], self.correlated[mask])


def bernoulli_indices(n: int, p: float, rng: np.random.Generator, start: int = 0) -> np.ndarray:
    """Sorted indices in [start, start+n) of successes of n Bernoulli(p) trials."""
    if n <= 0 or p <= 0.0:
        return np.empty(0, dtype=np.int64)
    if p >= 1.0:
        return np.arange(start, start + n, dtype=np.int64)
    parts = []
    pos = -1
    chunk = int(n * p + 6 * math.sqrt(n * p) + 16)
    while True:
        gaps = rng.geometric(p, chunk)
        idx = pos + np.cumsum(gaps)
        parts.append(idx[idx < n])
        if idx[-1] >= n:
            break
        pos = int(idx[-1])
    return np.concatenate(parts).astype(np.int64) + start


def pulse_times(pulse_index: np.ndarray, rep_rate: float) -> np.ndarray:
    """Pulse index to ps, exact in integer ps when the period is integral."""
    period = 1e12 / rep_rate
    whole = math.floor(period)
    frac = period - whole
    t = pulse_index.astype(np.int64) * np.int64(whole)
    if frac:
        t = t + np.rint(pulse_index * frac).astype(np.int64)
    return t


def emit_pulse_train(cfg: EmitterConfig, n_pulses: int, rng: np.random.Generator,
                     start_pulse: int = 0) -> PhotonBatch:
    """Photons emitted over ``n_pulses`` excitation pulses.

    Each pulse yields a correlated XX-X pair with ``pair_prob`` and, independently,
    an uncorrelated extra pair with ``multi_pair_prob``. The X photon trails its XX
    partner by an exponential delay of mean ``exciton_lifetime``.
    """
    if n_pulses < 1:
        raise ValueError("n_pulses must be >= 1")
    main = bernoulli_indices(n_pulses, cfg.pair_prob, rng, start_pulse)
    extra = bernoulli_indices(n_pulses, cfg.multi_pair_prob, rng, start_pulse)
    pulses = np.concatenate([main, extra])
    pair_id = np.concatenate([2 * main, 2 * extra + 1])
    correlated = np.concatenate([np.ones(len(main), bool), np.zeros(len(extra), bool)])
    t_xx = pulse_times(pulses, cfg.rep_rate)
    delay = rng.exponential(cfg.exciton_lifetime * 1e3, len(pulses))
    t_x = t_xx + np.rint(delay).astype(np.int64)
    n = len(pulses)
    return PhotonBatch(
        pulse_index=np.concatenate([pulses, pulses]),
        arm=np.concatenate([np.full(n, ARM_XX, np.uint8), np.full(n, ARM_X, np.uint8)]),
        true_time=np.concatenate([t_xx, t_x]),
        pair_id=np.concatenate([pair_id, pair_id]),
        correlated=np.concatenate([correlated, correlated]),
    )


def fss_visibility(fss: float, exciton_lifetime: float) -> float:
    """Time-averaged coherence |<exp(i fss t / hbar)>| over the exciton decay."""
    if fss < 0 or exciton_lifetime <= 0:
        raise ValueError("fss must be >= 0 and exciton_lifetime > 0")
    x = fss * exciton_lifetime / HBAR_UEV_NS
    return 1.0 / math.sqrt(1.0 + x * x)


def effective_pair_state(cfg: EmitterConfig) -> PairState:
    if cfg.visibility_override is not None:
        return PairState(cfg.visibility_override, visibility_x=cfg.visibility_x)
    v_fss = fss_visibility(cfg.fss, cfg.exciton_lifetime)
    if cfg.target_fidelity is None:
        return PairState(v_fss, visibility_x=cfg.visibility_x)
    baseline = visibility_from_fidelity(cfg.target_fidelity) / v_fss
    if baseline > 1.0:
        raise ValueError("target fidelity exceeds what the fine structure splitting allows")
    return PairState(v_fss * baseline, visibility_x=cfg.visibility_x)


def hbt_g2_from_photons(batch: PhotonBatch, arm: int = ARM_X, side_peaks: int = 10) -> float:
    """Photon-number g2 of one arm: <n(n-1)> over the mean of <n_i n_(i+lag)>.

    Ideal number-resolving estimate (no detectors) used to validate the
    emission model itself.
    """
    pulses = batch.pulse_index[batch.arm == arm]
    if len(pulses) == 0:
        raise ValueError("no photons on this arm")
    uniq, counts = np.unique(pulses, return_counts=True)
    centre = float(np.sum(counts * (counts - 1)))
    side = []
    for lag in range(1, side_peaks + 1):
        pos = np.searchsorted(uniq, uniq + lag)
        pos = np.minimum(pos, len(uniq) - 1)
        hit = uniq[pos] == uniq + lag
        side.append(float(np.sum(counts[hit] * counts[pos[hit]])))
    return centre / float(np.mean(side))
