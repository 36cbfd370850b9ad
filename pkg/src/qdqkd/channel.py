"""Lossy quantum channels on Alice's arm: static loss, fluctuating coupling, polarization drift."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .emitter import PhotonEvent

SPEED_OF_LIGHT = 299_792_458.0  # m/s
FIBER_GROUP_INDEX = 1.468


@dataclass
class ChannelModel:
    """Channel parameters plus the memory of the coupling-efficiency process.

    The coupling is a discrete-time Ornstein-Uhlenbeck (AR(1)) process on a grid of
    ``coupling_tau / steps_per_tau``, clipped to [0, 1]. ``coupling_model="lognormal"``
    exponentiates the same Gaussian process instead, matched in mean and std.
    The grid is generated lazily, so any query order sees the same sample path.
    """

    kind: str = "ideal"
    static_transmission: float = 1.0
    coupling_mean: float = 1.0
    coupling_sigma: float = 0.0
    coupling_tau: float = 0.1
    drift_rate: float = 0.0
    length_m: float = 0.0
    coupling_model: str = "ar1"
    steps_per_tau: int = 20
    seed: int = 0

    _grid: np.ndarray = field(default=None, init=False, repr=False)
    _rng: np.random.Generator = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("fiber", "free_space", "ideal"):
            raise ValueError(f"unknown channel kind {self.kind!r}")
        for name in ("static_transmission", "coupling_mean"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.coupling_sigma < 0:
            raise ValueError("coupling_sigma must be >= 0")
        if self.coupling_tau <= 0:
            raise ValueError("coupling_tau must be positive")
        if self.coupling_model not in ("ar1", "lognormal"):
            raise ValueError(f"unknown coupling model {self.coupling_model!r}")
        self.reset()

    def reset(self, seed: int | None = None):
        if seed is not None:
            self.seed = seed
        self._rng = np.random.default_rng([self.seed, 0xC0])
        self._grid = np.empty(0)

    @property
    def dt(self) -> float:
        return self.coupling_tau / self.steps_per_tau

    @property
    def delay_ps(self) -> int:
        """Propagation delay through the link."""
        speed = SPEED_OF_LIGHT / (FIBER_GROUP_INDEX if self.kind == "fiber" else 1.0)
        return int(round(self.length_m / speed * 1e12))

    @property
    def mean_transmission(self) -> float:
        return self.static_transmission * self.coupling_mean

    def _extend(self, n_total: int):
        # fixed-size blocks keep the sample path independent of the query pattern
        block = 4096
        rho = math.exp(-1.0 / self.steps_per_tau)
        blocks = []
        n_have = len(self._grid)
        while n_have < n_total:
            if n_have == 0:
                self._z_last = self._rng.standard_normal()
            noise = self._rng.standard_normal(block) * math.sqrt(1.0 - rho * rho)
            z, _ = lfilter([1.0], [1.0, -rho], noise, zi=[rho * self._z_last])
            self._z_last = z[-1]
            if self.coupling_model == "ar1":
                eff = self.coupling_mean + self.coupling_sigma * z
            else:
                s2 = math.log1p((self.coupling_sigma / self.coupling_mean) ** 2)
                eff = self.coupling_mean * np.exp(math.sqrt(s2) * z - s2 / 2.0)
            blocks.append(np.clip(eff, 0.0, 1.0))
            n_have += block
        if blocks:
            self._grid = np.concatenate([self._grid, *blocks])

    def instantaneous_coupling(self, t):
        """Coupling efficiency at time(s) ``t`` in seconds."""
        t = np.asarray(t, dtype=float)
        if self.coupling_sigma == 0:
            out = np.full(t.shape, self.coupling_mean)
            return float(out) if out.ndim == 0 else out
        if t.size and float(t.min()) < 0:
            raise ValueError("coupling is defined for t >= 0 only")
        idx = np.floor(t / self.dt).astype(np.int64)
        if idx.size:
            self._extend(int(idx.max()) + 1)
        out = self._grid[idx]
        return float(out) if out.ndim == 0 else out

    def rotation(self, t):
        """Residual polarization rotation (rad, mod pi) at time(s) ``t`` in seconds."""
        return np.mod(self.drift_rate * np.asarray(t, dtype=float), math.pi)

    def transmit_batch(self, times_ps: np.ndarray, rng: np.random.Generator):
        """Survival mask and rotation for photons at true times (ps)."""
        t = np.asarray(times_ps, dtype=np.float64) * 1e-12
        if self.kind == "ideal":
            return np.ones(t.shape, bool), np.zeros(t.shape)
        p = self.static_transmission * self.instantaneous_coupling(t)
        return rng.random(t.shape) < p, self.rotation(t)


def transmit(event: PhotonEvent, ch: ChannelModel, rng: np.random.Generator):
    """Single-photon form of :meth:`ChannelModel.transmit_batch`."""
    survives, rot = ch.transmit_batch(np.array([event.true_time]), rng)
    return bool(survives[0]), float(rot[0])


def instantaneous_coupling(ch: ChannelModel, t):
    return ch.instantaneous_coupling(t)


PRESETS = {
    "fiber-250m": dict(kind="fiber", static_transmission=0.80, coupling_mean=1.0, coupling_sigma=0.0,
                       length_m=250.0),
    "freespace-270m": dict(kind="free_space", static_transmission=0.90, coupling_mean=0.40,
                           coupling_sigma=0.10, coupling_tau=0.1, length_m=270.0),
    "ideal": dict(kind="ideal"),
}


def channel_preset(name: str, **overrides) -> ChannelModel:
    try:
        params = dict(PRESETS[name])
    except KeyError:
        raise ValueError(f"unknown channel preset {name!r}; choose from {sorted(PRESETS)}") from None
    params.update(overrides)
    return ChannelModel(**params)
