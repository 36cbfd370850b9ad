"""Independent disciplined clocks, offset recovery from raw tags, coincidence matching."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np
from scipy.stats import poisson

from . import kernels
from .detection import ChannelMap, TagArray, TimeTag


class SyncError(RuntimeError):
    """No significant coincidence peak between the two streams."""


@dataclass(frozen=True)
class ClockModel:
    """Local clock: ``t + offset + drift * (t mod interval) + jitter_k``.

    The oscillator accumulates ``drift`` fractional error and is re-anchored to the
    reference every ``discipline_interval`` seconds; each anchoring lands with a
    Gaussian error of ``discipline_jitter`` ps. ``discipline_interval=None`` means
    free running.
    """

    offset: float = 0.0
    drift: float = 0.0
    discipline_interval: float | None = 1.0
    discipline_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if abs(self.drift) >= 1e-6:
            raise ValueError("|drift| must be < 1e-6")
        if self.discipline_interval is not None and self.discipline_interval <= 0:
            raise ValueError("discipline_interval must be positive")

    def _anchor_jitter(self, k: np.ndarray) -> np.ndarray:
        if self.discipline_jitter == 0:
            return np.zeros(k.shape)
        uniq, inv = np.unique(k, return_inverse=True)
        draws = np.array([np.random.default_rng([self.seed, int(u)]).standard_normal() for u in uniq])
        return (draws * self.discipline_jitter)[inv].reshape(k.shape)

    def localize(self, true_time):
        """True time (ps, int) to local timestamp (ps, int64)."""
        t = np.asarray(true_time, dtype=np.int64)
        if self.discipline_interval is None:
            since = t.astype(np.float64)
            k = np.zeros(t.shape, np.int64)
        else:
            interval = int(round(self.discipline_interval * 1e12))
            k, rem = np.divmod(t, interval)
            since = rem.astype(np.float64)
        corr = self.offset + self.drift * since + self._anchor_jitter(k)
        out = t + np.rint(corr).astype(np.int64)
        return int(out) if out.ndim == 0 else out


def localize(clk: ClockModel, true_time):
    return clk.localize(true_time)


IDEAL_CLOCK = ClockModel()


class CoincidenceRecord(NamedTuple):
    alice_tag: TimeTag
    bob_tag: TimeTag
    alice_basis: str
    bob_basis: str
    alice_outcome: int
    bob_outcome: int
    delta: int


@dataclass
class Coincidences:
    """Matched tag pairs, columnar. ``delta = t_a - t_b``."""

    idx_a: np.ndarray
    idx_b: np.ndarray
    t_a: np.ndarray
    t_b: np.ndarray
    ch_a: np.ndarray
    ch_b: np.ndarray
    channel_map: ChannelMap

    def __len__(self):
        return len(self.idx_a)

    @property
    def delta(self):
        return self.t_a - self.t_b

    def decoded(self):
        _, basis_a, out_a = self.channel_map.decode(self.ch_a)
        _, basis_b, out_b = self.channel_map.decode(self.ch_b)
        return basis_a, basis_b, out_a, out_b

    def __iter__(self) -> Iterator[CoincidenceRecord]:
        basis_a, basis_b, out_a, out_b = self.decoded()
        cm = self.channel_map
        for k in range(len(self)):
            yield CoincidenceRecord(
                TimeTag(int(self.t_a[k]), int(self.ch_a[k])), TimeTag(int(self.t_b[k]), int(self.ch_b[k])),
                cm.alice_labels[basis_a[k]], cm.bob_labels[basis_b[k]], int(out_a[k]), int(out_b[k]),
                int(self.t_a[k] - self.t_b[k]),
            )

    def write_csv(self, path):
        basis_a, basis_b, out_a, out_b = self.decoded()
        cm = self.channel_map
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_a", "t_b", "delta", "basis_a", "basis_b", "out_a", "out_b"])
            for k in range(len(self)):
                w.writerow([int(self.t_a[k]), int(self.t_b[k]), int(self.t_a[k] - self.t_b[k]),
                            cm.alice_labels[basis_a[k]], cm.bob_labels[basis_b[k]], int(out_a[k]), int(out_b[k])])


def _times(tags) -> np.ndarray:
    return tags.timestamps if isinstance(tags, TagArray) else np.asarray(tags, dtype=np.int64)


def offset_histogram(tags_a, tags_b, search_span: float, bin_width: float, centre: float = 0.0):
    """Histogram of ``t_a - t_b`` over ``centre +- search_span``; returns (bin_edges, counts)."""
    bin_width = int(round(bin_width))
    nbins = int(math.ceil(2 * search_span / bin_width))
    lo = int(round(centre - nbins * bin_width / 2))
    counts = kernels.diff_histogram(_times(tags_a), _times(tags_b), lo, bin_width, nbins)
    return lo + bin_width * np.arange(nbins + 1), counts


def estimate_offset(tags_a, tags_b, search_span: float, bin_width: float, centre: float = 0.0,
                    min_ratio: float = 5.0, false_alarm: float = 1e-4) -> float:
    """Clock offset ``t_a - t_b`` at the coincidence peak.

    Raises :class:`SyncError` unless the peak is ``min_ratio`` times the background
    mean and the chance of any bin reaching it from background alone is below
    ``false_alarm`` (Poisson tail times the number of bins searched).

    The position is a background-subtracted centroid over +-2 half widths of the
    peak, re-centred once, so it does not follow the noise of a single bin.
    """
    ta, tb = _times(tags_a), _times(tags_b)
    if len(ta) == 0 or len(tb) == 0:
        raise SyncError("empty tag stream")
    edges, counts = offset_histogram(ta, tb, search_span, bin_width, centre)
    k = int(np.argmax(counts))
    lo, hi = max(k - 3, 0), min(k + 4, len(counts))
    background = np.concatenate([counts[:lo], counts[hi:]])
    bg = float(background.mean()) if len(background) else 0.0
    peak = float(counts[k])
    chance = len(counts) * poisson.sf(peak - 1, max(bg, 1.0 / len(counts)))
    if peak < min_ratio * bg or chance > false_alarm:
        raise SyncError(f"no significant coincidence peak (peak {peak:.0f}, background {bg:.2f})")
    centres = 0.5 * (edges[:-1] + edges[1:])
    return _refine(centres, counts.astype(np.float64), k)


def _refine(centres: np.ndarray, counts: np.ndarray, k: int) -> float:
    n = len(counts)
    smooth = np.convolve(counts, np.ones(5) / 5, mode="same")
    k = max(k - 6, 0) + int(np.argmax(smooth[max(k - 6, 0):k + 7]))
    # background from the outer quarters; falls back to the global median
    outer = np.concatenate([counts[:n // 4], counts[n - n // 4:]])
    bg = float(np.mean(outer)) if len(outer) else 0.0
    half = 0.5 * (smooth[k] - bg)
    left = k
    while left > 0 and smooth[left - 1] - bg > half:
        left -= 1
    right = k
    while right < n - 1 and smooth[right + 1] - bg > half:
        right += 1
    reach = max(2 * max(k - left, right - k), 3)
    pos = float(centres[k])
    width = centres[1] - centres[0] if n > 1 else 1.0
    for _ in range(2):
        c = int(np.clip(np.rint((pos - centres[0]) / width), 0, n - 1))
        lo, hi = max(c - reach, 0), min(c + reach + 1, n)
        w = np.clip(counts[lo:hi] - bg, 0.0, None)
        if w.sum() <= 0:
            break
        pos = float(np.sum(w * centres[lo:hi]) / w.sum())
    return pos


@dataclass
class OffsetTrack:
    """Piecewise-linear offset versus Alice's local time."""

    knots_t: np.ndarray
    knots_offset: np.ndarray

    def __call__(self, t_a) -> np.ndarray:
        if len(self.knots_t) == 1:
            return np.full(np.shape(t_a), self.knots_offset[0])
        return np.interp(np.asarray(t_a, dtype=np.float64), self.knots_t, self.knots_offset)

    @classmethod
    def constant(cls, offset: float) -> "OffsetTrack":
        return cls(np.array([0.0]), np.array([float(offset)]))


def track_offset(tags_a, tags_b, coarse_span: float = 5e6, coarse_bin: float = 200.0,
                 fine_span: float = 3e3, fine_bin: float = 50.0, segment: float = 0.1e12,
                 prior: float = 0.0, min_segment_counts: int = 100) -> OffsetTrack:
    """Offset over a block of tags: one coarse peak search, then per-segment refinement.

    Segments are lengthened until each is expected to hold ``min_segment_counts``
    coincidences. Segment estimates are joined linearly at segment centres;
    segments without a significant peak are skipped.
    """
    ta, tb = _times(tags_a), _times(tags_b)
    coarse = estimate_offset(ta, tb, coarse_span, coarse_bin, centre=prior)
    if len(ta) == 0 or segment <= 0:
        return OffsetTrack.constant(coarse)
    t0, t1 = int(ta[0]), int(ta[-1])
    edges, counts = offset_histogram(ta, tb, 5 * coarse_bin, coarse_bin, centre=coarse)
    background = len(ta) * len(tb) * coarse_bin / max(t1 - t0, 1)
    signal = float(counts.sum()) - background * len(counts)
    if signal > 0:
        segment = max(segment, (t1 - t0 + 1) * min_segment_counts / signal)
    n_seg = max(1, int((t1 - t0 + 1) // segment))
    segment = (t1 - t0 + 1) / n_seg
    knots_t, knots_off = [], []
    for s in range(n_seg):
        lo_t, hi_t = t0 + s * segment, t0 + (s + 1) * segment
        ia = slice(*np.searchsorted(ta, [lo_t, hi_t]))
        ib = slice(*np.searchsorted(tb, [lo_t - coarse - fine_span, hi_t - coarse + fine_span]))
        try:
            off = estimate_offset(ta[ia], tb[ib], fine_span, fine_bin, centre=coarse)
        except SyncError:
            continue
        knots_t.append(0.5 * (lo_t + hi_t))
        knots_off.append(off)
    if not knots_t:
        return OffsetTrack.constant(coarse)
    kt, ko = _resolve_steps(np.array(knots_t), np.array(knots_off), ta, tb, step_floor=3 * fine_bin)
    return OffsetTrack(kt, ko)


def _resolve_steps(kt: np.ndarray, ko: np.ndarray, ta: np.ndarray, tb: np.ndarray,
                   step_floor: float):
    """Replace knots that straddle an offset step by a vertical step at the located time.

    Clock re-anchoring shifts the offset abruptly; interpolating across it misplaces
    every tag near the step. Needs a clean knot on each side of the step.
    """
    if len(kt) < 4:
        return kt, ko
    dt = np.diff(kt)
    dv = np.diff(ko)
    slope = float(np.median(dv / dt))
    dev = dv - slope * dt
    noise = 1.4826 * float(np.median(np.abs(dev - np.median(dev))))
    thr = max(6.0 * noise, step_floor)
    flagged = np.flatnonzero(np.abs(dev) > thr)
    if len(flagged) == 0:
        return kt, ko
    groups, cur = [], [int(flagged[0])]
    for j in flagged[1:]:
        if j == cur[-1] + 1:
            cur.append(int(j))
        else:
            groups.append(cur)
            cur = [int(j)]
    groups.append(cur)
    new_t, new_o, drop = [], [], set()
    for g in groups:
        j0, j1 = g[0], g[-1] + 1            # clean knots either side
        interior = range(j0 + 1, j1)
        drop.update(interior)
        step = float(dev[g].sum())
        if abs(step) < thr or j0 == 0 and len(g) > 1 or j1 == len(kt) - 1 and len(g) > 1:
            continue                        # outlier knot or unanchored edge: just drop it
        tl, tr = kt[j0], kt[j1]
        left = lambda t: ko[j0] + slope * (t - tl)
        right = lambda t: ko[j1] + slope * (t - tr)
        a = ta[np.searchsorted(ta, tl):np.searchsorted(ta, tr)]
        if len(a) == 0:
            continue
        w = 0.5 * abs(step)
        hit_l = _any_within(a - left(a), tb, w)
        hit_r = _any_within(a - right(a), tb, w)
        score = np.cumsum(hit_l) + (hit_r.sum() - np.cumsum(hit_r))
        i = int(np.argmax(score))
        tau = 0.5 * (a[i] + a[i + 1]) if i + 1 < len(a) else float(a[i])
        new_t += [tau - 0.5, tau + 0.5]
        new_o += [left(tau), right(tau)]
    keep = [i for i in range(len(kt)) if i not in drop]
    t_all = np.concatenate([kt[keep], new_t])
    o_all = np.concatenate([ko[keep], new_o])
    order = np.argsort(t_all, kind="stable")
    return t_all[order], o_all[order]


def _any_within(expected: np.ndarray, tb: np.ndarray, w: float) -> np.ndarray:
    lo = np.searchsorted(tb, expected - w, side="left")
    hi = np.searchsorted(tb, expected + w, side="right")
    return (hi > lo).astype(np.int64)


def match_coincidences(tags_a: TagArray, tags_b: TagArray, offset, window: float,
                       channel_map: ChannelMap | None = None) -> Coincidences:
    """Pair tags with ``|t_a - t_b - offset| <= window / 2``, each tag used at most once.

    Alice's tags are taken in time order; each claims the unused Bob tag nearest to
    the expected position, the earlier Bob tag winning exact ties. ``offset`` is a
    number, an array per Alice tag, or a callable of Alice's time.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    ta, tb = tags_a.timestamps, tags_b.timestamps
    if callable(offset):
        off = offset(ta)
    else:
        off = np.broadcast_to(np.asarray(offset, dtype=np.float64), ta.shape)
    off = np.rint(off).astype(np.int64)
    ia, ib = kernels.match_sweep(ta, tb, off, int(window // 2))
    return Coincidences(ia, ib, ta[ia], tb[ib], tags_a.channels[ia], tags_b.channels[ib],
                        channel_map or ChannelMap.default())
