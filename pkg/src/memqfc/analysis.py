"""Coincidence counting and the estimators built on it.

All estimators work on trial indices.  A tag belongs to the trial whose
period contains it; a pair of tags at offset ``n`` is a coincidence when
the second tag falls inside the coincidence window centred on
``t_a + tau + n * trial_period``.  Pairs whose trials sit in different
cycles are never counted, so every offset has its own exposure (number
of trial pairs that could have produced a coincidence).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .errors import ConfigError, DomainError, InfiniteEstimateError
from .streams import TagStream

__all__ = [
    "CoincidenceHistogram",
    "CorrelationEstimate",
    "WaveformHistogram",
    "build_histogram",
    "g2_from_histogram",
    "g2_jackknife",
    "retrieval_efficiency",
    "cauchy_schwarz",
    "conditional_waveform",
    "conditional_snr",
    "rates",
    "write_histogram_csv",
    "write_waveform_csv",
    "write_estimates_csv",
    "read_estimates_csv",
]

DEFAULT_MAX_OFFSET = 20
DEFAULT_BIN_S = 1.28e-9


@dataclass(frozen=True)
class CoincidenceHistogram:
    offsets: np.ndarray
    counts: np.ndarray
    exposures: np.ndarray
    window_s: float
    n_trials: int
    all_pairs: bool = False

    def __post_init__(self):
        if 0 not in self.offsets:
            raise ConfigError("histogram needs offset 0")
        if np.any(self.counts < 0):
            raise ConfigError("histogram counts must be >= 0")

    @property
    def zero(self) -> int:
        return int(np.flatnonzero(self.offsets == 0)[0])

    @property
    def coincidences(self) -> int:
        return int(self.counts[self.zero])

    @property
    def accidental_mask(self) -> np.ndarray:
        return (self.offsets != 0) & (self.exposures > 0)

    def probability(self, offset: int = 0) -> float:
        """Coincidence probability per trial pair at ``offset``."""
        i = int(np.flatnonzero(self.offsets == offset)[0])
        return self.counts[i] / self.exposures[i] if self.exposures[i] else 0.0


@dataclass(frozen=True)
class CorrelationEstimate:
    value: float
    sigma: float
    n_coincidences: int
    n_accidentals: int

    def __iter__(self):
        return iter((self.value, self.sigma))

    def significance_above(self, level: float) -> float:
        """Distance of the value above ``level`` in units of sigma."""
        if self.sigma == 0:
            return math.inf if self.value > level else -math.inf
        return (self.value - level) / self.sigma


@dataclass(frozen=True)
class WaveformHistogram:
    bin_centers_s: np.ndarray
    counts: np.ndarray
    bin_s: float


def _check_compatible(a: TagStream, b: TagStream):
    if not math.isclose(a.trial_period_s, b.trial_period_s, rel_tol=1e-12):
        raise ConfigError(f"trial periods differ: {a.trial_period_s} vs {b.trial_period_s}")
    if a.trials_per_cycle != b.trials_per_cycle or not math.isclose(
            a.cycle_dead_time_s, b.cycle_dead_time_s, rel_tol=1e-12, abs_tol=1e-15):
        raise ConfigError("streams have different cycle geometry")
    if a.total_trials != b.total_trials:
        raise ConfigError(f"streams cover different trial counts: {a.total_trials} vs {b.total_trials}")


def _pair_delay(a: TagStream, b: TagStream) -> float:
    if a.species == b.species:
        return 0.0
    if a.species == "stokes":
        return b.storage_delay_s
    return -a.storage_delay_s


def _exposure(total: int, per_cycle: int, n: int) -> int:
    """Trial pairs (t, t+n) that lie inside one cycle."""
    full, rem = divmod(total, per_cycle)
    return full * max(per_cycle - abs(n), 0) + max(rem - abs(n), 0)


@njit(cache=False)
def _coincidence_kernel(ta, trial_a, tb, trial_b, per_cycle, tau, dt, half, max_offset,
                        all_pairs, group, n_groups):
    """Two-pointer sweep over both sorted streams, all offsets at once."""
    width = 2 * max_offset + 1
    counts = np.zeros((n_groups, width), dtype=np.int64)
    last = np.full(width, -1, dtype=np.int64)
    nb = tb.size
    j0 = 0
    for i in range(ta.size):
        t = ta[i]
        tr = trial_a[i]
        cyc = tr // per_cycle
        lo = t + tau - max_offset * dt - half
        hi = t + tau + max_offset * dt + half
        while j0 < nb and tb[j0] < lo:
            j0 += 1
        j = j0
        while j < nb and tb[j] <= hi:
            n = trial_b[j] - tr
            if -max_offset <= n <= max_offset and trial_b[j] // per_cycle == cyc:
                if abs(tb[j] - t - tau - n * dt) <= half:
                    k = n + max_offset
                    if all_pairs:
                        counts[group[i], k] += 1
                    elif last[k] != tr:
                        counts[group[i], k] += 1
                        last[k] = tr
            j += 1
    return counts


def _count(a: TagStream, b: TagStream, window_s: float, max_offset: int, all_pairs: bool,
           group=None, n_groups: int = 1) -> np.ndarray:
    if group is None:
        group = np.zeros(a.tags.size, dtype=np.int64)
    if a.tags.size == 0 or b.tags.size == 0:
        return np.zeros((n_groups, 2 * max_offset + 1), dtype=np.int64)
    return _coincidence_kernel(a.tags, a.trial_index(), b.tags, b.trial_index(),
                               a.trials_per_cycle, _pair_delay(a, b), a.trial_period_s,
                               0.5 * window_s, max_offset, all_pairs, group, n_groups)


def build_histogram(a: TagStream, b: TagStream, window_s: float | None = None,
                    max_offset: int = DEFAULT_MAX_OFFSET, all_pairs: bool = False
                    ) -> CoincidenceHistogram:
    """Coincidences of ``b`` relative to ``a`` at trial offsets ``-max_offset..max_offset``.

    By default a trial pair counts at most once; ``all_pairs=True`` counts
    every tag pair instead.
    """
    _check_compatible(a, b)
    if window_s is None:
        window_s = min(a.gate_width_s, b.gate_width_s)
    if not window_s > 0:
        raise ConfigError("coincidence window must be > 0")
    if window_s > min(a.gate_width_s, b.gate_width_s) * (1 + 1e-12):
        raise ConfigError("coincidence window exceeds the gate width")
    if int(max_offset) < 4:
        raise ConfigError("max_offset must be >= 4 so at least 8 offsets estimate accidentals")
    max_offset = int(max_offset)
    offsets = np.arange(-max_offset, max_offset + 1)
    counts = _count(a, b, float(window_s), max_offset, all_pairs)[0]
    exposures = np.array([_exposure(a.total_trials, a.trials_per_cycle, int(n)) for n in offsets],
                         dtype=np.int64)
    return CoincidenceHistogram(offsets, counts, exposures, float(window_s), a.total_trials, all_pairs)


def _ratio(n0, e0, nacc, eacc):
    if nacc == 0:
        raise InfiniteEstimateError("no accidental coincidences: the ratio is unbounded",
                                    n_coincidences=int(n0), n_accidentals=0)
    return (n0 / e0) / (nacc / eacc)


def g2_from_histogram(h: CoincidenceHistogram) -> CorrelationEstimate:
    """``counts[0] / mean(counts[n != 0])`` with per-offset exposure correction.

    The uncertainty is Poisson: ``value * sqrt(1/N0 + 1/sum(N_acc))``.
    """
    mask = h.accidental_mask
    n0 = h.coincidences
    nacc = int(h.counts[mask].sum())
    value = _ratio(n0, h.exposures[h.zero], nacc, int(h.exposures[mask].sum()))
    if n0 == 0:
        # one count is the resolution of a zero observation
        sigma = _ratio(1, h.exposures[h.zero], nacc, int(h.exposures[mask].sum()))
    else:
        sigma = value * math.sqrt(1.0 / n0 + 1.0 / nacc)
    return CorrelationEstimate(float(value), float(sigma), n0, nacc)


def g2_jackknife(a: TagStream, b: TagStream, window_s: float | None = None,
                 max_offset: int = DEFAULT_MAX_OFFSET, all_pairs: bool = False,
                 n_groups: int = 50) -> CorrelationEstimate:
    """Same estimator, uncertainty from delete-one-group jackknife over cycles."""
    h = build_histogram(a, b, window_s, max_offset, all_pairs)
    full = g2_from_histogram(h)
    T = a.trials_per_cycle
    n_cycles = a.n_cycles
    groups = min(int(n_groups), n_cycles)
    if groups < 2:
        raise ConfigError("jackknife needs at least two cycles")
    edges = np.linspace(0, n_cycles, groups + 1).astype(np.int64)
    group_of_cycle = np.repeat(np.arange(groups), np.diff(edges))
    c0 = np.zeros(groups)
    cacc = np.zeros(groups)
    e0 = np.zeros(groups)
    eacc = np.zeros(groups)
    trials_in_cycle = np.full(n_cycles, T, dtype=np.int64)
    if a.total_trials % T:
        trials_in_cycle[-1] = a.total_trials % T
    group = group_of_cycle[a.trial_index() // T] if a.tags.size else np.empty(0, dtype=np.int64)
    per_group = _count(a, b, h.window_s, int(max_offset), all_pairs, group, groups)
    for k, n in enumerate(h.offsets):
        exp_group = np.bincount(group_of_cycle, weights=np.maximum(trials_in_cycle - abs(int(n)), 0),
                                minlength=groups)
        if n == 0:
            c0 += per_group[:, k]
            e0 += exp_group
        else:
            cacc += per_group[:, k]
            eacc += exp_group
    est = np.empty(groups)
    for g in range(groups):
        rest_acc = cacc.sum() - cacc[g]
        if rest_acc == 0:
            raise InfiniteEstimateError("a jackknife replicate has no accidentals",
                                        n_coincidences=full.n_coincidences, n_accidentals=0)
        est[g] = ((c0.sum() - c0[g]) / (e0.sum() - e0[g])) / (rest_acc / (eacc.sum() - eacc[g]))
    sigma = math.sqrt((groups - 1) / groups * float(np.sum((est - est.mean()) ** 2)))
    return CorrelationEstimate(full.value, sigma, full.n_coincidences, full.n_accidentals)


def retrieval_efficiency(p_s: float, p_sas: float, det_eta: float) -> float:
    """Anti-Stokes probability in front of the detector given a Stokes click."""
    if p_s <= 0 or det_eta <= 0:
        raise DomainError("p_s and det_eta must be positive")
    if p_sas < 0:
        raise DomainError("p_sas must be >= 0")
    return p_sas / (p_s * det_eta)


def _as_estimate(x) -> CorrelationEstimate:
    if isinstance(x, CorrelationEstimate):
        return x
    return CorrelationEstimate(float(x), 0.0, 0, 0)


def cauchy_schwarz(g2_cross, g2_auto_a, g2_auto_b) -> CorrelationEstimate:
    """``R = g_ab**2 / (g_aa g_bb)`` with first-order error propagation.

    Arguments are :class:`CorrelationEstimate` or plain numbers (zero error).
    """
    c, a, b = _as_estimate(g2_cross), _as_estimate(g2_auto_a), _as_estimate(g2_auto_b)
    if a.value <= 0 or b.value <= 0:
        raise DomainError("autocorrelations must be positive")
    r = c.value ** 2 / (a.value * b.value)
    rel = 0.0
    if c.value:
        rel += (2 * c.sigma / c.value) ** 2
    rel += (a.sigma / a.value) ** 2 + (b.sigma / b.value) ** 2
    return CorrelationEstimate(r, r * math.sqrt(rel), c.n_coincidences, c.n_accidentals)


def conditional_waveform(a: TagStream, b: TagStream, bin_s: float = DEFAULT_BIN_S,
                         reference: str = "trial") -> WaveformHistogram:
    """Arrival-time histogram of ``b`` tags in trials where ``a`` clicked.

    ``reference='trial'`` measures times from the start of the trial plus the
    storage delay; ``'herald'`` measures ``t_b - t_a - tau`` against the first
    ``a`` tag of the trial (this adds the herald's own timing spread).
    """
    if not bin_s > 0:
        raise DomainError("bin width must be > 0")
    _check_compatible(a, b)
    if reference not in ("trial", "herald"):
        raise ConfigError(f"reference must be 'trial' or 'herald', got {reference!r}")
    tau = _pair_delay(a, b)
    if a.tags.size == 0 or b.tags.size == 0:
        return WaveformHistogram(np.empty(0), np.empty(0, dtype=np.int64), float(bin_s))
    ta = a.trial_index()
    a_trials, first = np.unique(ta, return_index=True)
    tb = b.trial_index()
    pos = np.searchsorted(a_trials, tb)
    pos = np.minimum(pos, a_trials.size - 1)
    keep = a_trials[pos] == tb
    if reference == "trial":
        rel = b.tags[keep] - b.trial_start(tb[keep]) - tau
    else:
        rel = b.tags[keep] - a.tags[first[pos[keep]]] - tau
    if rel.size == 0:
        return WaveformHistogram(np.empty(0), np.empty(0, dtype=np.int64), float(bin_s))
    lo = math.floor(rel.min() / bin_s) * bin_s
    n_bins = int(math.floor((rel.max() - lo) / bin_s)) + 1
    idx = np.minimum(((rel - lo) / bin_s).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    centers = lo + (np.arange(n_bins) + 0.5) * bin_s
    return WaveformHistogram(centers, counts, float(bin_s))


def conditional_snr(stokes: TagStream, converted: TagStream, blocked: TagStream,
                    window_s: float | None = None) -> CorrelationEstimate:
    """Heralded signal-to-noise ratio of the converted channel.

    Signal is the heralded click probability minus the noise probability;
    noise is the click probability per gate of the run with the converter
    input blocked.
    """
    h = build_histogram(stokes, converted, window_s, max_offset=DEFAULT_MAX_OFFSET)
    herald_trials = np.unique(stokes.trial_index()).size
    if herald_trials == 0:
        raise InfiniteEstimateError("no heralds", 0, 0)
    n_c = h.coincidences
    n_noise = np.unique(blocked.trial_index()).size
    if n_noise == 0:
        raise InfiniteEstimateError("no clicks with the input blocked: the SNR is unbounded",
                                    n_coincidences=n_c, n_accidentals=0)
    p_c = n_c / herald_trials
    p_n = n_noise / blocked.total_trials
    ratio = p_c / p_n
    sigma = ratio * math.sqrt((1.0 / n_c if n_c else 0.0) + 1.0 / n_noise)
    return CorrelationEstimate(ratio - 1.0, sigma, n_c, n_noise)


def rates(p, source) -> float:
    """Per-second rate of an event with probability ``p`` per trial."""
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise DomainError("probability must lie in [0, 1]")
    out = p * source.trials_per_cycle / (
        source.trials_per_cycle * source.trial_period_s + source.cycle_dead_time_s)
    return float(out) if out.ndim == 0 else out


def write_histogram_csv(h: CoincidenceHistogram, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["offset", "count"])
        for n, c in zip(h.offsets, h.counts):
            w.writerow([int(n), int(c)])
    return path


def write_waveform_csv(wf: WaveformHistogram, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_center_s", "count"])
        for t, c in zip(wf.bin_centers_s, wf.counts):
            w.writerow([repr(float(t)), int(c)])
    return path


def write_estimates_csv(rows, path) -> Path:
    """``rows`` holds (quantity, value, sigma, n) tuples."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "value", "sigma", "n"])
        for q, v, s, n in rows:
            w.writerow([q, repr(float(v)), repr(float(s)), int(n)])
    return path


def read_estimates_csv(path) -> dict:
    with open(path, newline="") as fh:
        return {r["quantity"]: (float(r["value"]), float(r["sigma"]), int(r["n"]))
                for r in csv.DictReader(fh)}
