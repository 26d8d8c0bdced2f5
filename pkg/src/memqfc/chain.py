"""Trial-by-trial Monte Carlo of the write/read sequence.

A run is ``n_cycles`` cycles of ``trials_per_cycle`` trials.  In trial ``t``
of cycle ``c`` the write pulse fires at::

    c * (trials_per_cycle * trial_period + cycle_dead_time) + t * trial_period + write_epoch

Stokes photons arrive around the write epoch, anti-Stokes photons around
write epoch + storage delay.  Every detector is gated on the expected
arrival time of its species.

The engine does not step through empty trials.  Photon losses are
independent per photon, so a pair is *visible* (at least one of its two
photons is detected somewhere) with a fixed probability ``v`` and the
number of visible pairs per trial is again thermal with mean ``v * mu``.
Trials holding visible pairs form a Bernoulli process and are drawn from
geometric gaps; uncorrelated light and dark counts are Poisson per gate.
The result has the same distribution as the per-trial composition of
:func:`sample_pair_number`, :func:`binomial_thin`, :func:`split_50_50`,
:func:`~memqfc.qfc.convert_stage` and :func:`apply_detector`.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .errors import ConfigError, DomainError, EmptyStreamsError
from .qfc import QfcParams, device_efficiency, noise_photons_per_gate
from .stats import PairNumberModel, sample_pair_number
from .streams import TagStream

__all__ = [
    "SourceParams",
    "DetectorModel",
    "si_detector",
    "ingaas_detector",
    "FWHM_TO_SIGMA",
    "sample_emission_time",
    "split_50_50",
    "apply_detector",
    "dead_time_filter",
    "run_experiment",
    "run_autocorrelation",
    "mu_for_stokes_probability",
]

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
CYCLES_PER_BLOCK = 2000


@dataclass(frozen=True)
class SourceParams:
    """Emission probability, timing, waveforms and loss chain of the memory.

    retrieval_eta already contains the Stokes/anti-Stokes mode overlap.
    antistokes_background is the mean number of uncorrelated photons per
    gate in the anti-Stokes fiber (read leakage); it follows the anti-Stokes
    path, conversion included.  kind='coherent' replaces the pair state by
    two independent Poisson fields with the same means.
    """

    mu: float = 0.025
    stokes_arm_eta: float = 0.7 * 0.2
    retrieval_eta: float = 0.32
    link_eta: float = 0.77
    storage_delay_s: float = 330e-9
    trial_period_s: float = 1.4e-6
    trials_per_cycle: int = 1000
    cycle_dead_time_s: float = 20e-3
    stokes_fwhm_s: float = 11e-9
    antistokes_fwhm_s: float = 11.4e-9
    antistokes_background: float = 0.0
    write_epoch_s: float = 50e-9
    kind: str = "thermal"

    def __post_init__(self):
        if not math.isfinite(self.mu) or self.mu < 0:
            raise ConfigError(f"mu must be >= 0, got {self.mu!r}")
        for name in ("stokes_arm_eta", "retrieval_eta", "link_eta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v!r}")
        for name in ("storage_delay_s", "trial_period_s", "write_epoch_s"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.cycle_dead_time_s < 0:
            raise ConfigError("cycle_dead_time_s must be >= 0")
        if self.stokes_fwhm_s < 0 or self.antistokes_fwhm_s < 0:
            raise ConfigError("waveform widths must be >= 0")
        if self.antistokes_background < 0:
            raise ConfigError("antistokes_background must be >= 0")
        if int(self.trials_per_cycle) != self.trials_per_cycle or self.trials_per_cycle <= 0:
            raise ConfigError("trials_per_cycle must be a positive integer")
        if self.storage_delay_s >= self.trial_period_s:
            raise ConfigError("storage delay must be shorter than the trial period")
        if self.kind not in ("thermal", "coherent"):
            raise ConfigError(f"kind must be 'thermal' or 'coherent', got {self.kind!r}")

    @property
    def cycle_period_s(self) -> float:
        return self.trials_per_cycle * self.trial_period_s + self.cycle_dead_time_s


@dataclass(frozen=True)
class DetectorModel:
    """A gated single-photon detector."""

    efficiency: float
    dark_rate_hz: float
    gate_width_s: float = 40e-9
    dead_time_s: float = 0.0
    channel_id: str = "det"
    jitter_fwhm_s: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ConfigError(f"detector efficiency must lie in [0, 1], got {self.efficiency!r}")
        if self.dark_rate_hz < 0 or self.dead_time_s < 0 or self.jitter_fwhm_s < 0:
            raise ConfigError("dark rate, dead time and jitter must be >= 0")
        if not self.gate_width_s > 0:
            raise ConfigError("gate width must be > 0")

    @property
    def dark_probability(self) -> float:
        """Mean dark counts per gate."""
        return self.dark_rate_hz * self.gate_width_s


def si_detector(channel_id: str = "stokes", **kw) -> DetectorModel:
    """780 nm silicon APD: 43 %, 100 Hz, 40 ns gate."""
    return DetectorModel(**{"efficiency": 0.43, "dark_rate_hz": 100.0, "gate_width_s": 40e-9,
                            "dead_time_s": 0.0, "channel_id": channel_id, **kw})


def ingaas_detector(channel_id: str = "telecom", **kw) -> DetectorModel:
    """1552 nm InGaAs APD: 10 %, 400 Hz, 20 us dead time."""
    return DetectorModel(**{"efficiency": 0.10, "dark_rate_hz": 400.0, "gate_width_s": 40e-9,
                            "dead_time_s": 20e-6, "channel_id": channel_id, **kw})


def mu_for_stokes_probability(p_s: float, source: SourceParams, det_s: DetectorModel) -> float:
    """Mean pair number that gives a Stokes detection probability ``p_s``
    (dark counts excluded), inverting ``p_s = x / (1 + x)`` with ``x = eta mu``."""
    eta = source.stokes_arm_eta * det_s.efficiency
    if eta <= 0:
        raise DomainError("the Stokes arm has zero transmission")
    if not 0 <= p_s < 1:
        raise DomainError("p_s must lie in [0, 1)")
    return p_s / (1.0 - p_s) / eta


# ---------------------------------------------------------------------------
# per-photon building blocks


def _truncated_normal(center, sigma, half_width, rng, size):
    """Normal samples around ``center`` redrawn until inside ``+-half_width``."""
    center = np.broadcast_to(np.asarray(center, dtype=float), (size,)) if size else center
    if sigma == 0.0:
        return np.array(center, dtype=float, copy=True)
    if half_width is None or not math.isfinite(half_width):
        return center + rng.normal(0.0, sigma, size)
    g = rng.normal(0.0, sigma, size)
    bad = np.abs(g) > half_width
    while np.any(bad):
        g[bad] = rng.normal(0.0, sigma, int(bad.sum()))
        bad = np.abs(g) > half_width
    return center + g


def sample_emission_time(trial_epoch, offset, fwhm, rng, gate_width=None, size=None):
    """Emission time ``trial_epoch + offset + g`` with Gaussian ``g``.

    ``g`` has the given FWHM and is redrawn until the time falls inside the
    gate of width ``gate_width`` centred on ``trial_epoch + offset``.
    """
    if fwhm < 0:
        raise DomainError("fwhm must be >= 0")
    half = None if gate_width is None else 0.5 * gate_width
    scalar = size is None and np.ndim(trial_epoch) == 0
    n = size if size is not None else (None if scalar else np.shape(trial_epoch)[0])
    center = np.asarray(trial_epoch, dtype=float) + offset
    if scalar:
        return float(_truncated_normal(np.array([float(center)]), fwhm * FWHM_TO_SIGMA,
                                       half, rng, 1)[0])
    return _truncated_normal(center, fwhm * FWHM_TO_SIGMA, half, rng, n)


def split_50_50(n, rng):
    """Route each photon to arm A or B with probability one half."""
    n = np.asarray(n)
    if np.any(n < 0):
        raise DomainError("photon count must be >= 0")
    a = rng.binomial(n, 0.5)
    b = n - a
    if n.ndim == 0:
        return int(a), int(b)
    return a, b


@njit(cache=False)
def _dead_time_keep(t, dead):
    keep = np.ones(t.size, dtype=np.bool_)
    last = -np.inf
    for i in range(t.size):
        if t[i] - last < dead:
            keep[i] = False
        else:
            last = t[i]
    return keep


def dead_time_filter(tags, dead_time_s: float) -> np.ndarray:
    """Sort, merge identical times, then drop tags closer than the dead
    time to the previous accepted tag."""
    t = np.sort(np.asarray(tags, dtype=np.float64))
    if t.size > 1:
        t = t[np.concatenate(([True], np.diff(t) > 0))]
    if dead_time_s > 0 and t.size > 1:
        t = t[_dead_time_keep(t, float(dead_time_s))]
    return t


def apply_detector(arrival_times, gate_starts, det: DetectorModel, rng) -> np.ndarray:
    """Detect photons arriving in a set of gates.

    Each photon survives with ``det.efficiency``; each gate gets
    Poisson(``dark_rate * gate_width``) dark counts spread uniformly over the
    gate; the merged tags then pass the dead-time filter.
    """
    arrivals = np.asarray(arrival_times, dtype=float)
    starts = np.asarray(gate_starts, dtype=float)
    kept = arrivals[rng.random(arrivals.size) < det.efficiency]
    if det.jitter_fwhm_s > 0 and kept.size:
        idx = np.clip(np.searchsorted(starts, kept, side="right") - 1, 0, None)
        centers = starts[idx] + 0.5 * det.gate_width_s
        jittered = kept + rng.normal(0.0, det.jitter_fwhm_s * FWHM_TO_SIGMA, kept.size)
        bad = np.abs(jittered - centers) > 0.5 * det.gate_width_s
        while np.any(bad):
            jittered[bad] = kept[bad] + rng.normal(0.0, det.jitter_fwhm_s * FWHM_TO_SIGMA, int(bad.sum()))
            bad = np.abs(jittered - centers) > 0.5 * det.gate_width_s
        kept = jittered
    n_dark = rng.poisson(det.dark_probability, starts.size)
    darks = np.repeat(starts, n_dark) + rng.random(int(n_dark.sum())) * det.gate_width_s
    return dead_time_filter(np.concatenate([kept, darks]), det.dead_time_s)


# ---------------------------------------------------------------------------
# engine


@dataclass(frozen=True)
class _Channel:
    det: DetectorModel
    species: str
    center_s: float          # gate centre relative to trial start
    sigma_s: float           # waveform (+ jitter) standard deviation
    stokes_p: float          # P(one Stokes photon -> click here)
    antistokes_p: float      # P(one anti-Stokes photon -> click here)
    uniform_lambda: float    # mean uniform-in-gate clicks per gate


def _build_channels(source: SourceParams, qfc: QfcParams | None, specs, block_input: bool):
    """``specs`` holds (detector, species, split_fraction) triples."""
    channels = []
    conv = 1.0
    noise = 0.0
    if qfc is not None:
        conv = source.link_eta * device_efficiency(qfc)
        noise = noise_photons_per_gate(qfc)
    for det, species, split in specs:
        eff = det.efficiency * split
        if species == "stokes":
            center = source.write_epoch_s
            width = source.stokes_fwhm_s
            s_p, a_p, lam = source.stokes_arm_eta * eff, 0.0, 0.0
        else:
            center = source.write_epoch_s + source.storage_delay_s
            width = source.antistokes_fwhm_s
            transmit = 0.0 if block_input else conv
            s_p = 0.0
            a_p = source.retrieval_eta * transmit * eff
            lam = source.antistokes_background * transmit * eff + noise * eff
        half = 0.5 * det.gate_width_s
        if center - half < 0 or center + half > source.trial_period_s:
            raise ConfigError(f"gate of channel {det.channel_id!r} does not fit inside a trial")
        sigma = math.hypot(width, det.jitter_fwhm_s) * FWHM_TO_SIGMA
        channels.append(_Channel(det, species, center, sigma, s_p, a_p,
                                 lam + det.dark_probability))
    return channels


def _bernoulli_positions(n: int, q: float, rng) -> np.ndarray:
    """Indices of successes among ``n`` independent Bernoulli(q) trials."""
    if q <= 0.0 or n == 0:
        return np.empty(0, dtype=np.int64)
    if q >= 1.0:
        return np.arange(n, dtype=np.int64)
    expect = n * q
    chunk = int(expect + 6.0 * math.sqrt(expect) + 16)
    pos = np.cumsum(rng.geometric(q, chunk)) - 1
    parts = [pos]
    while pos[-1] < n:
        pos = pos[-1] + np.cumsum(rng.geometric(q, chunk))
        parts.append(pos)
    pos = np.concatenate(parts)
    return pos[pos < n].astype(np.int64)


def _simulate_block(source, channels, trial0, n_trials, rng):
    """Click times (unsorted) per channel for trials ``trial0 .. trial0+n_trials-1``."""
    T = source.trials_per_cycle
    cyc = source.cycle_period_s
    per_channel_trials = [[] for _ in channels]
    per_channel_kind = [[] for _ in channels]   # True: waveform photon, False: uniform

    s_p = np.array([c.stokes_p for c in channels])
    a_p = np.array([c.antistokes_p for c in channels])
    s_tot = float(s_p.sum())
    a_tot = float(a_p.sum())

    if source.mu > 0 and source.kind == "thermal":
        visible = 1.0 - (1.0 - s_tot) * (1.0 - a_tot)
        m = visible * source.mu
        if m > 0:
            q = m / (1.0 + m)
            trials = _bernoulli_positions(n_trials, q, rng)
            extra = sample_pair_number(PairNumberModel(m), rng, trials.size)
            pair_trial = np.repeat(trials, 1 + extra)
            # joint outcome of the two photons, conditioned on visibility
            s_out = np.concatenate(([1.0 - s_tot], s_p))
            a_out = np.concatenate(([1.0 - a_tot], a_p))
            joint = np.outer(s_out, a_out).ravel()
            joint[0] = 0.0
            cdf = np.cumsum(joint)
            cdf /= cdf[-1]
            outcome = np.minimum(np.searchsorted(cdf, rng.random(pair_trial.size), side="right"),
                                 cdf.size - 1)
            si, ai = np.divmod(outcome, a_out.size)
            for k in range(len(channels)):
                hit = pair_trial[(si == k + 1) | (ai == k + 1)]
                if hit.size:
                    per_channel_trials[k].append(hit)
                    per_channel_kind[k].append(np.ones(hit.size, dtype=bool))
    elif source.mu > 0 and source.kind == "coherent":
        for k in range(len(channels)):
            lam = source.mu * (s_p[k] + a_p[k])
            if lam > 0:
                hit = rng.integers(0, n_trials, rng.poisson(lam * n_trials))
                per_channel_trials[k].append(hit)
                per_channel_kind[k].append(np.ones(hit.size, dtype=bool))

    for k, ch in enumerate(channels):
        if ch.uniform_lambda > 0:
            hit = rng.integers(0, n_trials, rng.poisson(ch.uniform_lambda * n_trials))
            per_channel_trials[k].append(hit)
            per_channel_kind[k].append(np.zeros(hit.size, dtype=bool))

    out = []
    for k, ch in enumerate(channels):
        if not per_channel_trials[k]:
            out.append(np.empty(0))
            continue
        local = np.concatenate(per_channel_trials[k])
        shaped = np.concatenate(per_channel_kind[k])
        g = local + trial0
        cycle, within = np.divmod(g, T)
        center = cycle * cyc + within * source.trial_period_s + ch.center_s
        half = 0.5 * ch.det.gate_width_s
        t = np.empty(local.size)
        n_shaped = int(shaped.sum())
        t[shaped] = _truncated_normal(center[shaped], ch.sigma_s, half, rng, n_shaped)
        t[~shaped] = center[~shaped] + (rng.random(local.size - n_shaped) - 0.5) * ch.det.gate_width_s
        out.append(t)
    return out


def _check_run_args(n_cycles, seed):
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    if isinstance(n_cycles, bool) or not isinstance(n_cycles, (int, np.integer)):
        raise ConfigError(f"n_cycles must be an integer, got {n_cycles!r}")
    if n_cycles <= 0:
        raise EmptyStreamsError("n_cycles must be positive: nothing to simulate")


def _run(source, qfc, specs, n_cycles, seed, threads, block_input, stream_key):
    _check_run_args(n_cycles, seed)
    channels = _build_channels(source, qfc, specs, block_input)
    T = int(source.trials_per_cycle)
    total = int(n_cycles) * T
    block_trials = CYCLES_PER_BLOCK * T
    n_blocks = -(-total // block_trials)

    def block(b):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(stream_key), b]))
        trial0 = b * block_trials
        n = min(block_trials, total - trial0)
        return [np.sort(t) for t in _simulate_block(source, channels, trial0, n, rng)]

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            results = list(pool.map(block, range(n_blocks)))
    else:
        results = [block(b) for b in range(n_blocks)]

    streams = []
    for k, ch in enumerate(channels):
        tags = np.concatenate([r[k] for r in results]) if results else np.empty(0)
        tags = dead_time_filter(tags, ch.det.dead_time_s)
        streams.append(TagStream(
            channel_id=ch.det.channel_id,
            tags=tags,
            total_trials=total,
            trial_period_s=source.trial_period_s,
            storage_delay_s=source.storage_delay_s,
            species=ch.species,
            trials_per_cycle=T,
            cycle_dead_time_s=source.cycle_dead_time_s,
            gate_width_s=ch.det.gate_width_s,
        ))
    return streams


def run_experiment(source: SourceParams, qfc: QfcParams | None, det_s: DetectorModel,
                   det_as: DetectorModel, n_cycles: int, seed: int, *, threads: int = 1,
                   block_input: bool = False, stream_key: int = 0):
    """Simulate the Stokes and (optionally converted) anti-Stokes detectors.

    With ``qfc`` the anti-Stokes light crosses the link and the converter
    before ``det_as``.  ``block_input`` blocks the converter input, leaving
    only pump noise and dark counts on the anti-Stokes channel.  Results do
    not depend on ``threads``.
    """
    s, a = _run(source, qfc, [(det_s, "stokes", 1.0), (det_as, "antistokes", 1.0)],
                n_cycles, seed, threads, block_input, stream_key)
    return s, a


def run_autocorrelation(source: SourceParams, qfc: QfcParams | None, det_a: DetectorModel,
                        det_b: DetectorModel, arm: str, n_cycles: int, seed: int, *,
                        threads: int = 1, stream_key: int = 1):
    """Send one arm through a 50-50 splitter onto two detectors.

    ``arm`` is ``'stokes'`` or ``'antistokes'``; for the anti-Stokes arm the
    splitter sits after the converter when ``qfc`` is given.
    """
    if arm not in ("stokes", "antistokes"):
        raise ConfigError(f"arm must be 'stokes' or 'antistokes', got {arm!r}")
    if det_a.channel_id == det_b.channel_id:
        det_b = replace(det_b, channel_id=det_b.channel_id + "_b")
    a, b = _run(source, qfc, [(det_a, arm, 0.5), (det_b, arm, 0.5)],
                n_cycles, seed, threads, False, stream_key)
    return a, b
