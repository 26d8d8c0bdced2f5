"""Photon-number statistics of the Stokes/anti-Stokes pair source.

The generative model is the diagonal two-mode squeezed state: both modes
always carry the same photon number ``n`` and ``n`` is thermally
distributed with mean ``mu``.  Everything here is either a closed form or
a sampler; the Monte Carlo chain and the analysis code are checked
against these functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError

__all__ = [
    "PairNumberModel",
    "ConversionPrediction",
    "ChannelResponse",
    "thermal_pmf",
    "sample_pair_number",
    "binomial_thin",
    "g2_cross_ideal",
    "g2_auto_ideal",
    "predict_g2_after_conversion",
    "thermal_pgf",
    "joint_click_probabilities",
]


def _check_mu(mu: float) -> float:
    mu = float(mu)
    if not math.isfinite(mu) or mu < 0:
        raise DomainError(f"mean photon number must be finite and >= 0, got {mu!r}")
    return mu


def thermal_pmf(mu: float, n: int) -> float:
    """Bose-Einstein probability ``mu**n / (1 + mu)**(n + 1)``."""
    mu = _check_mu(mu)
    if isinstance(n, bool) or int(n) != n or n < 0:
        raise DomainError(f"photon number must be a non-negative integer, got {n!r}")
    n = int(n)
    if mu == 0.0:
        return 1.0 if n == 0 else 0.0
    # log form stays finite for large n
    return math.exp(n * math.log(mu) - (n + 1) * math.log1p(mu))


@dataclass(frozen=True)
class PairNumberModel:
    """Thermal pair-number distribution shared by both modes.

    ``mu`` is the mean number of pairs per trial; for ``mu << 1`` it is the
    Stokes emission probability into the collection mode.
    """

    mu: float

    def __post_init__(self):
        object.__setattr__(self, "mu", _check_mu(self.mu))

    @property
    def ratio(self) -> float:
        """Geometric ratio ``mu / (1 + mu)`` of successive probabilities."""
        return self.mu / (1.0 + self.mu)

    @property
    def mean(self) -> float:
        return self.mu

    @property
    def variance(self) -> float:
        return self.mu * (1.0 + self.mu)

    def pmf(self, n) -> np.ndarray:
        n = np.asarray(n)
        if np.any(n < 0):
            raise DomainError("photon numbers must be >= 0")
        if self.mu == 0.0:
            return (n == 0).astype(float)
        return np.exp(n * math.log(self.mu) - (n + 1) * math.log1p(self.mu))

    def truncation(self, tol: float = 1e-12) -> int:
        """Smallest ``n_max`` with ``P(n <= n_max) >= 1 - tol``."""
        if self.mu == 0.0:
            return 0
        # P(n > k) = ratio**(k+1)
        k = math.ceil(math.log(tol) / math.log(self.ratio)) - 1
        return max(k, 0)

    def pmf_table(self, tol: float = 1e-12) -> np.ndarray:
        return self.pmf(np.arange(self.truncation(tol) + 1))


def sample_pair_number(model: PairNumberModel, rng: np.random.Generator, size=None):
    """Draw pair numbers by inverting the geometric CDF.

    ``P(n >= k) = r**k`` with ``r = mu/(1+mu)``, so ``n = floor(log(1-U)/log r)``.
    """
    if model.mu == 0.0:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    u = rng.random(size)
    n = np.floor(np.log1p(-u) / math.log(model.ratio))
    if size is None:
        return int(n)
    return n.astype(np.int64)


def binomial_thin(n, eta: float, rng: np.random.Generator):
    """Keep each of ``n`` photons independently with probability ``eta``."""
    eta = float(eta)
    if not 0.0 <= eta <= 1.0:
        raise DomainError(f"transmission must lie in [0, 1], got {eta!r}")
    out = rng.binomial(n, eta)
    if np.ndim(out) == 0:
        return int(out)
    return out


def g2_cross_ideal(mu: float) -> float:
    """``<n_s n_as> / (<n_s><n_as>) = 2 + 1/mu`` for the diagonal thermal state."""
    if float(mu) == math.inf:
        return 2.0
    mu = _check_mu(mu)
    if mu == 0.0:
        raise DomainError("cross-correlation is undefined for mu = 0")
    return 2.0 + 1.0 / mu


def g2_auto_ideal() -> float:
    """Autocorrelation of a thermal marginal."""
    return 2.0


def predict_g2_after_conversion(g2_in: float, snr: float) -> float:
    """Cross-correlation left after adding uncorrelated conversion noise.

    ``g2_out = g2_in (snr + 1) / (snr + g2_in)``; infinite arguments take
    their limits (``snr -> inf`` keeps ``g2_in``, ``g2_in -> inf`` gives
    ``snr + 1``).
    """
    g2_in = float(g2_in)
    snr = float(snr)
    if math.isnan(g2_in) or math.isnan(snr) or g2_in < 0 or snr < 0:
        raise DomainError(f"g2_in and snr must be >= 0, got g2_in={g2_in!r}, snr={snr!r}")
    if math.isinf(g2_in) and math.isinf(snr):
        return math.inf
    if math.isinf(snr):
        return g2_in
    if math.isinf(g2_in):
        return snr + 1.0
    if snr + g2_in == 0.0:
        raise DomainError("snr + g2_in must be positive")
    return g2_in * (snr + 1.0) / (snr + g2_in)


@dataclass(frozen=True)
class ConversionPrediction:
    g2_in: float
    snr: float
    g2_out: float

    @classmethod
    def from_inputs(cls, g2_in: float, snr: float) -> "ConversionPrediction":
        return cls(float(g2_in), float(snr), predict_g2_after_conversion(g2_in, snr))


def thermal_pgf(mu: float, z):
    """Probability generating function ``E[z**n] = 1 / (1 + mu (1 - z))``."""
    mu = _check_mu(mu)
    return 1.0 / (1.0 + mu * (1.0 - np.asarray(z, dtype=float)))


class ChannelResponse(NamedTuple):
    """How one detector channel sees the source.

    stokes, antistokes:
        probability that a single emitted Stokes (anti-Stokes) photon ends
        up as a click on this channel, all losses included.
    background:
        mean number of uncorrelated clicks per gate (Poisson), e.g. dark
        counts, leakage or pump noise after detection efficiency.
    """

    stokes: float = 0.0
    antistokes: float = 0.0
    background: float = 0.0


def joint_click_probabilities(mu: float, a: ChannelResponse, b: ChannelResponse,
                              source: str = "thermal") -> tuple[float, float, float]:
    """Per-trial probabilities ``(P(a), P(b), P(a and b))`` of at least one click.

    Exact for click detectors without dead time.  A photon can reach at most
    one channel, so the no-click probability of the union of both channels
    uses the summed routing probabilities.  ``source='coherent'`` replaces
    the pair state by two independent Poisson fields with the same means.
    """
    mu = _check_mu(mu)

    def no_click(s, a_s, lam):
        if source == "thermal":
            z = (1.0 - s) * (1.0 - a_s)
            return float(thermal_pgf(mu, z)) * math.exp(-lam)
        if source == "coherent":
            return math.exp(-mu * (s + a_s) - lam)
        raise DomainError(f"unknown source kind {source!r}")

    n_a = no_click(a.stokes, a.antistokes, a.background)
    n_b = no_click(b.stokes, b.antistokes, b.background)
    n_ab = no_click(a.stokes + b.stokes, a.antistokes + b.antistokes, a.background + b.background)
    p_a = 1.0 - n_a
    p_b = 1.0 - n_b
    p_ab = 1.0 - n_a - n_b + n_ab
    return p_a, p_b, p_ab
