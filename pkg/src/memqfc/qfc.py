"""Frequency-conversion device: efficiency, pump noise and SNR.

Noise convention: ``delta_n`` is a *detection* probability per gate and
per watt of pump, so ``delta_n * P`` is directly the noise term of the
SNR formula.  :func:`convert_stage` therefore injects
``delta_n * P / det_eta_1552`` noise photons per gate before the telecom
detector; the detector efficiency then brings it back to ``delta_n * P``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DomainError, NoMaximumError

__all__ = [
    "QfcParams",
    "LinkBudget",
    "device_efficiency",
    "pump_at_max_efficiency",
    "snr_predict",
    "snr_linear",
    "calibrate_delta_n",
    "optimal_pump_for_snr",
    "crossover_distance",
    "convert_stage",
    "total_conversion_factor",
    "PASSIVE_LOSSES",
]

# waveguide coupling, waveguide transmission, fiber coupling, Bragg filter
PASSIVE_LOSSES = {
    "waveguide_coupling": 0.60,
    "waveguide_transmission": 0.70,
    "fiber_coupling": 0.60,
    "filter_transmission": 0.70,
}

SNR_MAX_REFERENCE = 85.0
OPERATING_PUMP_W = 0.12


@dataclass(frozen=True)
class QfcParams:
    """Conversion-device constants.

    eta_n is in W^-1 cm^-2 (1.2 means 120 % W^-1 cm^-2).  The crystal
    length is not reported; 4 cm puts the efficiency maximum at 128 mW so
    that the device is saturated at the 120 mW operating point.
    ``delta_n=None`` calibrates it from ``SNR_MAX_REFERENCE`` at 120 mW.
    """

    eta_max: float = 0.136
    eta_n: float = 1.2
    length_cm: float = 4.0
    pump_power_w: float = OPERATING_PUMP_W
    delta_n: float | None = None
    dc_prob: float = 400.0 * 40e-9
    det_eta_1552: float = 0.1
    passive_losses: dict = field(default_factory=lambda: dict(PASSIVE_LOSSES))

    def __post_init__(self):
        for name in ("eta_n", "length_cm", "pump_power_w", "dc_prob"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise DomainError(f"{name} must be finite and >= 0, got {value!r}")
        if not 0.0 <= self.eta_max <= 1.0:
            raise DomainError(f"eta_max must lie in [0, 1], got {self.eta_max!r}")
        if not 0.0 <= self.det_eta_1552 <= 1.0:
            raise DomainError(f"det_eta_1552 must lie in [0, 1], got {self.det_eta_1552!r}")
        if self.delta_n is None:
            dn = calibrate_delta_n(replace(self, delta_n=0.0), SNR_MAX_REFERENCE, OPERATING_PUMP_W)
            object.__setattr__(self, "delta_n", dn)
        elif not math.isfinite(self.delta_n) or self.delta_n < 0:
            raise DomainError(f"delta_n must be finite and >= 0, got {self.delta_n!r}")
        ceiling = self.loss_ceiling
        if self.eta_max > ceiling + 1e-12:
            warnings.warn(
                f"eta_max={self.eta_max:.4g} exceeds the passive-loss ceiling {ceiling:.4g}",
                stacklevel=2,
            )

    @property
    def loss_ceiling(self) -> float:
        return float(np.prod(list(self.passive_losses.values())))

    def with_pump(self, pump_power_w: float) -> "QfcParams":
        return replace(self, pump_power_w=float(pump_power_w))


@dataclass(frozen=True)
class LinkBudget:
    """Fiber attenuation at both wavelengths and the converter efficiency."""

    device_eta: float
    loss_780_db_per_km: float = 3.0
    loss_1552_db_per_km: float = 0.2


def device_efficiency(params: QfcParams, pump_power_w=None):
    """``eta_max * sin^2(L * sqrt(P * eta_n))``; ``pump_power_w`` may be an array."""
    p = params.pump_power_w if pump_power_w is None else pump_power_w
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise DomainError("pump power must be >= 0")
    out = params.eta_max * np.sin(params.length_cm * np.sqrt(p * params.eta_n)) ** 2
    return float(out) if out.ndim == 0 else out


def pump_at_max_efficiency(params: QfcParams) -> float:
    """Smallest pump power with a sin^2 argument of pi/2."""
    if params.eta_n <= 0 or params.length_cm <= 0:
        raise NoMaximumError("efficiency never peaks when eta_n or L is zero")
    return (math.pi / 2) ** 2 / (params.length_cm ** 2 * params.eta_n)


def snr_predict(params: QfcParams, mu_in, pump_power_w=None):
    """Signal over noise-plus-dark probability per gate.

    ``s = mu_in * eta_dev * det_eta``, ``n = delta_n * P``.  Returns 0 where
    both signal and noise vanish.
    """
    mu_in = np.asarray(mu_in, dtype=float)
    if np.any(mu_in < 0):
        raise DomainError("mu_in must be >= 0")
    p = params.pump_power_w if pump_power_w is None else pump_power_w
    p = np.asarray(p, dtype=float)
    s = mu_in * device_efficiency(params, p) * params.det_eta_1552
    noise = params.delta_n * p + params.dc_prob
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(noise > 0, s / np.where(noise > 0, noise, 1.0),
                       np.where(s > 0, np.inf, 0.0))
    return float(out) if out.ndim == 0 else out


def snr_linear(mu_in, snr_max):
    """Linear law ``snr_max * mu_in`` measured at fixed pump power."""
    if np.any(np.asarray(mu_in) < 0) or np.any(np.asarray(snr_max) < 0):
        raise DomainError("mu_in and snr_max must be >= 0")
    out = np.asarray(snr_max, dtype=float) * np.asarray(mu_in, dtype=float)
    return float(out) if out.ndim == 0 else out


def calibrate_delta_n(params: QfcParams, snr_max: float, pump_power_w: float = OPERATING_PUMP_W) -> float:
    """Noise slope giving ``snr_max`` for one input photon at ``pump_power_w``.

    Dark counts are left out: ``delta_n = eta_dev(P) det_eta / (snr_max P)``.
    """
    if snr_max <= 0 or pump_power_w <= 0:
        raise DomainError("snr_max and pump_power_w must be positive")
    eta = device_efficiency(params, pump_power_w)
    return eta * params.det_eta_1552 / (snr_max * pump_power_w)


def optimal_pump_for_snr(params: QfcParams, mu_in: float = 1.0, xatol: float = 1e-7) -> float:
    """Pump power maximizing :func:`snr_predict` on ``[0, P(eta_max)]``."""
    if params.delta_n <= 0:
        raise DomainError("delta_n must be positive")
    p_hi = pump_at_max_efficiency(params)
    if params.dc_prob <= 0:
        # sin^2(c sqrt P) / P decreases monotonically: the supremum sits at P -> 0
        raise NoMaximumError("without dark counts the SNR has no interior maximum")
    res = minimize_scalar(lambda p: -snr_predict(params, mu_in, p), bounds=(0.0, p_hi),
                          method="bounded", options={"xatol": xatol})
    if not res.success:
        raise NoMaximumError(f"bounded search failed: {res.message}")
    return float(res.x)


def crossover_distance(budget: LinkBudget) -> float:
    """Fiber length in km beyond which converted photons arrive more often."""
    if not 0.0 < budget.device_eta <= 1.0:
        raise DomainError(f"device_eta must lie in (0, 1], got {budget.device_eta!r}")
    if budget.loss_1552_db_per_km <= 0 or budget.loss_780_db_per_km <= budget.loss_1552_db_per_km:
        raise DomainError("need loss_780_db_per_km > loss_1552_db_per_km > 0")
    return 10.0 * math.log10(1.0 / budget.device_eta) / (
        budget.loss_780_db_per_km - budget.loss_1552_db_per_km)


def noise_photons_per_gate(params: QfcParams) -> float:
    """Mean pump-noise photons per gate in front of the telecom detector."""
    n = params.delta_n * params.pump_power_w
    if n == 0.0:
        return 0.0
    if params.det_eta_1552 <= 0:
        raise DomainError("det_eta_1552 must be positive when pump noise is present")
    return n / params.det_eta_1552


def convert_stage(photons, params: QfcParams, filter_eta: float, rng: np.random.Generator):
    """Push the photons of each gate through the converter.

    Returns ``(converted, noise)``: each input photon survives with
    probability ``eta_dev * filter_eta``; noise is Poisson per gate and not
    yet detected.  Surviving photons keep their arrival times.
    """
    if not 0.0 <= filter_eta <= 1.0:
        raise DomainError(f"filter_eta must lie in [0, 1], got {filter_eta!r}")
    photons = np.asarray(photons)
    eta = device_efficiency(params) * filter_eta
    converted = rng.binomial(photons, eta)
    noise = rng.poisson(noise_photons_per_gate(params), size=photons.shape)
    if photons.ndim == 0:
        return int(converted), int(noise)
    return converted, noise


def total_conversion_factor(params: QfcParams, link_eta: float, det_eta_780: float) -> float:
    """``eta_dev * eta_loss * det_1552 / det_780``, the detection-level scaling."""
    if det_eta_780 <= 0:
        raise DomainError("det_eta_780 must be positive")
    return device_efficiency(params) * link_eta * params.det_eta_1552 / det_eta_780
