"""Weighted nonlinear least squares and the three device models.

The engine is a plain Levenberg-Marquardt loop with central-difference
Jacobians.  Reported sigmas come from the covariance ``(J^T W J)^-1`` at the
optimum; with explicit data sigmas they are taken as absolute, in
unweighted mode the covariance is scaled by the reduced chi-square.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, FitError

__all__ = [
    "FitResult",
    "least_squares",
    "sin2_model",
    "gaussian_model",
    "fit_sin2_efficiency",
    "fit_linear_origin",
    "fit_gaussian_peak",
    "read_points",
    "write_points",
]

GTOL = 1e-10
XTOL = 1e-12
MAX_ITER = 200
FWHM_FACTOR = 4.0 * math.log(2.0)


@dataclass
class FitResult:
    parameters: dict
    sigmas: dict
    residual_norm: float
    converged: bool
    iterations: int
    dof: int = 0
    message: str = ""
    gradient_norm: float = 0.0
    covariance: np.ndarray | None = field(default=None, repr=False)

    def __getitem__(self, name):
        return self.parameters[name]

    @property
    def sigma_defined(self) -> bool:
        return all(math.isfinite(s) for s in self.sigmas.values())


def _jacobian(fun, p, f0):
    J = np.empty((f0.size, p.size))
    for j in range(p.size):
        h = 1e-6 * max(abs(p[j]), 1e-3)
        up = p.copy()
        dn = p.copy()
        up[j] += h
        dn[j] -= h
        J[:, j] = (fun(up) - fun(dn)) / (2 * h)
    return J


def least_squares(model, x, y, p0, sigma=None, names=None, weighted: bool = True,
                  max_iter: int = MAX_ITER, gtol: float = GTOL, xtol: float = XTOL) -> FitResult:
    """Minimize ``sum(((model(x, p) - y) / sigma)**2)`` over ``p``.

    Stops when the gradient norm drops below ``gtol``, the step below
    ``xtol`` (relative to the parameter norm) or after ``max_iter``
    iterations; the last case raises :class:`FitError` carrying the best
    point.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p = np.array(p0, dtype=float)
    if names is None:
        names = [f"p{i}" for i in range(p.size)]
    if len(names) != p.size:
        raise ConfigError("one name per parameter required")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(p))):
        raise DomainError("data and initial parameters must be finite")
    if sigma is None or not weighted:
        s = np.ones_like(y)
    else:
        s = np.broadcast_to(np.asarray(sigma, dtype=float), y.shape)
        if np.any(~np.isfinite(s)) or np.any(s <= 0):
            raise DomainError("sigmas must be finite and positive")

    def resid(q):
        f = np.asarray(model(x, q), dtype=float)
        if not np.all(np.isfinite(f)):
            raise DomainError(f"model returned non-finite values at parameters {q.tolist()}")
        return (f - y) / s

    r = resid(p)
    cost = float(r @ r)
    lam = None
    converged = False
    message = "iteration limit reached"
    it = 0
    g_norm = math.inf
    for it in range(1, max_iter + 1):
        J = _jacobian(resid, p, r)
        A = J.T @ J
        g = J.T @ r
        g_norm = float(np.linalg.norm(g))
        if g_norm < gtol:
            converged, message = True, "gradient below tolerance"
            it -= 1
            break
        if lam is None:
            lam = 1e-6 * float(np.max(np.diag(A))) if np.max(np.diag(A)) > 0 else 1e-6
        D = np.diag(np.maximum(np.diag(A), 1e-300))
        step_taken = False
        while True:
            try:
                delta = np.linalg.solve(A + lam * D, -g)
            except np.linalg.LinAlgError:
                delta = np.linalg.lstsq(A + lam * D, -g, rcond=None)[0]
            trial = p + delta
            try:
                r_new = resid(trial)
            except DomainError:
                r_new = None
            if r_new is not None and float(r_new @ r_new) <= cost:
                p, r = trial, r_new
                cost = float(r @ r)
                lam = max(lam / 10.0, 1e-15)
                step_taken = True
                break
            lam *= 10.0
            if lam > 1e30 or np.linalg.norm(delta) <= xtol * (np.linalg.norm(p) + xtol):
                break
        if np.linalg.norm(delta) <= xtol * (np.linalg.norm(p) + xtol):
            converged, message = True, "step below tolerance"
            break
        if not step_taken:
            converged, message = True, "no further decrease possible"
            break
    best = dict(zip(names, p.tolist()))
    if not converged:
        raise FitError(f"no convergence after {max_iter} iterations (cost {cost:.6g})", best=best)

    J = _jacobian(resid, p, r)
    dof = y.size - p.size
    A = J.T @ J
    try:
        cov = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        cov = np.full_like(A, np.inf)
    if sigma is None or not weighted:
        cov = cov * (cost / dof if dof > 0 else np.nan)
    if dof <= 0:
        cov = np.full_like(A, np.nan)
    sig = np.sqrt(np.abs(np.diag(cov))) if np.all(np.isfinite(cov)) else np.full(p.size, np.nan)
    return FitResult(best, dict(zip(names, sig.tolist())), cost, True, it, dof, message,
                     float(np.linalg.norm(J.T @ r)), cov)


def sin2_model(length_cm: float):
    def f(p_w, params):
        eta_max, eta_n = params
        return eta_max * np.sin(length_cm * np.sqrt(np.abs(eta_n) * p_w)) ** 2
    return f


def gaussian_model(t, params):
    amp, center, fwhm, offset = params
    return amp * np.exp(-FWHM_FACTOR * (t - center) ** 2 / fwhm ** 2) + offset


def fit_sin2_efficiency(pump_w, eta, sigma=None, length_cm: float = 4.0,
                        weighted: bool = True) -> FitResult:
    """Fit ``eta_max * sin^2(L sqrt(eta_n P))``.

    Starts from the largest efficiency and the ``eta_n`` that puts the
    quarter period at the power where it was measured.
    """
    pump_w = np.asarray(pump_w, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if pump_w.size < 4:
        raise DomainError("need at least 4 points")
    if length_cm <= 0:
        raise DomainError("length_cm must be positive")
    if np.any(pump_w < 0):
        raise DomainError("pump powers must be >= 0")
    i = int(np.argmax(eta))
    if pump_w[i] <= 0 or eta[i] <= 0:
        raise DomainError("data must contain a positive efficiency at positive pump power")
    p0 = [eta[i], (math.pi / 2) ** 2 / (length_cm ** 2 * pump_w[i])]
    res = least_squares(sin2_model(length_cm), pump_w, eta, p0, sigma=sigma,
                        names=["eta_max", "eta_n"], weighted=weighted)
    res.parameters["eta_n"] = abs(res.parameters["eta_n"])
    return res


def fit_linear_origin(mu_in, snr, sigma=None, weighted: bool = True) -> FitResult:
    """Closed-form weighted slope of ``snr = snr_max * mu_in``."""
    x = np.asarray(mu_in, dtype=float)
    y = np.asarray(snr, dtype=float)
    if x.size < 1 or x.size != y.size:
        raise DomainError("need matching, non-empty x and y")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DomainError("data must be finite")
    w = np.ones_like(x)
    if sigma is not None and weighted:
        s = np.broadcast_to(np.asarray(sigma, dtype=float), x.shape)
        if np.any(s <= 0):
            raise DomainError("sigmas must be positive")
        w = 1.0 / s ** 2
    sxx = float(np.sum(w * x * x))
    if sxx == 0.0:
        raise DomainError("degenerate design: all mu_in are zero")
    slope = float(np.sum(w * x * y)) / sxx
    r = (y - slope * x) * np.sqrt(w)
    cost = float(r @ r)
    dof = x.size - 1
    if dof <= 0:
        sig = math.nan
    elif sigma is not None and weighted:
        sig = 1.0 / math.sqrt(sxx)
    else:
        sig = math.sqrt(cost / dof / sxx)
    return FitResult({"snr_max": slope}, {"snr_max": sig}, cost, True, 0, dof,
                     "closed form" if dof > 0 else "closed form; sigma undefined for one point")


def fit_gaussian_peak(t, counts, sigma=None, weighted: bool = True) -> FitResult:
    """Fit ``A exp(-4 ln2 (t - t0)^2 / fwhm^2) + B`` to a histogram.

    Without explicit sigmas the weights are Poisson, ``sqrt(max(count, 1))``.
    Works on normalized axes internally.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(counts, dtype=float)
    if t.size < 6 or t.size != y.size:
        raise DomainError("need at least 6 bins")
    if y.sum() <= 0:
        raise DomainError("histogram has no counts")
    if sigma is None:
        sigma = np.sqrt(np.maximum(y, 1.0))
    t0, ts = float(t.mean()), float(t.std())
    ys = float(y.max())
    u = (t - t0) / ts
    v = y / ys
    sv = np.asarray(sigma, dtype=float) / ys
    base = float(np.median(np.concatenate([v[:2], v[-2:]])))
    excess = np.clip(v - base, 0, None)
    if excess.sum() <= 0 or np.ptp(v) == 0:
        raise FitError("flat histogram: no peak to fit",
                       best={"amplitude": 0.0, "center": t0, "fwhm": math.nan, "offset": ys * base})
    c = float(np.sum(excess * u) / excess.sum())
    sd = math.sqrt(max(float(np.sum(excess * (u - c) ** 2) / excess.sum()), 1e-6))
    p0 = [float(excess.max()), c, 2.0 * math.sqrt(2.0 * math.log(2.0)) * sd, base]
    res = least_squares(gaussian_model, u, v, p0, sigma=sv,
                        names=["amplitude", "center", "fwhm", "offset"], weighted=weighted)
    p = res.parameters
    scale = {"amplitude": ys, "center": ts, "fwhm": ts, "offset": ys}
    params = {"amplitude": p["amplitude"] * ys, "center": p["center"] * ts + t0,
              "fwhm": abs(p["fwhm"]) * ts, "offset": p["offset"] * ys}
    sigmas = {k: res.sigmas[k] * scale[k] for k in params}
    if not math.isfinite(params["fwhm"]) or params["fwhm"] == 0:
        raise FitError("fit collapsed to zero width", best=params)
    return FitResult(params, sigmas, res.residual_norm, res.converged, res.iterations,
                     res.dof, res.message, res.gradient_norm)


def read_points(path):
    """Read ``x,y,sigma`` rows (header required, sigma column optional)."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ConfigError("empty points file", path=str(path)) from None
        if header[:2] != ["x", "y"] or header[2:] not in ([], ["sigma"]):
            raise ConfigError(f"expected header x,y[,sigma], got {','.join(header)}", line=1,
                              path=str(path))
        xs, ys, ss = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ConfigError(f"expected {len(header)} columns", line=lineno, path=str(path))
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise ConfigError(f"non-numeric value in {row!r}", line=lineno, path=str(path)) from None
            xs.append(vals[0])
            ys.append(vals[1])
            if len(vals) == 3:
                ss.append(vals[2])
    sig = np.array(ss) if ss else None
    return np.array(xs), np.array(ys), sig


def write_points(path, x, y, sigma=None) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "sigma"] if sigma is not None else ["x", "y"])
        for i in range(len(x)):
            row = [repr(float(x[i])), repr(float(y[i]))]
            if sigma is not None:
                row.append(repr(float(np.broadcast_to(sigma, np.shape(x))[i])))
            w.writerow(row)
    return path
