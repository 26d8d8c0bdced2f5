"""Command line entry point.

Verbs: simulate, analyze, predict, fit, preset-list.  Exit codes: 0 on
success, 2 for configuration or domain errors, 3 for numerical failures
(non-convergence, unbounded estimates, no maximum).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import AnalysisOptions, list_presets, load_scenario, parse_scenario, preset_path
from .errors import ConfigError, DomainError, FitError, NumericalError
from .fitting import fit_gaussian_peak, fit_linear_origin, fit_sin2_efficiency, read_points
from .qfc import LinkBudget, QfcParams, crossover_distance, device_efficiency, optimal_pump_for_snr, snr_predict
from .stats import predict_g2_after_conversion

log = logging.getLogger("memqfc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _grid(text: str) -> np.ndarray:
    """``start:stop:n`` (inclusive linspace) or a comma list."""
    try:
        if ":" in text:
            a, b, n = text.split(":")
            return np.linspace(float(a), float(b), int(n))
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise ConfigError(f"cannot parse grid {text!r}; use start:stop:n or a comma list") from None


def _writer(path):
    if path is None or str(path) == "-":
        return sys.stdout, False
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return open(p, "w", newline=""), True


def _emit(rows, header, path):
    fh, close = _writer(path)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    finally:
        if close:
            fh.close()


def _load(args):
    if (args.scenario is None) == (args.preset is None):
        raise ConfigError("give exactly one of --scenario or --preset")
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"scenario.seed={args.seed}")
    if args.cycles is not None:
        overrides += [f"scenario.n_cycles={args.cycles}", "sweep.n_cycles="]
    path = args.scenario if args.scenario is not None else preset_path(args.preset)
    return load_scenario(path, overrides)


def cmd_simulate(args) -> int:
    from .report import run_scenario

    scenario = _load(args)
    out = Path(args.out) if args.out else Path("runs") / scenario.name
    run_scenario(scenario, out, threads=args.threads, plot=args.plot,
                 keep_streams=not args.no_streams, log=log.info)
    print(out / "summary.csv")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .report import analyze_directory

    opts = None
    if any(v is not None for v in (args.window_s, args.max_offset, args.jackknife)) or args.all_pairs:
        opts = AnalysisOptions(window_s=args.window_s,
                               max_offset=args.max_offset if args.max_offset is not None else 20,
                               all_pairs=args.all_pairs,
                               jackknife_groups=args.jackknife or 0)
    det = None
    if args.det_eta_stokes is not None or args.det_eta_antistokes is not None:
        if args.det_eta_stokes is None or args.det_eta_antistokes is None:
            raise ConfigError("give both --det-eta-stokes and --det-eta-antistokes")
        det = (args.det_eta_stokes, args.det_eta_antistokes)
    for path in args.paths:
        analyze_directory(path, opts=opts, det_eta=det, plot=args.plot, out_dir=args.out)
    return EXIT_OK


def _qfc_from_args(args) -> QfcParams:
    kw = {k: getattr(args, k) for k in ("eta_max", "eta_n", "length_cm", "delta_n", "dc_prob",
                                          "det_eta_1552") if getattr(args, k) is not None}
    return QfcParams(**kw)


def cmd_predict(args) -> int:
    what = args.what
    if what == "efficiency":
        q = _qfc_from_args(args)
        p = _grid(args.pump_w)
        _emit(zip(p, device_efficiency(q, p)), ["pump_power_w", "eta_dev"], args.out)
    elif what == "snr":
        q = _qfc_from_args(args)
        p = _grid(args.pump_w)
        _emit(zip(p, device_efficiency(q, p), snr_predict(q, args.mu_in, p)),
              ["pump_power_w", "eta_dev", "snr"], args.out)
    elif what == "optimum":
        q = _qfc_from_args(args)
        p = optimal_pump_for_snr(q, args.mu_in)
        _emit([(p, snr_predict(q, args.mu_in, p))], ["pump_power_w", "snr"], args.out)
    elif what == "g2c":
        g2 = _grid(args.g2_in)
        if args.snr is not None:
            snrs = _grid(args.snr)
        elif args.eta_in is not None:
            snrs = np.array([args.eta_in * args.snr_max])
        else:
            raise ConfigError("predict g2c needs --snr or --eta-in (with --snr-max)")
        rows = [(g, s, predict_g2_after_conversion(g, s)) for g in g2 for s in snrs]
        _emit(rows, ["g2_in", "snr", "g2_out"], args.out)
    elif what == "crossover":
        rows = []
        for eta in _grid(args.eta_dev):
            rows.append((eta, crossover_distance(LinkBudget(eta, args.loss_780, args.loss_1552))))
        _emit(rows, ["device_eta", "crossover_km"], args.out)
    return EXIT_OK


def cmd_fit(args) -> int:
    x, y, sigma = read_points(args.points)
    try:
        if args.model == "sin2":
            res = fit_sin2_efficiency(x, y, sigma, length_cm=args.length_cm, weighted=not args.unweighted)
        elif args.model == "linear_origin":
            res = fit_linear_origin(x, y, sigma, weighted=not args.unweighted)
        else:
            res = fit_gaussian_peak(x, y, sigma, weighted=not args.unweighted)
    except FitError as exc:
        print(f"fit did not converge: {exc}; best point {exc.best}", file=sys.stderr)
        return EXIT_NUMERICAL
    rows = [(k, v, res.sigmas[k]) for k, v in res.parameters.items()]
    rows += [("residual_norm", res.residual_norm, float("nan")),
             ("iterations", float(res.iterations), float("nan")),
             ("dof", float(res.dof), float("nan"))]
    _emit(rows, ["parameter", "value", "sigma"], args.out)
    if not res.sigma_defined:
        print("note: sigma undefined (no degrees of freedom left)", file=sys.stderr)
    return EXIT_OK if res.converged else EXIT_NUMERICAL


def cmd_preset_list(args) -> int:
    for name in list_presets():
        sc = parse_scenario(preset_path(name).read_text(encoding="utf-8"), name)
        print(f"{name:10s} {sc.description}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="memqfc", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="verb", required=True)

    sp = sub.add_parser("simulate", help="run a scenario or preset")
    sp.add_argument("--scenario", help="scenario INI file")
    sp.add_argument("--preset", help="packaged preset name (see preset-list)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--cycles", type=int, help="cycles per sweep point (replaces preset values)")
    sp.add_argument("--out", help="output directory (default runs/<name>)")
    sp.add_argument("--threads", type=int, help="worker threads; results do not depend on it")
    sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a key")
    sp.add_argument("--plot", action="store_true", help="also render PNG figures")
    sp.add_argument("--no-streams", action="store_true", help="do not keep the .tags files")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("analyze", help="analyze stored tag streams")
    sp.add_argument("paths", nargs="+", help="run or point directories")
    sp.add_argument("--out", help="output directory (default <path>/analysis)")
    sp.add_argument("--window-s", type=float)
    sp.add_argument("--max-offset", type=int)
    sp.add_argument("--all-pairs", action="store_true", help="count every tag pair")
    sp.add_argument("--jackknife", type=int, metavar="GROUPS", help="add cycle jackknife errors")
    sp.add_argument("--det-eta-stokes", type=float)
    sp.add_argument("--det-eta-antistokes", type=float)
    sp.add_argument("--plot", action="store_true")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("predict", help="closed-form curves")
    sp.add_argument("what", choices=["efficiency", "snr", "optimum", "g2c", "crossover"])
    sp.add_argument("--pump-w", default="0:0.3:31", help="pump grid, start:stop:n or list")
    sp.add_argument("--mu-in", type=float, default=1.0)
    for name in ("eta_max", "eta_n", "length_cm", "delta_n", "dc_prob", "det_eta_1552"):
        sp.add_argument("--" + name.replace("_", "-"), dest=name, type=float)
    sp.add_argument("--g2-in", default="2,5,22,60")
    sp.add_argument("--snr")
    sp.add_argument("--eta-in", type=float, help="input efficiency; snr = eta_in * snr_max")
    sp.add_argument("--snr-max", type=float, default=85.0)
    sp.add_argument("--eta-dev", default="0.001,0.01,0.1,0.136,1")
    sp.add_argument("--loss-780", type=float, default=3.0, help="dB/km")
    sp.add_argument("--loss-1552", type=float, default=0.2, help="dB/km")
    sp.add_argument("--out", help="CSV file (default stdout)")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("fit", help="fit a points CSV (x,y[,sigma])")
    sp.add_argument("points")
    sp.add_argument("--model", required=True, choices=["sin2", "linear_origin", "gaussian"])
    sp.add_argument("--length-cm", type=float, default=4.0)
    sp.add_argument("--unweighted", action="store_true")
    sp.add_argument("--out", help="CSV file (default stdout)")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("preset-list", help="list packaged presets")
    sp.set_defaults(func=cmd_preset_list)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
