"""Scenario runner: simulate sweep points, analyze stream sets, write CSV.

Run directory layout::

    <out>/scenario.ini          effective scenario (overrides applied)
    <out>/summary.csv           one row per sweep point
    <out>/point_NNN/*.tags      tag streams of one sweep point
    <out>/point_NNN/estimates.csv, hist_*.csv, waveform.csv
    <out>/*.png, point_NNN/*.png   only with plotting enabled

Stream names inside a point directory: ``stokes``, ``antistokes``,
``blocked`` (converter input blocked), ``stokes_a``/``stokes_b`` and
``antistokes_a``/``antistokes_b`` (the two outputs of a 50-50 splitter).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .analysis import (
    build_histogram,
    cauchy_schwarz,
    conditional_snr,
    conditional_waveform,
    g2_from_histogram,
    g2_jackknife,
    rates,
    retrieval_efficiency,
    write_estimates_csv,
    write_histogram_csv,
    write_waveform_csv,
)
from .chain import run_autocorrelation, run_experiment
from .config import AnalysisOptions, Scenario, SweepPoint, parse_scenario
from .errors import ConfigError, FitError, InfiniteEstimateError
from .fitting import fit_gaussian_peak, write_points
from .streams import read_stream, write_stream

STREAM_NAMES = ("stokes", "antistokes", "blocked", "stokes_a", "stokes_b", "antistokes_a", "antistokes_b")


@dataclass
class PointReport:
    rows: list = field(default_factory=list)
    histograms: dict = field(default_factory=dict)
    waveform: object = None
    waveform_fit: object = None

    def value(self, name):
        for q, v, s, n in self.rows:
            if q == name:
                return v, s
        raise KeyError(name)

    def names(self):
        return [r[0] for r in self.rows]


def simulate_point(scenario: Scenario, point: SweepPoint, threads: int = 1) -> dict:
    """All streams requested by the scenario's measure options for one point."""
    m = scenario.measure
    det_s, det_as = scenario.det_stokes, scenario.det_antistokes
    seed = scenario.seed
    key = 16 * point.index
    streams = {}
    if m.cross or m.waveform or m.blocked:
        streams["stokes"], streams["antistokes"] = run_experiment(
            point.source, point.qfc, det_s, det_as, point.n_cycles, seed, threads=threads,
            stream_key=key)
    if m.blocked:
        _, streams["blocked"] = run_experiment(
            point.source, point.qfc, det_s, det_as, point.n_cycles, seed, threads=threads,
            block_input=True, stream_key=key + 1)
    if m.auto_stokes:
        streams["stokes_a"], streams["stokes_b"] = run_autocorrelation(
            point.source, None, det_s, _renamed(det_s, "_b"), "stokes", point.n_cycles, seed,
            threads=threads, stream_key=key + 2)
    if m.auto_antistokes:
        streams["antistokes_a"], streams["antistokes_b"] = run_autocorrelation(
            point.source, point.qfc, det_as, _renamed(det_as, "_b"), "antistokes", point.n_cycles,
            seed, threads=threads, stream_key=key + 3)
    return streams


def _renamed(det, suffix):
    return replace(det, channel_id=det.channel_id + suffix)


def _prob_row(name, stream):
    n = int(np.unique(stream.trial_index()).size) if len(stream) else 0
    p = n / stream.total_trials
    return (name, p, math.sqrt(p * (1 - p) / stream.total_trials), n)


def _unbounded(exc) -> float:
    # coincidences over zero accidentals diverge; nothing over nothing is undefined
    return math.inf if exc.n_coincidences else math.nan


def analyze_streams(streams: dict, det_eta_stokes: float, det_eta_antistokes: float,
                    opts: AnalysisOptions | None = None, waveform: bool = False) -> PointReport:
    """Every estimate the available streams support."""
    opts = opts or AnalysisOptions()
    rep = PointReport()
    hist_kw = dict(window_s=opts.window_s, max_offset=opts.max_offset, all_pairs=opts.all_pairs)
    cross = auto_s = auto_as = None
    s, a = streams.get("stokes"), streams.get("antistokes")
    if s is not None and a is not None:
        rep.rows.append(_prob_row("p_s", s))
        rep.rows.append(_prob_row("p_as", a))
        h = build_histogram(s, a, **hist_kw)
        rep.histograms["cross"] = h
        n0 = h.coincidences
        p_sas = h.probability(0)
        rep.rows.append(("p_sas", p_sas, math.sqrt(n0) / h.exposures[h.zero], n0))
        for q in ("p_s", "p_as", "p_sas"):
            v, sg = rep.value(q)
            rep.rows.append((f"rate_{q[2:]}_hz", rates(v, s), rates(min(sg, 1.0), s), 0))
        try:
            cross = g2_from_histogram(h)
            rep.rows.append(("g2_s_as", cross.value, cross.sigma, cross.n_coincidences))
            if opts.jackknife_groups:
                jk = g2_jackknife(s, a, n_groups=opts.jackknife_groups, **hist_kw)
                rep.rows.append(("g2_s_as_jackknife", jk.value, jk.sigma, jk.n_coincidences))
        except InfiniteEstimateError as exc:
            rep.rows.append(("g2_s_as", _unbounded(exc), math.nan, exc.n_coincidences))
        p_s = rep.value("p_s")[0]
        if p_s > 0 and det_eta_antistokes > 0:
            eta = retrieval_efficiency(p_s, p_sas, det_eta_antistokes)
            rel = math.sqrt((1.0 / n0 if n0 else 0.0) + 1.0 / max(rep.rows[0][3], 1))
            rep.rows.append(("eta_R", eta, eta * rel, n0))
    if s is not None and a is not None and "blocked" in streams:
        b = streams["blocked"]
        rep.rows.append(_prob_row("p_noise", b))
        try:
            snr = conditional_snr(s, a, b, window_s=opts.window_s)
            rep.rows.append(("snr", snr.value, snr.sigma, snr.n_coincidences))
        except InfiniteEstimateError as exc:
            rep.rows.append(("snr", _unbounded(exc), math.nan, exc.n_coincidences))
    if opts.eta_in and "eta_R" in rep.names():
        # heralded device efficiency: converted retrieval over the input retrieval
        v, sg = rep.value("eta_R")
        rep.rows.append(("eta_dev", v / opts.eta_in, sg / opts.eta_in, rep.rows[2][3]))
    for name, tag in (("stokes", "ss"), ("antistokes", "asas")):
        sa, sb = streams.get(f"{name}_a"), streams.get(f"{name}_b")
        if sa is None or sb is None:
            continue
        h = build_histogram(sa, sb, **hist_kw)
        rep.histograms[tag] = h
        try:
            est = g2_from_histogram(h)
        except InfiniteEstimateError as exc:
            rep.rows.append((f"g2_{tag}", math.nan, math.nan, exc.n_coincidences))
            continue
        rep.rows.append((f"g2_{tag}", est.value, est.sigma, est.n_coincidences))
        if tag == "ss":
            auto_s = est
        else:
            auto_as = est
    if cross is not None and auto_s is not None and auto_as is not None:
        r = cauchy_schwarz(cross, auto_s, auto_as)
        rep.rows.append(("R", r.value, r.sigma, r.n_coincidences))
    if waveform and s is not None and a is not None:
        _add_waveform(rep, s, a, opts)
    return rep


def _add_waveform(rep, s, a, opts):
    wf = conditional_waveform(s, a, opts.bin_s, reference=opts.waveform_reference)
    rep.waveform = wf
    if wf.counts.size >= 6:
        try:
            fit = fit_gaussian_peak(wf.bin_centers_s, wf.counts)
            rep.waveform_fit = fit
            rep.rows.append(("waveform_fwhm_s", fit["fwhm"], fit.sigmas["fwhm"], int(wf.counts.sum())))
        except (FitError, ValueError):
            rep.rows.append(("waveform_fwhm_s", math.nan, math.nan, int(wf.counts.sum())))


def write_point_outputs(rep: PointReport, point_dir: Path, plot: bool = False):
    point_dir.mkdir(parents=True, exist_ok=True)
    write_estimates_csv(rep.rows, point_dir / "estimates.csv")
    for tag, h in rep.histograms.items():
        write_histogram_csv(h, point_dir / f"hist_{tag}.csv")
        if plot:
            from .plotting import plot_histogram
            plot_histogram(h.offsets, h.counts, point_dir / f"hist_{tag}.png", title=tag)
    if rep.waveform is not None:
        write_waveform_csv(rep.waveform, point_dir / "waveform.csv")
        if plot and rep.waveform.counts.size:
            from .plotting import plot_waveform
            plot_waveform(rep.waveform.bin_centers_s, rep.waveform.counts, point_dir / "waveform.png",
                          rep.waveform_fit)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_summary(path: Path, entries):
    """``entries``: (point, sweep_value, mu, n_trials, PointReport) tuples."""
    names = []
    for *_, rep in entries:
        for q in rep.names():
            if q not in names:
                names.append(q)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["point", "sweep_value", "mu", "n_trials"]
        for q in names:
            head += [q, f"{q}_sigma"]
        w.writerow(head)
        for point, value, mu, n_trials, rep in entries:
            row = [point, "" if value is None else _fmt(value), _fmt(mu), n_trials]
            lookup = {r[0]: r for r in rep.rows}
            for q in names:
                if q in lookup:
                    row += [_fmt(lookup[q][1]), _fmt(lookup[q][2])]
                else:
                    row += ["", ""]
            w.writerow(row)
    return path


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_scenario(scenario: Scenario, out_dir, threads: int | None = None, plot: bool = False,
                 keep_streams: bool = True, log=None):
    """Simulate and analyze every sweep point; returns the summary entries."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.ini").write_text(scenario.text, encoding="utf-8")
    threads = threads or scenario.threads
    entries = []
    for point in scenario.points():
        pdir = out / f"point_{point.index:03d}"
        pdir.mkdir(exist_ok=True)
        streams = simulate_point(scenario, point, threads)
        if keep_streams:
            for name, st in streams.items():
                write_stream(st, pdir / f"{name}.tags")
        rep = analyze_streams(streams, scenario.det_stokes.efficiency,
                              scenario.det_antistokes.efficiency, scenario.analysis,
                              waveform=scenario.measure.waveform)
        write_point_outputs(rep, pdir, plot)
        total = point.n_cycles * point.source.trials_per_cycle
        entries.append((point.index, point.value, point.source.mu, total, rep))
        if log:
            log(f"point {point.index}: " + ", ".join(
                f"{q}={v:.4g}" for q, v, _, _ in rep.rows if q in ("p_s", "g2_s_as", "eta_R", "snr", "R", "eta_dev")))
    write_summary(out / "summary.csv", entries)
    _write_fit_points(scenario, out, entries)
    if plot:
        _plot_summary(scenario, out, entries)
    return entries


def _write_fit_points(scenario, out, entries):
    """Export measured device efficiency against pump power for the fit verb."""
    if scenario.sweep is None or scenario.sweep.parameter != "qfc.pump_power_w":
        return
    rows = [(v, rep.value("eta_dev")) for _, v, _, _, rep in entries if "eta_dev" in rep.names()]
    if rows:
        write_points(out / "points_eta_dev.csv", [r[0] for r in rows], [r[1][0] for r in rows],
                     [max(r[1][1], 1e-12) for r in rows])


def _plot_summary(scenario, out, entries):
    if scenario.sweep is None or len(entries) < 2:
        return
    from .plotting import plot_sweep
    x = []
    cols = {}
    for _, v, _, _, rep in entries:
        x.append(rep.value("p_s")[0] if scenario.sweep.parameter in ("p_s", "mu") else v)
        for q, val, sg, _ in rep.rows:
            cols.setdefault(q, []).append((val, sg))
    xlabel = "p_s" if scenario.sweep.parameter in ("p_s", "mu") else scenario.sweep.parameter
    logx = scenario.sweep.parameter in ("p_s", "mu")
    for q, y2 in (("g2_s_as", "eta_R"), ("eta_dev", "snr")):
        if q not in cols or len(cols[q]) != len(x):
            continue
        y = np.array(cols[q])
        extra = np.array(cols[y2]) if y2 in cols and len(cols[y2]) == len(x) else None
        plot_sweep(x, y[:, 0], y[:, 1], out / f"{q}.png", xlabel, q, logx=logx,
                   y2=None if extra is None else extra[:, 0],
                   y2_sigma=None if extra is None else extra[:, 1], y2label=y2)


def analyze_directory(path, opts: AnalysisOptions | None = None, det_eta=None, plot=False,
                      out_dir=None):
    """Re-analyze the streams of a run or point directory.

    Detector efficiencies and analysis options come from the run's
    ``scenario.ini`` when present; ``det_eta`` (stokes, antistokes)
    and ``opts`` override them.
    """
    path = Path(path)
    if not path.is_dir():
        raise ConfigError(f"not a directory: {path}")
    point_dirs = sorted(p for p in path.glob("point_*") if p.is_dir()) or [path]
    ini = next((d / "scenario.ini" for d in (path, path.parent) if (d / "scenario.ini").is_file()), None)
    scenario = parse_scenario(ini.read_text(encoding="utf-8"), str(ini)) if ini else None
    if det_eta is None:
        if scenario is None:
            raise ConfigError(f"{path}: no scenario.ini found; pass detector efficiencies explicitly")
        det_eta = (scenario.det_stokes.efficiency, scenario.det_antistokes.efficiency)
    if opts is None:
        opts = scenario.analysis if scenario else AnalysisOptions()
    points = list(scenario.points()) if scenario and len(point_dirs) > 1 else []
    entries = []
    for k, pdir in enumerate(point_dirs):
        streams = {n: read_stream(pdir / f"{n}.tags") for n in STREAM_NAMES if (pdir / f"{n}.tags").is_file()}
        if not streams:
            raise ConfigError(f"{pdir}: no tag streams found")
        point = points[k] if k < len(points) else (next(scenario.points()) if scenario else None)
        rep = analyze_streams(streams, det_eta[0], det_eta[1], opts,
                              waveform=scenario is None or scenario.measure.waveform)
        dest = (Path(out_dir) / pdir.name) if out_dir else pdir / "analysis"
        write_point_outputs(rep, dest, plot)
        any_stream = next(iter(streams.values()))
        entries.append((k, point.value if point else None, point.source.mu if point else math.nan,
                        any_stream.total_trials, rep))
    dest_root = Path(out_dir) if out_dir else (path / "analysis" if len(point_dirs) > 1 else point_dirs[0] / "analysis")
    dest_root.mkdir(parents=True, exist_ok=True)
    write_summary(dest_root / "summary.csv", entries)
    return entries
