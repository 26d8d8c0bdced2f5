"""Scenario files.

A scenario is an INI file (UTF-8, ``key = value``, ``;`` or ``#``
comments).  Sections and keys::

    [scenario]        name, description, seed, n_cycles, threads
    [source]          any SourceParams field, or p_s (target Stokes
                      detection probability, dark counts excluded)
                      instead of mu
    [qfc]             enabled (bool) plus any QfcParams field except
                      passive_losses
    [detector.stokes] [detector.antistokes] [detector.telecom]
                      efficiency, dark_rate_hz, gate_width_s,
                      dead_time_s, jitter_fwhm_s, channel_id
    [sweep]           parameter (p_s, mu, a source field, or
                      qfc.<field>), values (comma list), optional
                      n_cycles (comma list, one per value)
    [measure]         cross, blocked, auto_stokes, auto_antistokes,
                      waveform (bools)
    [analysis]        window_s, max_offset, all_pairs, bin_s,
                      waveform_reference, jackknife_groups, eta_in
                      (input retrieval efficiency; enables the
                      heralded device-efficiency estimate)

Physical quantities carry their unit in the key suffix (_s, _hz, _w,
_cm).  The telecom detector replaces the anti-Stokes detector when the
converter is enabled.  Any error names the file and line.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import math
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .chain import DetectorModel, SourceParams, ingaas_detector, mu_for_stokes_probability, si_detector
from .errors import ConfigError, DomainError
from .qfc import QfcParams

__all__ = ["Scenario", "SweepAxis", "MeasureOptions", "AnalysisOptions", "SweepPoint",
           "load_scenario", "parse_scenario", "list_presets", "preset_path"]

_SOURCE_FIELDS = {f.name: f.type for f in dataclasses.fields(SourceParams)}
_QFC_FIELDS = {f.name for f in dataclasses.fields(QfcParams)} - {"passive_losses"}
_DET_KEYS = {"efficiency", "dark_rate_hz", "gate_width_s", "dead_time_s", "jitter_fwhm_s", "channel_id"}
_INT_KEYS = {"trials_per_cycle", "seed", "n_cycles", "threads", "max_offset", "jackknife_groups"}
_STR_KEYS = {"kind", "channel_id", "name", "description", "parameter", "waveform_reference"}


@dataclass(frozen=True)
class SweepAxis:
    parameter: str
    values: tuple
    n_cycles: tuple | None = None


@dataclass(frozen=True)
class MeasureOptions:
    cross: bool = True
    blocked: bool = False
    auto_stokes: bool = False
    auto_antistokes: bool = False
    waveform: bool = False


@dataclass(frozen=True)
class AnalysisOptions:
    window_s: float | None = None
    max_offset: int = 20
    all_pairs: bool = False
    bin_s: float = 1.28e-9
    waveform_reference: str = "trial"
    jackknife_groups: int = 0
    eta_in: float | None = None


@dataclass(frozen=True)
class SweepPoint:
    index: int
    value: float | None
    source: SourceParams
    qfc: QfcParams | None
    n_cycles: int


@dataclass(frozen=True)
class Scenario:
    name: str
    source: SourceParams
    qfc: QfcParams | None
    detectors: dict
    n_cycles: int
    seed: int
    threads: int = 1
    description: str = ""
    p_s: float | None = None
    sweep: SweepAxis | None = None
    measure: MeasureOptions = field(default_factory=MeasureOptions)
    analysis: AnalysisOptions = field(default_factory=AnalysisOptions)
    outputs: Path | None = None
    text: str = ""

    @property
    def det_stokes(self) -> DetectorModel:
        return self.detectors["stokes"]

    @property
    def det_antistokes(self) -> DetectorModel:
        """Detector behind the anti-Stokes arm, telecom when converting."""
        return self.detectors["telecom" if self.qfc is not None else "antistokes"]

    def points(self):
        """Sweep points with fully resolved parameters."""
        if self.sweep is None:
            yield SweepPoint(0, None, self._resolve(self.source, self.p_s), self.qfc, self.n_cycles)
            return
        for i, v in enumerate(self.sweep.values):
            cycles = self.sweep.n_cycles[i] if self.sweep.n_cycles else self.n_cycles
            src, qfc, p_s = self.source, self.qfc, self.p_s
            par = self.sweep.parameter
            if par == "p_s":
                p_s = v
            elif par == "mu":
                src, p_s = replace(src, mu=v), None
            elif par.startswith("qfc."):
                qfc = replace(qfc, **{par[4:]: v})
            else:
                src = replace(src, **{par.removeprefix("source."): v})
            yield SweepPoint(i, v, self._resolve(src, p_s), qfc, cycles)

    def _resolve(self, src: SourceParams, p_s) -> SourceParams:
        if p_s is None:
            return src
        try:
            return replace(src, mu=mu_for_stokes_probability(p_s, src, self.det_stokes))
        except DomainError as exc:
            raise ConfigError(f"cannot reach p_s={p_s}: {exc}") from None


class _Located:
    """Line lookup for (section, key) pairs of an INI text."""

    def __init__(self, text: str, path: str | None):
        self.path = path
        self.lines = {}
        section = None
        for i, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line[0] in ";#":
                continue
            m = re.fullmatch(r"\[([^\]]+)\]", line)
            if m:
                section = m.group(1).strip()
                self.lines[(section, None)] = i
                continue
            if section is not None and ("=" in line or ":" in line):
                key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
                self.lines.setdefault((section, key), i)

    def error(self, msg, section, key=None):
        return ConfigError(msg, line=self.lines.get((section, key), self.lines.get((section, None))),
                           path=self.path)


def _parse_value(raw: str, key: str, loc: _Located, section: str):
    raw = raw.strip()
    if key in _STR_KEYS:
        return raw
    low = raw.lower()
    if low in ("true", "yes", "on", "false", "no", "off"):
        return low in ("true", "yes", "on")
    try:
        if key in _INT_KEYS:
            return int(raw)
        v = float(raw)
    except ValueError:
        raise loc.error(f"{section}.{key}: cannot parse {raw!r} as a number", section, key) from None
    if not math.isfinite(v):
        raise loc.error(f"{section}.{key}: value must be finite", section, key)
    return v


def _float_list(raw: str, key, loc, section, kind=float):
    out = []
    for part in raw.replace("\n", ",").split(","):
        part = part.strip()
        if not part:
            continue
        try:
            v = kind(part)
        except ValueError:
            raise loc.error(f"{section}.{key}: cannot parse {part!r}", section, key) from None
        if not math.isfinite(v):
            raise loc.error(f"{section}.{key}: values must be finite", section, key)
        out.append(v)
    if not out:
        raise loc.error(f"{section}.{key}: empty list", section, key)
    return tuple(out)


def parse_scenario(text: str, path: str | None = None, overrides=()) -> Scenario:
    """Parse and validate scenario text.

    ``overrides`` holds ``section.key=value`` strings applied on top; the
    section is everything before the last dot.
    """
    loc = _Located(text, path)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read_string(text, source=path or "<scenario>")
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(str(exc).splitlines()[0], line=line, path=path) from None
    for ov in overrides:
        lhs, sep, value = ov.partition("=")
        sec, dot, key = lhs.strip().rpartition(".")
        if not sep or not dot:
            raise ConfigError(f"override {ov!r} must look like section.key=value")
        key = key.strip().lower()
        if not value.strip():
            # an empty value removes the key
            if cp.has_section(sec):
                cp.remove_option(sec, key)
            continue
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, key, value.strip())

    known = {"scenario", "source", "qfc", "detector.stokes", "detector.antistokes",
             "detector.telecom", "sweep", "measure", "analysis"}
    for sec in cp.sections():
        if sec not in known:
            raise loc.error(f"unknown section [{sec}]", sec)

    def section(name, allowed):
        if not cp.has_section(name):
            return {}
        out = {}
        for key, raw in cp.items(name):
            if key not in allowed:
                raise loc.error(f"unknown key {key!r} in [{name}]", name, key)
            out[key] = _parse_value(raw, key, loc, name)
        return out

    sc = section("scenario", {"name", "description", "seed", "n_cycles", "threads"})
    if "seed" not in sc:
        raise loc.error("[scenario] needs an explicit seed", "scenario")
    if "n_cycles" not in sc:
        raise loc.error("[scenario] needs n_cycles", "scenario")
    if sc["seed"] < 0:
        raise loc.error("seed must be >= 0", "scenario", "seed")

    src_kw = section("source", set(_SOURCE_FIELDS) | {"p_s"})
    p_s = src_kw.pop("p_s", None)
    if p_s is not None and "mu" in src_kw:
        raise loc.error("give either p_s or mu, not both", "source", "p_s")
    try:
        source = SourceParams(**src_kw)
    except (ConfigError, TypeError) as exc:
        raise loc.error(f"[source]: {exc}", "source") from None

    q_kw = section("qfc", _QFC_FIELDS | {"enabled"})
    qfc = None
    if q_kw.pop("enabled", False):
        try:
            qfc = QfcParams(**q_kw)
        except (DomainError, TypeError) as exc:
            raise loc.error(f"[qfc]: {exc}", "qfc") from None

    detectors = {}
    defaults = {"stokes": si_detector("stokes"), "antistokes": si_detector("antistokes"),
                "telecom": ingaas_detector("telecom")}
    for name, base in defaults.items():
        kw = section(f"detector.{name}", _DET_KEYS)
        try:
            detectors[name] = replace(base, **kw)
        except ConfigError as exc:
            raise loc.error(f"[detector.{name}]: {exc}", f"detector.{name}") from None

    sweep = None
    if cp.has_section("sweep"):
        raw = dict(cp.items("sweep"))
        for key in raw:
            if key not in ("parameter", "values", "n_cycles"):
                raise loc.error(f"unknown key {key!r} in [sweep]", "sweep", key)
        if "parameter" not in raw or "values" not in raw:
            raise loc.error("[sweep] needs parameter and values", "sweep")
        par = raw["parameter"].strip()
        valid = par in ("p_s", "mu") or par.removeprefix("source.") in _SOURCE_FIELDS or (
            par.startswith("qfc.") and par[4:] in _QFC_FIELDS)
        if not valid:
            raise loc.error(f"unknown sweep parameter {par!r}", "sweep", "parameter")
        if par.startswith("qfc.") and qfc is None:
            raise loc.error("sweeping a converter parameter needs [qfc] enabled = true", "sweep", "parameter")
        values = _float_list(raw["values"], "values", loc, "sweep")
        cycles = None
        if "n_cycles" in raw:
            cycles = _float_list(raw["n_cycles"], "n_cycles", loc, "sweep", kind=int)
            if len(cycles) != len(values):
                raise loc.error("sweep n_cycles needs one entry per value", "sweep", "n_cycles")
        sweep = SweepAxis(par, values, cycles)

    measure = MeasureOptions(**section("measure", {f.name for f in dataclasses.fields(MeasureOptions)}))
    if measure.blocked and qfc is None:
        raise loc.error("blocked-input runs need the converter enabled", "measure", "blocked")
    an = section("analysis", {f.name for f in dataclasses.fields(AnalysisOptions)})
    analysis = AnalysisOptions(**an)
    if analysis.waveform_reference not in ("trial", "herald"):
        raise loc.error("waveform_reference must be 'trial' or 'herald'", "analysis", "waveform_reference")

    buf = io.StringIO()
    cp.write(buf)
    scenario = Scenario(
        name=str(sc.get("name", Path(path).stem if path else "scenario")),
        description=str(sc.get("description", "")),
        source=source,
        qfc=qfc,
        detectors=detectors,
        n_cycles=int(sc["n_cycles"]),
        seed=int(sc["seed"]),
        threads=int(sc.get("threads", 1)),
        p_s=p_s,
        sweep=sweep,
        measure=measure,
        analysis=analysis,
        text=buf.getvalue(),
    )
    for point in scenario.points():  # resolves every point once to surface errors early
        if point.n_cycles <= 0:
            raise loc.error("n_cycles must be positive", "sweep" if sweep else "scenario", "n_cycles")
    return scenario


def load_scenario(path, overrides=()) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc.strerror}", path=str(path)) from None
    return parse_scenario(text, str(path), overrides)


def preset_path(name: str) -> Path:
    p = resources.files("memqfc") / "presets" / f"{name}.ini"
    if not p.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return Path(str(p))


def list_presets() -> list[str]:
    root = resources.files("memqfc") / "presets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))
