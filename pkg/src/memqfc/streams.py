"""Time-tag streams and their on-disk format.

File layout (all header text is ASCII, lines end with a single ``\\n``)::

    MEMQFC-TAGS 1
    channel_id=<text without newline or '='>
    species=<stokes|antistokes>
    trial_period_s=<float, repr>
    storage_delay_s=<float, repr>
    total_trials=<int>
    trials_per_cycle=<int>
    cycle_dead_time_s=<float, repr>
    gate_width_s=<float, repr>
    count=<int>
    END
    <count records, 8 bytes each: IEEE-754 float64, little endian>

Header keys appear exactly once and in this order.  Nothing follows the
last record.  Timestamps are absolute seconds from the start of the run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, StreamFormatError

MAGIC = "MEMQFC-TAGS 1"
HEADER_KEYS = (
    "channel_id",
    "species",
    "trial_period_s",
    "storage_delay_s",
    "total_trials",
    "trials_per_cycle",
    "cycle_dead_time_s",
    "gate_width_s",
    "count",
)
SPECIES = ("stokes", "antistokes")


@dataclass(eq=False)
class TagStream:
    """Ordered click times of one detector channel.

    Besides the trial period and storage delay the stream carries the cycle
    geometry, which the analysis needs to map a tag back to its trial.
    """

    channel_id: str
    tags: np.ndarray
    total_trials: int
    trial_period_s: float
    storage_delay_s: float
    species: str = "stokes"
    trials_per_cycle: int = 1000
    cycle_dead_time_s: float = 0.0
    gate_width_s: float = 40e-9
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tags = np.ascontiguousarray(self.tags, dtype=np.float64)
        if self.tags.ndim != 1:
            raise ConfigError("tags must be one-dimensional")
        if self.species not in SPECIES:
            raise ConfigError(f"species must be one of {SPECIES}, got {self.species!r}")
        if int(self.total_trials) <= 0:
            raise ConfigError("total_trials must be positive")
        self.total_trials = int(self.total_trials)
        self.trials_per_cycle = int(self.trials_per_cycle)
        if self.trials_per_cycle <= 0:
            raise ConfigError("trials_per_cycle must be positive")
        if self.trial_period_s <= 0 or self.gate_width_s <= 0 or self.cycle_dead_time_s < 0:
            raise ConfigError("trial period and gate width must be > 0, cycle dead time >= 0")
        if self.tags.size > 1 and not np.all(np.diff(self.tags) > 0):
            raise ConfigError(f"tags of channel {self.channel_id!r} are not strictly increasing")

    def __len__(self) -> int:
        return int(self.tags.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TagStream):
            return NotImplemented
        return (self.header() == other.header()
                and np.array_equal(self.tags, other.tags))

    @property
    def cycle_period_s(self) -> float:
        return self.trials_per_cycle * self.trial_period_s + self.cycle_dead_time_s

    @property
    def n_cycles(self) -> int:
        return -(-self.total_trials // self.trials_per_cycle)

    def trial_index(self, times=None) -> np.ndarray:
        """Global trial number of each tag (or of ``times``)."""
        t = self.tags if times is None else np.asarray(times, dtype=np.float64)
        cycle = np.floor(t / self.cycle_period_s)
        within = t - cycle * self.cycle_period_s
        trial = np.floor(within / self.trial_period_s)
        trial = np.minimum(trial, self.trials_per_cycle - 1)
        return (cycle * self.trials_per_cycle + trial).astype(np.int64)

    def trial_start(self, trial) -> np.ndarray:
        trial = np.asarray(trial, dtype=np.int64)
        cycle, within = np.divmod(trial, self.trials_per_cycle)
        return cycle * self.cycle_period_s + within * self.trial_period_s

    def detection_probability(self) -> float:
        """Fraction of trials with at least one tag."""
        if self.tags.size == 0:
            return 0.0
        return np.unique(self.trial_index()).size / self.total_trials

    def header(self) -> dict:
        return {
            "channel_id": self.channel_id,
            "species": self.species,
            "trial_period_s": float(self.trial_period_s),
            "storage_delay_s": float(self.storage_delay_s),
            "total_trials": int(self.total_trials),
            "trials_per_cycle": int(self.trials_per_cycle),
            "cycle_dead_time_s": float(self.cycle_dead_time_s),
            "gate_width_s": float(self.gate_width_s),
            "count": int(self.tags.size),
        }


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_stream(stream: TagStream, path) -> Path:
    path = Path(path)
    cid = stream.channel_id
    if "\n" in cid or "=" in cid:
        raise ConfigError(f"channel_id may not contain newlines or '=': {cid!r}")
    lines = [MAGIC] + [f"{k}={_format_value(v)}" for k, v in stream.header().items()] + ["END"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(stream.tags.astype("<f8").tobytes())
    return path


def read_stream(path) -> TagStream:
    path = Path(path)
    data = path.read_bytes()
    pos = 0
    values: dict[str, str] = {}

    def next_line(lineno):
        nonlocal pos
        end = data.find(b"\n", pos)
        if end < 0:
            raise StreamFormatError("truncated header", path=str(path), line=lineno, offset=pos)
        try:
            text = data[pos:end].decode("ascii")
        except UnicodeDecodeError:
            raise StreamFormatError("non-ASCII header", path=str(path), line=lineno, offset=pos) from None
        start = pos
        pos = end + 1
        return text, start

    text, start = next_line(1)
    if text != MAGIC:
        raise StreamFormatError(f"bad magic {text!r}", path=str(path), line=1, offset=start)
    for i, key in enumerate(HEADER_KEYS, start=2):
        text, start = next_line(i)
        k, sep, v = text.partition("=")
        if not sep or k != key:
            raise StreamFormatError(f"expected header key {key!r}, found {text!r}",
                                    path=str(path), line=i, offset=start)
        values[key] = v
    text, start = next_line(len(HEADER_KEYS) + 2)
    if text != "END":
        raise StreamFormatError(f"expected END, found {text!r}", path=str(path),
                                line=len(HEADER_KEYS) + 2, offset=start)

    def parse(key, kind, lineno):
        try:
            out = kind(values[key])
        except ValueError:
            raise StreamFormatError(f"cannot parse {key}={values[key]!r}", path=str(path),
                                    line=lineno) from None
        if kind is float and not math.isfinite(out):
            raise StreamFormatError(f"{key} is not finite", path=str(path), line=lineno)
        return out

    line_of = {k: i for i, k in enumerate(HEADER_KEYS, start=2)}
    count = parse("count", int, line_of["count"])
    payload = len(data) - pos
    if count < 0 or payload != 8 * count:
        raise StreamFormatError(f"header announces {count} records but {payload} bytes follow",
                                path=str(path), offset=pos)
    tags = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
    if count and not np.all(np.isfinite(tags)):
        bad = int(np.flatnonzero(~np.isfinite(tags))[0])
        raise StreamFormatError("non-finite timestamp", path=str(path), offset=pos + 8 * bad)
    if count > 1:
        d = np.diff(tags)
        if not np.all(d > 0):
            bad = int(np.flatnonzero(d <= 0)[0]) + 1
            raise StreamFormatError("timestamps not strictly increasing", path=str(path),
                                    offset=pos + 8 * bad)
    try:
        return TagStream(
            channel_id=values["channel_id"],
            tags=tags,
            total_trials=parse("total_trials", int, line_of["total_trials"]),
            trial_period_s=parse("trial_period_s", float, line_of["trial_period_s"]),
            storage_delay_s=parse("storage_delay_s", float, line_of["storage_delay_s"]),
            species=values["species"],
            trials_per_cycle=parse("trials_per_cycle", int, line_of["trials_per_cycle"]),
            cycle_dead_time_s=parse("cycle_dead_time_s", float, line_of["cycle_dead_time_s"]),
            gate_width_s=parse("gate_width_s", float, line_of["gate_width_s"]),
        )
    except StreamFormatError:
        raise
    except ConfigError as exc:
        raise StreamFormatError(str(exc), path=str(path)) from None
