from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memqfc.errors import ConfigError, StreamFormatError
from memqfc.streams import MAGIC, TagStream, read_stream, write_stream


def _stream(tags=(1e-7, 2e-6, 3.5e-6)):
    return TagStream("det1", np.array(tags), 10, 1.4e-6, 330e-9, "antistokes", 5, 20e-3, 40e-9)


def test_round_trip(tmp_path):
    s = _stream()
    p = write_stream(s, tmp_path / "a.tags")
    back = read_stream(p)
    assert back == s
    assert back.tags.tobytes() == s.tags.tobytes()
    assert p.read_bytes().startswith(MAGIC.encode() + b"\n")


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(min_value=0, max_value=1e3, allow_nan=False), max_size=50, unique=True))
def test_round_trip_any_tags(tmp_path_factory, tags):
    s = _stream(sorted(tags))
    p = write_stream(s, tmp_path_factory.mktemp("s") / "x.tags")
    assert read_stream(p) == s


def test_validation():
    with pytest.raises(ConfigError):
        _stream((2e-6, 1e-6))
    with pytest.raises(ConfigError):
        _stream((1e-6, 1e-6))
    with pytest.raises(ConfigError):
        TagStream("x", np.array([]), 0, 1.4e-6, 330e-9)
    with pytest.raises(ConfigError):
        TagStream("x", np.array([]), 10, 1.4e-6, 330e-9, species="idler")
    with pytest.raises(ConfigError):
        write_stream(TagStream("a=b", np.array([]), 10, 1.4e-6, 330e-9), "unused")


def test_trial_index():
    s = _stream()
    cyc = 5 * 1.4e-6 + 20e-3
    t = np.array([0.0, 1.5e-6, cyc + 1e-9, cyc + 4 * 1.4e-6 + 1e-9])
    assert s.trial_index(t).tolist() == [0, 1, 5, 9]
    assert np.allclose(s.trial_start([5, 9]), [cyc, cyc + 4 * 1.4e-6])
    assert s.n_cycles == 2
    assert s.detection_probability() == pytest.approx(3 / 10)


def _corrupt(tmp_path, edit):
    p = write_stream(_stream(), tmp_path / "c.tags")
    data = edit(p.read_bytes())
    p.write_bytes(data)
    with pytest.raises(StreamFormatError) as info:
        read_stream(p)
    return info.value


def test_bad_magic(tmp_path):
    err = _corrupt(tmp_path, lambda d: b"X" + d[1:])
    assert err.line == 1 and err.offset == 0


def test_bad_header_key(tmp_path):
    err = _corrupt(tmp_path, lambda d: d.replace(b"species=", b"kind=", 1))
    assert err.line == 3
    assert err.offset == len(MAGIC) + 1 + len("channel_id=det1\n")


def test_bad_number(tmp_path):
    err = _corrupt(tmp_path, lambda d: d.replace(b"total_trials=10", b"total_trials=1x", 1))
    assert err.line == 6


def test_truncated_payload(tmp_path):
    err = _corrupt(tmp_path, lambda d: d[:-3])
    header_len = len(_header_bytes(tmp_path))
    assert err.offset == header_len


def test_unsorted_payload(tmp_path):
    def swap(d):
        head = d[:-24]
        recs = np.frombuffer(d[-24:], dtype="<f8").copy()
        recs[[1, 2]] = recs[[2, 1]]
        return head + recs.tobytes()
    err = _corrupt(tmp_path, swap)
    header_len = len(_header_bytes(tmp_path))
    assert err.offset == header_len + 16


def test_nan_payload(tmp_path):
    def nan(d):
        recs = np.frombuffer(d[-24:], dtype="<f8").copy()
        recs[0] = np.nan
        return d[:-24] + recs.tobytes()
    err = _corrupt(tmp_path, nan)
    assert err.offset == len(_header_bytes(tmp_path))


def test_truncated_header(tmp_path):
    err = _corrupt(tmp_path, lambda d: d[:30])
    assert err.line is not None


def _header_bytes(tmp_path):
    p = write_stream(_stream(), tmp_path / "h.tags")
    d = p.read_bytes()
    return d[: d.index(b"END\n") + 4]
