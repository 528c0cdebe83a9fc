import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rgbtkit.dataset import (ENVIRONMENTS, FramePair, DatasetManifest, SequenceRecord, dataset_stats,
                             format_stats_table, load_manifest, manifest_from_dict, pair_by_timestamp,
                             position_at, save_manifest, sequence_pairs, subsample_1hz)
from rgbtkit.errors import ValidationError
from rgbtkit.thermalproc import FfcEvent

S = 1_000_000_000
MS = 1_000_000


# ---- pairing ------------------------------------------------------------------

def test_pair_identical_streams():
    ts = [0, 33 * MS, 66 * MS, 100 * MS]
    pairs = pair_by_timestamp(ts, ts, 5 * MS)
    assert pairs == [FramePair(i, i, 0) for i in range(4)]


def test_pair_hand_example():
    pairs = pair_by_timestamp([0, 100 * MS, 200 * MS], [4 * MS, 103 * MS, 350 * MS], 10 * MS)
    assert [(p.rgb_index, p.thermal_index) for p in pairs] == [(0, 0), (1, 1)]
    assert [p.dt_ns for p in pairs] == [4 * MS, 3 * MS]


def test_pair_zero_tolerance_offset_streams():
    assert pair_by_timestamp([0, 10, 20], [1, 11, 21], 0) == []


def test_pair_each_frame_used_once():
    # both rgb frames are nearest to thermal 10; the closer one wins it
    pairs = pair_by_timestamp([8, 13], [10, 30], 5)
    assert [(p.rgb_index, p.thermal_index) for p in pairs] == [(0, 0)]


def test_pair_rejects_unsorted():
    with pytest.raises(ValidationError):
        pair_by_timestamp([5, 1], [1, 2], 1)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 2000), unique=True, max_size=30),
       st.lists(st.integers(0, 2000), unique=True, max_size=30), st.integers(0, 60))
def test_pair_symmetric(a, b, tol):
    a, b = sorted(a), sorted(b)
    ab = {(p.rgb_index, p.thermal_index) for p in pair_by_timestamp(a, b, tol)}
    ba = {(p.thermal_index, p.rgb_index) for p in pair_by_timestamp(b, a, tol)}
    assert ab == ba
    for i, j in ab:
        assert abs(a[i] - b[j]) <= tol


# ---- subsampling ----------------------------------------------------------------------

def stream(hz, seconds, t0=0):
    n = int(hz * seconds)
    return [t0 + round(i * S / hz) for i in range(n)]


def test_subsample_30hz():
    ts = stream(30, 10)
    assert len(ts) == 300
    out = subsample_1hz(ts)
    assert len(out) in (10, 11)
    gaps = np.diff(out)
    assert (np.abs(gaps - S) <= S / 30 + 1).all()


def test_subsample_already_1hz_unchanged():
    ts = [7 * S + k * S for k in range(12)]
    assert subsample_1hz(ts) == ts


def test_subsample_single_and_empty():
    assert subsample_1hz([(("a.pgm"), 5)]) == [("a.pgm", 5)]
    assert subsample_1hz([]) == []


def test_subsample_keeps_tuples():
    frames = [(f"{i}.pgm", t) for i, t in enumerate(stream(10, 3))]
    out = subsample_1hz(frames)
    assert out == [frames[0], frames[10], frames[20]]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, S // 2), min_size=1, max_size=80))
def test_subsample_gaps_at_least_half_second(gaps):
    ts = list(np.cumsum([0] + gaps))
    out = subsample_1hz(ts)
    assert all(b - a >= S // 2 for a, b in zip(out, out[1:]))
    assert out == sorted(set(out))


# ---- stats -----------------------------------------------------------------------------

def synced_seq(name, env, seconds, hz=30, ffc=(), t0=0):
    ts = stream(hz, seconds, t0)
    return SequenceRecord(name, env, rgb=[(f"r{i}", t) for i, t in enumerate(ts)],
                          thermal=[(f"t{i}", t) for i, t in enumerate(ts)], ffc=list(ffc))


def test_stats_empty_manifest():
    st_ = dataset_stats(DatasetManifest("empty", []))
    assert st_["total"] == 0 and all(v == 0 for v in st_["per_environment"].values())


def test_stats_two_sequences():
    m = DatasetManifest("two", [synced_seq("a", "indoor", 5), synced_seq("b", "offroad", 7)])
    st_ = dataset_stats(m)
    assert st_["per_environment"]["indoor"] == 5
    assert st_["per_environment"]["offroad"] == 7
    assert st_["total"] == 12 == sum(st_["per_environment"].values())
    assert st_["fractions"]["indoor"] == pytest.approx(5 / 12)
    table = format_stats_table(st_)
    assert "indoor" in table and table.splitlines()[-1].split()[:2] == ["total", "12"]


def test_stats_sequence_inside_ffc():
    seq = synced_seq("a", "urban-park", 3, ffc=[FfcEvent(-S, 4 * S)])
    assert dataset_stats(DatasetManifest("x", [seq]))["total"] == 0


def test_stats_planted_ffc_hand_count():
    # 1 Hz grid at 0..9 s; event [3.2 s, 4.5 s] with 100 ms guard removes slot 4 only
    seq = synced_seq("a", "indoor", 10, ffc=[FfcEvent(int(3.2 * S), int(4.5 * S))])
    assert len(sequence_pairs(seq)) == 9


def test_stats_unsynced_thermal_offset():
    ts = stream(30, 4)
    seq = SequenceRecord("a", "urban-drive", rgb=[("r", t) for t in ts],
                         thermal=[("t", t + 20 * MS) for t in ts], synced=False)
    assert len(sequence_pairs(seq)) == 4  # within the 50 ms unsynced default
    assert len(sequence_pairs(seq, tol_ns=10 * MS)) == 0


# ---- positions ---------------------------------------------------------------------------

def seq_with_positions():
    return SequenceRecord("p", "offroad", positions=[(0, 0.0, 0.0, 0.0), (2 * S, 4.0, 0.0, 0.0)],
                          position_kind="odometric")


def test_position_at_samples_and_midpoint():
    s = seq_with_positions()
    np.testing.assert_array_equal(position_at(s, 2 * S), [4.0, 0.0, 0.0])
    np.testing.assert_array_equal(position_at(s, 0), [0.0, 0.0, 0.0])
    np.testing.assert_array_equal(position_at(s, S), [2.0, 0.0, 0.0])


def test_position_at_boundaries():
    s = seq_with_positions()
    assert position_at(s, 2 * S + 500 * MS) is not None
    assert position_at(s, 2 * S + 501 * MS) is None
    assert position_at(s, -501 * MS) is None
    assert position_at(SequenceRecord("n", "indoor"), 0) is None


# ---- manifest ---------------------------------------------------------------------------------

def test_manifest_round_trip(tmp_path):
    m = DatasetManifest("rt", [synced_seq("a", "indoor", 1, ffc=[FfcEvent(1, 2)]), seq_with_positions()])
    save_manifest(m, tmp_path / "m.json")
    back = load_manifest(tmp_path / "m.json")
    assert back.to_dict() == m.to_dict()


@pytest.mark.parametrize("mutate", [
    lambda d: d.update(schema=2),
    lambda d: d["sequences"].append(dict(d["sequences"][0])),
    lambda d: d["sequences"][0].update(environment="space"),
    lambda d: d["sequences"][0]["rgb"].reverse(),
    lambda d: d["sequences"][0].update(ffc=[{"start_ns": 5, "end_ns": 1}]),
])
def test_manifest_validation_errors(mutate):
    d = DatasetManifest("v", [synced_seq("a", "indoor", 1)]).to_dict()
    mutate(d)
    with pytest.raises(ValidationError):
        manifest_from_dict(d).validate()


def test_manifest_missing_files(tmp_path):
    save_manifest(DatasetManifest("f", [synced_seq("a", "indoor", 1)]), tmp_path / "m.json")
    load_manifest(tmp_path / "m.json")
    with pytest.raises(ValidationError):
        load_manifest(tmp_path / "m.json", check_files=True)


def test_environment_enum_mirrors_table_columns():
    assert ENVIRONMENTS == ("indoor", "offroad", "aerial", "urban-drive", "urban-park")
