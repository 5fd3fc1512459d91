import hashlib
import json
import os
import struct

import numpy as np
import pytest

from tactile_perception import dataset_io as dio
from tactile_perception.dataset_io import Stream, TrialRecord

GOLDEN_SHA256 = "ece93ed5b1cb751910bb5a34f5a4cc0b9ba77551cf3cfd4528a7ae68d0b9f7e9"


def golden_record():
    t = np.arange(5) / 10.0
    return TrialRecord(
        {"object_id": 3, "skin_type": "SOFT"},
        {"trial_seed": 42},
        {
            "a": Stream(t, np.arange(10, dtype=np.float32).reshape(5, 2), 10.0),
            "b": Stream(t[:3], np.array([1, 2, 3], dtype=np.int16), 5.0),
        },
    )


def random_record(seed=0, n=2500):
    rng = np.random.default_rng(seed)
    t = np.arange(n) / 700.0
    return TrialRecord(
        {"object_id": 7, "skin_type": "HARD", "primitive": "SLIDING", "action_index": 3, "seed": 11},
        {"base_seed": 0, "trial_seed": 11},
        {
            "fsr": Stream(t, rng.random((n, 16, 16, 2), dtype=np.float32), 700.0),
            "accel": Stream(t, rng.standard_normal((n, 4, 4, 3)).astype(np.float32), 700.0),
            "pose": Stream(np.arange(n // 7) / 100.0, rng.standard_normal((n // 7, 6)), 100.0),
        },
    )


def test_golden_bytes():
    data = dio.encode_trial(golden_record())
    assert hashlib.sha256(data).hexdigest() == GOLDEN_SHA256
    magic, version, hlen = struct.unpack_from("<4sHI", data)
    assert (magic, version) == (b"TTRL", 1)
    header = json.loads(data[10 : 10 + hlen])
    assert [s["name"] for s in header["streams"]] == ["a", "b"]
    assert header["streams"][0]["dtype"] == "<f4"
    # first chunk: sample count, then little-endian timestamps, then values
    pos = 10 + hlen
    assert struct.unpack_from("<I", data, pos)[0] == 5
    assert np.array_equal(np.frombuffer(data, "<f8", 5, pos + 4), np.arange(5) / 10.0)
    assert data[-32:] == hashlib.sha256(data[:-32]).digest()


def test_round_trip(tmp_path):
    rec = random_record()
    path = str(tmp_path / "t.ttr")
    digest = dio.write_trial(path, rec)
    with open(path, "rb") as fh:
        assert hashlib.sha256(fh.read()).hexdigest() == digest
    back = dio.read_trial(path)
    assert back == rec
    for k in rec.streams:
        assert back.streams[k].timestamps.tobytes() == rec.streams[k].timestamps.tobytes()
        assert back.streams[k].values.tobytes() == rec.streams[k].values.tobytes()
    assert dio.read_header(path)["metadata"]["object_id"] == 7
    assert not os.path.exists(path + ".tmp")


def test_corruption_detected(tmp_path):
    data = bytearray(dio.encode_trial(random_record(1, 800)))
    for pos in (20, len(data) // 2, len(data) - 40):
        bad = bytearray(data)
        bad[pos] ^= 0x01
        with pytest.raises(dio.TrialFormatError):
            dio.decode_trial(bytes(bad))
    bad = bytearray(data)
    bad[len(data) // 2] ^= 0xFF
    with pytest.raises(dio.ChecksumError):
        dio.decode_trial(bytes(bad))
    with pytest.raises(dio.ChecksumError):
        dio.decode_trial(bytes(data[:-100]))
    with pytest.raises(dio.ChecksumError):
        dio.decode_trial(bytes(data[:20]))


def test_version_mismatch_names_both():
    data = dio.encode_trial(golden_record())
    with pytest.raises(dio.VersionError, match="version 1.*version 2"):
        dio.decode_trial(data, expected_version=2)
    with pytest.raises(dio.TrialFormatError, match="magic"):
        dio.decode_trial(b"XXXX" + data[4:])


def test_stream_validation():
    with pytest.raises(ValueError, match="increasing"):
        Stream(np.array([0.0, 0.0, 1.0]), np.zeros(3), 1.0)
    with pytest.raises(ValueError, match="one timestamp"):
        Stream(np.arange(3.0), np.zeros(4), 1.0)


def test_time_align_constant_and_step():
    at = np.arange(1000) / 100.0
    const = np.tile([1.0, 2, 3, 4, 5, 6], (1000, 1))
    ft = np.arange(300) / 30.0
    assert np.all(dio.time_align(at, const, ft) == const[0])
    step = np.where(at[:, None] >= 5.0, 1.0, 0.0) * np.ones((1, 6))
    out = dio.time_align(at, step, ft)
    first = np.flatnonzero(ft >= 5.0)[0]
    assert np.all(out[:first] == 0) and np.all(out[first:] == 1)


def test_time_align_ramp_bound():
    at = np.arange(1000) / 100.0
    slope = 3.7
    out = dio.time_align(at, slope * at[:, None], np.arange(300) / 30.0)
    err = np.abs(out[:, 0] - slope * np.arange(300) / 30.0)
    assert err.max() <= slope * 0.01 + 1e-12


def test_time_align_rejects_gaps():
    at = np.r_[np.arange(100), np.arange(103, 200)] / 100.0
    with pytest.raises(ValueError, match="gap"):
        dio.time_align(at, np.zeros((len(at), 6)), np.arange(50) / 30.0, period=0.01)
    at = np.arange(100) / 100.0
    with pytest.raises(ValueError, match="after the last"):
        dio.time_align(at, np.zeros((100, 6)), np.array([0.5, 1.5]))
    with pytest.raises(ValueError, match="before"):
        dio.time_align(at + 1.0, np.zeros((100, 6)), np.array([0.5]))


def test_factorial_counts():
    full = dio.plan_trials(range(32), ["SOFT"], ["PRESSING", "PRECESSION", "SLIDING"], range(1, 17), 1, 0)
    assert len(full) == 1536
    p = dio.DESK_PROFILE
    desk = dio.plan_trials(p["objects"], p["skins"], p["primitives"], p["actions"], 1, 0)
    assert len(desk) == 192
    with pytest.raises(ValueError):
        dio.plan_trials([32], ["SOFT"], ["PRESSING"], [1], 1, 0)
    with pytest.raises(ValueError):
        dio.plan_trials([0], ["SOFT"], ["PRESSING"], [17], 1, 0)
    with pytest.raises(KeyError):
        dio.plan_trials([0], ["MEDIUM"], ["PRESSING"], [1], 1, 0)


def test_seed_injectivity():
    p = dio.DESK_PROFILE
    for base in (0, 1):
        entries = dio.plan_trials(p["objects"], p["skins"], p["primitives"], p["actions"], 3, base)
        seeds = [e.seed for e in entries]
        assert len(set(seeds)) == len(seeds)
        assert all(0 <= s < 2**63 for s in seeds)
    a = dio.plan_trials(range(32), ["SOFT", "HARD"], ["PRESSING", "PRECESSION", "SLIDING"], range(1, 17), 1, 0)
    b = dio.plan_trials(range(32), ["SOFT", "HARD"], ["PRESSING", "PRECESSION", "SLIDING"], range(1, 17), 1, 1)
    assert len({e.seed for e in a} | {e.seed for e in b}) == 2 * len(a)


def test_split_partition_and_stratification():
    entries = dio.plan_trials(range(32), ["SOFT"], ["PRESSING"], range(1, 17), 1, 0)
    dio.assign_splits(entries, 0.25, seed=0)
    test = [e for e in entries if e.split == "test"]
    assert {e.split for e in entries} == {"train", "test"}
    assert len(test) == len(entries) // 4
    for oid in range(32):
        assert sum(1 for e in test if e.object_id == oid) == 4
    again = dio.plan_trials(range(32), ["SOFT"], ["PRESSING"], range(1, 17), 1, 0)
    dio.assign_splits(again, 0.25, seed=0)
    assert [e.split for e in again] == [e.split for e in entries]


def test_manifest_json_round_trip():
    entries = dio.plan_trials([0, 4], ["SOFT"], ["PRESSING"], [1, 6, 11, 16], 1, 0)
    dio.assign_splits(entries)
    m = dio.Manifest("abc", 0, 200, "pp-1", 0.25, entries)
    text = m.to_json()
    back = dio.Manifest.from_json(text)
    assert back.to_json() == text
    d = json.loads(text)
    assert d["split"]["test_fraction"] + d["split"]["train_fraction"] == 1.0
    assert len(back.select(object_id=4, split="test")) == 1


def test_disk_precheck(tmp_path, monkeypatch):
    import shutil
    from collections import namedtuple

    usage = namedtuple("usage", "total used free")
    monkeypatch.setattr(shutil, "disk_usage", lambda p: usage(10, 10, 1000))
    with pytest.raises(dio.DiskSpaceError, match="GB"):
        dio.generate_dataset(str(tmp_path / "ds"), objects=[0], skins=["SOFT"], primitives=["PRESSING"], actions=[1])
    assert not os.path.exists(tmp_path / "ds")


def test_cache_dir_env(monkeypatch, tmp_path):
    monkeypatch.setenv(dio.CACHE_ENV, str(tmp_path))
    assert dio.cache_dir() == str(tmp_path)


def test_small_dataset_deterministic(tmp_path):
    kw = dict(objects=[0, 12], skins=["SOFT"], primitives=["PRESSING"], actions=[1, 16], grid_res=100, duration=1.0)
    m1 = dio.generate_dataset(str(tmp_path / "a"), **kw)
    m2 = dio.generate_dataset(str(tmp_path / "b"), **kw)
    assert m1.to_json() == m2.to_json()
    assert len(m1.trials) == 4
    rec = dio.read_trial(os.path.join(str(tmp_path / "a"), m1.trials[0].file))
    assert rec.streams["fsr"].values.shape == (700, 16, 16, 2)
    assert rec.streams["pose"].values.shape == (100, 6)
    assert rec.metadata["seed"] == m1.trials[0].seed
    raw = dio.raw_from_record(rec)
    assert raw.tactile_rate == 700.0 and raw.accel.shape == (700, 4, 4, 3)
    acts = dio.trial_actions(rec, n_frames=30)
    assert acts.shape == (30, 6) and not acts[0].any()
