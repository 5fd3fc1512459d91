"""Trial containers, dataset generation, manifests and time alignment.

A trial file holds several timestamped streams at different rates.  The
byte layout is described in FORMATS.md at the repository root.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import shutil
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .contact_sim import TACTILE_RATE_HZ, RawTrial, SkinType, simulate_trial, skin_config
from .palpation import (
    ACTION_RATE_HZ,
    TRIAL_DURATION_S,
    Primitive,
    Trajectory,
    action_grid,
    action_sequence,
    generate_trajectory,
)
from .preprocessing import FRAME_RATE_HZ, N_FRAMES, PREPROCESSING_VERSION, frame_times, pose_deltas
from .wave_objects import DEFAULT_GRID_RES, N_OBJECTS, build_catalog

MAGIC = b"TTRL"
FORMAT_VERSION = 1
CHUNK_SAMPLES = 1000
TEST_FRACTION = 0.25
CACHE_ENV = "TACTILE_CACHE_DIR"
MANIFEST_NAME = "manifest.json"

_PREFIX = struct.Struct("<4sHI")  # magic, version, header length
_CHUNK = struct.Struct("<I")

DESK_PROFILE = {
    "objects": (0, 4, 8, 12, 16, 20, 24, 29),
    "actions": (1, 6, 11, 16),
    "primitives": ("PRESSING", "PRECESSION", "SLIDING"),
    "skins": ("SOFT", "HARD"),
    "repeats": 1,
}


class TrialFormatError(ValueError):
    pass


class ChecksumError(TrialFormatError):
    pass


class VersionError(TrialFormatError):
    pass


class DiskSpaceError(OSError):
    pass


def cache_dir() -> str:
    """Default root for generated data; overridable through ``TACTILE_CACHE_DIR``."""
    return os.environ.get(CACHE_ENV) or os.path.join(os.path.expanduser("~"), ".cache", "tactile_perception")


# -- container ------------------------------------------------------------


@dataclass
class Stream:
    timestamps: np.ndarray  # float64 seconds, strictly increasing
    values: np.ndarray  # (n, *shape)
    rate_hz: float

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if self.timestamps.ndim != 1 or len(self.timestamps) != len(self.values):
            raise ValueError("one timestamp per sample is required")
        if len(self.timestamps) > 1 and not (np.diff(self.timestamps) > 0).all():
            raise ValueError("timestamps must be strictly increasing")


@dataclass
class TrialRecord:
    metadata: dict
    seeds: dict
    streams: dict  # name -> Stream, written in insertion order

    def __eq__(self, other):
        if not isinstance(other, TrialRecord):
            return NotImplemented
        if self.metadata != other.metadata or self.seeds != other.seeds:
            return False
        if list(self.streams) != list(other.streams):
            return False
        for k, s in self.streams.items():
            o = other.streams[k]
            if s.rate_hz != o.rate_hz or s.values.dtype != o.values.dtype:
                return False
            if s.timestamps.tobytes() != o.timestamps.tobytes() or s.values.tobytes() != o.values.tobytes():
                return False
            if s.values.shape != o.values.shape:
                return False
        return True


def _header(record: TrialRecord) -> dict:
    streams = []
    for name, s in record.streams.items():
        streams.append(
            {
                "name": name,
                "rate_hz": float(s.rate_hz),
                "shape": list(s.values.shape[1:]),
                "dtype": np.dtype(s.values.dtype).newbyteorder("<").str,
                "n_samples": int(len(s.values)),
                "chunk_samples": CHUNK_SAMPLES,
            }
        )
    return {"format_version": FORMAT_VERSION, "metadata": record.metadata, "seeds": record.seeds, "streams": streams}


def encode_trial(record: TrialRecord) -> bytes:
    header = json.dumps(_header(record), sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
    buf.write(header)
    for s in record.streams.values():
        le = s.values.dtype.newbyteorder("<")
        for start in range(0, len(s.values), CHUNK_SAMPLES):
            ts = s.timestamps[start : start + CHUNK_SAMPLES]
            buf.write(_CHUNK.pack(len(ts)))
            buf.write(ts.astype("<f8").tobytes())
            buf.write(np.ascontiguousarray(s.values[start : start + CHUNK_SAMPLES], dtype=le).tobytes())
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def decode_trial(data: bytes, expected_version: int = FORMAT_VERSION) -> TrialRecord:
    if len(data) < _PREFIX.size + 32:
        raise ChecksumError("file too short to hold a header and checksum")
    body, digest = data[:-32], data[-32:]
    magic, version, hlen = _PREFIX.unpack_from(body)
    if magic != MAGIC:
        raise TrialFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != expected_version:
        raise VersionError(f"trial file has format version {version}, reader expects version {expected_version}")
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checksum mismatch: trial file is corrupted or truncated")
    pos = _PREFIX.size
    header = json.loads(body[pos : pos + hlen])
    pos += hlen
    streams = {}
    for desc in header["streams"]:
        dt = np.dtype(desc["dtype"])
        shape = tuple(desc["shape"])
        per = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        ts_parts, val_parts = [], []
        remaining = desc["n_samples"]
        while remaining > 0:
            (n,) = _CHUNK.unpack_from(body, pos)
            pos += _CHUNK.size
            if n == 0 or n > remaining:
                raise TrialFormatError(f"stream {desc['name']}: chunk length {n} inconsistent with header")
            ts_parts.append(np.frombuffer(body, "<f8", n, pos))
            pos += 8 * n
            val_parts.append(np.frombuffer(body, dt, n * per // dt.itemsize, pos).reshape((n,) + shape))
            pos += n * per
            remaining -= n
        ts = np.concatenate(ts_parts) if ts_parts else np.zeros(0)
        vals = np.concatenate(val_parts) if val_parts else np.zeros((0,) + shape, dt)
        streams[desc["name"]] = Stream(ts.astype(np.float64), vals.astype(dt.newbyteorder("=")), desc["rate_hz"])
    if pos != len(body):
        raise TrialFormatError(f"{len(body) - pos} trailing bytes after the last stream")
    return TrialRecord(header["metadata"], header["seeds"], streams)


def write_trial(path: str, record: TrialRecord) -> str:
    """Atomically write ``record``; returns the sha256 of the file."""
    data = encode_trial(record)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return hashlib.sha256(data).hexdigest()


def read_trial(path: str, expected_version: int = FORMAT_VERSION) -> TrialRecord:
    with open(path, "rb") as fh:
        return decode_trial(fh.read(), expected_version)


def read_header(path: str) -> dict:
    with open(path, "rb") as fh:
        prefix = fh.read(_PREFIX.size)
        magic, version, hlen = _PREFIX.unpack(prefix)
        if magic != MAGIC:
            raise TrialFormatError(f"bad magic {magic!r}")
        return json.loads(fh.read(hlen))


# -- conversions ----------------------------------------------------------


def record_from_raw(raw: RawTrial, traj: Trajectory, seeds: dict) -> TrialRecord:
    n = raw.fsr.shape[0]
    t_tac = np.arange(n) / raw.tactile_rate
    acts = action_sequence(traj, ACTION_RATE_HZ)
    return TrialRecord(
        metadata=dict(raw.metadata),
        seeds=dict(seeds),
        streams={
            "fsr": Stream(t_tac, raw.fsr, raw.tactile_rate),
            "accel": Stream(t_tac, raw.accel, raw.tactile_rate),
            "pose": Stream(acts.times, acts.poses, ACTION_RATE_HZ),
        },
    )


def raw_from_record(record: TrialRecord) -> RawTrial:
    """Tactile streams as a :class:`RawTrial`; ``poses`` holds the action-rate stream."""
    return RawTrial(
        fsr=record.streams["fsr"].values,
        accel=record.streams["accel"].values,
        poses=record.streams["pose"].values,
        tactile_rate=record.streams["fsr"].rate_hz,
        metadata=dict(record.metadata),
    )


def time_align(action_times: np.ndarray, actions: np.ndarray, frame_t: np.ndarray, period: Optional[float] = None):
    """Zero-order hold of the most recent action sample at each frame time.

    Rejects streams whose sampling gaps, or whose distance to any frame,
    exceed two action periods.
    """
    action_times = np.asarray(action_times, dtype=float)
    actions = np.asarray(actions)
    frame_t = np.asarray(frame_t, dtype=float)
    if len(action_times) == 0:
        raise ValueError("empty action stream")
    if period is None:
        period = float(np.median(np.diff(action_times))) if len(action_times) > 1 else 1.0 / ACTION_RATE_HZ
    if len(action_times) > 1 and np.diff(action_times).max() > 2 * period:
        raise ValueError(f"action stream has a gap of {np.diff(action_times).max():.4g} s (> 2 periods)")
    if frame_t[0] < action_times[0]:
        raise ValueError("frames start before the first action sample")
    idx = np.searchsorted(action_times, frame_t, side="right") - 1
    stale = frame_t - action_times[idx]
    if stale.max() > 2 * period:
        raise ValueError(f"frame lies {stale.max():.4g} s after the last action sample (> 2 periods)")
    return actions[idx]


def trial_actions(record: TrialRecord, n_frames: int = N_FRAMES) -> np.ndarray:
    """Per-frame 6-D pose deltas aligned to the model frame clock."""
    pose = record.streams["pose"]
    aligned = time_align(pose.timestamps, pose.values, frame_times(n_frames, FRAME_RATE_HZ), 1.0 / pose.rate_hz)
    return pose_deltas(aligned)


# -- generation -----------------------------------------------------------


def trial_seed(base_seed: int, object_id: int, skin: str, primitive: str, action_index: int, repeat: int) -> int:
    """Counter-based per-trial seed: 63-bit BLAKE2b digest of the trial coordinates."""
    key = f"{base_seed}:{object_id}:{skin}:{primitive}:{action_index}:{repeat}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little") >> 1


@dataclass
class TrialEntry:
    index: int
    file: str
    object_id: int
    skin_type: str
    primitive: str
    action_index: int
    repeat: int
    seed: int
    split: str = "train"
    sha256: str = ""


@dataclass
class Manifest:
    dataset_id: str
    base_seed: int
    grid_res: int
    preprocessing_version: str
    test_fraction: float
    trials: list = field(default_factory=list)

    def to_json(self) -> str:
        d = {
            "dataset_id": self.dataset_id,
            "catalog": {"base_seed": self.base_seed, "grid_res": self.grid_res},
            "preprocessing_version": self.preprocessing_version,
            "split": {"test_fraction": self.test_fraction, "train_fraction": 1.0 - self.test_fraction},
            "trials": [vars(t) for t in self.trials],
        }
        return json.dumps(d, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        d = json.loads(text)
        return cls(
            dataset_id=d["dataset_id"],
            base_seed=d["catalog"]["base_seed"],
            grid_res=d["catalog"]["grid_res"],
            preprocessing_version=d["preprocessing_version"],
            test_fraction=d["split"]["test_fraction"],
            trials=[TrialEntry(**t) for t in d["trials"]],
        )

    def select(self, **criteria) -> list:
        return [t for t in self.trials if all(getattr(t, k) == v for k, v in criteria.items())]


def load_manifest(root: str) -> Manifest:
    with open(os.path.join(root, MANIFEST_NAME)) as fh:
        return Manifest.from_json(fh.read())


def assign_splits(entries: Sequence[TrialEntry], test_fraction: float = TEST_FRACTION, seed: int = 0) -> None:
    """Deterministic stratified split.

    Within every (skin, primitive, object) cell a seeded shuffle sends
    ``round(test_fraction * n)`` trials to the test split, so any slice by
    skin and primitive keeps the ratio and covers every object.
    """
    cells = {}
    for e in entries:
        cells.setdefault((e.skin_type, e.primitive, e.object_id), []).append(e)
    for key, members in sorted(cells.items()):
        members = sorted(members, key=lambda e: e.index)
        digest = hashlib.blake2b(f"{seed}:{key}".encode(), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        n_test = int(round(test_fraction * len(members)))
        test = set(rng.permutation(len(members))[:n_test].tolist())
        for i, e in enumerate(members):
            e.split = "test" if i in test else "train"


def plan_trials(objects, skins, primitives, actions, repeats: int, base_seed: int) -> list:
    entries = []
    for obj in objects:
        if not 0 <= obj < N_OBJECTS:
            raise ValueError(f"object id {obj} outside the catalog")
        for skin in skins:
            SkinType[skin]
            for prim in primitives:
                Primitive[prim]
                for a in actions:
                    if not 1 <= a <= 16:
                        raise ValueError(f"action index {a} outside 1..16")
                    for r in range(repeats):
                        i = len(entries)
                        seed = trial_seed(base_seed, obj, skin, prim, a, r)
                        entries.append(TrialEntry(i, f"trials/trial_{i:05d}.ttr", obj, skin, prim, a, r, seed))
    return entries


def trial_nbytes(duration: float = TRIAL_DURATION_S) -> int:
    """Upper bound of one trial file's size, used for the disk precheck."""
    n_tac = int(round(duration * TACTILE_RATE_HZ))
    n_act = int(round(duration * ACTION_RATE_HZ))
    payload = n_tac * (16 * 16 * 2 + 4 * 4 * 3) * 4 + n_act * 6 * 8
    stamps = (n_tac * 2 + n_act) * (8 + 4)
    return payload + stamps + 4096


def check_disk_space(root: str, n_trials: int, duration: float = TRIAL_DURATION_S) -> None:
    need = int(n_trials * trial_nbytes(duration) * 1.05)
    probe = root
    while not os.path.exists(probe):
        probe = os.path.dirname(os.path.abspath(probe))
    free = shutil.disk_usage(probe).free
    if free < need:
        raise DiskSpaceError(f"dataset needs about {need / 1e9:.2f} GB but only {free / 1e9:.2f} GB are free at {probe}")


def generate_dataset(
    out_dir: str,
    objects: Iterable[int] = DESK_PROFILE["objects"],
    skins: Iterable[str] = DESK_PROFILE["skins"],
    primitives: Iterable[str] = DESK_PROFILE["primitives"],
    actions: Iterable[int] = DESK_PROFILE["actions"],
    repeats: int = 1,
    base_seed: int = 0,
    grid_res: int = DEFAULT_GRID_RES,
    duration: float = TRIAL_DURATION_S,
    test_fraction: float = TEST_FRACTION,
    progress=None,
) -> Manifest:
    """Simulate the full factorial and write one file per trial plus a manifest."""
    entries = plan_trials(list(objects), list(skins), list(primitives), list(actions), repeats, base_seed)
    check_disk_space(out_dir, len(entries), duration)
    os.makedirs(os.path.join(out_dir, "trials"), exist_ok=True)
    assign_splits(entries, test_fraction, base_seed)
    catalog = build_catalog(base_seed, grid_res)
    grids = {p: action_grid(Primitive[p]) for p in set(e.primitive for e in entries)}
    skins_cfg = {s: skin_config(SkinType[s]) for s in set(e.skin_type for e in entries)}
    for e in entries:
        params = grids[e.primitive][e.action_index - 1]
        traj = generate_trajectory(params, duration)
        raw = simulate_trial(catalog[e.object_id], skins_cfg[e.skin_type], traj, e.seed, params)
        record = record_from_raw(raw, traj, {"base_seed": base_seed, "trial_seed": e.seed})
        record.metadata["repeat"] = e.repeat
        e.sha256 = write_trial(os.path.join(out_dir, e.file), record)
        if progress is not None:
            progress(e)
    h = hashlib.sha256()
    for e in entries:
        h.update(e.sha256.encode())
    manifest = Manifest(
        dataset_id=h.hexdigest()[:16],
        base_seed=base_seed,
        grid_res=grid_res,
        preprocessing_version=PREPROCESSING_VERSION,
        test_fraction=test_fraction,
        trials=entries,
    )
    tmp = os.path.join(out_dir, MANIFEST_NAME + ".tmp")
    with open(tmp, "w") as fh:
        fh.write(manifest.to_json())
    os.replace(tmp, os.path.join(out_dir, MANIFEST_NAME))
    return manifest
