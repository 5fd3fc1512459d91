"""Palpation primitives: closed-form end-effector trajectories and action grids."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

POSE_AXES = ("x", "y", "z", "roll", "pitch", "yaw")  # mm, mm, mm, deg, deg, deg
TRAJECTORY_RATE_HZ = 700.0
ACTION_RATE_HZ = 100.0
TRIAL_DURATION_S = 10.0
INITIAL_INDENTATION_MM = 1.0
SKIN_RADIUS_MM = 25.0

_AMP_LEVELS = {
    "PRESSING": (2.0, 4.0, 6.0, 8.0),
    "PRECESSION": (3.0, 4.0, 5.0, 6.0),
    "SLIDING": (2.0, 4.0, 6.0, 8.0),
}
_YAW_LEVELS = (3.0, 4.0, 5.0, 6.0)
_FREQ_LEVELS = (0.2, 0.4, 0.6, 0.8)


class Primitive(enum.IntEnum):
    PRESSING = 0
    PRECESSION = 1
    SLIDING = 2


@dataclass(frozen=True)
class Pose:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.as_array()):
            raise ValueError("pose components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.roll, self.pitch, self.yaw])


@dataclass(frozen=True)
class ActionParams:
    """Amplitudes and frequencies keyed by pose axis name.

    Precession amplitudes are kept in the table's millimetre units; see
    :func:`precession_angle_deg` for the conversion applied when a
    trajectory is generated.
    """

    primitive: Primitive
    amplitudes: dict = field(hash=False)
    frequencies: dict = field(hash=False)
    action_index: int = 0

    def key(self) -> tuple:
        return (
            int(self.primitive),
            tuple(sorted(self.amplitudes.items())),
            tuple(sorted(self.frequencies.items())),
        )


@dataclass
class Trajectory:
    """Pose displacements from ``reference`` sampled at ``rate_hz``.

    ``samples[:, k]`` is axis ``POSE_AXES[k]``; the absolute pose is
    ``reference + samples``.  The reference sits ``INITIAL_INDENTATION_MM``
    below first contact.
    """

    samples: np.ndarray
    rate_hz: float
    reference: Pose = field(default_factory=Pose)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.rate_hz

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.samples)) / self.rate_hz


@dataclass
class ActionSequence:
    times: np.ndarray
    poses: np.ndarray  # (n, 6) absolute poses
    rate_hz: float


def precession_angle_deg(amplitude_mm: float) -> float:
    """Tilt angle whose lever-arm displacement at the skin rim is ``amplitude_mm``."""
    return math.degrees(math.atan2(amplitude_mm, SKIN_RADIUS_MM))


def action_grid(primitive: Primitive) -> list[ActionParams]:
    primitive = Primitive(primitive)
    amps = _AMP_LEVELS[primitive.name]
    out = []
    for idx in range(16):
        a_lvl, f_lvl = divmod(idx, 4)
        amp, freq = amps[a_lvl], _FREQ_LEVELS[f_lvl]
        if primitive is Primitive.PRESSING:
            amplitudes, freqs = {"z": amp}, {"z": freq}
        elif primitive is Primitive.PRECESSION:
            amplitudes, freqs = {"roll": amp, "pitch": amp}, {"roll": freq, "pitch": freq}
        else:
            amplitudes = {"x": amp, "y": amp, "yaw": _YAW_LEVELS[a_lvl]}
            freqs = {"x": freq, "y": freq, "yaw": freq}
        out.append(ActionParams(primitive, amplitudes, freqs, idx + 1))
    return out


def closed_form(params: ActionParams, t: np.ndarray) -> np.ndarray:
    """Displacement of every pose axis at times ``t``; undriven axes are zero."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape + (6,))
    A, w = params.amplitudes, params.frequencies
    prim = Primitive(params.primitive)
    if prim is Primitive.PRESSING:
        out[..., 2] = A["z"] * np.cos(2 * np.pi * w["z"] * t + np.pi)
    elif prim is Primitive.PRECESSION:
        out[..., 3] = precession_angle_deg(A["roll"]) * np.sin(2 * np.pi * w["roll"] * t + np.pi / 2)
        out[..., 4] = precession_angle_deg(A["pitch"]) * np.sin(2 * np.pi * w["pitch"] * t)
    else:
        out[..., 0] = A["x"] * np.sin(2 * np.pi * w["x"] * t)
        out[..., 1] = A["y"] * np.sin(2 * np.pi * w["y"] * t)
        out[..., 5] = A["yaw"] * np.sin(2 * np.pi * w["yaw"] * t)
    return out


def generate_trajectory(
    params: ActionParams,
    duration: float = TRIAL_DURATION_S,
    rate_hz: float = TRAJECTORY_RATE_HZ,
    reference: Pose | None = None,
) -> Trajectory:
    if duration <= 0:
        raise ValueError("duration must be positive")
    fmax = max(params.frequencies.values())
    if rate_hz <= 2 * fmax:
        raise ValueError(f"rate {rate_hz} Hz aliases a {fmax} Hz motion (needs > {2 * fmax} Hz)")
    n = int(round(duration * rate_hz))
    t = np.arange(n) / rate_hz
    return Trajectory(closed_form(params, t), rate_hz, reference or Pose())


def action_sequence(traj: Trajectory, action_rate: float = ACTION_RATE_HZ) -> ActionSequence:
    """Absolute pose stream resampled to ``action_rate``.

    When the rates divide evenly this is exact decimation; otherwise poses
    are linearly interpolated.
    """
    if action_rate > traj.rate_hz:
        raise ValueError("action_rate cannot exceed the trajectory rate")
    n = int(round(traj.duration * action_rate))
    times = np.arange(n) / action_rate
    ratio = traj.rate_hz / action_rate
    absolute = traj.samples + traj.reference.as_array()
    if abs(ratio - round(ratio)) < 1e-12:
        poses = absolute[:: int(round(ratio))][:n].copy()
    else:
        src = traj.times
        poses = np.stack([np.interp(times, src, absolute[:, k]) for k in range(6)], axis=1)
    return ActionSequence(times, poses, action_rate)
