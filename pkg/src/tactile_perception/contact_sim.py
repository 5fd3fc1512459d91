"""Simulated e-Skin: two 16x16 FSR layers and a 4x4 grid of 3-axis accelerometers.

Normal force per taxel follows a Kelvin-Voigt series-spring contact between
the skin and the object surface.  The deeper FSR layer sees a laterally
smeared, low-passed copy of the top layer, shifted under tangential motion.
Accelerometers pick up texture vibration while sliding (temporal frequency =
speed x surface spatial frequency), contact micro-slip bursts whose
intensity follows the rate of load change, ringing at a stiffness-dependent
contact resonance, and white noise, all behind a skin-dependent mechanical low-pass.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, signal

from .palpation import INITIAL_INDENTATION_MM, ActionParams, Trajectory
from .wave_objects import HeightMap, MaterialParams, ObjectSpec

TACTILE_RATE_HZ = 700.0
N_TAXEL = 16
N_NODE = 4
SKIN_WIDTH_MM = 50.0
SKIN_THICKNESS_MM = 5.0
OBJECT_THICKNESS_MM = 30.0
FSR_NOISE_N = 0.01
ACCEL_NOISE = 0.05  # m/s^2
DEEP_LAYER_SMEAR_MM = 4.0
DEEP_LAYER_TAU_S = 0.015
MAX_SHEAR_SHIFT_TAXELS = 2.0

# Frozen output of tools/shore_modulus_oracle.py (Ecoflex 00-31, Dragonskin 30A).
SKIN_MODULUS_PA = {"SOFT": 1.076715e5, "HARD": 1.142372e6}

_TEXTURE_GAIN = 1.5  # m/s^2 at full contact and reference speed
_TEXTURE_REF_SPEED = 10.0  # mm/s
_TRANSIENT_GAIN = 1.0  # m/s^2 per N/s of node load rate, before resonance
_RESONANCE_REF_HZ = 30.0
_RESONANCE_REF_STIFFNESS = 10.0  # N/m
_RESONANCE_RANGE_HZ = (10.0, 250.0)
_LOWPASS_REF_HZ = 40.0  # soft-skin cutoff
_REF_OMEGA = 2 * np.pi  # rad/s, loss-factor reference frequency


class SkinType(enum.IntEnum):
    SOFT = 0
    HARD = 1


def _grid_positions(n: int, width: float) -> np.ndarray:
    pitch = width / n
    c = (np.arange(n) + 0.5) * pitch - width / 2.0
    xx, yy = np.meshgrid(c, c)  # row index ~ y, column index ~ x
    return np.stack([xx, yy], axis=-1)


@dataclass(frozen=True)
class SkinConfig:
    skin_type: SkinType
    bulk_modulus: float  # Pa
    fsr_positions: np.ndarray = field(repr=False)  # (16, 16, 2) mm
    accel_positions: np.ndarray = field(repr=False)  # (4, 4, 2) mm
    inter_layer_depth: float  # mm
    contact_radius: float  # mm
    damping: float  # N s/m per taxel
    fsr_noise_std: float
    accel_noise_std: float
    thickness: float = SKIN_THICKNESS_MM
    shear_gain: float = 0.5  # taxels of deep-layer shift per taxel of travel
    accel_cutoff_hz: float = _LOWPASS_REF_HZ

    @property
    def taxel_pitch(self) -> float:
        return SKIN_WIDTH_MM / N_TAXEL

    @property
    def taxel_stiffness(self) -> float:
        """Per-taxel spring constant of the skin (N/m)."""
        area = (self.taxel_pitch * 1e-3) ** 2
        return self.bulk_modulus * area / (self.thickness * 1e-3)


def skin_config(skin_type: SkinType) -> SkinConfig:
    skin_type = SkinType(skin_type)
    modulus = SKIN_MODULUS_PA[skin_type.name]
    soft = skin_type is SkinType.SOFT
    return SkinConfig(
        skin_type=skin_type,
        bulk_modulus=modulus,
        fsr_positions=_grid_positions(N_TAXEL, SKIN_WIDTH_MM),
        accel_positions=_grid_positions(N_NODE, SKIN_WIDTH_MM),
        inter_layer_depth=2.0,
        contact_radius=SKIN_WIDTH_MM / 2.0,
        damping=0.2 if soft else 0.1,
        fsr_noise_std=FSR_NOISE_N,
        accel_noise_std=ACCEL_NOISE,
        shear_gain=0.5 if soft else 0.15,
        # stiffer silicone passes higher frequencies, cutoff ~ sqrt(modulus)
        accel_cutoff_hz=_LOWPASS_REF_HZ * np.sqrt(modulus / SKIN_MODULUS_PA["SOFT"]),
    )


@dataclass
class RawTrial:
    fsr: np.ndarray  # (T, 16, 16, 2) N, float32
    accel: np.ndarray  # (T, 4, 4, 3) m/s^2, float32
    poses: np.ndarray  # (T, 6) absolute end-effector pose at the tactile rate
    tactile_rate: float
    metadata: dict

    @property
    def duration(self) -> float:
        return self.accel.shape[0] / self.tactile_rate


def object_taxel_stiffness(material: MaterialParams, taxel_pitch_mm: float) -> float:
    """Per-taxel spring constant of the object column under one taxel (N/m)."""
    area = (taxel_pitch_mm * 1e-3) ** 2
    if material.top_layer_modulus is None:
        return material.young_modulus * area / (OBJECT_THICKNESS_MM * 1e-3)
    t_top = material.top_layer_thickness * 1e-3
    t_bulk = OBJECT_THICKNESS_MM * 1e-3 - t_top
    compliance = t_top / (material.top_layer_modulus * area) + t_bulk / (material.young_modulus * area)
    return 1.0 / compliance


def effective_stiffness(skin: SkinConfig, material: MaterialParams) -> float:
    k_s = skin.taxel_stiffness
    k_o = object_taxel_stiffness(material, skin.taxel_pitch)
    return k_s * k_o / (k_s + k_o)


def contact_force(delta_mm, delta_rate_mm_s, k_eff: float, damping: float) -> np.ndarray:
    """Kelvin-Voigt normal force (N); zero wherever the taxel is not indented."""
    delta = np.asarray(delta_mm, dtype=float)
    f = k_eff * delta * 1e-3 + damping * np.asarray(delta_rate_mm_s) * 1e-3
    return np.where(delta > 0, np.maximum(f, 0.0), 0.0)


def _world_positions(local: np.ndarray, poses: np.ndarray) -> np.ndarray:
    """Skin-frame (..., 2) positions to world (T, ..., 2) under x, y, yaw."""
    yaw = np.deg2rad(poses[:, 5])
    c, s = np.cos(yaw), np.sin(yaw)
    lx, ly = local[..., 0], local[..., 1]
    extra = (slice(None),) + (None,) * (local.ndim - 1)
    wx = c[extra] * lx - s[extra] * ly + poses[:, 0][extra]
    wy = s[extra] * lx + c[extra] * ly + poses[:, 1][extra]
    return np.stack([wx, wy], axis=-1)


def indentation(hmap: HeightMap, skin: SkinConfig, poses: np.ndarray, reference_height: float) -> np.ndarray:
    """Per-taxel indentation depth (mm), shape (T, 16, 16)."""
    world = _world_positions(skin.fsr_positions, poses)
    heights = hmap.height_at(world[..., 0], world[..., 1])
    u = skin.fsr_positions[..., 0]
    v = skin.fsr_positions[..., 1]
    roll = np.deg2rad(poses[:, 3])[:, None, None]
    pitch = np.deg2rad(poses[:, 4])[:, None, None]
    tilt_lift = v * np.sin(roll) - u * np.sin(pitch)
    skin_z = poses[:, 2][:, None, None] + tilt_lift
    return heights - reference_height + INITIAL_INDENTATION_MM - skin_z


def reference_height(hmap: HeightMap, skin: SkinConfig, x0: float = 0.0, y0: float = 0.0) -> float:
    """Highest surface point under the flat skin at the reference pose."""
    pos = skin.fsr_positions
    return float(np.max(hmap.height_at(pos[..., 0] + x0, pos[..., 1] + y0)))


def _lowpass(x: np.ndarray, cutoff_hz: float, fs: float) -> np.ndarray:
    cutoff = min(cutoff_hz, 0.45 * fs)
    sos = signal.butter(2, cutoff, btype="low", fs=fs, output="sos")
    return signal.sosfilt(sos, x, axis=0)


def _texture_coupling(mean_contact: np.ndarray) -> np.ndarray:
    """Per-node share of texture vibration, (4, 4) in [0, 1].

    Vibration propagates through the silicone, so nodes away from the contact
    still receive half of the skin-wide level.
    """
    overall = mean_contact.mean()
    if overall <= 0:
        return np.zeros_like(mean_contact)
    local = 0.5 + 0.5 * mean_contact / mean_contact.max()
    return np.sqrt(min(1.0, overall / 0.02)) * local


def _resonance_hz(k_eff: float) -> float:
    return float(np.clip(_RESONANCE_REF_HZ * np.sqrt(k_eff / _RESONANCE_REF_STIFFNESS), *_RESONANCE_RANGE_HZ))


def simulate_trial(
    obj: tuple[ObjectSpec, HeightMap, MaterialParams],
    skin: SkinConfig,
    traj: Trajectory,
    seed: int,
    action: ActionParams | None = None,
) -> RawTrial:
    spec, hmap, material = obj
    fs = TACTILE_RATE_HZ
    if abs(traj.rate_hz - fs) > 1e-9:
        raise ValueError(f"trajectory must be sampled at {fs} Hz, got {traj.rate_hz}")
    poses = traj.samples + traj.reference.as_array()
    n = poses.shape[0]
    world = _world_positions(skin.fsr_positions, poses)
    if not hmap.contains(world[..., 0], world[..., 1]):
        raise ValueError("trajectory moves the skin outside the object surface extent")

    rng = np.random.default_rng(seed)
    h_ref = reference_height(hmap, skin, traj.reference.x, traj.reference.y)
    delta = indentation(hmap, skin, poses, h_ref)
    delta_rate = np.gradient(delta, 1.0 / fs, axis=0)
    k_eff = effective_stiffness(skin, material)
    damping = skin.damping + material.loss_factor * k_eff / _REF_OMEGA
    top = contact_force(delta, delta_rate, k_eff, damping)
    if material.top_layer_modulus is not None:
        # stiff top layer spreads load to neighbouring taxels
        top = ndimage.gaussian_filter(top, sigma=(0, 1.0, 1.0), mode="constant")

    # deep layer: lateral smear, temporal lag, shear shift
    pitch = skin.taxel_pitch
    deep = ndimage.gaussian_filter(top, sigma=(0, DEEP_LAYER_SMEAR_MM / pitch, DEEP_LAYER_SMEAR_MM / pitch), mode="constant")
    alpha = 1.0 - np.exp(-1.0 / (fs * DEEP_LAYER_TAU_S))
    deep = signal.lfilter([alpha], [1.0, alpha - 1.0], deep, axis=0, zi=deep[:1] * (1 - alpha))[0]
    shift = np.clip(skin.shear_gain * (poses[:, :2] - poses[0, :2]) / pitch, -MAX_SHEAR_SHIFT_TAXELS, MAX_SHEAR_SHIFT_TAXELS)
    if np.any(shift != 0):
        for k in np.flatnonzero(np.any(shift != 0, axis=1)):
            # image rows follow y, columns follow x
            deep[k] = ndimage.shift(deep[k], (shift[k, 1], shift[k, 0]), order=1, mode="constant")
    deep = np.maximum(deep, 0.0)

    fsr_noise = rng.standard_normal((n, N_TAXEL, N_TAXEL, 2)) * skin.fsr_noise_std
    fsr = np.stack([top, deep], axis=-1)
    fsr = np.where(fsr > 1e-6, np.maximum(fsr + fsr_noise, 0.0), 0.0)

    # accelerometers
    block = N_TAXEL // N_NODE
    node_load = top.reshape(n, N_NODE, block, N_NODE, block).sum(axis=(2, 4))
    node_contact = (delta > 0).reshape(n, N_NODE, block, N_NODE, block).mean(axis=(2, 4))
    load_rate = np.gradient(node_load, 1.0 / fs, axis=0)
    b, a = signal.iirpeak(_resonance_hz(k_eff), Q=5.0, fs=fs)
    # micro-slip: broadband bursts scaled by |dF/dt|, shaped by the contact resonance
    bursts = np.abs(load_rate) * rng.standard_normal(load_rate.shape)
    transient = signal.lfilter(b, a, bursts, axis=0) * _TRANSIENT_GAIN

    node_world = _world_positions(skin.accel_positions, poses)
    vel = np.gradient(node_world, 1.0 / fs, axis=0)  # mm/s
    speed = np.linalg.norm(vel, axis=-1)
    path_m = np.concatenate([np.zeros((1, N_NODE, N_NODE)), np.cumsum(0.5 * (speed[1:] + speed[:-1]), axis=0) / fs]) * 1e-3
    phase0 = rng.uniform(0, 2 * np.pi, size=(N_NODE, N_NODE))
    carrier = np.sin(2 * np.pi * spec.spatial_freq * path_m + phase0)
    texture = (
        _TEXTURE_GAIN
        * np.sqrt(spec.amplitude / 10.0)
        * _texture_coupling(node_contact.mean(axis=0))
        * np.minimum(speed / _TEXTURE_REF_SPEED, 1.0)
        * carrier
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        direction = np.where(speed[..., None] > 1e-9, np.abs(vel) / speed[..., None], 0.0)

    accel = np.empty((n, N_NODE, N_NODE, 3))
    accel[..., 0] = texture * direction[..., 0] + 0.3 * transient
    accel[..., 1] = texture * direction[..., 1] + 0.3 * transient
    accel[..., 2] = 0.5 * texture + transient
    accel = _lowpass(accel, skin.accel_cutoff_hz, fs)
    accel += rng.standard_normal(accel.shape) * skin.accel_noise_std

    metadata = {
        "object_id": spec.object_id,
        "skin_type": SkinType(skin.skin_type).name,
        "primitive": None if action is None else action.primitive.name,
        "action_index": None if action is None else action.action_index,
        "seed": int(seed),
    }
    return RawTrial(
        fsr=fsr.astype(np.float32),
        accel=accel.astype(np.float32),
        poses=poses,
        tactile_rate=fs,
        metadata=metadata,
    )
