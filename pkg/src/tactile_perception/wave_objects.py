"""Parametrized catalog of soft "wave objects".

Each object is a band-pass filtered white-noise surface with a chosen
spatial frequency and amplitude, cast in one of three materials.  Five of the
32 objects carry a thin stiffer top layer over a soft bulk.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

SPATIAL_FREQS = (10.0, 30.0, 50.0)  # cycles/m
AMPLITUDES = (5.0, 10.0, 20.0)  # mm
N_OBJECTS = 32
N_HOMOGENEOUS = 27

DEFAULT_EXTENT_MM = 200.0
DEFAULT_GRID_RES = 200

# Frozen output of tools/shore_modulus_oracle.py.
YOUNG_MODULUS_PA = {
    "ECOFLEX_00_10": 4.383152e4,
    "ECOFLEX_00_50": 2.367058e5,
    "PLA": 3.5e9,
}
LOSS_FACTOR = {"ECOFLEX_00_10": 0.25, "ECOFLEX_00_50": 0.18, "PLA": 0.02}
TOP_LAYER_THICKNESS_MM = 2.0

# (spatial_freq, amplitude) of ids 27..31; bulk is always ECOFLEX_00_10.
HETEROGENEOUS_SURFACES = (
    (10.0, 5.0),
    (10.0, 20.0),
    (30.0, 10.0),
    (50.0, 5.0),
    (50.0, 20.0),
)


class StiffnessClass(enum.IntEnum):
    ECOFLEX_00_10 = 0
    ECOFLEX_00_50 = 1
    PLA = 2


@dataclass(frozen=True)
class ObjectSpec:
    object_id: int
    spatial_freq: float
    amplitude: float
    stiffness_class: StiffnessClass
    heterogeneity: int
    seed: int

    def __post_init__(self):
        if not 0 <= self.object_id < N_OBJECTS:
            raise ValueError(f"object_id must be in [0, {N_OBJECTS}), got {self.object_id}")
        if self.spatial_freq <= 0:
            raise ValueError("spatial_freq must be positive")
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        if self.heterogeneity not in (0, 1):
            raise ValueError("heterogeneity is a 0/1 flag")


@dataclass(frozen=True)
class HeightMap:
    """Surface heights in mm on a square grid centred on the origin."""

    grid: np.ndarray
    lateral_resolution: float  # mm per cell
    extent: tuple[float, float]  # mm

    def contains(self, x_mm, y_mm) -> bool:
        hx, hy = self.extent[0] / 2.0, self.extent[1] / 2.0
        x = np.asarray(x_mm)
        y = np.asarray(y_mm)
        return bool(np.all(np.abs(x) <= hx) and np.all(np.abs(y) <= hy))

    def height_at(self, x_mm, y_mm) -> np.ndarray:
        """Bilinear height lookup at lateral positions (mm, origin at centre).

        Cell ``(i, j)`` of ``grid`` is centred at
        ``(-extent/2 + (j + 0.5) * res, -extent/2 + (i + 0.5) * res)``;
        positions beyond the outermost cell centres are clamped.
        """
        x = np.asarray(x_mm, dtype=float)
        y = np.asarray(y_mm, dtype=float)
        ny, nx = self.grid.shape
        u = (x + self.extent[0] / 2.0) / self.lateral_resolution - 0.5
        v = (y + self.extent[1] / 2.0) / self.lateral_resolution - 0.5
        u = np.clip(u, 0.0, nx - 1.0)
        v = np.clip(v, 0.0, ny - 1.0)
        j0 = np.minimum(np.floor(u).astype(int), nx - 2)
        i0 = np.minimum(np.floor(v).astype(int), ny - 2)
        fu = u - j0
        fv = v - i0
        g = self.grid
        return (
            g[i0, j0] * (1 - fu) * (1 - fv)
            + g[i0, j0 + 1] * fu * (1 - fv)
            + g[i0 + 1, j0] * (1 - fu) * fv
            + g[i0 + 1, j0 + 1] * fu * fv
        )


@dataclass(frozen=True)
class MaterialParams:
    young_modulus: float  # Pa
    loss_factor: float
    top_layer_modulus: Optional[float] = None  # Pa
    top_layer_thickness: Optional[float] = None  # mm

    def __post_init__(self):
        if self.young_modulus <= 0:
            raise ValueError("young_modulus must be positive")
        if (self.top_layer_modulus is None) != (self.top_layer_thickness is None):
            raise ValueError("top-layer modulus and thickness are set together")


def material_properties(stiffness_class: StiffnessClass, heterogeneity: int) -> MaterialParams:
    stiffness_class = StiffnessClass(stiffness_class)
    name = stiffness_class.name
    if heterogeneity:
        return MaterialParams(
            young_modulus=YOUNG_MODULUS_PA[name],
            loss_factor=LOSS_FACTOR[name],
            top_layer_modulus=YOUNG_MODULUS_PA["ECOFLEX_00_50"],
            top_layer_thickness=TOP_LAYER_THICKNESS_MM,
        )
    return MaterialParams(young_modulus=YOUNG_MODULUS_PA[name], loss_factor=LOSS_FACTOR[name])


def bandpass_gain(radial_freq: np.ndarray, center: float) -> np.ndarray:
    """Gaussian annulus in radial spatial frequency, sigma = center / 3."""
    sigma = center / 3.0
    return np.exp(-0.5 * ((radial_freq - center) / sigma) ** 2)


def generate_surface(
    spec: ObjectSpec,
    grid_res: int = DEFAULT_GRID_RES,
    extent_mm: float = DEFAULT_EXTENT_MM,
) -> HeightMap:
    if grid_res < 64:
        raise ValueError(f"grid_res must be >= 64, got {grid_res}")
    res_mm = extent_mm / grid_res
    nyquist = 1000.0 / (2.0 * res_mm)  # cycles/m
    # the annulus extends to ~2x the centre frequency
    if 2.0 * spec.spatial_freq > nyquist:
        raise ValueError(
            f"grid of {grid_res} cells over {extent_mm} mm resolves up to {nyquist:.1f} cycles/m; "
            f"spatial_freq {spec.spatial_freq} cycles/m needs at least {2 * spec.spatial_freq:.1f}"
        )
    rng = np.random.default_rng(spec.seed)
    noise = rng.standard_normal((grid_res, grid_res))
    freqs = np.fft.fftfreq(grid_res, d=res_mm / 1000.0)
    radial = np.hypot(freqs[:, None], freqs[None, :])
    field = np.fft.ifft2(np.fft.fft2(noise) * bandpass_gain(radial, spec.spatial_freq)).real
    field = field - field.mean()
    half_p2p = 0.5 * (field.max() - field.min())
    if spec.amplitude == 0 or half_p2p == 0:
        grid = np.zeros_like(field)
    else:
        grid = field * (spec.amplitude / half_p2p)
        grid = grid - grid.mean()
    return HeightMap(grid=grid, lateral_resolution=res_mm, extent=(extent_mm, extent_mm))


def surface_seed(base_seed: int, spatial_freq: float, amplitude: float) -> int:
    """Seed shared by every object cast from the same mould."""
    fi = SPATIAL_FREQS.index(spatial_freq)
    ai = AMPLITUDES.index(amplitude)
    ss = np.random.SeedSequence([base_seed & 0xFFFFFFFFFFFFFFFF, fi, ai])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def catalog_specs(base_seed: int = 0) -> list[ObjectSpec]:
    specs = []
    grid = itertools.product(SPATIAL_FREQS, AMPLITUDES, StiffnessClass)
    for oid, (freq, amp, stiff) in enumerate(grid):
        specs.append(ObjectSpec(oid, freq, amp, stiff, 0, surface_seed(base_seed, freq, amp)))
    for k, (freq, amp) in enumerate(HETEROGENEOUS_SURFACES):
        specs.append(
            ObjectSpec(
                N_HOMOGENEOUS + k,
                freq,
                amp,
                StiffnessClass.ECOFLEX_00_10,
                1,
                surface_seed(base_seed, freq, amp),
            )
        )
    return specs


def build_catalog(
    base_seed: int = 0, grid_res: int = DEFAULT_GRID_RES
) -> list[tuple[ObjectSpec, HeightMap, MaterialParams]]:
    """All 32 objects as ``(spec, height_map, material)`` triples, ordered by id."""
    return [
        (spec, generate_surface(spec, grid_res), material_properties(spec.stiffness_class, spec.heterogeneity))
        for spec in catalog_specs(base_seed)
    ]


def radial_power_spectrum(hmap: HeightMap, bin_width: Optional[float] = None):
    """Radially averaged power spectrum of a height map.

    Returns ``(bin_centres, mean_power)`` in cycles/m; the DC bin is dropped.
    """
    n = hmap.grid.shape[0]
    d = hmap.lateral_resolution / 1000.0
    power = np.abs(np.fft.fft2(hmap.grid)) ** 2
    freqs = np.fft.fftfreq(n, d=d)
    radial = np.hypot(freqs[:, None], freqs[None, :])
    df = bin_width or 1.0 / (n * d)
    idx = np.rint(radial / df).astype(int)
    total = np.bincount(idx.ravel(), weights=power.ravel())
    counts = np.bincount(idx.ravel())
    centres = np.arange(len(total)) * df
    keep = (counts > 0) & (centres > 0)
    return centres[keep], total[keep] / counts[keep]
