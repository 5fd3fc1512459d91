import importlib.util
import os

import numpy as np
import pytest

from tactile_perception.contact_sim import SKIN_MODULUS_PA
from tactile_perception.wave_objects import (
    AMPLITUDES,
    N_HOMOGENEOUS,
    SPATIAL_FREQS,
    YOUNG_MODULUS_PA,
    ObjectSpec,
    StiffnessClass,
    build_catalog,
    catalog_specs,
    generate_surface,
    material_properties,
    radial_power_spectrum,
)

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


@pytest.fixture(scope="module")
def catalog():
    return build_catalog(0)


def _spec(freq=30.0, amp=10.0, seed=7):
    return ObjectSpec(0, freq, amp, StiffnessClass.ECOFLEX_00_10, 0, seed)


def test_catalog_layout(catalog):
    assert len(catalog) == 32
    spec0 = catalog[0][0]
    assert (spec0.spatial_freq, spec0.amplitude, spec0.stiffness_class) == (10.0, 5.0, StiffnessClass.ECOFLEX_00_10)
    combos = {(s.spatial_freq, s.amplitude, s.stiffness_class) for s, _, _ in catalog[:N_HOMOGENEOUS]}
    assert len(combos) == 27
    assert combos == {(f, a, c) for f in SPATIAL_FREQS for a in AMPLITUDES for c in StiffnessClass}
    assert [s.object_id for s, _, _ in catalog] == list(range(32))
    assert all(s.heterogeneity == 0 for s, _, _ in catalog[:27])
    assert all(s.heterogeneity == 1 for s, _, _ in catalog[27:])


def test_heterogeneous_objects_are_soft_with_top_layer(catalog):
    for spec, _, mat in catalog[27:]:
        assert spec.stiffness_class is StiffnessClass.ECOFLEX_00_10
        assert mat.top_layer_modulus == YOUNG_MODULUS_PA["ECOFLEX_00_50"]
        assert mat.top_layer_thickness == 2.0
    for _, _, mat in catalog[:27]:
        assert mat.top_layer_modulus is None and mat.top_layer_thickness is None


def test_lexicographic_order():
    specs = catalog_specs(0)
    keys = [(s.spatial_freq, s.amplitude, int(s.stiffness_class)) for s in specs[:27]]
    assert keys == sorted(keys)


def test_surface_scale_and_mean(catalog):
    for spec, hmap, _ in catalog:
        half = 0.5 * (hmap.grid.max() - hmap.grid.min())
        assert abs(half - spec.amplitude) <= 1e-6 * spec.amplitude
        assert abs(hmap.grid.mean()) <= 1e-9 * spec.amplitude


def test_zero_amplitude_is_flat():
    h = generate_surface(_spec(amp=0.0))
    assert not h.grid.any()


def test_surface_deterministic():
    a = generate_surface(_spec())
    b = generate_surface(_spec())
    assert a.grid.tobytes() == b.grid.tobytes()
    assert build_catalog(3, 64)[5][1].grid.tobytes() == build_catalog(3, 64)[5][1].grid.tobytes()


def test_spectrum_peak_in_band():
    h = generate_surface(_spec(30.0, 10.0, 7))
    f, p = radial_power_spectrum(h)
    assert 20.0 <= f[np.argmax(p)] <= 40.0


def test_spectral_concentration(catalog):
    # share of non-DC power inside the octave [f0/sqrt2, f0*sqrt2]
    for spec, hmap, _ in catalog[:27]:
        n = hmap.grid.shape[0]
        power = np.abs(np.fft.fft2(hmap.grid)) ** 2
        f = np.fft.fftfreq(n, d=hmap.lateral_resolution / 1000.0)
        r = np.hypot(f[:, None], f[None, :])
        f0 = spec.spatial_freq
        band = (r >= f0 / np.sqrt(2)) & (r <= f0 * np.sqrt(2))
        share = power[band].sum() / power[r > 0].sum()
        assert share >= 0.6, (spec.object_id, share)


def test_nyquist_rejected():
    with pytest.raises(ValueError, match="cycles/m"):
        generate_surface(_spec(50.0), grid_res=64, extent_mm=2000.0)
    with pytest.raises(ValueError, match=">= 64"):
        generate_surface(_spec(), grid_res=32)


def test_material_ordering():
    e = [material_properties(c, 0).young_modulus for c in StiffnessClass]
    assert e[0] < e[1] < e[2]
    assert 10e3 <= e[0] <= 100e3


def test_moduli_match_oracle():
    spec = importlib.util.spec_from_file_location("oracle", os.path.join(ROOT, "tools", "shore_modulus_oracle.py"))
    oracle = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(oracle)
    assert oracle.shore00_to_modulus(10) == pytest.approx(YOUNG_MODULUS_PA["ECOFLEX_00_10"], rel=1e-6)
    assert oracle.shore00_to_modulus(50) == pytest.approx(YOUNG_MODULUS_PA["ECOFLEX_00_50"], rel=1e-6)
    assert oracle.shore00_to_modulus(31) == pytest.approx(SKIN_MODULUS_PA["SOFT"], rel=1e-6)
    assert oracle.shoreA_to_modulus(30) == pytest.approx(SKIN_MODULUS_PA["HARD"], rel=1e-6)


def test_bad_spec_rejected():
    with pytest.raises(ValueError):
        ObjectSpec(32, 10.0, 5.0, StiffnessClass.PLA, 0, 0)
    with pytest.raises(ValueError):
        ObjectSpec(0, 10.0, 5.0, StiffnessClass.PLA, 2, 0)
