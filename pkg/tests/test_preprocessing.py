import numpy as np
import pytest
from scipy import signal

from tactile_perception.contact_sim import SkinType, simulate_trial, skin_config
from tactile_perception.palpation import Primitive, action_grid, generate_trajectory
from tactile_perception.preprocessing import (
    STREAM_CHANNELS,
    FusionMode,
    NormalizationStats,
    accel_magnitude,
    accel_magnitude_downsample,
    bilinear_resize,
    fit_normalization,
    fsr_preprocess,
    fuse,
    log_mel_spectrogram,
    mel_center_frequencies,
    mel_filterbank,
    process_trial,
    resample_to_frames,
    reshape_spec,
    unreshape_spec,
)
from tactile_perception.wave_objects import build_catalog


@pytest.fixture(scope="module")
def raw_pair():
    cat = build_catalog(0)
    skin = skin_config(SkinType.SOFT)
    out = []
    for oid, prim, k in ((1, Primitive.PRESSING, 4), (13, Primitive.SLIDING, 9)):
        p = action_grid(prim)[k]
        out.append(simulate_trial(cat[oid], skin, generate_trajectory(p), 2, p))
    return out


def test_accel_magnitude_downsample_shapes():
    assert accel_magnitude_downsample(np.zeros((7000, 4, 4, 3))).shape == (6000, 4, 4)
    assert not accel_magnitude_downsample(np.zeros((7000, 4, 4, 3))).any()
    with pytest.raises(ValueError):
        accel_magnitude_downsample(np.zeros((7000, 4, 4)))


def test_magnitude_is_euclidean():
    a = np.zeros((10, 4, 4, 3))
    a[..., 1] = 3.0
    assert np.all(accel_magnitude(a) == 3.0)
    a[..., 2] = 4.0
    assert np.allclose(accel_magnitude(a), 5.0)


def test_log_mel_shape_and_zero():
    out = log_mel_spectrogram(np.zeros((6000, 4, 4)))
    assert out.shape == (300, 49, 4, 4)
    assert not out.any()


def test_log_mel_nonnegative():
    rng = np.random.default_rng(0)
    out = log_mel_spectrogram(rng.normal(size=(6000, 4, 4)))
    assert out.min() >= 0


@pytest.mark.parametrize("freq", [20.0, 50.0, 137.0, 260.0])
def test_pure_tone_lands_in_nearest_bin(freq):
    t = np.arange(6000) / 600.0
    sig = np.broadcast_to(np.sin(2 * np.pi * freq * t)[:, None, None], (6000, 4, 4))
    spec = log_mel_spectrogram(sig)
    peak = np.argmax(spec[100:200].mean(axis=0), axis=0)
    centres = mel_center_frequencies()
    assert np.all(np.abs(peak - np.argmin(np.abs(centres - freq))) <= 1)


def test_mel_filterbank_shape():
    fb = mel_filterbank()
    assert fb.shape == (49, 401)
    assert fb.max() <= 1.0 + 1e-12
    assert np.all(fb.sum(axis=1) > 0)


def test_reshape_round_trip_and_layout():
    rng = np.random.default_rng(1)
    spec = rng.normal(size=(5, 49, 4, 4))
    img = reshape_spec(spec)
    assert img.shape == (5, 28, 28)
    assert np.array_equal(unreshape_spec(img), spec)
    assert np.array_equal(img[:, 0:7, 0:7].reshape(5, 49), spec[:, :, 0, 0])
    assert np.array_equal(img[:, 7:14, 21:28].reshape(5, 49), spec[:, :, 1, 3])
    with pytest.raises(ValueError):
        reshape_spec(np.zeros((5, 48, 4, 4)))


def test_fsr_preprocess_contracts():
    c = np.full((7000, 16, 16, 2), 0.7)
    out = fsr_preprocess(c)
    assert out.shape == (300, 28, 28, 2)
    assert np.allclose(out, 0.7, atol=1e-12)
    rng = np.random.default_rng(2)
    frame = rng.uniform(size=(1, 16, 16, 2))
    out = fsr_preprocess(np.repeat(frame, 7000, axis=0))
    assert np.allclose(out, out[:1], atol=1e-12)
    with pytest.raises(ValueError):
        fsr_preprocess(np.zeros((7000, 16, 16)))


def test_bilinear_preserves_constants():
    assert np.allclose(bilinear_resize(np.full((3, 16, 16), -2.5)), -2.5)


def test_frame_resampling_reconstructs_band_limited_signal():
    # periodic content below 15 Hz, sampled to 30 Hz frames and back
    t = np.arange(7000) / 700.0
    rng = np.random.default_rng(3)
    freqs = rng.choice(np.arange(1, 140) / 10.0, size=8, replace=False)
    x = sum(rng.normal() * np.sin(2 * np.pi * f * t + rng.uniform(0, 6.3)) for f in freqs)
    frames = resample_to_frames(x, 700.0)
    back = signal.resample(frames, 7000)
    assert np.linalg.norm(back - x) / np.linalg.norm(x) < 0.01


def test_fuse_modes():
    acc = np.random.default_rng(4).normal(size=(300, 28, 28))
    fsr = np.random.default_rng(5).normal(size=(300, 28, 28, 2))
    for mode in FusionMode:
        obs = fuse(acc, fsr, mode)
        assert tuple(s.shape[1] for s in obs.streams) == STREAM_CHANNELS[mode]
        assert obs.n_frames == 300
    assert fuse(acc, fsr, FusionMode.MULTI_E).streams[0].shape == (300, 3, 28, 28)
    assert np.array_equal(fuse(acc, fsr, FusionMode.FSR_T).streams[0][:, 0], fsr[..., 0])
    assert np.array_equal(fuse(acc, fsr, FusionMode.FSR_B).streams[0][:, 0], fsr[..., 1])
    a, f = fuse(acc, fsr, FusionMode.MULTI_L).streams
    assert np.array_equal(a[:, 0], acc) and np.array_equal(np.moveaxis(f, 1, -1), fsr)
    with pytest.raises(ValueError, match="frame mismatch"):
        fuse(acc[:299], fsr, FusionMode.ACC)


def test_process_trial_shapes(raw_pair):
    stats = fit_normalization(raw_pair[:1])
    for raw in raw_pair:
        p = process_trial(raw, stats)
        assert p.accel_spec.shape == (300, 28, 28)
        assert p.fsr_proc.shape == (300, 28, 28, 2)
        assert np.all(np.isfinite(p.accel_spec)) and np.all(np.isfinite(p.fsr_proc))


def test_normalization_train_only(raw_pair):
    train, test = raw_pair
    stats = fit_normalization([train])
    again = NormalizationStats.from_dict(stats.to_dict())
    a = process_trial(test, stats)
    b = process_trial(test, again)
    assert np.array_equal(a.accel_spec, b.accel_spec) and np.array_equal(a.fsr_proc, b.fsr_proc)
    # statistics depend on the training trial only
    assert stats.to_dict() == fit_normalization([train]).to_dict()
    assert stats.to_dict() != fit_normalization([test]).to_dict()
    with pytest.raises(ValueError):
        fit_normalization([])
