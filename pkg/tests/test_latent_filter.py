import math
import os

import numpy as np
import pytest
import torch

from tactile_perception.latent_filter import (
    GaussianDiag,
    LatentFilter,
    ModelConfig,
    TrainConfig,
    TrainingData,
    TrainingDivergedError,
    beta_schedule,
    fuse_gaussians,
    gaussian_log_lik,
    kl_diag,
    load_checkpoint,
    save_checkpoint,
    smooth,
    train,
)

SMALL = ModelConfig(stream_channels=(1, 2), enc_channels=(4, 8, 8), hidden=16, lstm_hidden=8, n_labels=4)


def g(mean, var):
    return GaussianDiag(torch.tensor(mean, dtype=torch.float64), torch.tensor(var, dtype=torch.float64))


def batch(cfg=SMALL, B=3, T=5, seed=0, dtype=torch.float32):
    gen = torch.Generator().manual_seed(seed)
    s = cfg.image_size
    streams = [torch.randn(B, T, c, s, s, generator=gen, dtype=dtype) for c in cfg.stream_channels]
    actions = torch.randn(B, T, cfg.n_a, generator=gen, dtype=dtype)
    return streams, actions


@pytest.fixture
def model():
    torch.manual_seed(0)
    return LatentFilter(SMALL)


# -- fusion and KL ------------------------------------------------------------


def test_fuse_examples():
    f = fuse_gaussians(g([0.0], [1.0]), g([0.0], [1.0]))
    assert f.mean.item() == 0.0 and f.var.item() == 0.5
    f = fuse_gaussians(g([1.0], [1.0]), g([3.0], [1.0]))
    assert f.mean.item() == 2.0 and f.var.item() == 0.5
    f = fuse_gaussians(g([0.3, -1.2], [0.7, 2.0]), g([5.0, 4.0], [1e9, 1e9]))
    assert torch.allclose(f.mean, torch.tensor([0.3, -1.2], dtype=torch.float64), atol=1e-6)
    assert torch.allclose(f.var, torch.tensor([0.7, 2.0], dtype=torch.float64), atol=1e-6)


def test_fuse_numpy_and_errors():
    f = fuse_gaussians(GaussianDiag(np.array([1.0]), np.array([3.0])), GaussianDiag(np.array([2.0]), np.array([1.0])))
    assert np.isclose(f.var[0], 0.75) and np.isclose(f.mean[0], 1.75)
    with pytest.raises(ValueError, match="positive"):
        fuse_gaussians(g([0.0], [0.0]), g([0.0], [1.0]))
    with pytest.raises(ValueError, match="positive"):
        fuse_gaussians(g([0.0], [1.0]), g([0.0], [-1.0]))
    with pytest.raises(ValueError, match="dimensions"):
        fuse_gaussians(g([0.0], [1.0]), g([0.0, 1.0], [1.0, 1.0]))
    with pytest.raises(ValueError):
        GaussianDiag(torch.zeros(2), torch.ones(3))


def test_kl_examples():
    assert kl_diag(g([0.4, 1.0], [2.0, 0.3]), g([0.4, 1.0], [2.0, 0.3])).item() == 0.0
    assert kl_diag(g([0.0], [1.0]), g([0.0], [2.0])).item() == pytest.approx(0.5 * (0.5 - 1 + math.log(2)), abs=1e-12)
    assert kl_diag(g([1.0], [1.0]), g([0.0], [1.0])).item() == pytest.approx(0.5, abs=1e-12)


def test_log_prob_and_sample():
    d = g([1.0, -2.0], [4.0, 0.25])
    assert torch.allclose(d.sample(torch.tensor([1.0, -2.0], dtype=torch.float64)), torch.tensor([3.0, -3.0], dtype=torch.float64))
    ref = torch.distributions.Normal(d.mean, d.std).log_prob(torch.tensor([0.5, 0.5], dtype=torch.float64)).sum()
    assert torch.allclose(d.log_prob(torch.tensor([0.5, 0.5], dtype=torch.float64)), ref)


def test_gaussian_log_lik_closed_form():
    x = torch.randn(1, 1, 3, 7, 7, dtype=torch.float64)
    lp = gaussian_log_lik(x, x, torch.ones_like(x))
    assert lp.item() == pytest.approx(-(x.numel() / 2) * math.log(2 * math.pi), abs=1e-10)


# -- components ---------------------------------------------------------------


def test_encode(model):
    streams, _ = batch()
    e = model.encode([s[:, 0] for s in streams])
    assert e.mean.shape == (3, 16) and e.var.shape == (3, 16)
    assert torch.all(e.var > 0)
    e2 = model.encode([s[:, 0] for s in streams])
    assert torch.equal(e.mean, e2.mean) and torch.equal(e.var, e2.var)
    with pytest.raises(ValueError, match="expected 2 observation streams"):
        model.encode([streams[0][:, 0]])
    with pytest.raises(ValueError, match="shape"):
        model.encode([streams[0][:, 0, :, :20], streams[1][:, 0]])


def test_encode_multi_e():
    m = LatentFilter(ModelConfig(stream_channels=(3,), enc_channels=(4, 8, 8), hidden=16, lstm_hidden=8))
    assert m.encode([torch.randn(2, 3, 28, 28)]).mean.shape == (2, 16)


def test_decode_shapes(model):
    out = model.decode(torch.randn(2, 4, 16))
    assert [m.shape for m, _ in out] == [(2, 4, 1, 28, 28), (2, 4, 2, 28, 28)]
    assert all(torch.all(v >= 1e-3) for _, v in out)


def test_transition_near_identity(model):
    torch.manual_seed(1)
    z = torch.randn(10, 16)
    pred = model.transition(z, torch.randn(10, 16), torch.randn(10, 6))
    assert pred.mean.shape == (10, 16)
    assert (pred.mean - z).abs().max() < 0.1
    again = model.transition(z, torch.zeros(10, 16), torch.zeros(10, 6))
    assert torch.equal(again.mean, model.transition(z, torch.zeros(10, 16), torch.zeros(10, 6)).mean)


def test_recurrent_y(model):
    z, y, a = torch.zeros(2, 16), torch.zeros(2, 16), torch.zeros(2, 6)
    q1, h1 = model.recurrent_y(z, y, a)
    q2, h2 = model.recurrent_y(z, y, a)
    assert q1.mean.shape == (2, 16)
    assert torch.equal(q1.mean, q2.mean) and torch.equal(h1[0], h2[0])
    assert torch.all(q1.var > 0)


def test_hierarchical_prior(model):
    a = torch.randn(2, 6)
    p = model.hierarchical_prior(a, [0, 3])
    assert p.mean.shape == (2, 16)
    q = model.hierarchical_prior(a, [0, 3])
    assert torch.equal(p.mean, q.mean) and torch.equal(p.var, q.var)
    with pytest.raises(ValueError, match="label"):
        model.hierarchical_prior(a, [0, 4])
    with pytest.raises(ValueError, match="label"):
        model.hierarchical_prior(a, [-1, 0])


# -- filtering ----------------------------------------------------------------


def test_filter_shapes_and_precision(model):
    streams, actions = batch()
    out = model.filter_sequence(streams, actions, torch.randn(3, 5, 16), torch.randn(3, 5, 16))
    assert out.filtered.mean.shape == (3, 5, 16)
    assert out.prediction.mean.shape == (3, 4, 16)
    assert out.y.mean.shape == (3, 5, 16)
    assert torch.equal(out.filtered.mean[:, 0], out.encoder.mean[:, 0])
    lim = torch.minimum(out.encoder.var[:, 1:], out.prediction.var)
    assert torch.all(out.filtered.var[:, 1:] <= lim)


def test_filter_rejects_misaligned(model):
    streams, actions = batch()
    with pytest.raises(ValueError, match="aligned"):
        model.filter_sequence(streams, actions[:, :4])
    with pytest.raises(ValueError, match="components"):
        model.filter_sequence(streams, actions[..., :5])


def test_uninformative_encoder_step_follows_prediction():
    m = LatentFilter(SMALL).double()
    streams, actions = batch(dtype=torch.float64)
    enc = m.encode(streams)
    var = enc.var.clone()
    var[:, 2] = 1e9
    out = m.filter_sequence(streams, actions, encoder_beliefs=GaussianDiag(enc.mean, var))
    assert torch.allclose(out.filtered.mean[:, 2], out.prediction.mean[:, 1], atol=1e-6)


def test_uninformative_transition_returns_encoder():
    m = LatentFilter(SMALL).double()
    with torch.no_grad():
        m.transition_net.var_out.bias.fill_(1e9)
    streams, actions = batch(dtype=torch.float64)
    out = m.filter_sequence(streams, actions)
    assert torch.allclose(out.filtered.mean, out.encoder.mean, atol=1e-6)
    assert torch.allclose(out.filtered.var, out.encoder.var, atol=1e-6)


def test_zero_information_encoder_is_pure_rollout():
    m = LatentFilter(SMALL).double()
    with torch.no_grad():
        for p in m.transition_net.parameters():
            p.add_(0.05 * torch.randn_like(p))
    streams, actions = batch(dtype=torch.float64)
    enc = m.encode(streams)
    var = enc.var.clone()
    var[:, 1:] = 1e12
    out = m.filter_sequence(streams, actions, encoder_beliefs=GaussianDiag(enc.mean, var))
    # roll the transition forward from the first belief with the same y path
    z = out.filtered.mean[:, 0]
    for t in range(1, actions.shape[1]):
        z = m.transition(z, out.y_samples[:, t], actions[:, t]).mean
        assert torch.allclose(out.filtered.mean[:, t], z, atol=1e-6)


# -- ELBO ---------------------------------------------------------------------


def test_beta_zero_is_reconstruction(model):
    streams, actions = batch()
    eps = torch.randn(3, 5, 16), torch.randn(3, 5, 16)
    elbo, terms = model.elbo(streams, actions, torch.tensor([0, 1, 2]), 0.0, *eps)
    assert elbo.item() == terms["recon"].item()
    elbo1, terms1 = model.elbo(streams, actions, torch.tensor([0, 1, 2]), 1.0, *eps)
    assert elbo1.item() == pytest.approx(terms1["recon"].item() - terms1["kl_z"].item() - terms1["kl_y"].item(), rel=1e-5)
    assert terms1["kl_y"].item() > 0
    with pytest.raises(ValueError, match="beta"):
        model.elbo(streams, actions, None, 1.5)


def test_reconstruction_term_closed_form(model):
    streams, actions = batch(B=1, T=1)
    model.decode = lambda z: [(s, torch.ones_like(s)) for s in streams]
    _, terms = model.elbo(streams, actions, None, 0.0)
    n_o = sum(s.numel() for s in streams)
    assert terms["recon"].item() == pytest.approx(-(n_o / 2) * math.log(2 * math.pi), rel=1e-6)


# -- training -----------------------------------------------------------------


def _tiny_data(n=8, T=20, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(n, 1, 1, 28, 28)).astype(np.float32)
    drift = np.linspace(0, 1, T, dtype=np.float32)[None, :, None, None, None]
    acc = base + drift + 0.1 * rng.normal(size=(n, T, 1, 28, 28)).astype(np.float32)
    fsr = np.repeat(acc, 2, axis=2) * 0.5
    actions = rng.normal(size=(n, T, 6)).astype(np.float32)
    return TrainingData([acc, fsr], actions, np.arange(n) % 4)


def test_beta_schedule():
    assert beta_schedule(0, 100, 0.01) == 0.01
    assert beta_schedule(100, 100, 0.01) == 1.0
    assert beta_schedule(50, 100, 0.0) == 0.5
    assert beta_schedule(500, 100) == 1.0
    assert beta_schedule(3, 0) == 1.0


def test_smooth():
    assert np.allclose(smooth([1, 2, 3, 4], 2), [1, 1.5, 2.5, 3.5])


def test_zero_learning_rate_leaves_parameters():
    data = _tiny_data()
    torch.manual_seed(0)
    m = LatentFilter(SMALL)
    before = {k: v.clone() for k, v in m.state_dict().items()}
    m, curves = train(data, TrainConfig(learning_rate=0.0, batch_size=4, epochs=1), model=m)
    assert len(curves.step) == 2
    assert all(torch.equal(before[k], v) for k, v in m.state_dict().items())


def test_tiny_run_improves_and_is_deterministic():
    data = _tiny_data()
    cfg = TrainConfig(learning_rate=3e-3, batch_size=8, max_steps=200, seed=4)
    m, c = train(data, cfg, SMALL)
    s = smooth(c.elbo, 25)
    assert s[-1] > s[24]
    _, c2 = train(data, cfg, SMALL)
    assert c.as_dict() == c2.as_dict()
    # distinct labels keep distinct prior means
    a = torch.zeros(2, 6)
    p = m.hierarchical_prior(a, [0, 1]).mean
    assert torch.linalg.norm(p[0] - p[1]) > 0
    per = c.per_epoch()
    assert len(per["epoch"]) == 200 and set(per) >= {"elbo", "kl_z", "kl_y", "recon", "beta"}


def test_nan_loss_dumps_batch(tmp_path):
    data = _tiny_data(n=4, T=6)
    data.streams[0][0, 2] = np.nan
    cfg = TrainConfig(learning_rate=1e-3, batch_size=4, max_steps=3, dump_dir=str(tmp_path))
    with pytest.raises(TrainingDivergedError) as info:
        train(data, cfg, SMALL)
    assert info.value.dump_path and os.path.exists(info.value.dump_path)
    with np.load(info.value.dump_path) as z:
        assert np.isnan(z["stream0"]).any()
        assert z["actions"].shape == (4, 6, 6)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(beta_min=2.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_checkpoint_round_trip(tmp_path, model):
    path = str(tmp_path / "m.pt")
    cfg = TrainConfig(seed=9)
    save_checkpoint(path, model, cfg, {"note": "x"})
    loaded, tc, extra = load_checkpoint(path)
    assert tc == cfg and extra == {"note": "x"}
    assert loaded.config == model.config
    for k, v in model.state_dict().items():
        assert torch.equal(v, loaded.state_dict()[k])
    payload = torch.load(path, weights_only=False)
    payload["preprocessing_version"] = "pp-0"
    torch.save(payload, path)
    with pytest.raises(ValueError, match="preprocessing"):
        load_checkpoint(path)
    payload["version"] = 99
    torch.save(payload, path)
    with pytest.raises(ValueError, match="version 99"):
        load_checkpoint(path)


def test_model_config_round_trip():
    assert ModelConfig.from_dict(SMALL.to_dict()) == SMALL
    with pytest.raises(ValueError):
        ModelConfig(stream_channels=(), obs_dim=None)
