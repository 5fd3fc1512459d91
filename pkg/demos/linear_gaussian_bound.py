"""Train the latent filter on a 1-D linear-Gaussian system and compare its
ELBO with the exact Kalman log-likelihood.  Takes a few minutes on one core.

    python3 demos/linear_gaussian_bound.py --steps 1000
"""
import argparse

import numpy as np
import torch

from tactile_perception.latent_filter import ModelConfig, TrainConfig, TrainingData, evaluate_elbo, train

A, C, Q, R = 0.9, 1.0, 1.0, 0.1
P0 = Q / (1 - A * A)


def sample(n, T, rng):
    x = np.zeros((n, T))
    x[:, 0] = rng.normal(0, np.sqrt(P0), n)
    for t in range(1, T):
        x[:, t] = A * x[:, t - 1] + rng.normal(0, np.sqrt(Q), n)
    return C * x + rng.normal(0, np.sqrt(R), (n, T))


def kalman_ll(o):
    m, P = np.zeros(len(o)), np.full(len(o), P0)
    ll = np.zeros(len(o))
    for t in range(o.shape[1]):
        if t:
            m, P = A * m, A * A * P + Q
        S = C * C * P + R
        ll += -0.5 * (np.log(2 * np.pi * S) + (o[:, t] - C * m) ** 2 / S)
        K = P * C / S
        m, P = m + K * (o[:, t] - C * m), (1 - K * C) * P
    return ll


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--T", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    obs, held = sample(8192, args.T, rng), sample(512, args.T, rng)
    ll = kalman_ll(held).mean()
    held_t = torch.tensor(held[..., None])
    acts = torch.zeros(512, args.T, 1, dtype=torch.float64)

    def cb(step, model, row):
        if (step + 1) % 250 == 0:
            e = evaluate_elbo(model, [held_t], acts, n_samples=16)
            print(f"step {step + 1:5d}  ELBO {e:8.3f}  exact {ll:8.3f}  gap {100 * (ll - e) / abs(ll):5.2f}%")

    train(
        TrainingData([obs[..., None]], np.zeros((len(obs), args.T, 1))),
        TrainConfig(learning_rate=3e-3, batch_size=64, max_steps=args.steps),
        ModelConfig(obs_dim=1, n_z=1, n_y=1, n_a=1, n_labels=1, hidden=32, lstm_hidden=8),
        callback=cb,
        dtype=torch.float64,
    )


if __name__ == "__main__":
    main()
