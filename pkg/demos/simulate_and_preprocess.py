"""Simulate one palpation trial and push it through preprocessing.

    python3 demos/simulate_and_preprocess.py --object 13 --primitive SLIDING --action 6
"""
import argparse
import time

import numpy as np

from tactile_perception.contact_sim import SkinType, simulate_trial, skin_config
from tactile_perception.palpation import Primitive, action_grid, generate_trajectory
from tactile_perception.preprocessing import fit_normalization, process_trial
from tactile_perception.wave_objects import build_catalog


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--object", type=int, default=13)
    ap.add_argument("--primitive", default="SLIDING", choices=[p.name for p in Primitive])
    ap.add_argument("--action", type=int, default=6, help="1..16")
    ap.add_argument("--skin", default="SOFT", choices=[s.name for s in SkinType])
    ap.add_argument("--plot", help="optional PNG path for the FSR load and log-mel image")
    args = ap.parse_args()

    spec, hmap, mat = obj = build_catalog(0)[args.object]
    print(spec)
    print(f"height range {hmap.grid.min():.2f}..{hmap.grid.max():.2f} mm, E = {mat.young_modulus:.3g} Pa")
    params = action_grid(Primitive[args.primitive])[args.action - 1]
    print(params)

    t0 = time.time()
    raw = simulate_trial(obj, skin_config(SkinType[args.skin]), generate_trajectory(params), seed=1, action=params)
    print(f"simulated in {time.time() - t0:.1f}s: fsr {raw.fsr.shape}, accel {raw.accel.shape}")
    load = raw.fsr[..., 0].sum(axis=(1, 2))
    print(f"top-layer load: mean {load.mean():.3f} N, peak {load.max():.3f} N")

    # normalizing with the trial's own statistics, fine for a single-trial look
    proc = process_trial(raw, fit_normalization([raw]))
    print(f"accel spectrogram {proc.accel_spec.shape}, fsr frames {proc.fsr_proc.shape}")

    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(1, 2, figsize=(9, 3.5))
        ax[0].plot(np.arange(len(load)) / raw.tactile_rate, load)
        ax[0].set_xlabel("time [s]")
        ax[0].set_ylabel("FSR top load [N]")
        ax[1].imshow(proc.accel_spec[150], cmap="magma")
        ax[1].set_title("log-mel frame 150 (28x28)")
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)
        print("wrote", args.plot)


if __name__ == "__main__":
    main()
