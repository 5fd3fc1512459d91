"""Command-line entry point: ``tactile-perception <subcommand>``.

Exit codes: 0 success, 1 unexpected error, 2 invalid configuration or
arguments, 10-14 failure in the gen/preprocess/train/eval/report stage.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import harness


def _ints(text: str) -> list:
    return [int(v) for v in text.split(",") if v]


def _names(text: str) -> list:
    return [v.strip().upper() for v in text.split(",") if v.strip()]


def _load_cfg(args) -> dict:
    cfg = harness.validate_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg["train"]["seed"] = args.seed
    if getattr(args, "out", None):
        cfg["out"] = args.out
    for key in ("fusion_mode", "skin_type", "primitive"):
        v = getattr(args, key, None)
        if v:
            cfg[key] = v.upper()
    return harness.validate_config(cfg)


def cmd_gen_objects(args) -> int:
    from .wave_objects import build_catalog

    os.makedirs(args.out, exist_ok=True)
    rows = []
    grids = {}
    for spec, hmap, mat in build_catalog(args.seed, args.grid_res):
        grids[f"object_{spec.object_id:02d}"] = hmap.grid
        rows.append(
            {
                "object_id": spec.object_id,
                "spatial_freq": spec.spatial_freq,
                "amplitude": spec.amplitude,
                "stiffness_class": spec.stiffness_class.name,
                "heterogeneity": spec.heterogeneity,
                "seed": spec.seed,
                "young_modulus_pa": mat.young_modulus,
                "lateral_resolution_mm": hmap.lateral_resolution,
            }
        )
    np.savez(os.path.join(args.out, "heightmaps.npz"), **grids)
    with open(os.path.join(args.out, "catalog.json"), "w") as fh:
        json.dump(rows, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(rows)} objects to {args.out}")
    return 0


def cmd_gen_dataset(args) -> int:
    from .dataset_io import DESK_PROFILE, generate_dataset

    def progress(e):
        print(f"trial {e.index:5d} object {e.object_id:2d} {e.skin_type} {e.primitive} action {e.action_index}", file=sys.stderr)

    m = generate_dataset(
        args.out,
        objects=_ints(args.objects) if args.objects else DESK_PROFILE["objects"],
        skins=_names(args.skins) if args.skins else DESK_PROFILE["skins"],
        primitives=_names(args.primitives) if args.primitives else DESK_PROFILE["primitives"],
        actions=_ints(args.actions) if args.actions else DESK_PROFILE["actions"],
        repeats=args.repeats,
        base_seed=args.seed,
        grid_res=args.grid_res,
        progress=progress if args.verbose else None,
    )
    print(f"dataset {m.dataset_id}: {len(m.trials)} trials in {args.out}")
    return 0


def _run(args, until: str) -> int:
    cfg = _load_cfg(args)
    res = harness.run_experiment(cfg, until=until)
    if res.status == "up to date":
        print(f"{res.run_dir}: up to date")
    else:
        print(f"{res.run_dir}: ran {', '.join(res.stages_run)}")
    return 0


def cmd_inspect(args) -> int:
    from .dataset_io import MANIFEST_NAME, load_manifest, read_header

    path = args.path
    if os.path.isdir(path) and os.path.exists(os.path.join(path, MANIFEST_NAME)):
        m = load_manifest(path)
        counts = {}
        for t in m.trials:
            counts[t.split] = counts.get(t.split, 0) + 1
        print(json.dumps({"dataset_id": m.dataset_id, "trials": len(m.trials), "splits": counts,
                          "preprocessing_version": m.preprocessing_version}, indent=1, sort_keys=True))
    elif path.endswith(".pt"):
        import torch

        payload = torch.load(path, map_location="cpu", weights_only=False)
        payload.pop("state_dict", None)
        print(json.dumps(payload, indent=1, sort_keys=True, default=str))
    else:
        print(json.dumps(read_header(path), indent=1, sort_keys=True))
    return 0


def cmd_matrix(args) -> int:
    cfg = _load_cfg(args)
    for res in harness.run_matrix(cfg):
        print(f"{res.run_dir}: {res.status}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tactile-perception", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-objects", help="build the wave-object catalog")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--grid-res", type=int, default=200)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_objects)

    g = sub.add_parser("gen-dataset", help="simulate trials and write a manifest")
    g.add_argument("--objects", help="comma-separated object ids (default: desk profile)")
    g.add_argument("--skins", help="SOFT,HARD")
    g.add_argument("--primitives", help="PRESSING,PRECESSION,SLIDING")
    g.add_argument("--actions", help="comma-separated action indices 1..16")
    g.add_argument("--repeats", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--grid-res", type=int, default=200)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_dataset)

    for name, until, text in (
        ("train", "train", "generate, preprocess and train one configuration"),
        ("eval", "eval", "evaluate a trained configuration"),
        ("report", "report", "write CSV tables and figures"),
        ("run", "report", "all stages"),
    ):
        g = sub.add_parser(name, help=text)
        g.add_argument("--config", help="YAML config (defaults: desk profile)")
        g.add_argument("--seed", type=int, help="training seed")
        g.add_argument("--out", help="run output root")
        g.add_argument("--fusion-mode", dest="fusion_mode")
        g.add_argument("--skin", dest="skin_type")
        g.add_argument("--primitive")
        g.set_defaults(func=lambda a, u=until: _run(a, u))

    g = sub.add_parser("inspect", help="print a trial header, manifest summary or checkpoint info")
    g.add_argument("path")
    g.set_defaults(func=cmd_inspect)

    g = sub.add_parser("matrix", help="run every configuration of the matrix section")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.set_defaults(func=cmd_matrix)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except harness.ConfigError as exc:
        print(exc, file=sys.stderr)
        return harness.EXIT_CONFIG
    except harness.StageError as exc:
        print(exc, file=sys.stderr)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
