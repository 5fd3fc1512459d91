"""Experiment configuration, hashing and the resumable gen -> report pipeline."""

from __future__ import annotations

import copy
import csv
import hashlib
import itertools
import json
import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
import yaml

from .preprocessing import FusionMode

log = logging.getLogger(__name__)

STAGES = ("gen", "preprocess", "train", "eval", "report")
EXIT_OK = 0
EXIT_CONFIG = 2
# a failing stage exits with 10 + its position in STAGES
STAGE_EXIT = {s: 10 + i for i, s in enumerate(STAGES)}

DEFAULTS = {
    "dataset": {
        "profile": "desk",
        "objects": [0, 4, 8, 12, 16, 20, 24, 29],
        "actions": [1, 6, 11, 16],
        "primitives": ["PRESSING", "PRECESSION", "SLIDING"],
        "skins": ["SOFT", "HARD"],
        "repeats": 1,
        "seed": 0,
        "grid_res": 200,
        "root": None,
    },
    "fusion_mode": "MULTI_L",
    "skin_type": "SOFT",
    "primitive": "PRESSING",
    "model": {"n_z": 16, "n_y": 16, "enc_channels": [8, 16, 16], "hidden": 32, "lstm_hidden": 32},
    "train": {
        "learning_rate": 1e-3,
        "batch_size": 16,
        "epochs": 500,
        "max_steps": 2000,
        "window": 64,
        "anneal_fraction": 0.2,
        "beta_min": 0.01,
        "seed": 0,
    },
    "eval": {"final_steps": 10, "plots": True},
    "out": "runs",
    "matrix": {"fusion_modes": [m.value for m in FusionMode], "primitives": ["PRESSING", "PRECESSION", "SLIDING"], "skins": ["SOFT"]},
}


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


def _merge(defaults: dict, given: dict, path: str, errors: list) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        key = f"{path}{k}"
        if k not in defaults:
            errors.append(f"unknown key '{key}'")
        elif isinstance(defaults[k], dict):
            if not isinstance(v, dict):
                errors.append(f"'{key}' must be a mapping")
            else:
                out[k] = _merge(defaults[k], v, key + ".", errors)
        else:
            out[k] = v
    return out


def _check(cfg: dict, errors: list) -> None:
    modes = [m.value for m in FusionMode]
    if cfg["fusion_mode"] not in modes:
        errors.append(f"fusion_mode '{cfg['fusion_mode']}' is not one of {', '.join(modes)}")
    for m in cfg["matrix"]["fusion_modes"]:
        if m not in modes:
            errors.append(f"matrix.fusion_modes entry '{m}' is not one of {', '.join(modes)}")
    prims = ("PRESSING", "PRECESSION", "SLIDING")
    skins = ("SOFT", "HARD")
    if cfg["primitive"] not in prims:
        errors.append(f"primitive must be one of {', '.join(prims)}")
    if cfg["skin_type"] not in skins:
        errors.append(f"skin_type must be one of {', '.join(skins)}")
    for p in list(cfg["dataset"]["primitives"]) + list(cfg["matrix"]["primitives"]):
        if p not in prims:
            errors.append(f"unknown primitive '{p}'")
    for s in list(cfg["dataset"]["skins"]) + list(cfg["matrix"]["skins"]):
        if s not in skins:
            errors.append(f"unknown skin '{s}'")
    if not all(isinstance(o, int) and 0 <= o < 32 for o in cfg["dataset"]["objects"]):
        errors.append("dataset.objects must be object ids in 0..31")
    if not all(isinstance(a, int) and 1 <= a <= 16 for a in cfg["dataset"]["actions"]):
        errors.append("dataset.actions must be action indices in 1..16")
    t = cfg["train"]
    if not (isinstance(t["learning_rate"], (int, float)) and t["learning_rate"] > 0):
        errors.append("train.learning_rate must be positive")
    for k in ("batch_size", "epochs"):
        if not (isinstance(t[k], int) and t[k] > 0):
            errors.append(f"train.{k} must be a positive integer")
    for k in ("max_steps", "window"):
        if t[k] is not None and not (isinstance(t[k], int) and t[k] > 0):
            errors.append(f"train.{k} must be a positive integer or null")
    for k in ("anneal_fraction", "beta_min"):
        if not (isinstance(t[k], (int, float)) and 0 <= t[k] <= 1):
            errors.append(f"train.{k} must lie in [0, 1]")
    if not (isinstance(cfg["dataset"]["repeats"], int) and cfg["dataset"]["repeats"] > 0):
        errors.append("dataset.repeats must be a positive integer")
    if cfg["primitive"] not in cfg["dataset"]["primitives"] or cfg["skin_type"] not in cfg["dataset"]["skins"]:
        errors.append("primitive and skin_type must be covered by the dataset")


def validate_config(source=None) -> dict:
    """Normalize a config given as a path, YAML text, mapping or None.

    Missing keys take their documented defaults; unknown keys and invalid
    values raise :class:`ConfigError` listing every problem.
    """
    if source is None:
        given = {}
    elif isinstance(source, dict):
        given = source
    else:
        text = source
        if os.path.exists(str(source)):
            with open(source) as fh:
                text = fh.read()
        given = yaml.safe_load(text) or {}
        if not isinstance(given, dict):
            raise ConfigError(["top level of the config must be a mapping"])
    errors: list = []
    cfg = _merge(DEFAULTS, given, "", errors)
    if not errors:
        _check(cfg, errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    """SHA-256 over the settings that determine a run's results."""
    keep = {k: cfg[k] for k in ("dataset", "fusion_mode", "skin_type", "primitive", "model", "train", "eval")}
    keep["dataset"] = {k: v for k, v in keep["dataset"].items() if k != "root"}
    return hashlib.sha256(canonical_json(keep).encode()).hexdigest()


def dataset_hash(cfg: dict) -> str:
    d = {k: v for k, v in cfg["dataset"].items() if k not in ("root", "profile")}
    return hashlib.sha256(canonical_json(d).encode()).hexdigest()[:12]


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.exit_code = STAGE_EXIT[stage]


@dataclass
class RunResult:
    run_dir: str
    config_hash: str
    status: str  # "completed" or "up to date"
    stages_run: tuple


def run_paths(cfg: dict, out_root: Optional[str] = None) -> dict:
    from .dataset_io import cache_dir

    out_root = out_root or cfg["out"]
    h = config_hash(cfg)
    name = f"{cfg['fusion_mode']}_{cfg['skin_type']}_{cfg['primitive']}_{h[:10]}"
    data_root = cfg["dataset"]["root"] or os.path.join(cache_dir(), "datasets", dataset_hash(cfg))
    run_dir = os.path.join(out_root, name)
    return {
        "run_dir": run_dir,
        "data_root": data_root,
        "prep": os.path.join(data_root, f"prep_{cfg['skin_type']}_{cfg['primitive']}.npz"),
        "checkpoint": os.path.join(run_dir, "checkpoint.pt"),
        "curves": os.path.join(run_dir, "curves.csv"),
        "eval": os.path.join(run_dir, "eval.json"),
        "report": os.path.join(run_dir, "report"),
        "hash": h,
    }


def _marker(run_dir: str, stage: str) -> str:
    return os.path.join(run_dir, f".done_{stage}")


def _done(path: str, stamp: str) -> bool:
    if not os.path.exists(path):
        return False
    with open(path) as fh:
        return fh.read().strip() == stamp


def _mark(path: str, stamp: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(stamp + "\n")
    os.replace(tmp, path)


def _write_json(path: str, obj) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _stage_gen(cfg, paths):
    from .dataset_io import MANIFEST_NAME, generate_dataset

    root = paths["data_root"]
    if os.path.exists(os.path.join(root, MANIFEST_NAME)):
        return
    d = cfg["dataset"]
    generate_dataset(
        root,
        objects=d["objects"],
        skins=d["skins"],
        primitives=d["primitives"],
        actions=d["actions"],
        repeats=d["repeats"],
        base_seed=d["seed"],
        grid_res=d["grid_res"],
    )


def _stage_preprocess(cfg, paths):
    from .pipeline import prepare_slice

    if os.path.exists(paths["prep"]):
        return
    prepare_slice(paths["data_root"], cfg["skin_type"], cfg["primitive"]).save(paths["prep"])


def train_config_from(cfg: dict):
    from .latent_filter import TrainConfig

    t = cfg["train"]
    return TrainConfig(
        learning_rate=float(t["learning_rate"]),
        batch_size=t["batch_size"],
        epochs=t["epochs"],
        anneal_fraction=float(t["anneal_fraction"]),
        beta_min=float(t["beta_min"]),
        seed=t["seed"],
        fusion_mode=cfg["fusion_mode"],
        primitive=cfg["primitive"],
        window=t["window"],
        max_steps=t["max_steps"],
    )


def model_config_from(cfg: dict):
    from .pipeline import model_config_for

    m = cfg["model"]
    return model_config_for(
        FusionMode(cfg["fusion_mode"]),
        n_z=m["n_z"],
        n_y=m["n_y"],
        enc_channels=tuple(m["enc_channels"]),
        hidden=m["hidden"],
        lstm_hidden=m["lstm_hidden"],
    )


def _stage_train(cfg, paths):
    import torch

    from .latent_filter import save_checkpoint, train
    from .pipeline import PreparedSlice, training_data

    torch.use_deterministic_algorithms(True)
    prep = PreparedSlice.load(paths["prep"])
    tc = train_config_from(cfg)
    tc.dump_dir = paths["run_dir"]
    model, curves = train(training_data(prep, FusionMode(cfg["fusion_mode"])), tc, model_config_from(cfg))
    save_checkpoint(paths["checkpoint"], model, tc, {"config_hash": paths["hash"], "normalization": prep.stats})
    d = curves.as_dict()
    cols = ("step", "epoch", "beta", "elbo", "recon", "kl_z", "kl_y", "mse")
    tmp = paths["curves"] + ".tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in zip(*(d[c] for c in cols)):
            w.writerow([v if isinstance(v, int) else "%.10g" % v for v in row])
    os.replace(tmp, paths["curves"])


def _stage_eval(cfg, paths):
    from .latent_filter import load_checkpoint
    from .pipeline import PreparedSlice, evaluate_slice

    model, _, _ = load_checkpoint(paths["checkpoint"])
    prep = PreparedSlice.load(paths["prep"])
    name = os.path.basename(paths["run_dir"])
    res = evaluate_slice(model, prep, FusionMode(cfg["fusion_mode"]), name, cfg["dataset"]["seed"])
    _write_json(
        paths["eval"],
        {
            "config_hash": paths["hash"],
            "name": res.name,
            "primitive": res.primitive,
            "property_names": list(res.property_names),
            "nmse_t": np.asarray(res.nmse_t).tolist(),
            "groups": {g: {k: v for k, v in row.items() if k != "timeseries"} for g, row in res.groups.items()},
            "groups_timeseries": {g: np.asarray(row["timeseries"]).tolist() for g, row in res.groups.items()},
            "actions": {str(k): v for k, v in res.actions.items()},
            "latents_final": np.asarray(res.latents_final).tolist(),
            "object_ids": np.asarray(res.object_ids).tolist(),
            "action_index": np.asarray(res.action_index).tolist(),
        },
    )


def load_eval(path: str):
    from .alignment_eval import EvalResult

    with open(path) as fh:
        d = json.load(fh)
    groups = {}
    for g, row in d["groups"].items():
        groups[g] = dict(row)
        groups[g]["timeseries"] = np.asarray(d["groups_timeseries"][g])
    return EvalResult(
        name=d["name"],
        primitive=d["primitive"],
        nmse_t=np.asarray(d["nmse_t"], dtype=float),
        groups=groups,
        actions={int(k): v for k, v in d["actions"].items()},
        latents_final=np.asarray(d["latents_final"], dtype=float),
        object_ids=np.asarray(d["object_ids"]),
        action_index=np.asarray(d["action_index"]),
        property_names=tuple(d["property_names"]),
    )


def _stage_report(cfg, paths):
    from .alignment_eval import emit_report

    emit_report([load_eval(paths["eval"])], paths["report"], plots=cfg["eval"]["plots"])


_STAGE_FN = {
    "gen": _stage_gen,
    "preprocess": _stage_preprocess,
    "train": _stage_train,
    "eval": _stage_eval,
    "report": _stage_report,
}


def run_experiment(cfg: dict, out_root: Optional[str] = None, until: str = "report") -> RunResult:
    """Run every stage up to ``until``, skipping ones already completed.

    A stage is complete when its marker file carries the current config
    hash.  Failures raise :class:`StageError`; earlier artifacts stay.
    """
    cfg = validate_config(cfg)
    paths = run_paths(cfg, out_root)
    os.makedirs(paths["run_dir"], exist_ok=True)
    cfg_path = os.path.join(paths["run_dir"], "config.json")
    if not os.path.exists(cfg_path):
        _write_json(cfg_path, {"config": cfg, "config_hash": paths["hash"]})
    ran = []
    for stage in STAGES[: STAGES.index(until) + 1]:
        marker = _marker(paths["run_dir"], stage)
        if _done(marker, paths["hash"]):
            continue
        log.info("%s: running stage %s", paths["run_dir"], stage)
        try:
            _STAGE_FN[stage](cfg, paths)
        except Exception as exc:  # noqa: BLE001 - reported with the stage name
            raise StageError(stage, exc) from exc
        _mark(marker, paths["hash"])
        ran.append(stage)
    return RunResult(paths["run_dir"], paths["hash"], "completed" if ran else "up to date", tuple(ran))


def matrix_configs(cfg: dict) -> list:
    """One config per (fusion mode, primitive, skin) in the matrix section."""
    cfg = validate_config(cfg)
    out = []
    m = cfg["matrix"]
    for mode, prim, skin in itertools.product(m["fusion_modes"], m["primitives"], m["skins"]):
        c = copy.deepcopy(cfg)
        c.update(fusion_mode=mode, primitive=prim, skin_type=skin)
        out.append(validate_config(c))
    return out


def run_matrix(cfg: dict, out_root: Optional[str] = None, until: str = "report") -> list:
    return [run_experiment(c, out_root, until) for c in matrix_configs(cfg)]
