"""Glue between stored trials, preprocessing, the latent filter and evaluation."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from . import alignment_eval as ae
from .dataset_io import Manifest, load_manifest, raw_from_record, read_trial, trial_actions
from .latent_filter import LatentFilter, ModelConfig, TrainingData
from .preprocessing import (
    N_FRAMES,
    PREPROCESSING_VERSION,
    STREAM_CHANNELS,
    FusionMode,
    NormalizationStats,
    fit_normalization,
    fuse,
    process_trial,
)
from .wave_objects import catalog_specs


@dataclass
class PreparedSlice:
    """All trials of one (skin, primitive) slice, preprocessed and normalized."""

    accel_spec: np.ndarray  # (N, 300, 28, 28) float32
    fsr_proc: np.ndarray  # (N, 300, 28, 28, 2) float32
    actions: np.ndarray  # (N, 300, 6) float32, z-scored on the training split
    object_ids: np.ndarray
    action_index: np.ndarray
    is_test: np.ndarray  # bool
    trial_index: np.ndarray
    stats: dict

    def save(self, path: str) -> None:
        tmp = path + ".tmp.npz"
        np.savez(
            tmp,
            accel_spec=self.accel_spec,
            fsr_proc=self.fsr_proc,
            actions=self.actions,
            object_ids=self.object_ids,
            action_index=self.action_index,
            is_test=self.is_test,
            trial_index=self.trial_index,
            stats_json=np.array(_json(self.stats)),
        )
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "PreparedSlice":
        import json

        with np.load(path) as z:
            return cls(
                accel_spec=z["accel_spec"],
                fsr_proc=z["fsr_proc"],
                actions=z["actions"],
                object_ids=z["object_ids"],
                action_index=z["action_index"],
                is_test=z["is_test"],
                trial_index=z["trial_index"],
                stats=json.loads(str(z["stats_json"])),
            )

    def streams(self, mode: FusionMode, idx: Optional[np.ndarray] = None) -> list:
        """Channel-first encoder inputs ``(n, T, C, 28, 28)`` for ``mode``."""
        idx = np.arange(len(self.object_ids)) if idx is None else idx
        per = [fuse(self.accel_spec[i], self.fsr_proc[i], mode).streams for i in idx]
        return [np.stack([p[k] for p in per]) for k in range(len(per[0]))]


def _json(d) -> str:
    import json

    return json.dumps(d, sort_keys=True)


def prepare_slice(root: str, skin: str, primitive: str, manifest: Optional[Manifest] = None) -> PreparedSlice:
    manifest = manifest or load_manifest(root)
    entries = sorted(manifest.select(skin_type=skin, primitive=primitive), key=lambda e: e.index)
    if not entries:
        raise ValueError(f"dataset has no {skin}/{primitive} trials")
    records = [read_trial(os.path.join(root, e.file)) for e in entries]
    train_raw = [raw_from_record(r) for r, e in zip(records, entries) if e.split == "train"]
    stats = fit_normalization(train_raw)
    acts = np.stack([trial_actions(r) for r in records])
    is_test = np.array([e.split == "test" for e in entries])
    a_mean = acts[~is_test].reshape(-1, 6).mean(axis=0)
    a_std = acts[~is_test].reshape(-1, 6).std(axis=0)
    a_std = np.where(a_std > 0, a_std, 1.0)
    spec, fsr = [], []
    for r in records:
        p = process_trial(raw_from_record(r), stats)
        spec.append(p.accel_spec)
        fsr.append(p.fsr_proc)
    return PreparedSlice(
        accel_spec=np.stack(spec),
        fsr_proc=np.stack(fsr),
        actions=((acts - a_mean) / a_std).astype(np.float32),
        object_ids=np.array([e.object_id for e in entries]),
        action_index=np.array([e.action_index for e in entries]),
        is_test=is_test,
        trial_index=np.array([e.index for e in entries]),
        stats={
            "normalization": stats.to_dict(),
            "action_mean": a_mean.tolist(),
            "action_std": a_std.tolist(),
            "preprocessing_version": PREPROCESSING_VERSION,
            "skin": skin,
            "primitive": primitive,
        },
    )


def training_data(prep: PreparedSlice, mode: FusionMode) -> TrainingData:
    idx = np.flatnonzero(~prep.is_test)
    return TrainingData(prep.streams(mode, idx), prep.actions[idx], prep.object_ids[idx])


def model_config_for(mode: FusionMode, **overrides) -> ModelConfig:
    return ModelConfig(stream_channels=STREAM_CHANNELS[FusionMode(mode)], **overrides)


@torch.no_grad()
def filtered_latents(model: LatentFilter, prep: PreparedSlice, mode: FusionMode, batch: int = 8) -> np.ndarray:
    """Noise-free ``[z, y]`` means for every trial, ``(N, T, n_z + n_y)``."""
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    for s in range(0, len(prep.object_ids), batch):
        idx = np.arange(s, min(s + batch, len(prep.object_ids)))
        streams = [torch.as_tensor(x, dtype=dtype) for x in prep.streams(mode, idx)]
        acts = torch.as_tensor(prep.actions[idx], dtype=dtype)
        out.append(model.latent_features(streams, acts).numpy().astype(np.float64))
    return np.concatenate(out)


def evaluate_slice(
    model: LatentFilter, prep: PreparedSlice, mode: FusionMode, name: str = "run", base_seed: int = 0
) -> ae.EvalResult:
    """KRR fit on final training latents, NMSE traces on the held-out trials."""
    specs = catalog_specs(base_seed)
    targets = ae.property_targets([specs[i] for i in prep.object_ids])
    lat = filtered_latents(model, prep, mode)
    tr, te = ~prep.is_test, prep.is_test
    krr = ae.krr_fit(ae.final_latents(lat[tr]), targets[tr])
    pred = ae.predict_timeseries(krr, lat[te])
    var = targets[te].var(axis=0)
    nmse_t = np.stack([ae.nmse(targets[te], pred[:, t], var) for t in range(pred.shape[1])])
    groups = {g: m for g, m in ae.DEFAULT_GROUPS.items() if np.isin(prep.object_ids[te], m).any()}
    return ae.EvalResult(
        name=name,
        primitive=prep.stats["primitive"],
        nmse_t=nmse_t,
        groups=ae.grouped_nmse(targets[te], pred, prep.object_ids[te], groups),
        actions=ae.action_nmse(targets[te], pred, prep.action_index[te]),
        latents_final=ae.final_latents(lat[te]),
        object_ids=prep.object_ids[te],
        action_index=prep.action_index[te],
    )


__all__ = [
    "N_FRAMES",
    "NormalizationStats",
    "PreparedSlice",
    "evaluate_slice",
    "filtered_latents",
    "model_config_for",
    "prepare_slice",
    "training_data",
]
