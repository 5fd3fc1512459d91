"""Latent-to-property alignment: kernel ridge regression, NMSE and distance analysis."""

from __future__ import annotations

import csv
import io
import os
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist
from sklearn.kernel_ridge import KernelRidge
from sklearn.model_selection import KFold

from .wave_objects import N_OBJECTS, ObjectSpec

PROPERTY_NAMES = ("stiffness", "spatial_freq", "amplitude", "heterogeneity")
FINAL_STEPS = 10
RIDGE_GRID = tuple(10.0 ** np.arange(-6, 3))
MAX_CONDITION = 1e13

SOFT_OBJECTS = (0, 1, 3, 4, 9, 10, 12, 13, 18, 19, 21, 22)
HETEROGENEOUS_OBJECTS = (27, 28, 29, 30, 31)
HARD_OBJECTS = tuple(i for i in range(N_OBJECTS) if i not in SOFT_OBJECTS + HETEROGENEOUS_OBJECTS)
DEFAULT_GROUPS = {"soft": SOFT_OBJECTS, "hard": HARD_OBJECTS, "heterogeneous": HETEROGENEOUS_OBJECTS}


def property_vector(spec: ObjectSpec) -> np.ndarray:
    """Regression targets in ``PROPERTY_NAMES`` order; stiffness as ordinal 0/1/2."""
    return np.array([float(int(spec.stiffness_class)), spec.spatial_freq, spec.amplitude, float(spec.heterogeneity)])


def property_targets(specs: Sequence[ObjectSpec]) -> np.ndarray:
    return np.stack([property_vector(s) for s in specs])


def final_latents(latents: np.ndarray, k: int = FINAL_STEPS) -> np.ndarray:
    """Average of the last ``k`` latent means, ``(n, T, d) -> (n, d)``."""
    latents = np.asarray(latents)
    return latents[:, -k:].mean(axis=1)


def median_bandwidth(x: np.ndarray) -> float:
    d = pdist(np.asarray(x, dtype=float))
    return float(np.median(d)) if d.size else 0.0


def rbf_kernel(a: np.ndarray, b: np.ndarray, bandwidth: float) -> np.ndarray:
    return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * bandwidth**2))


@dataclass
class AlignmentModel:
    bandwidth: float
    ridge: float
    x_train: np.ndarray
    dual_coef: np.ndarray  # (n, p) on standardized targets
    target_mean: np.ndarray
    target_scale: np.ndarray
    cv_scores: dict = field(default_factory=dict)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        k = rbf_kernel(x, self.x_train, self.bandwidth)
        return k @ self.dual_coef * self.target_scale + self.target_mean


def _standardize(y: np.ndarray):
    mean = y.mean(axis=0)
    scale = y.std(axis=0)
    const = scale == 0
    if const.any():
        warnings.warn(f"constant target column(s) {np.flatnonzero(const).tolist()}; predictor will be constant")
    scale = np.where(const, 1.0, scale)
    return (y - mean) / scale, mean, scale


def _solve(x, y_std, bandwidth, ridge):
    kr = KernelRidge(alpha=ridge, kernel="rbf", gamma=1.0 / (2.0 * bandwidth**2))
    kr.fit(x, y_std)
    return np.asarray(kr.dual_coef_).reshape(len(x), -1)


def krr_fit(
    latents: np.ndarray,
    targets: np.ndarray,
    ridge: Optional[float] = None,
    bandwidth: Optional[float] = None,
    ridge_grid: Sequence[float] = RIDGE_GRID,
    n_folds: int = 5,
    seed: int = 0,
) -> AlignmentModel:
    """RBF kernel ridge regression from latents ``(n, d)`` to targets ``(n, p)``.

    The bandwidth defaults to the median pairwise distance; when ``ridge``
    is None it is chosen by k-fold cross-validation on ``ridge_grid``,
    scoring the mean squared error of the standardized targets.
    """
    x = np.asarray(latents, dtype=float)
    y = np.asarray(targets, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError(f"latents {x.shape} and targets {y.shape} do not pair up")
    if not np.isfinite(x).all():
        raise ValueError("latents contain non-finite values")
    h = median_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValueError("degenerate kernel: latents have zero median pairwise distance")
    y_std, mean, scale = _standardize(y)

    scores = {}
    if ridge is None:
        folds = KFold(n_splits=min(n_folds, len(x)), shuffle=True, random_state=seed)
        for lam in ridge_grid:
            err = 0.0
            for tr, te in folds.split(x):
                coef = _solve(x[tr], y_std[tr], h, lam)
                pred = rbf_kernel(x[te], x[tr], h) @ coef
                err += ((pred - y_std[te]) ** 2).sum()
            scores[float(lam)] = err / y_std.size
        ridge = min(scores, key=lambda lam: (scores[lam], -lam))
    if not ridge > 0:
        raise ValueError("ridge weight must be positive")

    k = rbf_kernel(x, x, h)
    cond = np.linalg.cond(k + ridge * np.eye(len(x)))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise ValueError(f"degenerate kernel matrix: condition number {cond:.3g} exceeds {MAX_CONDITION:.0e}")
    coef = _solve(x, y_std, h, ridge)
    return AlignmentModel(h, float(ridge), x, coef, mean, scale, scores)


def nmse(y_true: np.ndarray, y_pred: np.ndarray, variance: Optional[np.ndarray] = None) -> np.ndarray:
    """Mean squared error over samples divided by the population variance, per column.

    Columns with zero variance come back as NaN with a warning.
    """
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.ndim == 1:
        y_true, y_pred = y_true[:, None], y_pred[:, None]
    var = y_true.var(axis=0) if variance is None else np.asarray(variance, dtype=float)
    mse = ((y_true - y_pred) ** 2).mean(axis=0)
    zero = var == 0
    if zero.any():
        warnings.warn(f"zero target variance in column(s) {np.flatnonzero(zero).tolist()}; NMSE skipped")
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(zero, np.nan, mse / np.where(zero, 1.0, var))


def predict_timeseries(model: AlignmentModel, latents: np.ndarray) -> np.ndarray:
    """Property predictions from the latent mean at every step, ``(n, T, p)``."""
    latents = np.asarray(latents, dtype=float)
    n, T, d = latents.shape
    return model.predict(latents.reshape(n * T, d)).reshape(n, T, -1)


def nmse_timeseries(model: AlignmentModel, latents: np.ndarray, targets: np.ndarray, variance=None) -> np.ndarray:
    """NMSE per step and property, ``(T, p)``."""
    pred = predict_timeseries(model, latents)
    targets = np.asarray(targets, dtype=float).reshape(len(pred), -1)
    return np.stack([nmse(targets, pred[:, t], variance) for t in range(pred.shape[1])])


@dataclass
class DistanceResult:
    classes: np.ndarray
    intra: np.ndarray  # (C,) mean within-class pairwise distance
    inter: np.ndarray  # (C, C) centroid distances
    normalized_intra: np.ndarray
    normalized_inter: np.ndarray


def distance_matrices(latents: np.ndarray, labels: Sequence[int]) -> DistanceResult:
    """Intra- and inter-class Euclidean distances, jointly scaled to [0, 1].

    Both outputs are divided by the largest distance among them; the zero
    diagonal of the inter-class matrix supplies the minimum.
    """
    x = np.asarray(latents, dtype=float)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    cents, intra = [], []
    for c in classes:
        members = x[labels == c]
        if len(members) < 2:
            raise ValueError(f"class {c} needs at least two samples for an intra-class distance")
        cents.append(members.mean(axis=0))
        intra.append(pdist(members).mean())
    intra = np.asarray(intra)
    inter = cdist(np.stack(cents), np.stack(cents))
    inter = 0.5 * (inter + inter.T)
    np.fill_diagonal(inter, 0.0)
    top = max(inter.max(), intra.max())
    if top == 0:
        return DistanceResult(classes, intra, inter, np.zeros_like(intra), np.zeros_like(inter))
    return DistanceResult(classes, intra, inter, intra / top, inter / top)


def grouped_nmse(
    targets: np.ndarray,
    predictions: np.ndarray,
    object_ids: Sequence[int],
    groups: Mapping[str, Sequence[int]] = DEFAULT_GROUPS,
    property_names: Sequence[str] = PROPERTY_NAMES,
) -> dict:
    """NMSE of each object group, normalized by the variance over all trials.

    ``predictions`` is ``(n, T, p)``.  Returns ``{group: {property: value,
    "overall": value, "timeseries": (T, p)}}`` with values at the final step.
    """
    targets = np.asarray(targets, dtype=float)
    predictions = np.asarray(predictions, dtype=float)
    object_ids = np.asarray(object_ids)
    var = targets.var(axis=0)
    out = {}
    for name, members in groups.items():
        mask = np.isin(object_ids, list(members))
        if not mask.any():
            raise ValueError(f"group {name!r} has no trials")
        ts = np.stack(
            [nmse(targets[mask], predictions[mask, t], var) for t in range(predictions.shape[1])]
        )
        row = {p: float(ts[-1, k]) for k, p in enumerate(property_names)}
        row["overall"] = float(np.nanmean(ts[-1]))
        row["timeseries"] = ts
        out[name] = row
    return out


def action_nmse(targets, predictions, action_index) -> dict:
    """Overall final-step NMSE per action index (global variance)."""
    targets = np.asarray(targets, dtype=float)
    final = np.asarray(predictions, dtype=float)[:, -1]
    var = targets.var(axis=0)
    action_index = np.asarray(action_index)
    return {
        int(a): float(np.nanmean(nmse(targets[action_index == a], final[action_index == a], var)))
        for a in np.unique(action_index)
    }


# -- reporting ------------------------------------------------------------


@dataclass
class EvalResult:
    """Everything the report needs for one trained configuration."""

    name: str
    primitive: str
    nmse_t: np.ndarray  # (T, p) held-out
    groups: dict  # output of grouped_nmse
    actions: dict  # output of action_nmse
    latents_final: np.ndarray  # (n, d) held-out
    object_ids: np.ndarray
    action_index: np.ndarray
    property_names: tuple = PROPERTY_NAMES


def _fmt(v) -> str:
    return "%.10g" % v


def _write_csv(path: str, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


NMSE_COLUMNS = ("config", "primitive", "step", "property", "nmse")
GROUP_COLUMNS = ("config", "primitive", "group", "row", "nmse")
ACTION_COLUMNS = ("config", "primitive", "action_index", "nmse")


def emit_report(results: Sequence[EvalResult], out_dir: str, plots: bool = True) -> list[str]:
    """Write CSV tables (and PNG figures) for a set of evaluated configurations."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    rows = []
    for r in results:
        for t in range(r.nmse_t.shape[0]):
            for k, p in enumerate(r.property_names):
                rows.append((r.name, r.primitive, t, p, float(r.nmse_t[t, k])))
    written.append(os.path.join(out_dir, "nmse_timeseries.csv"))
    _write_csv(written[-1], NMSE_COLUMNS, rows)

    rows = []
    for r in results:
        for g, vals in r.groups.items():
            for key in tuple(r.property_names) + ("overall",):
                rows.append((r.name, r.primitive, g, key, float(vals[key])))
    written.append(os.path.join(out_dir, "grouped_nmse.csv"))
    _write_csv(written[-1], GROUP_COLUMNS, rows)

    rows = [(r.name, r.primitive, a, float(v)) for r in results for a, v in sorted(r.actions.items())]
    written.append(os.path.join(out_dir, "action_nmse.csv"))
    _write_csv(written[-1], ACTION_COLUMNS, rows)

    rows = []
    for r in results:
        for i, vec in enumerate(r.latents_final):
            rows.append((r.name, i, int(r.object_ids[i]), int(r.action_index[i]), *map(float, vec)))
    d = results[0].latents_final.shape[1] if results else 0
    written.append(os.path.join(out_dir, "latents_final.csv"))
    _write_csv(written[-1], ("config", "trial", "object_id", "action_index") + tuple(f"l{k}" for k in range(d)), rows)

    if plots and results:
        written += _plot(results, out_dir)
    return written


def _plot(results, out_dir) -> list[str]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    props = results[0].property_names
    fig, axes = plt.subplots(1, len(props), figsize=(4 * len(props), 3), sharey=True)
    for ax, (k, p) in zip(np.atleast_1d(axes), enumerate(props)):
        for r in results:
            ax.plot(r.nmse_t[:, k], label=r.name)
        ax.set_title(p)
        ax.set_xlabel("frame")
    np.atleast_1d(axes)[0].set_ylabel("NMSE")
    np.atleast_1d(axes)[-1].legend(fontsize=7)
    fig.tight_layout()
    paths.append(os.path.join(out_dir, "nmse_vs_time.png"))
    fig.savefig(paths[-1], metadata={"Software": None})
    plt.close(fig)

    for r in results:
        try:
            dist = distance_matrices(r.latents_final, r.object_ids)
        except ValueError:
            continue
        heat = dist.normalized_inter.copy()
        np.fill_diagonal(heat, dist.normalized_intra)
        fig, ax = plt.subplots(figsize=(4, 4))
        im = ax.imshow(heat, vmin=0, vmax=1, cmap="viridis")
        ax.set_xticks(range(len(dist.classes)), dist.classes, fontsize=6)
        ax.set_yticks(range(len(dist.classes)), dist.classes, fontsize=6)
        fig.colorbar(im, ax=ax)
        ax.set_title(r.name, fontsize=8)
        fig.tight_layout()
        paths.append(os.path.join(out_dir, f"distances_{r.name}.png"))
        fig.savefig(paths[-1], metadata={"Software": None})
        plt.close(fig)
    return paths
