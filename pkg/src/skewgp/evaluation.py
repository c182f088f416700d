"""Metrics, cross-validation and the model-comparison harness.

The performance measure is the average information of the predictions in
bits: with the label coded as +/-1 and ``p`` the predicted probability of
class 1,

    I(p, y) = (y + 1)/2 * log2(p) + (1 - y)/2 * log2(1 - p) + 1,

which is 1 bit for a certain correct prediction, 0 for ``p = 0.5`` and
negative when the wrong class gets the larger probability.  Probabilities
are clipped to ``[1e-12, 1 - 1e-12]`` before scoring so the score stays
finite.

Cross-validation is stratified and leakage-free: standardization statistics
are recomputed on each training fold and applied to its test fold.  All
fold work is seeded through stable sub-seeds, so reports are reproducible
byte for byte (timings are excluded unless explicitly requested).
"""

import importlib.resources
import json
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .classifier import FitConfig, _phi_seed, fit, predict_full
from .data import Dataset
from .exceptions import ValidationError
from .laplace import LaplaceFitConfig, fit_laplace, laplace_predict_proba

__all__ = [
    "information_score",
    "one_vs_rest",
    "ClassifierSpec",
    "spec_from_name",
    "stratified_folds",
    "kfold_cv",
    "benchmark",
    "canonical_json",
    "report_schema",
    "validate_report",
]

PROB_CLIP = 1e-12
SCHEMA_VERSION = 1


def information_score(p_hat, y):
    """Per-prediction information in bits (labels given in {0, 1})."""
    p = np.clip(np.asarray(p_hat, dtype=float), PROB_CLIP, 1.0 - PROB_CLIP)
    y = np.asarray(y)
    if p.shape != y.shape:
        raise ValidationError("p_hat and y must have the same length")
    if y.size and not np.all(np.isin(y, (0, 1))):
        raise ValidationError("labels must be binary in {0, 1}")
    yy = 2.0 * y.astype(float) - 1.0
    return (yy + 1.0) / 2.0 * np.log2(p) + (1.0 - yy) / 2.0 * np.log2(1.0 - p) + 1.0


def one_vs_rest(class_probs):
    """Multi-class labels from per-class probability vectors.

    ``class_probs`` is a sequence of equal-length vectors, one per class;
    the predicted label is the argmax with ties broken toward the lowest
    class index.
    """
    mat = np.asarray([np.asarray(p, dtype=float) for p in class_probs])
    if mat.ndim != 2:
        raise ValidationError("class_probs must be a list of equal-length vectors")
    lengths = {len(p) for p in class_probs}
    if len(lengths) > 1:
        raise ValidationError(f"probability vectors differ in length: {lengths}")
    return np.argmax(mat, axis=0)


# ---------------------------------------------------------------------------
# classifier specs (uniform interface over the two model families)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassifierSpec:
    """Named model configuration for the harness."""

    name: str
    kind: str  # "skewgp" | "gp_laplace"
    options: tuple = ()  # sorted (key, value) pairs forwarded to the config

    def config(self, seed):
        opts = dict(self.options)
        if self.kind == "skewgp":
            return FitConfig(seed=seed, **opts)
        if self.kind == "gp_laplace":
            opts.pop("latent_dim", None)
            opts.pop("batch_size", None)
            return LaplaceFitConfig(seed=seed, **opts)
        raise ValidationError(f"unknown model kind {self.kind!r}")

    def to_dict(self):
        return {"name": self.name, "kind": self.kind, "options": dict(self.options)}


def spec_from_name(name, **overrides) -> ClassifierSpec:
    """Shortcut specs: ``skewgp0``, ``skewgp2``, ``gp-laplace``."""
    key = name.lower().replace("_", "-")
    if key == "skewgp0":
        kind, opts = "skewgp", {"latent_dim": 0}
    elif key == "skewgp2":
        kind, opts = "skewgp", {"latent_dim": 2}
    elif key == "gp-laplace":
        kind, opts = "gp_laplace", {}
    else:
        raise ValidationError(
            f"unknown model name {name!r}; expected skewgp0, skewgp2 or gp-laplace"
        )
    opts.update(overrides)
    return ClassifierSpec(name=key, kind=kind, options=tuple(sorted(opts.items())))


@dataclass
class _Fitted:
    kind: str
    model: object
    objective: float
    mc_samples: int
    seed: int

    def predict(self, x):
        """probs, skewness, prediction std and hard labels at rows of x."""
        if self.kind == "skewgp":
            res = predict_full(
                self.model, x, n_samples=self.mc_samples,
                seed=_phi_seed(self.seed, 41),
            )
            return res.probs, res.skewness, res.prediction_std, res.labels
        probs = laplace_predict_proba(self.model, x)
        # Gaussian latent predictive: zero skewness; the per-draw class
        # decision is Bernoulli(Phi(mu/sigma)), so its std is closed form
        x = np.atleast_2d(np.asarray(x, dtype=float))
        from .kernels import kernel_diag, kernel_matrix
        from scipy.linalg import solve_triangular

        k_star = kernel_matrix(self.model.kernel, self.model.train.x, x)
        mu = k_star.T @ self.model.grad_at_mode
        v = solve_triangular(
            self.model.chol_b, self.model.sqrt_w[:, None] * k_star, lower=True
        )
        var = np.maximum(
            kernel_diag(self.model.kernel, x) - np.sum(v * v, axis=0), 1e-300
        )
        q = ndtr(mu / np.sqrt(var))
        pred_std = np.sqrt(q * (1.0 - q))
        labels = (probs >= 0.5).astype(int)
        return probs, np.zeros_like(probs), pred_std, labels


def fit_spec(spec: ClassifierSpec, x, y, seed) -> _Fitted:
    config = spec.config(seed)
    if spec.kind == "skewgp":
        model, trace = fit(x, y, config)
        return _Fitted(kind="skewgp", model=model, objective=trace.objective,
                       mc_samples=config.mc_samples, seed=seed)
    model, objective = fit_laplace(x, y, config)
    return _Fitted(kind="gp_laplace", model=model, objective=objective,
                   mc_samples=config.mc_samples, seed=seed)


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------


def stratified_folds(y, k, seed=0, max_retries=20):
    """Class-ratio-preserving folds with sizes differing by at most one.

    Shuffled indices are dealt round-robin, continuing the fold pointer
    across classes.  Every training fold (the complement of a test fold)
    must contain both classes; the assignment is retried with fresh
    shuffles and finally raises if that cannot be achieved.
    """
    y = np.asarray(y)
    n = y.shape[0]
    if k < 2:
        raise ValidationError("k must be at least 2")
    if n < k:
        raise ValidationError(f"cannot make {k} folds from {n} points")
    for attempt in range(max_retries):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 31, attempt]))
        folds = [[] for _ in range(k)]
        pointer = 0
        for cls in (0, 1):
            idx = np.flatnonzero(y == cls)
            rng.shuffle(idx)
            for i in idx:
                folds[pointer % k].append(int(i))
                pointer += 1
        folds = [np.asarray(sorted(f), dtype=int) for f in folds]
        ok = True
        for i in range(k):
            train_idx = np.concatenate([folds[j] for j in range(k) if j != i])
            if len(set(y[train_idx].tolist())) < 2:
                ok = False
                break
        if ok:
            return folds
    raise ValidationError(
        "could not build stratified folds whose training parts contain both "
        "classes; a class has too few members for this k"
    )


def _fold_dataset(dataset: Dataset, train_idx, test_idx):
    """Refit standardization on the training rows only (leakage guard)."""
    raw = dataset.raw_features()
    raw_tr = raw[train_idx]
    stds_all = raw_tr.std(axis=0)
    keep = np.flatnonzero(stds_all > 0.0)
    if keep.size == 0:
        raise ValidationError("all features are constant on a training fold")
    means = raw_tr[:, keep].mean(axis=0)
    stds = stds_all[keep]
    x_tr = (raw_tr[:, keep] - means[None, :]) / stds[None, :]
    x_te = (raw[test_idx][:, keep] - means[None, :]) / stds[None, :]
    return x_tr, x_te, means, stds


def kfold_cv(dataset: Dataset, spec: ClassifierSpec, k=5, seed=0,
             timings=False):
    """Stratified k-fold cross-validation report for one model spec.

    Deterministic given ``seed``: identical inputs produce a byte-identical
    report unless ``timings=True`` (wall-clock values are inherently
    irreproducible and default to None).
    """
    folds = stratified_folds(dataset.y, k, seed=seed)
    fold_reports = []
    for i, test_idx in enumerate(folds):
        train_idx = np.concatenate([folds[j] for j in range(k) if j != i])
        x_tr, x_te, _, _ = _fold_dataset(dataset, train_idx, test_idx)
        t0 = time.perf_counter()
        fitted = fit_spec(spec, x_tr, dataset.y[train_idx],
                          seed=_phi_seed(seed, 51, i))
        t1 = time.perf_counter()
        probs, ss, pred_std, labels = fitted.predict(x_te)
        t2 = time.perf_counter()
        y_te = dataset.y[test_idx]
        info = information_score(probs, y_te)
        fold_reports.append({
            "fold": i,
            "test_indices": [int(j) for j in test_idx],
            "accuracy": float(np.mean(labels == y_te)),
            "mean_information_score": float(np.mean(info)),
            "p_hat": [float(v) for v in probs],
            "information_score": [float(v) for v in info],
            "skewness_statistic": [float(v) for v in ss],
            "prediction_std": [float(v) for v in pred_std],
            "fit_objective": float(fitted.objective),
            "runtime_fit_seconds": (t1 - t0) if timings else None,
            "runtime_predict_seconds": (t2 - t1) if timings else None,
        })

    accs = [f["accuracy"] for f in fold_reports]
    infos = [f["mean_information_score"] for f in fold_reports]
    ss_all = [v for f in fold_reports for v in f["skewness_statistic"]]
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "cv_report",
        "dataset": dataset.name,
        "n": int(dataset.n),
        "p": int(dataset.p),
        "folds_requested": int(k),
        "seed": int(seed),
        "model": spec.to_dict(),
        "folds": fold_reports,
        "aggregate": {
            "accuracy_mean": float(np.mean(accs)),
            "accuracy_std": float(np.std(accs)),
            "information_score_mean": float(np.mean(infos)),
            "information_score_std": float(np.std(infos)),
            "max_abs_skewness": float(np.max(np.abs(ss_all))) if ss_all else 0.0,
        },
    }


def benchmark(specs, datasets, k=5, seed=0, timings=False):
    """Side-by-side cross-validated comparison of model specs.

    Per-run failures are caught and flagged so remaining cells still run.
    The result carries one cv report per (dataset, model) cell, a compact
    comparison table, and plot rows pairing each skew-capable model's
    maximum skewness statistic with its score difference against every
    other model on the same dataset.
    """
    cells = []
    for dataset in datasets:
        for spec in specs:
            try:
                report = kfold_cv(dataset, spec, k=k, seed=seed,
                                  timings=timings)
                cells.append({"dataset": dataset.name, "model": spec.name,
                              "error": None, "report": report})
            except Exception as exc:  # keep the run going, flag the cell
                cells.append({"dataset": dataset.name, "model": spec.name,
                              "error": f"{type(exc).__name__}: {exc}",
                              "report": None})

    table = []
    for cell in cells:
        if cell["report"] is None:
            table.append({
                "dataset": cell["dataset"], "model": cell["model"],
                "accuracy": None, "information_score": None,
                "max_abs_skewness": None, "error": cell["error"],
            })
        else:
            agg = cell["report"]["aggregate"]
            table.append({
                "dataset": cell["dataset"], "model": cell["model"],
                "accuracy": agg["accuracy_mean"],
                "information_score": agg["information_score_mean"],
                "max_abs_skewness": agg["max_abs_skewness"],
                "error": None,
            })

    plot_rows = []
    by_key = {(c["dataset"], c["model"]): c for c in cells}
    for dataset in datasets:
        for spec_a in specs:
            if spec_a.kind != "skewgp":
                continue
            cell_a = by_key[(dataset.name, spec_a.name)]
            if cell_a["report"] is None:
                continue
            for spec_b in specs:
                if spec_b.name == spec_a.name:
                    continue
                cell_b = by_key[(dataset.name, spec_b.name)]
                if cell_b["report"] is None:
                    continue
                plot_rows.append({
                    "dataset": dataset.name,
                    "model": spec_a.name,
                    "baseline": spec_b.name,
                    "max_abs_skewness": cell_a["report"]["aggregate"]["max_abs_skewness"],
                    "score_difference": (
                        cell_a["report"]["aggregate"]["information_score_mean"]
                        - cell_b["report"]["aggregate"]["information_score_mean"]
                    ),
                })

    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "benchmark_report",
        "seed": int(seed),
        "folds": int(k),
        "models": [s.to_dict() for s in specs],
        "datasets": [d.name for d in datasets],
        "table": table,
        "plot_rows": plot_rows,
        "cells": cells,
    }


def canonical_json(obj):
    """Deterministic JSON encoding (sorted keys, shortest float repr)."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False)


def report_schema():
    """The published JSON schema for benchmark reports."""
    ref = importlib.resources.files("skewgp") / "schemas" / "benchmark_report.schema.json"
    return json.loads(ref.read_text())


def validate_report(report):
    """Raise if ``report`` does not conform to the published schema."""
    import jsonschema

    jsonschema.validate(instance=report, schema=report_schema())
