"""Dataset ingestion, standardization and synthetic data generation."""

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .exceptions import ValidationError
from .kernels import KernelConfig, kernel_matrix
from .linalg import jittered_cholesky

__all__ = [
    "Dataset",
    "load_dataset",
    "standardize",
    "generate_synthetic",
    "save_dataset_csv",
]


@dataclass(frozen=True)
class Dataset:
    """Standardized feature matrix with binary labels.

    ``x`` holds features already scaled to zero mean and unit standard
    deviation column-wise; the statistics used are kept so raw values can
    be recovered (``raw_features``) or new points mapped consistently.
    ``latent`` optionally stores the generating latent function values of
    synthetic data for diagnostics.
    """

    x: np.ndarray
    y: np.ndarray
    feature_means: np.ndarray
    feature_stds: np.ndarray
    name: str = "dataset"
    feature_names: tuple = None
    latent: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.atleast_1d(np.asarray(self.y))
        if x.shape[0] != y.shape[0]:
            raise ValidationError("feature rows and labels differ in length")
        if not np.all(np.isfinite(x)):
            raise ValidationError("features contain non-finite values")
        if y.size and not np.all(np.isin(y, (0, 1))):
            raise ValidationError("labels must be binary in {0, 1}")
        if np.any(np.asarray(self.feature_stds, dtype=float) <= 0.0):
            raise ValidationError("feature standard deviations must be positive")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y.astype(int))
        object.__setattr__(self, "feature_means",
                           np.asarray(self.feature_means, dtype=float))
        object.__setattr__(self, "feature_stds",
                           np.asarray(self.feature_stds, dtype=float))
        if self.feature_names is None:
            object.__setattr__(
                self, "feature_names",
                tuple(f"x{j}" for j in range(x.shape[1])),
            )
        else:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    def raw_features(self):
        """Undo the standardization."""
        return self.x * self.feature_stds[None, :] + self.feature_means[None, :]

    def subset(self, idx, name=None):
        """Row subset; keeps the parent standardization statistics."""
        idx = np.asarray(idx, dtype=int)
        return Dataset(
            x=self.x[idx], y=self.y[idx],
            feature_means=self.feature_means, feature_stds=self.feature_stds,
            name=name or self.name, feature_names=self.feature_names,
            latent=None if self.latent is None else self.latent[idx],
        )


def standardize(raw, names=None):
    """Column-wise standardization; constant columns are dropped with a warning.

    Returns ``(x, means, stds, kept_names)``.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    if names is None:
        names = [f"x{j}" for j in range(raw.shape[1])]
    means = raw.mean(axis=0)
    stds = raw.std(axis=0)
    keep = stds > 0.0
    if not np.all(keep):
        dropped = [names[j] for j in np.flatnonzero(~keep)]
        warnings.warn(
            f"dropping constant feature column(s): {dropped}", stacklevel=2
        )
    if not np.any(keep):
        raise ValidationError("all feature columns are constant")
    kept_names = tuple(names[j] for j in np.flatnonzero(keep))
    x = (raw[:, keep] - means[keep][None, :]) / stds[keep][None, :]
    return x, means[keep], stds[keep], kept_names


def load_dataset(path, label_column="y", name=None) -> Dataset:
    """Read a CSV with a header row into a standardized :class:`Dataset`.

    All non-label columns are parsed as floating-point features; the label
    column must contain only 0 and 1.  Parse failures report the offending
    row and column.  Row order follows the file.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise ValidationError(
                f"{path}: label column {label_column!r} not found in header "
                f"{header}"
            )
        label_idx = header.index(label_column)
        feature_names = [h for i, h in enumerate(header) if i != label_idx]

        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(
                    f"{path}: row {lineno} has {len(row)} cells, expected "
                    f"{len(header)}"
                )
            feats = []
            for i, cell in enumerate(row):
                if i == label_idx:
                    continue
                try:
                    feats.append(float(cell))
                except ValueError:
                    raise ValidationError(
                        f"{path}: row {lineno}, column {header[i]!r}: "
                        f"cannot parse {cell!r} as a number"
                    ) from None
            cell = row[label_idx].strip()
            if cell not in ("0", "1"):
                try:
                    val = float(cell)
                except ValueError:
                    raise ValidationError(
                        f"{path}: row {lineno}, column {label_column!r}: "
                        f"cannot parse {cell!r} as a label"
                    ) from None
                if val not in (0.0, 1.0):
                    raise ValidationError(
                        f"{path}: row {lineno}: label {cell!r} is not binary"
                    )
                cell = str(int(val))
            labels.append(int(cell))
            rows.append(feats)

    if not rows:
        raise ValidationError(f"{path}: no data rows")
    raw = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(raw)):
        bad = np.argwhere(~np.isfinite(raw))[0]
        raise ValidationError(
            f"{path}: row {bad[0] + 2}, column {feature_names[bad[1]]!r}: "
            f"non-finite value"
        )
    x, means, stds, kept = standardize(raw, feature_names)
    return Dataset(
        x=x, y=np.asarray(labels), feature_means=means, feature_stds=stds,
        name=name or str(path), feature_names=kept,
    )


def generate_synthetic(n, p=1, lengthscale=0.5, variance=2.0, seed=0,
                       name=None) -> Dataset:
    """Probit-GP synthetic classification data.

    Inputs are drawn ``x_i ~ N(0, I_p)``, the latent function from a
    zero-mean GP with an RBF kernel (default lengthscale 0.5, variance 2),
    and labels ``y_i ~ Bernoulli(Phi(f(x_i)))``.  The generating latent is
    kept on the dataset for diagnostics.
    """
    if n < 2:
        raise ValidationError("n must be at least 2")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 101]))
    raw = rng.standard_normal((n, p))
    cfg = KernelConfig(family="rbf", variance=variance,
                       lengthscales=np.array([lengthscale]))
    k = kernel_matrix(cfg, raw)
    chol = jittered_cholesky(k)
    f = chol @ rng.standard_normal(n)
    y = (rng.random(n) < ndtr(f)).astype(int)
    x, means, stds, names = standardize(raw)
    return Dataset(
        x=x, y=y, feature_means=means, feature_stds=stds,
        name=name or f"synthetic-n{n}-p{p}-seed{seed}",
        feature_names=names, latent=f,
    )


def read_raw_csv(path, feature_columns, label_column=None):
    """Read named feature columns (and optionally labels) without standardizing.

    Used at prediction time, where the standardization statistics come from
    the saved model rather than the new file.  Returns ``(x_raw, y)`` with
    ``y`` None when no label column is requested.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: file is empty") from None
        missing = [c for c in feature_columns if c not in header]
        if missing:
            raise ValidationError(f"{path}: missing feature column(s) {missing}")
        if label_column is not None and label_column not in header:
            raise ValidationError(
                f"{path}: label column {label_column!r} not found"
            )
        cols = [header.index(c) for c in feature_columns]
        label_idx = header.index(label_column) if label_column else None

        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            feats = []
            for i in cols:
                try:
                    feats.append(float(row[i]))
                except (ValueError, IndexError):
                    cell = row[i] if i < len(row) else "<missing>"
                    raise ValidationError(
                        f"{path}: row {lineno}, column {header[i]!r}: "
                        f"cannot parse {cell!r} as a number"
                    ) from None
            rows.append(feats)
            if label_idx is not None:
                cell = row[label_idx].strip()
                if cell not in ("0", "1"):
                    raise ValidationError(
                        f"{path}: row {lineno}: label {cell!r} is not binary"
                    )
                labels.append(int(cell))
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    x = np.asarray(rows, dtype=float)
    y = np.asarray(labels, dtype=int) if label_idx is not None else None
    return x, y


def save_dataset_csv(dataset: Dataset, path, raw=True, label_column="y"):
    """Write features and labels as CSV (raw, un-standardized scale by default)."""
    x = dataset.raw_features() if raw else dataset.x
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(dataset.feature_names) + [label_column])
        for row, label in zip(x, dataset.y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
