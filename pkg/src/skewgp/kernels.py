"""Covariance functions and their correlation-normalized forms.

Two families are provided:

* ``rbf`` — squared exponential with a variance and per-dimension (ARD)
  lengthscales, ``k(x, z) = variance * exp(-0.5 * sum((x - z)^2 / l^2))``.
* ``nn`` — the arcsine neural-network kernel of Williams (1998) with the
  input augmented by a constant 1 (bias term):
  ``k(x, z) = variance * (2/pi) * asin(2 s(x,z) / sqrt((1+2 s(x,x))(1+2 s(z,z))))``
  with ``s(x, z) = bias_variance + weight_variance * x' z``.

The correlation form ``kbar(x, z) = k(x, z) / sqrt(k(x,x) k(z,z))`` is the
pointwise normalization; for stationary kernels it reduces to ``k / variance``,
for the (non-stationary) NN kernel the diagonal is position dependent, so the
normalization must use the actual diagonal.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ValidationError

__all__ = [
    "KernelConfig",
    "kernel_matrix",
    "kernel_diag",
    "corr_kernel_matrix",
    "correlation_form",
]

_FAMILIES = ("rbf", "nn")


@dataclass(frozen=True)
class KernelConfig:
    """Kernel family and hyperparameters.

    ``lengthscales`` may be a scalar (isotropic) or a length-``p`` vector
    (ARD); it is ignored by the ``nn`` family, whose extra parameters are
    ``nn_bias_variance`` and ``nn_weight_variance``.
    """

    family: str = "rbf"
    variance: float = 1.0
    lengthscales: np.ndarray = field(default_factory=lambda: np.array([1.0]))
    nn_bias_variance: float = 1.0
    nn_weight_variance: float = 1.0

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValidationError(
                f"unknown kernel family {self.family!r}; expected one of {_FAMILIES}"
            )
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        for name, val in [
            ("variance", self.variance),
            ("nn_bias_variance", self.nn_bias_variance),
            ("nn_weight_variance", self.nn_weight_variance),
        ]:
            if not np.isfinite(val) or val <= 0.0:
                raise ValidationError(f"{name} must be strictly positive, got {val}")
        if np.any(~np.isfinite(ls)) or np.any(ls <= 0.0):
            raise ValidationError("lengthscales must be strictly positive")

    def resolved_lengthscales(self, p):
        """Lengthscale vector of length ``p`` (broadcasting a scalar)."""
        ls = self.lengthscales
        if ls.shape[0] == 1:
            return np.full(p, ls[0])
        if ls.shape[0] != p:
            raise ValidationError(
                f"lengthscales has {ls.shape[0]} entries but inputs have "
                f"{p} dimensions"
            )
        return ls

    def to_dict(self):
        return {
            "family": self.family,
            "variance": float(self.variance),
            "lengthscales": [float(v) for v in self.lengthscales],
            "nn_bias_variance": float(self.nn_bias_variance),
            "nn_weight_variance": float(self.nn_weight_variance),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            family=d["family"],
            variance=d["variance"],
            lengthscales=np.asarray(d["lengthscales"], dtype=float),
            nn_bias_variance=d.get("nn_bias_variance", 1.0),
            nn_weight_variance=d.get("nn_weight_variance", 1.0),
        )


def _as_2d(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValidationError(f"{name} must be a 2-d array of rows")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name} contains non-finite entries")
    return x


def _nn_dot(cfg, x, z):
    # augmented-input inner product s(x, z) = sigma_b^2 + sigma_w^2 x'z
    return cfg.nn_bias_variance + cfg.nn_weight_variance * (x @ z.T)


def kernel_matrix(cfg: KernelConfig, x, z=None):
    """Cross-covariance matrix ``K[i, j] = k(x_i, z_j)``."""
    x = _as_2d(x, "x")
    z = x if z is None else _as_2d(z, "z")
    if x.shape[1] != z.shape[1]:
        raise ValidationError(
            f"inputs have mismatched dimensions {x.shape[1]} vs {z.shape[1]}"
        )
    if cfg.family == "rbf":
        ls = cfg.resolved_lengthscales(x.shape[1])
        xs = x / ls
        zs = z / ls
        d2 = (
            np.sum(xs**2, axis=1)[:, None]
            + np.sum(zs**2, axis=1)[None, :]
            - 2.0 * (xs @ zs.T)
        )
        return cfg.variance * np.exp(-0.5 * np.maximum(d2, 0.0))
    # nn kernel
    sxz = _nn_dot(cfg, x, z)
    sxx = cfg.nn_bias_variance + cfg.nn_weight_variance * np.sum(x**2, axis=1)
    szz = cfg.nn_bias_variance + cfg.nn_weight_variance * np.sum(z**2, axis=1)
    arg = 2.0 * sxz / np.sqrt((1.0 + 2.0 * sxx)[:, None] * (1.0 + 2.0 * szz)[None, :])
    return cfg.variance * (2.0 / np.pi) * np.arcsin(np.clip(arg, -1.0, 1.0))


def kernel_diag(cfg: KernelConfig, x):
    """Diagonal ``k(x_i, x_i)`` without forming the full matrix."""
    x = _as_2d(x, "x")
    if cfg.family == "rbf":
        return np.full(x.shape[0], cfg.variance)
    sxx = cfg.nn_bias_variance + cfg.nn_weight_variance * np.sum(x**2, axis=1)
    arg = 2.0 * sxx / (1.0 + 2.0 * sxx)
    return cfg.variance * (2.0 / np.pi) * np.arcsin(arg)


def corr_kernel_matrix(cfg: KernelConfig, x, z=None):
    """Pointwise correlation-normalized kernel ``k / sqrt(diag_x diag_z)``.

    Equals ``kernel_matrix / variance`` for stationary kernels but stays
    correct for the NN family, whose diagonal varies with position.
    """
    x = _as_2d(x, "x")
    z = x if z is None else _as_2d(z, "z")
    k = kernel_matrix(cfg, x, z)
    dx = np.sqrt(kernel_diag(cfg, x))
    dz = dx if z is x else np.sqrt(kernel_diag(cfg, z))
    return k / (dx[:, None] * dz[None, :])


def correlation_form(k):
    """Split an SPD matrix into scale and correlation, ``K = D Kbar D``.

    Returns ``(kbar, d)`` with ``d = diag(sqrt(diag(K)))`` and ``kbar``
    having a unit diagonal.  Raises if any diagonal entry is not strictly
    positive.
    """
    k = np.asarray(k, dtype=float)
    diag = np.diag(k)
    if k.size and np.any(diag <= 0.0):
        bad = int(np.argmax(diag <= 0.0))
        raise ValidationError(
            f"matrix diagonal must be strictly positive (entry {bad} is "
            f"{diag[bad]:.3e})"
        )
    d = np.sqrt(diag)
    kbar = k / (d[:, None] * d[None, :]) if k.size else k.copy()
    if k.size:
        np.fill_diagonal(kbar, 1.0)
    return kbar, np.diag(d)
