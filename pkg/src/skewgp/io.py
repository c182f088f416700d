"""Model persistence: a versioned JSON envelope for both model families.

The envelope stores everything needed to reproduce predictions exactly:
kernel configuration, the skewness hyperparameters (pseudo-points, phase,
truncation), the full training set (required at prediction time, as for any
GP-family model), and the feature standardization statistics.  Floats round
trip through JSON's shortest-repr encoding, so a saved and reloaded model
yields byte-identical predictions.
"""

import json

import numpy as np

from .classifier import SkewGpPrior, TrainingSet, posterior_model
from .exceptions import ValidationError
from .kernels import KernelConfig
from .laplace import laplace_fit

__all__ = ["model_to_dict", "model_from_dict", "save_model", "load_model"]

SCHEMA_VERSION = 1


def model_to_dict(model):
    """JSON-ready dict for a SkewGpModel or LaplaceModel."""
    from .classifier import SkewGpModel
    from .laplace import LaplaceModel

    if isinstance(model, SkewGpModel):
        return {
            "schema_version": SCHEMA_VERSION,
            "model_type": "skewgp",
            "prior": model.prior.to_dict(),
            "train": {
                "x": model.train.x.tolist(),
                "y": model.train.y.tolist(),
            },
            "standardization": model.standardization,
            "fit_info": _jsonable(model.fit_info),
        }
    if isinstance(model, LaplaceModel):
        return {
            "schema_version": SCHEMA_VERSION,
            "model_type": "gp_laplace",
            "kernel": model.kernel.to_dict(),
            "train": {
                "x": model.train.x.tolist(),
                "y": model.train.y.tolist(),
            },
            "standardization": model.standardization,
            "fit_info": _jsonable(model.fit_info),
        }
    raise ValidationError(f"cannot serialize object of type {type(model).__name__}")


def _jsonable(obj):
    if obj is None or isinstance(obj, (str, int, float, bool)):
        return obj
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating, np.bool_)):
        return obj.item()
    return str(obj)


def model_from_dict(d):
    """Rebuild a model from its envelope (recomputing cached factorizations)."""
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValidationError(
            f"unsupported model schema version {version!r} (expected "
            f"{SCHEMA_VERSION})"
        )
    model_type = d.get("model_type")
    x = np.asarray(d["train"]["x"], dtype=float)
    y = np.asarray(d["train"]["y"], dtype=int)
    if model_type == "skewgp":
        prior = SkewGpPrior.from_dict(d["prior"])
        train = TrainingSet(x=x, y=y)
        model = posterior_model(prior, train,
                                standardization=d.get("standardization"))
        model.fit_info = d.get("fit_info")
        return model
    if model_type == "gp_laplace":
        kernel = KernelConfig.from_dict(d["kernel"])
        model = laplace_fit(x, y, kernel)
        model.standardization = d.get("standardization")
        model.fit_info = d.get("fit_info")
        return model
    raise ValidationError(f"unknown model_type {model_type!r}")


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
