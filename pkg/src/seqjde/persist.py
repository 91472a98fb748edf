"""Serialization of designed tests and region exports.

A design artifact is a single JSON file: model/grid/constraint blocks, the
optimal coefficients, the dense cost and posterior tables (flat arrays plus
shape metadata) and build diagnostics.  JSON float literals round-trip
exactly, so a save/load cycle reproduces policy evaluations bitwise.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .bellman import Coefficients, CostTables, Regions
from .coeffopt import Constraints, DesignedTest, DesignOptions
from .grid import Axis, DiscretizedModel, GridSpec
from .model import ProblemModel, make_shift_in_mean, make_shift_in_variance

__all__ = [
    "ArtifactError",
    "ARTIFACT_VERSION",
    "save_artifact",
    "load_artifact",
    "export_regions_csv",
    "model_to_block",
    "model_from_block",
    "spec_to_block",
    "spec_from_block",
]

ARTIFACT_VERSION = 1

_REGION_NAMES = {0: "C", 1: "S0", 2: "S1"}


class ArtifactError(ValueError):
    """Artifact file is malformed, truncated or of the wrong version."""


def model_to_block(model: ProblemModel) -> dict:
    if model.name == "shift_in_mean":
        prior = model.param_priors[1]
        return {
            "type": "shift_in_mean",
            "sigma2": model.sigma2,
            "gamma_shape": prior.shape,
            "gamma_scale": prior.scale,
            "p0": model.priors.p0,
        }
    prior0, prior1 = model.param_priors
    return {
        "type": "shift_in_variance",
        "u_lo": prior0.lo,
        "u_hi": prior0.hi,
        "s2_min": prior1.shift,
        "gamma_shape": prior1.shape,
        "gamma_scale": prior1.scale,
        "p0": model.priors.p0,
    }


def model_from_block(block: dict) -> ProblemModel:
    kind = block.get("type")
    if kind == "shift_in_mean":
        return make_shift_in_mean(
            sigma2=block["sigma2"],
            a=block["gamma_shape"],
            b=block["gamma_scale"],
            p0=block["p0"],
        )
    if kind == "shift_in_variance":
        return make_shift_in_variance(
            u_lo=block["u_lo"],
            u_hi=block["u_hi"],
            s2min=block["s2_min"],
            a=block["gamma_shape"],
            b=block["gamma_scale"],
            p0=block["p0"],
        )
    raise ArtifactError(f"unknown model type {kind!r}")


def spec_to_block(spec: GridSpec) -> dict:
    def ax(a: Axis) -> dict:
        return {"lo": a.lo, "hi": a.hi, "n": a.count}

    return {
        "x": ax(spec.x_axis),
        "theta": ax(spec.theta_axis),
        "t": ax(spec.t_axis),
        "horizon": spec.horizon,
    }


def spec_from_block(block: dict) -> GridSpec:
    def ax(d: dict) -> Axis:
        return Axis(lo=d["lo"], hi=d["hi"], count=d["n"])

    return GridSpec(
        x_axis=ax(block["x"]),
        theta_axis=ax(block["theta"]),
        t_axis=ax(block["t"]),
        horizon=block["horizon"],
    )


def _table(arr: np.ndarray) -> dict:
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise ArtifactError("refusing to serialize non-finite table values")
    return {"shape": list(arr.shape), "data": arr.ravel().tolist()}


def _untable(name: str, blob: dict, dtype=float) -> np.ndarray:
    shape = tuple(blob["shape"])
    data = blob["data"]
    if len(data) != int(np.prod(shape)):
        raise ArtifactError(
            f"table {name!r} is truncated: {len(data)} values for shape {shape}"
        )
    return np.asarray(data, dtype=dtype).reshape(shape)


def save_artifact(test: DesignedTest, path) -> None:
    ct = test.cost_tables
    dm = test.dm
    doc = {
        "format": "seqjde-design",
        "version": ARTIFACT_VERSION,
        "model": model_to_block(test.model),
        "grid": spec_to_block(test.spec),
        "constraints": {"kappa": list(test.constraints.as_array())},
        "options": {
            "epsilon": test.options.epsilon,
            "solver": test.options.solver,
            "tol": test.options.tol,
            "max_iter": test.options.max_iter,
            "leakage_tol": test.options.leakage_tol,
            "lp_horizon": test.options.lp_horizon,
        },
        "coefficients": list(test.coefficients.as_array()),
        "dual_objective": test.dual_objective,
        "t0_index": test.t0_index,
        "prior_var": [dm.prior_var_0, dm.prior_var_1],
        "tables": {
            "rho": _table(ct.rho),
            "d": _table(ct.d),
            "g": _table(ct.g),
            "dstar0": _table(ct.dstar0),
            "dstar1": _table(ct.dstar1),
            "e0": _table(dm.e0),
            "e1": _table(dm.e1),
            "m0": _table(dm.m0),
            "m1": _table(dm.m1),
            "v0": _table(dm.v0),
            "v1": _table(dm.v1),
            "z0": _table(dm.z0),
            "z1": _table(dm.z1),
        },
        "regions": _table(test.regions.labels),
        "diagnostics": _clean(test.diagnostics or {}),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"), allow_nan=False)
        fh.write("\n")


def _clean(obj):
    """Make diagnostics JSON-safe (numpy scalars -> python floats)."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def load_artifact(path) -> DesignedTest:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "seqjde-design" or doc.get("version") != ARTIFACT_VERSION:
        raise ArtifactError(
            f"unsupported artifact version {doc.get('version')!r}"
            f" (expected {ARTIFACT_VERSION})"
        )
    model = model_from_block(doc["model"])
    spec = spec_from_block(doc["grid"])
    kappa = doc["constraints"]["kappa"]
    constraints = Constraints(*[float(v) for v in kappa])
    opts = doc["options"]
    options = DesignOptions(
        epsilon=opts["epsilon"],
        solver=opts["solver"],
        tol=opts["tol"],
        max_iter=opts.get("max_iter", 500),
        leakage_tol=opts.get("leakage_tol", 1e-3),
        lp_horizon=opts.get("lp_horizon"),
    )
    tables = doc["tables"]
    horizon = spec.horizon
    n_t = spec.t_axis.count

    def grab(name, shape):
        arr = _untable(name, tables[name])
        if arr.shape != shape:
            raise ArtifactError(
                f"table {name!r} has shape {arr.shape}, grid expects {shape}"
            )
        return arr

    full = (horizon + 1, n_t)
    ct = CostTables(
        rho=grab("rho", full),
        d=grab("d", (horizon, n_t)),
        g=grab("g", full),
        dstar0=grab("dstar0", full),
        dstar1=grab("dstar1", full),
    )
    dm = DiscretizedModel(model, spec)
    for name in ("e0", "e1", "m0", "m1", "v0", "v1", "z0", "z1"):
        setattr(dm, name, grab(name, full))
    dm.prior_var_0, dm.prior_var_1 = (float(v) for v in doc["prior_var"])
    if dm.t0_index != int(doc["t0_index"]):
        raise ArtifactError("stored t0 index does not match the grid")
    labels = _untable("regions", doc["regions"], dtype=np.int8)
    if labels.shape != full:
        raise ArtifactError(
            f"table 'regions' has shape {labels.shape}, grid expects {full}"
        )
    return DesignedTest(
        model=model,
        spec=spec,
        constraints=constraints,
        options=options,
        coefficients=Coefficients.from_array(doc["coefficients"]),
        cost_tables=ct,
        regions=Regions(labels=labels),
        dual_objective=float(doc["dual_objective"]),
        dm=dm,
        op=None,
        fm=None,
        diagnostics=doc.get("diagnostics", {}),
    )


def export_regions_csv(test: DesignedTest, path) -> None:
    """One row per (n, grid point): n, t_index, t_value, label in {C,S0,S1}."""
    t = test.spec.t_axis.points()
    labels = test.regions.labels
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "t_index", "t_value", "label"])
        for n in range(labels.shape[0]):
            for j in range(labels.shape[1]):
                writer.writerow([n, j, repr(float(t[j])), _REGION_NAMES[int(labels[n, j])]])
