"""Run configuration files, presets, and YAML serialisation of results.

Configs are plain YAML mappings validated against explicit schemas: unknown
keys are rejected and every run writes back a resolved copy with all
defaults materialised, so reruns from the resolved file reproduce outputs.
"""

from __future__ import annotations

import copy

import numpy as np
import yaml

from .emissions import ParametricEmission, SplineEmission
from .fit import FitResult, FitSpec
from .hmm import HmmModel, TransitionModel
from .simulate import DwellDistribution, SimConfig
from .splines import make_basis


class ValidationError(ValueError):
    """A configuration or input file failed validation."""


# ---------------------------------------------------------------------------
# schemas: {key: default}; None means optional with no default; the special
# key "__open__" admits arbitrary content below that node

_EMISSION_SCHEMA = {"family": None, "params": None}
_DWELL_SCHEMA = {"kind": None, "p": None, "rate": None, "weights": None, "rates": None}

SIMULATE_SCHEMA = {
    "kind": "hmm",
    "T": 500,
    "replicates": 1,
    "seed": 1,
    "prefix": "sim",
    "hmm": {"tpm": None, "delta": "stationary", "emissions": None},
    "hsmm": {"dwell": None, "emissions": None},
}

FIT_SCHEMA = {
    "model": "spline",
    "n_states": 2,
    "seed": 1,
    "n_starts": 1,
    "K": 40,
    "families": "normal",
    "init_targets": None,
    "init_params": None,
    "lambda_init": 100.0,
    "lambda_fixed": False,
    "lambda_bounds": [1e-4, 1e7],
    "kappa": 1e4,
    "rho": 20.0,
    "mode_grid": "auto",
    "mode_half_width": 1,
    "mode_ratio_threshold": 0.5,
    "jitter_mean_scale": 0.5,
    "jitter_sd_scale": 0.3,
    "gamma_init": None,
    "delta": "stationary",
    "basis_range": None,
    "max_inner_iter": 500,
    "grad_tol": 1e-6,
    "outer_max_iter": 50,
    "outer_tol": 1e-3,
    "uni_tol": 1e-6,
    "subtract": 0.0,
    "grid_size": 512,
}

_MODEL_ALIASES = {
    "parametric": "parametric",
    "spline": "spline_unconstrained",
    "spline_unconstrained": "spline_unconstrained",
    "unimodal": "spline_unimodal",
    "spline_unimodal": "spline_unimodal",
}


def resolve_config(user: dict | None, schema: dict, path: str = "") -> dict:
    """Merge a user mapping over schema defaults, rejecting unknown keys."""
    out = copy.deepcopy(schema)
    if user is None:
        return out
    if not isinstance(user, dict):
        raise ValidationError(f"expected a mapping at {path or 'top level'}")
    for key, value in user.items():
        if key not in schema:
            raise ValidationError(f"unknown configuration key {path + key!r}")
        if isinstance(schema[key], dict):
            out[key] = resolve_config(value, schema[key], path=f"{path}{key}.")
        else:
            out[key] = value
    return out


def load_yaml(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: configuration must be a mapping")
    return data


def _plain(obj):
    """Recursively convert numpy scalars/arrays for YAML output."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def dump_yaml(data, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(_plain(data), fh, sort_keys=False, default_flow_style=None)


# ---------------------------------------------------------------------------
# simulate config -> SimConfig


def _emissions_from_config(entries) -> ParametricEmission:
    if not entries:
        raise ValidationError("emissions must list one {family, params} entry per state")
    families = []
    params = []
    for e in entries:
        e = resolve_config(e, _EMISSION_SCHEMA, path="emissions.")
        if e["family"] is None or e["params"] is None:
            raise ValidationError("each emission entry needs family and params")
        families.append(e["family"])
        params.append(tuple(e["params"]))
    try:
        return ParametricEmission(families=tuple(families), params=tuple(params))
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def _dwell_from_config(entry) -> DwellDistribution:
    e = resolve_config(entry, _DWELL_SCHEMA, path="dwell.")
    kw = {k: v for k, v in e.items() if v is not None}
    if "weights" in kw:
        kw["weights"] = tuple(kw["weights"])
    if "rates" in kw:
        kw["rates"] = tuple(kw["rates"])
    try:
        return DwellDistribution(**kw)
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from exc


def sim_config_from_dict(cfg: dict) -> SimConfig:
    cfg = resolve_config(cfg, SIMULATE_SCHEMA)
    kind = cfg["kind"]
    try:
        if kind == "hmm":
            section = cfg["hmm"]
            if section["tpm"] is None:
                raise ValidationError("hmm simulation needs hmm.tpm")
            delta = section["delta"]
            delta_mode = "stationary" if delta == "stationary" else np.asarray(delta, dtype=float)
            transition = TransitionModel.from_tpm(np.asarray(section["tpm"], dtype=float),
                                                  delta_mode=delta_mode)
            emission = _emissions_from_config(section["emissions"])
            model = HmmModel(transition=transition, emission=emission)
            return SimConfig(kind="hmm", T=int(cfg["T"]), n_replicates=int(cfg["replicates"]),
                             seed=int(cfg["seed"]), model=model, prefix=cfg["prefix"],
                             extra={"resolved": cfg})
        if kind == "hsmm":
            section = cfg["hsmm"]
            if not section["dwell"] or not section["emissions"]:
                raise ValidationError("hsmm simulation needs hsmm.dwell and hsmm.emissions")
            dwells = tuple(_dwell_from_config(d) for d in section["dwell"])
            emission = _emissions_from_config(section["emissions"])
            return SimConfig(kind="hsmm", T=int(cfg["T"]), n_replicates=int(cfg["replicates"]),
                             seed=int(cfg["seed"]), dwells=dwells, emission=emission,
                             prefix=cfg["prefix"], extra={"resolved": cfg})
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    raise ValidationError(f"unknown simulation kind {kind!r}")


# ---------------------------------------------------------------------------
# fit config -> FitSpec


def fit_spec_from_config(cfg: dict, model: str | None = None,
                         overrides: dict | None = None) -> tuple[FitSpec, dict]:
    """Build a FitSpec from a resolved config; returns (spec, resolved_cfg)."""
    cfg = resolve_config(cfg, FIT_SCHEMA)
    if model:
        cfg["model"] = model
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in cfg:
            raise ValidationError(f"unknown override {key!r}")
        cfg[key] = value
    kind = _MODEL_ALIASES.get(cfg["model"])
    if kind is None:
        raise ValidationError(f"model must be one of {sorted(set(_MODEL_ALIASES))}")
    families = cfg["families"]
    if isinstance(families, list):
        families = tuple(families)
    spec = FitSpec(
        n_states=int(cfg["n_states"]),
        model_kind=kind,
        families=families,
        n_basis=int(cfg["K"]),
        basis_range=None if cfg["basis_range"] is None else tuple(cfg["basis_range"]),
        lambda_init=cfg["lambda_init"] if np.isscalar(cfg["lambda_init"])
        else tuple(cfg["lambda_init"]),
        lambda_fixed=bool(cfg["lambda_fixed"]),
        lambda_bounds=tuple(cfg["lambda_bounds"]),
        kappa=float(cfg["kappa"]),
        rho=float(cfg["rho"]),
        mode_grid=cfg["mode_grid"] if isinstance(cfg["mode_grid"], str)
        else tuple(tuple(e) if isinstance(e, list) else e for e in cfg["mode_grid"]),
        mode_half_width=int(cfg["mode_half_width"]),
        mode_ratio_threshold=float(cfg["mode_ratio_threshold"]),
        n_starts=int(cfg["n_starts"]),
        init_targets=None if cfg["init_targets"] is None
        else tuple(tuple(t) for t in cfg["init_targets"]),
        init_params=None if cfg["init_params"] is None
        else tuple(tuple(p) for p in cfg["init_params"]),
        jitter_mean_scale=float(cfg["jitter_mean_scale"]),
        jitter_sd_scale=float(cfg["jitter_sd_scale"]),
        gamma_init=None if cfg["gamma_init"] is None else tuple(map(tuple, cfg["gamma_init"])),
        delta=cfg["delta"] if isinstance(cfg["delta"], str) else tuple(cfg["delta"]),
        max_inner_iter=int(cfg["max_inner_iter"]),
        grad_tol=float(cfg["grad_tol"]),
        outer_max_iter=int(cfg["outer_max_iter"]),
        outer_tol=float(cfg["outer_tol"]),
        uni_tol=float(cfg["uni_tol"]),
        seed=int(cfg["seed"]),
    )
    return spec, cfg


# ---------------------------------------------------------------------------
# presets

SIM_PRESETS = {
    "sim1": {
        "kind": "hmm",
        "T": 500,
        "replicates": 100,
        "seed": 1,
        "prefix": "sim1",
        "hmm": {
            "tpm": [[0.9, 0.1], [0.1, 0.9]],
            "delta": [0.5, 0.5],
            "emissions": [
                {"family": "skew_normal", "params": [0.0, 1.0, 6.0]},
                {"family": "student_t", "params": [3.0, 1.0, 3.0]},
            ],
        },
    },
    "sim2": {
        "kind": "hsmm",
        "T": 1000,
        "replicates": 100,
        "seed": 2,
        "prefix": "sim2",
        "hsmm": {
            "dwell": [
                {"kind": "poisson_mixture", "weights": [0.7, 0.3], "rates": [0.1, 15.0]},
                {"kind": "geometric", "p": 0.1},
            ],
            "emissions": [
                {"family": "gamma", "params": [1.0, 1.0]},
                {"family": "gamma", "params": [15.0, 4.0]},
            ],
        },
    },
}
SIM_PRESETS["experiment1"] = SIM_PRESETS["sim1"]
SIM_PRESETS["experiment2"] = SIM_PRESETS["sim2"]

FIT_PRESETS = {
    # three-state dive-depth workflow on preprocessed maximum-depth series
    "gamma3": {
        "model": "parametric", "n_states": 3, "families": "gamma",
        "n_starts": 100, "seed": 101,
    },
    "spline30": {
        "model": "spline", "n_states": 3, "K": 30, "families": "gamma",
        "n_starts": 20, "seed": 102,
    },
    "unimodal30": {
        "model": "unimodal", "n_states": 3, "K": 30, "families": "gamma",
        "n_starts": 20, "seed": 103,
        "mode_grid": [[1], "auto", "auto"], "mode_half_width": 2,
    },
    # two-state spline fits for real-line data
    "spline40": {"model": "spline", "n_states": 2, "K": 40, "n_starts": 15, "seed": 104},
    "unimodal40": {"model": "unimodal", "n_states": 2, "K": 40, "n_starts": 15, "seed": 105},
}


# ---------------------------------------------------------------------------
# model and result serialisation


def model_to_dict(model: HmmModel) -> dict:
    tr = model.transition
    delta_mode = tr.delta_mode if isinstance(tr.delta_mode, str) else tr.delta_mode.tolist()
    out = {
        "n_states": model.n_states,
        "transition": {"eta": tr.eta.tolist(), "delta_mode": delta_mode},
    }
    em = model.emission
    if isinstance(em, SplineEmission):
        out["emission"] = {
            "type": "spline",
            "basis": {"range": list(em.basis.interior_range), "K": em.basis.n_basis},
            "beta": em.beta.tolist(),
        }
    else:
        out["emission"] = {
            "type": "parametric",
            "families": list(em.families),
            "params": [list(p) for p in em.params],
        }
    return out


def model_from_dict(data: dict) -> HmmModel:
    tr = data["transition"]
    delta_mode = tr["delta_mode"]
    if not isinstance(delta_mode, str):
        delta_mode = np.asarray(delta_mode, dtype=float)
    transition = TransitionModel(eta=np.asarray(tr["eta"], dtype=float).reshape(
        data["n_states"], max(data["n_states"] - 1, 0)), delta_mode=delta_mode)
    em = data["emission"]
    if em["type"] == "spline":
        basis = make_basis(tuple(em["basis"]["range"]), int(em["basis"]["K"]))
        emission = SplineEmission(basis=basis, beta=np.asarray(em["beta"], dtype=float))
    else:
        emission = ParametricEmission(
            families=tuple(em["families"]), params=tuple(tuple(p) for p in em["params"])
        )
    return HmmModel(transition=transition, emission=emission)


def fit_result_to_dict(result: FitResult) -> dict:
    spec = result.spec
    return _plain({
        "model": model_to_dict(result.model),
        "model_kind": spec.model_kind,
        "loglik": result.loglik,
        "penalized_loglik": result.penalized_loglik,
        "smoothness_penalty": result.smoothness_penalty,
        "unimodality_penalty": result.unimodality_penalty,
        "unimodality_penalty_smooth": result.unimodality_penalty_smooth,
        "converged": result.converged,
        "lam": None if result.lam is None else result.lam.tolist(),
        "modes": None if result.modes is None else list(result.modes),
        "kappa": spec.kappa,
        "rho": spec.rho,
        "seed": spec.seed,
        "n_outer_iterations": result.n_outer_iterations,
        "n_candidate_fits": result.n_candidate_fits,
        "per_state": result.per_state,
        "messages": result.messages,
        "start_table": [
            {k: v for k, v in row.items() if k != "init"} for row in result.start_table
        ],
        "mode_search_table": [
            {"modes": list(r["modes"]), "penalized_loglik": r["penalized_loglik"],
             "converged": r["converged"]}
            for r in result.mode_search_table
        ],
    })


def model_from_fit_file(path) -> tuple[HmmModel, dict]:
    data = load_yaml(path)
    if "model" not in data:
        raise ValidationError(f"{path}: not a fit-result file (no 'model' entry)")
    return model_from_dict(data["model"]), data
