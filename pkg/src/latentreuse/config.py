"""Experiment configuration: preset defaults, schema validation and object builders."""

from __future__ import annotations

import copy
import json
import math

import jsonschema
import numpy as np

from .datamodel import Gaussian, GaussianMixture, MixtureModel, NoisyLowDimModel
from .errors import ConfigInvalid
from .geometry import Frame, axis_frame, haar_frame, rotate_frame
from .report import load_schema
from .rng import derive_seed, make_rng
from .schedule import DiffusionSchedule
from .trainer import TrainConfig

PRESETS = (
    "angle-sweep",
    "dimension-sweep",
    "noise-sweep",
    "mixed-vs-frozen",
    "containment-demo",
    "sampler-demo",
    "invariant-suite",
)

BASE = {
    "out": "runs/out",
    "schedule": {"t0": 0.01, "T": 1.0, "n_time_nodes": 64},
    "mc": {"n_samples": 20_000, "n_batches": 32, "workers": 1, "n_moment_samples": 20_000, "regression_check": False},
    "target": {"D": 2, "d": 1, "sigma": 0.0, "latent": {"kind": "gaussian", "mean": None, "scales": None}},
    "source": {"D": 2, "d": 1, "sigma": 0.0, "latent": {"kind": "gaussian", "mean": None, "scales": None}},
    "projector": {"kind": "angled", "angles": [math.pi / 3], "seed": 0},
    "mixed": {"k": 2, "omega": [0.5, 0.5], "c_mode": "c_bar", "eta": 1.0},
    "trainer": {
        "enabled": True,
        "n_train": 4096,
        "n_epochs": 30,
        "batch_size": 256,
        "step_size": 1e-3,
        "momentum": 0.9,
        "n_time_samples": 1,
        "truncation": False,
        "K": None,
        "kappa": 10.0,
        "hidden": [64, 64, 64],
        "time_sampling": "importance",
        "delta": 0.05,
        "C_z": 2.0,
        "C_perp": 2.0,
    },
    "sampler": {"n_steps": 200, "n_chains": 10_000, "grid": "geometric"},
    "sweep": {
        "thetas": [j * math.pi / 12 for j in range(7)],
        "sigmas": [0.0, 0.05, 0.1, 0.2, 0.5],
        "d1_values": [1, 2, 3, 4],
        "k_values": [],
    },
    "invariants": {"n_triples": 100, "n_candidates": 10_000, "n_points": 1000},
}

PRESET_DEFAULTS = {
    "angle-sweep": {},
    "dimension-sweep": {
        "target": {"D": 8, "d": 2, "sigma": 0.1},
        "projector": {"kind": "angled", "angles": [math.pi / 6, math.pi / 4]},
        "trainer": {"enabled": False},
    },
    "noise-sweep": {
        "target": {"D": 4, "d": 1},
        "projector": {"kind": "angled", "angles": [math.pi / 4]},
        "trainer": {"enabled": False},
    },
    "mixed-vs-frozen": {
        "target": {"D": 4, "d": 1, "sigma": 0.1},
        "source": {"D": 4, "d": 1, "sigma": 0.1},
        "projector": {"kind": "angled", "angles": [math.pi / 3]},
        "mixed": {"k": 2},
        "trainer": {"enabled": True},
    },
    "containment-demo": {
        "target": {"D": 6, "d": 2, "sigma": 0.1},
        "source": {"D": 6, "d": 2, "sigma": 0.1},
        "projector": {"kind": "angled", "angles": [math.pi / 4, math.pi / 6]},
        "mixed": {"k": 4},
        "sweep": {"k_values": [4, 5, 6]},
        "trainer": {"enabled": False},
    },
    "sampler-demo": {
        "projector": {"kind": "angled", "angles": [math.pi / 3]},
        "trainer": {"enabled": True, "truncation": True},
    },
    "invariant-suite": {"trainer": {"enabled": False}},
}


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate_config(raw: dict):
    """Raise ConfigInvalid carrying the schema path of the first violation."""
    schema = load_schema("config.schema.json")
    v = jsonschema.Draft202012Validator(schema)
    errors = sorted(v.iter_errors(raw), key=lambda e: (list(e.absolute_path), list(e.schema_path)))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        spath = "/".join(str(p) for p in e.schema_path)
        raise ConfigInvalid(f"{where}: {e.message}", spath)


def resolve(raw: dict, preset: str | None = None, seed: int | None = None, out: str | None = None) -> dict:
    """Validate the user config, apply overrides and fill in preset defaults."""
    raw = dict(raw)
    if preset is not None:
        raw["preset"] = preset
    if seed is not None:
        raw["seed"] = int(seed)
    if out is not None:
        raw["out"] = out
    validate_config(raw)
    cfg = deep_merge(deep_merge(BASE, PRESET_DEFAULTS[raw["preset"]]), raw)
    validate_config(cfg)
    _check_consistency(cfg)
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"not valid JSON: {exc}", "<document>") from exc


def _check_consistency(cfg):
    t, s = cfg["target"], cfg["source"]
    if cfg["schedule"]["T"] <= cfg["schedule"]["t0"]:
        raise ConfigInvalid("schedule: T must exceed t0", "properties/schedule")
    for name, m in (("target", t), ("source", s)):
        if m["d"] > m["D"]:
            raise ConfigInvalid(f"{name}: d exceeds D", f"properties/{name}")
    if s["D"] != t["D"] and cfg["preset"] in ("mixed-vs-frozen", "containment-demo"):
        raise ConfigInvalid("source and target must share D", "properties/source/properties/D")
    om = cfg["mixed"]["omega"]
    if abs(sum(om) - 1.0) > 1e-12:
        raise ConfigInvalid("mixed.omega must sum to 1", "properties/mixed/properties/omega")


# --------------------------------------------------------------------------
# builders


def seed_for(cfg: dict, *stream) -> int:
    """Named sub-stream seed derived from the single root seed."""
    return derive_seed(cfg["seed"], *stream)


def build_schedule(cfg: dict) -> DiffusionSchedule:
    s = cfg["schedule"]
    return DiffusionSchedule(t0=s["t0"], T=s["T"], n_nodes=s["n_time_nodes"])


def build_latent(spec: dict, d: int):
    lat = spec["latent"]
    if lat["kind"] == "gaussian":
        mean = np.zeros(d) if lat.get("mean") is None else np.asarray(lat["mean"], dtype=float)
        scales = np.ones(d) if lat.get("scales") is None else np.asarray(lat["scales"], dtype=float)
        if mean.size != d or scales.size != d:
            raise ConfigInvalid("latent mean/scales length must equal d", "$defs/model/properties/latent")
        return Gaussian(mean, np.diag(scales**2))
    w = np.asarray(lat["weights"], dtype=float)
    means = [np.asarray(m, dtype=float) for m in lat["means"]]
    if len(means) != len(w) or any(m.size != d for m in means):
        raise ConfigInvalid("mixture weights/means disagree with d", "$defs/model/properties/latent")
    sc = float(lat.get("scale", 1.0))
    return GaussianMixture(w / w.sum(), [Gaussian(m, sc**2 * np.eye(d)) for m in means])


def build_target(cfg: dict, sigma: float | None = None) -> NoisyLowDimModel:
    t = cfg["target"]
    return NoisyLowDimModel(axis_frame(t["D"], list(range(t["d"]))), build_latent(t, t["d"]),
                            t["sigma"] if sigma is None else sigma)


def build_projector(cfg: dict, target: NoisyLowDimModel, latent_dim: int | None = None, angles=None) -> Frame:
    """Frozen projector V1 relative to the target frame."""
    p = cfg["projector"]
    m = target.d if latent_dim is None else latent_dim
    seed = derive_seed(p.get("seed", 0), "projector")
    if p["kind"] == "random":
        return Frame(haar_frame(target.D, m, make_rng(seed, "haar")).data)
    if p["kind"] == "aligned" and angles is None:
        return rotate_frame(target.frame, [], seed, latent_dim=m)
    return rotate_frame(target.frame, p.get("angles", []) if angles is None else angles, seed, latent_dim=m)


def build_mixture(cfg: dict) -> tuple:
    """``(mixture, V1)``: the source lives on the frozen projector's span."""
    target = build_target(cfg)
    s = cfg["source"]
    V1 = build_projector(cfg, target, latent_dim=s["d"])
    source = NoisyLowDimModel(V1, build_latent(s, s["d"]), s["sigma"])
    return MixtureModel(tuple(cfg["mixed"]["omega"]), (source, target)), V1


def build_train_config(cfg: dict, stream: str) -> TrainConfig:
    tr = cfg["trainer"]
    return TrainConfig(
        n_epochs=tr["n_epochs"],
        batch_size=tr["batch_size"],
        step_size=tr["step_size"],
        momentum=tr["momentum"],
        seed=seed_for(cfg, "trainer", stream),
        n_time_samples=tr["n_time_samples"],
        truncation=tr["truncation"],
        K=tr["K"],
        kappa=tr["kappa"],
        hidden=tuple(tr["hidden"]),
        time_sampling=tr["time_sampling"],
    )
