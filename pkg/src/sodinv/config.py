"""Pipeline configuration: profiles, JSON loading with strict validation,
environment-variable overrides, and deterministic per-stage seed derivation."""
from __future__ import annotations

import copy
import json
import os

import numpy as np

ENV_PREFIX = "SODINV_"

DESK_PROFILE = {
    "profile": "desk",
    "seed": 0,
    "threads": 1,
    "out_dir": "runs/desk",
    "grid": {"nx": 256, "x_min": 0.0, "x_max": 1.0},
    "solver": {
        "gamma": 1.4,
        "cfl": 0.5,
        "t_final": 0.2,
        "weno_eps": 1e-6,
        "boundary": "transmissive",
    },
    "sampling": {
        "n_sim": 100,
        "val_fraction": 0.2,
        "ranges": {
            "rho_L": [0.5, 1.5],
            "p_L": [0.5, 1.5],
            "rho_R": [0.05, 0.15],
            "p_R": [0.05, 0.15],
        },
    },
    "train": {
        "latent_dim": 32,
        "ae_epochs": 150,
        "fo_epochs": 200,
        "batch_size": 32,
        "lr": 1e-3,
        "aux_decoded_loss": False,
    },
    "sweep": {
        "latent_dims": [4, 8, 16, 32, 64],
        "data_budgets": [20, 50, 100, 150, 200, 250, 300, 350, 400, 450, 500],
    },
    "observation": {
        "sigma": 0.05,
        "n_obs": 20,
        "theta_true": [1.0, 1.0, 0.125, 0.1],
    },
    "nuts": {
        "chains": 2,
        "warmup": 250,
        "draws": 500,
        "target_accept": 0.8,
        "max_tree_depth": 10,
    },
}

PAPER_PROFILE = copy.deepcopy(DESK_PROFILE)
PAPER_PROFILE.update({"profile": "paper", "out_dir": "runs/paper"})
PAPER_PROFILE["grid"]["nx"] = 1000
PAPER_PROFILE["sampling"]["n_sim"] = 500
PAPER_PROFILE["train"]["ae_epochs"] = 500
PAPER_PROFILE["nuts"].update({"chains": 4, "warmup": 500, "draws": 1000})

PROFILES = {"desk": DESK_PROFILE, "paper": PAPER_PROFILE}


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


def _merge_checked(base: dict, override: dict, path: str = ""):
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where} must be a table")
            _merge_checked(base[key], value, where)
        else:
            base[key] = value


def _validate(cfg: dict):
    checks = [
        (cfg["grid"]["nx"] >= 11, "grid.nx must be >= 11"),
        (cfg["sampling"]["n_sim"] >= 1, "sampling.n_sim must be >= 1"),
        (0.0 < cfg["sampling"]["val_fraction"] < 1.0,
         "sampling.val_fraction must be in (0,1)"),
        (cfg["train"]["latent_dim"] >= 1, "train.latent_dim must be >= 1"),
        (cfg["train"]["ae_epochs"] >= 1, "train.ae_epochs must be >= 1"),
        (cfg["nuts"]["chains"] >= 1, "nuts.chains must be >= 1"),
        (cfg["observation"]["sigma"] > 0.0, "observation.sigma must be positive"),
        (cfg["observation"]["n_obs"] >= 2, "observation.n_obs must be >= 2"),
        (len(cfg["observation"]["theta_true"]) == 4,
         "observation.theta_true needs 4 components"),
        (cfg["threads"] >= 1, "threads must be >= 1"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)


def _apply_env_overrides(cfg: dict, environ=None):
    """SODINV_SECTION__KEY=value overrides any config entry (JSON-parsed)."""
    environ = os.environ if environ is None else environ
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        dotted = name[len(ENV_PREFIX):].lower().split("__")
        node = cfg
        for part in dotted[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"unknown config key from {name}")
            node = node[part]
        leaf = dotted[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ConfigError(f"unknown config key from {name}")
        try:
            node[leaf] = json.loads(raw)
        except json.JSONDecodeError:
            node[leaf] = raw


def load_config(path=None, profile: str = "desk", overrides: dict | None = None,
                environ=None) -> dict:
    """Resolve profile defaults <- config file <- env vars <- CLI overrides."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    cfg = copy.deepcopy(PROFILES[profile])
    if path is not None:
        with open(path) as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as err:
                raise ConfigError(f"{path}: invalid JSON: {err}") from err
        if "profile" in user and user["profile"] != profile:
            cfg = copy.deepcopy(PROFILES[user["profile"]])
        _merge_checked(cfg, user)
    _apply_env_overrides(cfg, environ)
    if overrides:
        _merge_checked(cfg, overrides)
    _validate(cfg)
    return cfg


def stage_seed(cfg: dict, stage: str) -> int:
    """Deterministic per-stage seed split from the single root seed."""
    root = np.random.SeedSequence(cfg["seed"])
    stages = ["sampling", "split", "train", "observation", "nuts", "sweep"]
    if stage not in stages:
        raise ValueError(f"unknown stage {stage!r}")
    children = root.spawn(len(stages))
    return int(children[stages.index(stage)].generate_state(1)[0])
