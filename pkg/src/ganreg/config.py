"""Flat ``key = value`` run configuration with sections.

A config file fully describes a run; flags override file values and the
resolved result is echoed into the output directory, so any run can be
reproduced from its own artifacts.  Unknown keys are rejected by name.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

from .mixture import MixtureSpec
from .training import TrainConfig


def _to_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# section -> key -> (coercion, target attribute)
SCHEMA = {
    "train": {
        "gamma0": float,
        "alpha": float,
        "annealing": _to_bool,
        "gamma": float,            # fixed value used when annealing is off
        "n_disc_steps": int,
        "batch_size": int,
        "total_iters": int,
        "gen_loss": str,
        "noise_mode": str,
        "nsr": int,
        "disc_lr": float,
        "gen_lr": float,
        "adam_beta1": float,
        "adam_beta2": float,
        "adam_eps": float,
        "seed": int,
        "checkpoint_every": int,
        "eval_samples": int,
        "latent_dim": int,
        "timing": _to_bool,
    },
    "mixture": {
        "n_modes": int,
        "mode_std": float,
        "circle_radius": float,
        "embedded": _to_bool,
    },
    "verify": {
        "grid_lo": float,
        "grid_hi": float,
        "grid_nodes": int,
        "rule": str,
        "mc_draws": int,
        "seed": int,
    },
    "output": {
        "dir": str,
        "final_samples": int,
    },
}

_TRAIN_KEY_TO_FIELD = {k: ("gamma_fixed" if k == "gamma" else k)
                       for k in SCHEMA["train"]}


class ConfigError(ValueError):
    pass


@dataclass
class VerifySettings:
    grid_lo: float = -12.0
    grid_hi: float = 12.0
    grid_nodes: int = 20001
    rule: str = "trapezoid"
    mc_draws: int = 1_000_000
    seed: int = 0


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    mixture: MixtureSpec = field(default_factory=MixtureSpec)
    verify: VerifySettings = field(default_factory=VerifySettings)
    out_dir: str = "runs/out"
    final_samples: int = 1000


def read_config(path) -> dict:
    """Parse a config file into {(section, key): raw string}, rejecting
    unknown sections and keys by name."""
    parser = configparser.ConfigParser()
    with open(path, "r", encoding="utf-8") as fh:
        parser.read_file(fh)
    raw = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, value in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            raw[(section, key)] = value
    return raw


def resolve(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then file values, then flag overrides.

    ``overrides`` uses the same (section, key) addressing with already-typed
    values.
    """
    values: dict = {}
    if file_values:
        for (section, key), raw in file_values.items():
            try:
                values[(section, key)] = SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {exc}") from exc
    if overrides:
        for (section, key), val in overrides.items():
            if section not in SCHEMA or key not in SCHEMA[section]:
                raise ConfigError(f"unknown override {section}.{key}")
            values[(section, key)] = val

    def section_kwargs(section, key_to_field=None):
        out = {}
        for (sec, key), val in values.items():
            if sec == section:
                out[key_to_field[key] if key_to_field else key] = val
        return out

    try:
        train = TrainConfig(**section_kwargs("train", _TRAIN_KEY_TO_FIELD))
        mix = MixtureSpec(**section_kwargs("mixture"))
        ver = VerifySettings(**section_kwargs("verify"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    out = section_kwargs("output")
    return RunConfig(train, mix, ver,
                     out.get("dir", RunConfig.out_dir),
                     out.get("final_samples", RunConfig.final_samples))


def write_config(cfg: RunConfig, path) -> None:
    """Echo the fully resolved configuration (diff-able INI)."""
    parser = configparser.ConfigParser()
    parser["train"] = {
        key: str(getattr(cfg.train, _TRAIN_KEY_TO_FIELD[key]))
        for key in SCHEMA["train"]
    }
    parser["mixture"] = {
        key: str(getattr(cfg.mixture, key)) for key in SCHEMA["mixture"]
    }
    parser["verify"] = {
        key: str(getattr(cfg.verify, key)) for key in SCHEMA["verify"]
    }
    parser["output"] = {"dir": cfg.out_dir, "final_samples": str(cfg.final_samples)}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        parser.write(fh)
