"""Run configuration: JSON schema, presets, dotted-key overrides."""

from __future__ import annotations

import copy
import dataclasses
import json

from .envs import Environment, make_env
from .training import HyperParams

ENV_NAMES = ("planar_reacher", "bimodal", "quadratic_toy")


class ConfigError(ValueError):
    """Invalid run configuration; carries the offending field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


@dataclasses.dataclass
class RunConfig:
    env_name: str
    env_params: dict
    hyperparams: HyperParams
    ablation_zero_aux: bool = False
    output_dir: str = "runs"
    seeds: list[int] = dataclasses.field(default_factory=lambda: [0])

    def make_env(self) -> Environment:
        return make_env(self.env_name, **self.env_params)

    def to_dict(self, seed: int | None = None) -> dict:
        doc = {
            "env": {"name": self.env_name, **self.env_params},
            "hyperparams": dataclasses.asdict(self.hyperparams),
            "ablation_zero_aux": self.ablation_zero_aux,
            "output_dir": self.output_dir,
            "seeds": [seed] if seed is not None else list(self.seeds),
        }
        if seed is not None:
            doc["hyperparams"]["seed"] = seed
        return doc


_HP_FIELDS = {f.name for f in dataclasses.fields(HyperParams)}


def config_from_dict(doc: dict) -> RunConfig:
    """Validate a raw JSON document into a RunConfig.

    Errors name the offending field so the CLI can exit with a pointed
    message instead of a stack trace.
    """
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    known = {"env", "hyperparams", "ablation_zero_aux", "output_dir", "seeds"}
    for key in doc:
        if key not in known:
            raise ConfigError(key, "unknown top-level key")
    if "env" not in doc:
        raise ConfigError("env", "missing required key")
    env = doc["env"]
    if not isinstance(env, dict) or "name" not in env:
        raise ConfigError("env.name", "env must be an object with a 'name'")
    env = dict(env)
    name = env.pop("name")
    if name not in ENV_NAMES:
        raise ConfigError("env.name", f"unknown environment {name!r}; expected one of {ENV_NAMES}")

    hp_doc = doc.get("hyperparams", {})
    if not isinstance(hp_doc, dict):
        raise ConfigError("hyperparams", "must be an object")
    for key in hp_doc:
        if key not in _HP_FIELDS:
            raise ConfigError(f"hyperparams.{key}", "unknown hyperparameter")
    try:
        hp = HyperParams(**hp_doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError("hyperparams", str(exc)) from exc

    ablation = doc.get("ablation_zero_aux", False)
    if not isinstance(ablation, bool):
        raise ConfigError("ablation_zero_aux", "must be a boolean")
    output_dir = doc.get("output_dir", "runs")
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("output_dir", "must be a non-empty string")
    seeds = doc.get("seeds", [hp.seed])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds", "must be a non-empty list of integers")

    cfg = RunConfig(name, env, hp, ablation, output_dir, seeds)
    try:
        cfg.make_env()
    except (ValueError, TypeError) as exc:
        raise ConfigError("env", str(exc)) from exc
    return cfg


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.key=value`` overrides onto a raw config document.

    Values are parsed as JSON literals, falling back to strings, so both
    ``--set hyperparams.beta=0.5`` and ``--set env.name=bimodal`` work.
    """
    out = copy.deepcopy(doc)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like dotted.key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(dotted, f"cannot descend through non-object at '{part}'")
        node[parts[-1]] = value
    return out


# ---------------------------------------------------------------------- presets

PRESETS: dict[str, dict] = {
    # 10-link reacher at published scale: beta=1.0, beta_w=1.0, N=60, K=350, H=50
    "planar_reacher_paper": {
        "env": {"name": "planar_reacher"},
        "hyperparams": {
            "alpha": 1e-4,
            "beta": 1.0,
            "beta_w": 1.0,
            "n_components": 60,
            "iters_per_component": 350,
            "finetune_every": 50,
        },
        "output_dir": "runs/planar_reacher_paper",
    },
    # two-component probe of the two-branch toy task
    "bimodal_ablation": {
        "env": {"name": "bimodal"},
        "hyperparams": {
            "alpha": 0.7,
            "beta": 1.0,
            "beta_w": 1.0,
            "n_components": 2,
            "iters_per_component": 150,
            "finetune_every": 50,
            "samples_per_iter": 100,
            "buffer_capacity": 400,
        },
        "output_dir": "runs/bimodal_ablation",
    },
    # small reacher for context-coverage studies
    "reacher_5link_coverage": {
        "env": {
            "name": "planar_reacher",
            "n_links": 5,
            "link_length": 0.5,
            "context_lo": [1.5, -2.0],
            "context_hi": [2.4, 2.0],
            "obstacles": [],
        },
        "hyperparams": {
            "alpha": 1e-3,
            "beta": 0.5,
            "beta_w": 1.0,
            "n_components": 10,
            "iters_per_component": 200,
            "finetune_every": 50,
        },
        "output_dir": "runs/reacher_5link_coverage",
    },
    "quadratic_toy": {
        "env": {"name": "quadratic_toy"},
        "hyperparams": {
            "alpha": 0.01,
            "beta": 0.5,
            "beta_w": 1.0,
            "n_components": 3,
            "iters_per_component": 60,
            "finetune_every": 20,
        },
        "output_dir": "runs/quadratic_toy",
    },
}


def preset_dict(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])
