"""Run configuration: one JSON file, engine defaults, env overrides.

Every search and refinement constant has its default embedded here
(c1=1.25, c2=19652, five refinement iterations, 0.9 thresholds,
gap window 2 below 0.2, blank-line step delimiter) and can be overridden
from the config file or CLI flags. Environment variables may override
endpoint URLs and auth tokens only.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field

from .accounting import ModelProfile
from .errors import ConfigError
from .prompts import DEFAULT_PROMPTS, PromptSet
from .refine import RefinementConfig
from .search import SearchConfig
from .stepgen import SamplingParams, StepDelimiterPolicy

ENV_OVERRIDES = {
    "STEPSEARCH_POLICY_URL": ("policy", "url"),
    "STEPSEARCH_POLICY_TOKEN": ("policy", "token"),
    "STEPSEARCH_VERIFIER_URL": ("verifier", "url"),
    "STEPSEARCH_VERIFIER_TOKEN": ("verifier", "token"),
}

_DEFAULTS: dict = {
    "policy": {
        "url": "http://localhost:8000",
        "model": "policy-model",
        "token": None,
        "profile": {"param_count": 3.09e9, "n_layer": 36, "d_model": 2048},
    },
    "verifier": {
        "url": "http://localhost:8001",
        "model": "verifier-model",
        "token": None,
        "profile": {"param_count": 7.6e9, "n_layer": 28, "d_model": 3584},
    },
    "search": {
        "n_paths": 4,
        "n_samples": 4,
        "c1": 1.25,
        "c2": 19652.0,
        "max_steps": 64,
        "mode": "hybrid",
    },
    "refinement": {
        "max_iterations": 5,
        "skip_threshold": 0.9,
        "stop_threshold": 0.9,
        "gap_window": 2,
        "gap_min": 0.2,
        "update_rule": "prm_cover",
    },
    "delimiter": {
        "pause_delimiter": "\n\n",
        "resume_suffix": "\n",
        "terminator_token": "<eos>",
    },
    "sampling": {"max_new_tokens": 512, "temperature": None},
    "transport": {"timeout": 120.0, "max_attempts": 3, "backoff": 0.25, "max_in_flight": 8},
    "grader": {"command": None, "timeout": 10.0},
    "run": {"parallelism": 1, "seed": None},
    "prompts": {},
}


@dataclass
class RunConfig:
    raw: dict
    search: SearchConfig
    refinement: RefinementConfig
    delim: StepDelimiterPolicy
    sampling: SamplingParams
    policy_profile: ModelProfile
    verifier_profile: ModelProfile
    prompts: dict[tuple[str, str], PromptSet] = field(default_factory=lambda: dict(DEFAULT_PROMPTS))
    parallelism: int = 1
    seed: int | None = None

    @property
    def grader_command(self) -> list[str] | None:
        return self.raw["grader"]["command"]

    @property
    def grader_timeout(self) -> float:
        return float(self.raw["grader"]["timeout"])

    def snapshot(self) -> dict:
        """Config as frozen into the run manifest."""
        return copy.deepcopy(self.raw)

    def snapshot_hash(self) -> str:
        canon = json.dumps(self.snapshot(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _deep_update(base: dict, extra: dict) -> dict:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def normalize_mode(mode: str) -> str:
    return mode.replace("-", "_")


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults, the config file, CLI overrides and the environment."""
    raw = copy.deepcopy(_DEFAULTS)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        _deep_update(raw, loaded)
    if overrides:
        _deep_update(raw, overrides)
    for env_name, (section, key) in ENV_OVERRIDES.items():
        value = os.environ.get(env_name)
        if value:
            raw[section][key] = value
    return _build(raw)


def _build(raw: dict) -> RunConfig:
    try:
        refinement = RefinementConfig(**raw["refinement"])
        search = SearchConfig(
            n_paths=int(raw["search"]["n_paths"]),
            n_samples=int(raw["search"]["n_samples"]),
            c1=float(raw["search"]["c1"]),
            c2=float(raw["search"]["c2"]),
            max_steps=int(raw["search"]["max_steps"]),
            mode=normalize_mode(raw["search"]["mode"]),
            refinement=refinement,
        )
        delim = StepDelimiterPolicy(**raw["delimiter"])
        sampling = SamplingParams(
            max_new_tokens=int(raw["sampling"]["max_new_tokens"]),
            temperature=raw["sampling"]["temperature"],
        )
        policy_profile = ModelProfile(**raw["policy"]["profile"])
        verifier_profile = ModelProfile(**raw["verifier"]["profile"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc

    prompts = dict(DEFAULT_PROMPTS)
    for spec_key, values in raw.get("prompts", {}).items():
        level, _, kind = spec_key.partition(".")
        if not kind:
            raise ConfigError(f"prompt override key {spec_key!r} must look like 'step.math_boxed'")
        base = prompts.get((level, kind))
        if base is None:
            raise ConfigError(f"prompt override for unknown pair {spec_key!r}")
        prompts[(level, kind)] = PromptSet(
            cot=values.get("cot", base.cot),
            critic=values.get("critic", base.critic),
            rewrite=values.get("rewrite", base.rewrite),
        )

    parallelism = int(raw["run"]["parallelism"])
    if parallelism < 1:
        raise ConfigError("parallelism must be >= 1")
    seed = raw["run"]["seed"]
    return RunConfig(
        raw=raw,
        search=search,
        refinement=refinement,
        delim=delim,
        sampling=sampling,
        policy_profile=policy_profile,
        verifier_profile=verifier_profile,
        prompts=prompts,
        parallelism=parallelism,
        seed=None if seed is None else int(seed),
    )
