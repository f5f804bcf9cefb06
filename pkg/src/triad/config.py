"""Run configuration: YAML in, validated RunConfig out.

The schema is published (the gateway serves it) and closed: unknown keys
are errors that name the offending key, and so are out-of-range values.
Nothing starts running on an invalid config.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml

from .algorithms import AlgorithmConfig, Variant
from .explorer import WorkflowRunPolicy
from .orchestrator import OrchestratorError, RunConfig

DATA_DIR_ENV = "TRIAD_DATA_DIR"


class ConfigError(ValueError):
    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


def _field(type_name: str, default: Any, doc: str) -> Dict[str, Any]:
    return {"type": type_name, "default": default, "doc": doc}


# Published schema: key -> {type, default, doc}; nested sections are maps.
CONFIG_SCHEMA: Dict[str, Any] = {
    "mode": _field("str", "both", "one of both | explore | train | bench"),
    "data_dir": _field("str", "triad-data", "root directory for all stores"),
    "run_id": _field("str|null", None, "explicit run id (default: timestamped)"),
    "seed": _field("int", 0, "root seed for all rng streams"),
    "total_steps": _field("int", 10, "trainer updates to perform (>= 0)"),
    "batch_size": _field("int", 2, "task groups (or records) per update"),
    "group_size": _field("int", 2, "rollouts per task group"),
    "sync_interval": _field("int", 1, "trainer steps between weight syncs (>= 1)"),
    "worker_count": _field("int", 1, "explorer worker threads (>= 1)"),
    "vocab_size": _field("int", 8, "token vocabulary size (>= 2)"),
    "eos_token": _field("int", 0, "terminator token id, in [0, vocab_size)"),
    "num_buckets": _field("int", 64, "policy context-bucket count (>= 1)"),
    "init_scale": _field("float", 0.0, "stddev of random initial logits"),
    "init_checkpoint": _field("str|null", None, "checkpoint to start from"),
    "publish_every": _field("int", 1, "publish weights every N updates"),
    "sync_poll_interval": _field("int", 1, "explorer poll cadence in tasks"),
    "idle_timeout_s": _field("float", 5.0, "trainer idle budget when starved"),
    "logical_clock": _field("bool", True, "deterministic wall_ms in metrics"),
    "task_paths": _field("list[str]", [], "training task files"),
    "eval_task_paths": _field("list[str]", [], "evaluation task files"),
    "checkpoint_paths": _field("list[str]", [], "checkpoints for bench mode"),
    "ui_dir": _field("str|null", None, "static UI bundle served at /"),
    "algorithm": {
        "variant": _field(
            "str", "OPMD_SIMPLE", "OPMD_KIMI | OPMD_PAIRWISE | OPMD_SIMPLE | SFT | DPO"
        ),
        "tau": _field("float", 1.0, "mirror-descent temperature"),
        "beta": _field("float", 0.0, "anchor regularizer weight (OPMD_SIMPLE)"),
        "dpo_beta": _field("float", 0.1, "DPO preference temperature"),
        "learning_rate": _field("float", 0.1, "SGD step size"),
    },
    "run_policy": {
        "timeout_per_task": _field("float", 10.0, "seconds per rollout attempt"),
        "max_retries": _field("int", 3, "total attempt budget per task"),
    },
    "annotation": {
        "poll_timeout_s": _field("float", 3600.0, "default poll wait"),
        "claim_ttl_s": _field("float", 3600.0, "claim expiry window"),
        "annotators_per_task": _field("int", 1, "duplicate tasks per pair"),
    },
}

_TYPE_CHECKS = {
    "str": lambda v: isinstance(v, str),
    "str|null": lambda v: v is None or isinstance(v, str),
    "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "float": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "bool": lambda v: isinstance(v, bool),
    "list[str]": lambda v: isinstance(v, list) and all(isinstance(x, str) for x in v),
}


def _check_section(data: Dict[str, Any], schema: Dict[str, Any], prefix: str) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError(path, "unknown key")
        spec = schema[key]
        if "type" not in spec:  # nested section
            if not isinstance(value, dict):
                raise ConfigError(path, "expected a mapping")
            out[key] = _check_section(value, spec, f"{path}.")
            continue
        if not _TYPE_CHECKS[spec["type"]](value):
            raise ConfigError(path, f"expected {spec['type']}")
        out[key] = value
    for key, spec in schema.items():
        if key in out:
            continue
        out[key] = (
            _check_section({}, spec, f"{prefix}{key}.")
            if "type" not in spec
            else spec["default"]
        )
    return out


def validate_config(data: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    """Schema pass: fill defaults, reject unknown keys and wrong types."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    return _check_section(data, CONFIG_SCHEMA, "")


def build_run_config(data: Optional[Dict[str, Any]]) -> RunConfig:
    """Validated dict -> RunConfig; TRIAD_DATA_DIR wins over the file."""
    full = validate_config(data)
    algo = full["algorithm"]
    try:
        variant = Variant(algo["variant"])
    except ValueError as exc:
        raise ConfigError("algorithm.variant", str(exc)) from exc
    try:
        algorithm = AlgorithmConfig(
            variant=variant,
            tau=algo["tau"],
            beta=algo["beta"],
            dpo_beta=algo["dpo_beta"],
            learning_rate=algo["learning_rate"],
        )
    except ValueError as exc:
        raise ConfigError("algorithm", str(exc)) from exc
    pol = full["run_policy"]
    try:
        run_policy = WorkflowRunPolicy(
            timeout_per_task=pol["timeout_per_task"],
            max_retries=pol["max_retries"],
        )
    except ValueError as exc:
        raise ConfigError("run_policy", str(exc)) from exc
    data_dir = os.environ.get(DATA_DIR_ENV) or full["data_dir"]
    config = RunConfig(
        mode=full["mode"],
        data_dir=data_dir,
        run_id=full["run_id"],
        seed=full["seed"],
        total_steps=full["total_steps"],
        batch_size=full["batch_size"],
        group_size=full["group_size"],
        sync_interval=full["sync_interval"],
        worker_count=full["worker_count"],
        algorithm=algorithm,
        run_policy=run_policy,
        task_paths=full["task_paths"],
        eval_task_paths=full["eval_task_paths"],
        checkpoint_paths=full["checkpoint_paths"],
        vocab_size=full["vocab_size"],
        eos_token=full["eos_token"],
        num_buckets=full["num_buckets"],
        init_scale=full["init_scale"],
        init_checkpoint=full["init_checkpoint"],
        publish_every=full["publish_every"],
        sync_poll_interval=full["sync_poll_interval"],
        idle_timeout_s=full["idle_timeout_s"],
        logical_clock=full["logical_clock"],
    )
    try:
        config.validate()
    except OrchestratorError as exc:
        # Keep the offending key name in the message.
        raise ConfigError(_offending_key(str(exc)), str(exc)) from exc
    return config


def _offending_key(message: str) -> str:
    for key in CONFIG_SCHEMA:
        if key in message:
            return key
    return "<config>"


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config file must contain a mapping")
    return data


def load_run_config(path: Union[str, Path]) -> RunConfig:
    return build_run_config(load_config_file(path))
