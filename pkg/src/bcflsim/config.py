"""Scenario and training configuration, plus the validating JSON loader."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

from .ledger import price_presets

EVALUATION_METHODS = ("accuracy", "leave_one_out", "shapley")
SELECTION_METHODS = ("all", "scoring_order")
SCENARIO_KINDS = ("cross_device", "cross_silo", "adversarial_did")


class ScenarioError(ValueError):
    """A scenario file or object is malformed; the message names the field."""


@dataclass(frozen=True)
class TrainingConfig:
    total_rounds: int = 15
    local_epochs: int = 2
    learning_rate: float = 0.05
    num_trainers: int = 4
    round_duration_seconds: int = 600
    evaluation_method: str = "accuracy"
    selection_method: str = "all"
    select_top_k: int | None = None
    did_bonus_fraction: float = 0.10
    round_token_budget: int = 1000
    shapley_samples: int = 200
    seed: int = 0

    @property
    def top_k(self) -> int:
        return self.num_trainers if self.select_top_k is None else self.select_top_k

    def validate(self) -> None:
        if self.total_rounds < 1:
            raise ScenarioError("config.total_rounds: must be >= 1")
        if self.local_epochs < 1:
            raise ScenarioError("config.local_epochs: must be >= 1")
        if not self.learning_rate > 0:
            raise ScenarioError("config.learning_rate: must be positive")
        if self.num_trainers < 1:
            raise ScenarioError("config.num_trainers: must be >= 1")
        if not 1 <= self.top_k <= self.num_trainers:
            raise ScenarioError("config.select_top_k: must satisfy 1 <= k <= num_trainers")
        if self.evaluation_method not in EVALUATION_METHODS:
            raise ScenarioError(f"config.evaluation_method: must be one of {EVALUATION_METHODS}")
        if self.selection_method not in SELECTION_METHODS:
            raise ScenarioError(f"config.selection_method: must be one of {SELECTION_METHODS}")
        if self.did_bonus_fraction < 0:
            raise ScenarioError("config.did_bonus_fraction: must be >= 0")
        if self.round_token_budget < 0:
            raise ScenarioError("config.round_token_budget: must be >= 0")


@dataclass(frozen=True)
class TrainerSpec:
    seed: int
    label_flipped: bool = False
    permutation: tuple[int, ...] | None = None
    authenticate: bool = False


@dataclass(frozen=True)
class DataSpec:
    """Synthetic data layout; the test set is held out before partitioning."""

    num_classes: int = 10
    dim: int = 32
    train_per_class: int = 300
    test_per_class: int = 100
    alpha: float = 0.5
    separation: float = 3.0
    min_part_size: int = 10
    # every trainer receives the whole training pool instead of a partition
    shared: bool = False


@dataclass(frozen=True)
class Scenario:
    config: TrainingConfig
    trainers: tuple[TrainerSpec, ...]
    data: DataSpec = field(default_factory=DataSpec)
    kind: str = "cross_device"
    gas_preset: str = "testnet-like"
    name: str = "scenario"

    def validate(self) -> None:
        self.config.validate()
        if self.kind not in SCENARIO_KINDS:
            raise ScenarioError(f"kind: must be one of {SCENARIO_KINDS}")
        presets = price_presets()
        if self.gas_preset not in presets:
            raise ScenarioError(f"gas_preset: unknown preset {self.gas_preset!r}; known: {sorted(presets)}")
        if len(self.trainers) != self.config.num_trainers:
            raise ScenarioError(
                f"trainers: {len(self.trainers)} entries but config.num_trainers = {self.config.num_trainers}")
        if self.kind == "cross_silo" and len(self.trainers) < 2:
            raise ScenarioError("trainers: cross_silo needs at least 2 participants")
        seeds = [t.seed for t in self.trainers]
        if self.kind != "cross_silo" and len(set(seeds)) != len(seeds):
            raise ScenarioError("trainers: seeds must be distinct")
        k = self.data.num_classes
        for i, t in enumerate(self.trainers):
            if t.permutation is not None and sorted(t.permutation) != list(range(k)):
                raise ScenarioError(f"trainers[{i}].permutation: must be a permutation of 0..{k - 1}")
        if self.data.num_classes < 2 or self.data.dim < 1:
            raise ScenarioError("data: need num_classes >= 2 and dim >= 1")
        if self.data.alpha <= 0:
            raise ScenarioError("data.alpha: must be positive")

    def with_config(self, **changes: Any) -> Scenario:
        return replace(self, config=replace(self.config, **changes))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["trainers"] = [
            {k: (list(v) if isinstance(v, tuple) else v) for k, v in t.items()} for t in out["trainers"]
        ]
        return out


@lru_cache(maxsize=1)
def scenario_schema() -> dict:
    return json.loads(resources.files("bcflsim").joinpath("data/scenario.schema.json").read_text())


def _build(cls, raw: dict | None):
    raw = raw or {}
    known = {f.name for f in fields(cls)}
    return cls(**{k: v for k, v in raw.items() if k in known})


def scenario_from_dict(raw: dict, seed_override: int | None = None,
                       gas_preset: str | None = None) -> Scenario:
    validator = jsonschema.Draft202012Validator(scenario_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for err in errors:
            where = ".".join(str(p) for p in err.absolute_path) or "<root>"
            msgs.append(f"{where}: {err.message}")
        raise ScenarioError("; ".join(msgs))
    raw = copy.deepcopy(raw)
    cfg_raw = dict(raw.get("config", {}))
    if seed_override is not None:
        cfg_raw["seed"] = seed_override
    trainers_raw = raw.get("trainers")
    if trainers_raw is None:
        n = cfg_raw.get("num_trainers", TrainingConfig.num_trainers)
        trainers_raw = [{"seed": 1000 + i} for i in range(n)]
    cfg_raw.setdefault("num_trainers", len(trainers_raw))
    trainers = []
    for t in trainers_raw:
        t = dict(t)
        if t.get("permutation") is not None:
            t["permutation"] = tuple(t["permutation"])
        trainers.append(_build(TrainerSpec, t))
    scenario = Scenario(
        config=_build(TrainingConfig, cfg_raw),
        trainers=tuple(trainers),
        data=_build(DataSpec, raw.get("data")),
        kind=raw.get("kind", "cross_device"),
        gas_preset=gas_preset or raw.get("gas_preset", "testnet-like"),
        name=raw.get("name", "scenario"),
    )
    scenario.validate()
    return scenario


def load_scenario(path: str | Path, seed_override: int | None = None,
                  gas_preset: str | None = None) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario ({exc.strerror})") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    try:
        return scenario_from_dict(raw, seed_override, gas_preset)
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def bundled_scenarios() -> dict[str, Path]:
    root = resources.files("bcflsim").joinpath("scenarios")
    return {p.name.removesuffix(".json"): Path(str(p)) for p in root.iterdir() if p.name.endswith(".json")}
