"""Experiment configuration: strict YAML schema with field-path errors."""

from __future__ import annotations

from pathlib import Path
from typing import Annotated, Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import dca, envs, rewards
from .objectives import ObjectiveVariant


class ConfigError(ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class _FieldError(ValueError):
    """Raised by cross-field validators so the offending path survives pydantic's wrapping."""

    def __init__(self, path: str, message: str):
        super().__init__(message)
        self.path = path


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ClassificationEnvConfig(_Strict):
    kind: Literal["classification-bandit"]
    classes: int = Field(2, ge=2)
    contexts: int = Field(1, ge=1)
    seed: int = 0


class IntervalEnvConfig(_Strict):
    kind: Literal["interval-grid-localization"]
    resolution: int = Field(64, ge=2)
    target_width: int = Field(2, ge=1)
    contexts: int = Field(1, ge=1)
    seed: int = 0


class BoxEnvConfig(_Strict):
    kind: Literal["box-grid-localization"]
    resolution: int = Field(8, ge=2)
    target_size: int = Field(2, ge=1)
    contexts: int = Field(1, ge=1)
    seed: int = 0


class SpanEnvConfig(_Strict):
    kind: Literal["span-selection"]
    vocab: int = Field(8, ge=2)
    picks: int = Field(3, ge=1)
    gt_size: int = Field(3, ge=1)
    contexts: int = Field(1, ge=1)
    seed: int = 0


EnvConfig = Annotated[Union[ClassificationEnvConfig, IntervalEnvConfig, BoxEnvConfig, SpanEnvConfig],
                    Field(discriminator="kind")]


class IdentityConfig(_Strict):
    kind: Literal["identity"]


class ExponentialConfig(_Strict):
    kind: Literal["exponential"]
    a: float = Field(gt=0)


class NormalizedExponentialConfig(_Strict):
    kind: Literal["normalized_exponential"]
    alpha: float = Field(rewards.DEFAULT_ALPHA, gt=0)


class StepConfig(_Strict):
    kind: Literal["step"]
    tau: float = Field(ge=0, le=1)


PlainMappingConfig = Annotated[Union[IdentityConfig, ExponentialConfig, NormalizedExponentialConfig, StepConfig],
                             Field(discriminator="kind")]


class RelaxedConfig(_Strict):
    kind: Literal["relaxed"]
    lam: float = Field(ge=0)
    inner: PlainMappingConfig


MappingConfig = Annotated[Union[IdentityConfig, ExponentialConfig, NormalizedExponentialConfig, StepConfig,
                              RelaxedConfig], Field(discriminator="kind")]


class TaskConfig(_Strict):
    mapping: MappingConfig = IdentityConfig(kind="identity")
    tau_high: Optional[float] = Field(None, gt=0)
    dataset_size: int = Field(1, ge=1)


class ObjectiveConfig(_Strict):
    family: Literal["grpo", "gspo", "sapo"] = "grpo"
    epsilon: float = Field(0.2, gt=0)
    tau_pos: float = Field(1.0, gt=0)
    tau_neg: float = Field(1.05, gt=0)
    kl_beta: float = Field(0.01, ge=0)


class DcaConfig(_Strict):
    enabled: bool = True
    t_warm: int = Field(800, ge=1)
    t_window: int = Field(100, ge=1)
    alpha_boost: float = Field(1.1, gt=1)
    alpha_decay: float = Field(0.9, gt=0, lt=1)
    eps_mom: float = Field(0.02, gt=0)
    eps_rescue: float = Field(0.10, gt=0)
    l_max: float = Field(4.0, ge=1)
    b_floor: float = Field(1e-6, gt=0)


class TrainingConfig(_Strict):
    steps: int = Field(ge=0)
    step_size: float = Field(gt=0)
    group_size: int = Field(8, ge=2)
    temperature: float = Field(1.0, gt=0)
    init_scale: float = Field(0.0, ge=0)
    seed: Union[int, List[int]] = 0

    @property
    def seeds(self) -> list[int]:
        return list(self.seed) if isinstance(self.seed, list) else [self.seed]


class OutputConfig(_Strict):
    directory: Optional[str] = None


class ExperimentConfig(_Strict):
    environments: Dict[str, EnvConfig]
    tasks: Dict[str, TaskConfig]
    objective: ObjectiveConfig = ObjectiveConfig()
    dca: DcaConfig = DcaConfig()
    training: TrainingConfig
    output: OutputConfig = OutputConfig()

    @model_validator(mode="after")
    def _tasks_match_environments(self):
        if not self.environments:
            raise _FieldError("environments", "at least one environment is required")
        if set(self.tasks) != set(self.environments):
            raise _FieldError("tasks", f"tasks {sorted(self.tasks)} must match environments "
                                       f"{sorted(self.environments)}")
        for name, task in self.tasks.items():
            if isinstance(task.mapping, RelaxedConfig) and \
                    self.environments[name].kind != "classification-bandit":
                raise _FieldError(f"tasks.{name}.mapping",
                                  "relaxed mappings need a classification environment")
        if isinstance(self.training.seed, list) and not self.training.seed:
            raise _FieldError("training.seed", "seed list is empty")
        return self

    # -- builders -----------------------------------------------------------
    @property
    def task_names(self) -> list[str]:
        return list(self.environments)

    def build_envs(self) -> list[envs.TaskEnv]:
        out = []
        for name, entry in self.environments.items():
            params = entry.model_dump()
            kind = params.pop("kind")
            params["n_contexts"] = params.pop("contexts")
            out.append(envs.make_env(name, kind, **params))
        return out

    def mapping(self, task: str) -> rewards.RewardMapping:
        return rewards.mapping_from_dict(self.tasks[task].mapping.model_dump())

    def task_weights(self) -> dict[str, float]:
        total = sum(t.dataset_size for t in self.tasks.values())
        return {k: self.tasks[k].dataset_size / total for k in self.task_names}

    def variant(self) -> ObjectiveVariant:
        return ObjectiveVariant(**self.objective.model_dump())

    def dca_config(self) -> dca.DcaConfig:
        params = self.dca.model_dump()
        params.pop("enabled")
        tau_high = {}
        for name, entry in self.environments.items():
            given = self.tasks[name].tau_high
            tau_high[name] = given if given is not None else dca.TAU_HIGH[envs.TASK_KIND[entry.kind]]
        return dca.DcaConfig(tau_high=tau_high, **params)


def _field_path(loc) -> str:
    """Dotted path without the union tags pydantic inserts after tagged fields."""
    parts = []
    for p in loc:
        tagged = (len(parts) == 2 and parts[0] == "environments") or \
            (parts and parts[-1] in ("mapping", "inner"))
        if tagged and (p in envs.ENV_KINDS or p in _MAPPING_TAGS):
            continue
        parts.append(str(p))
    return ".".join(parts)


_MAPPING_TAGS = ("identity", "exponential", "normalized_exponential", "step", "relaxed")


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        cause = err.get("ctx", {}).get("error")
        if isinstance(cause, _FieldError):
            raise ConfigError(cause.path, str(cause)) from None
        raise ConfigError(_field_path(err["loc"]), err["msg"]) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("", f"cannot parse {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("", f"{path} does not contain a mapping")
    return parse_config(data)
