"""Run configuration: a strict JSON schema where unknown keys are errors."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .data import DATASETS
from .style import ALPHA_GRID

TASKS = ("verify", "train-flow", "sample", "collapse", "invert", "interp",
         "train-ign", "project", "train-style", "style-interp")

# training length used when ``train.steps`` is left unset
DEFAULT_STEPS = {"train-flow": 20000, "train-ign": 2000, "train-style": 2000}


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class ModelConfig(_Strict):
    dim: int = Field(2, ge=1)
    blocks: int = Field(6, ge=1)
    rank: int = Field(16, ge=1)
    width: int = Field(64, ge=1)
    features: int = Field(32, ge=2)
    coupling_scale: float = Field(0.1, gt=0)
    core_scale: float = Field(0.5, gt=0)


class TrainConfig(_Strict):
    steps: Optional[int] = Field(None, ge=0)
    batch: int = Field(128, ge=1)
    lr: float = Field(1e-3, gt=0)
    seed: int = Field(0, ge=0)
    align_weight: float = Field(1.0, ge=0)
    loss_norm: Literal["latent", "data", "relative"] = "latent"
    log_every: int = Field(100, ge=1)


class SamplerConfig(_Strict):
    steps: int = Field(100, ge=1)
    scheme: Literal["euler", "rk4"] = "euler"
    count: int = Field(1000, ge=1)
    seed: int = Field(1, ge=0)
    one_step: bool = False
    trajectory: bool = False


class DataConfig(_Strict):
    dataset: str = "two-moons"
    n_points: int = Field(4000, ge=2)
    seed: int = Field(0, ge=0)
    input: Optional[str] = None


class IGNConfig(_Strict):
    dim: int = Field(16, ge=2)
    w_rec: float = Field(1.0, ge=0)
    w_sparse: float = Field(0.75, ge=0)
    w_iso: float = Field(0.001, ge=0)
    logit_init: float = 1.0
    probes: int = Field(1000, ge=1)


class InterpConfig(_Strict):
    a: float = 0.5
    combine: Literal["induced", "euclidean"] = "induced"
    alphas: list[float] = Field(default_factory=lambda: list(ALPHA_GRID))
    targets: list[str] = Field(default_factory=lambda: ["rotate", "bend"])


class VerifyConfig(_Strict):
    trials: int = Field(1000, ge=1)
    tolerance: float = Field(1e-6, gt=0)


class PathConfig(_Strict):
    out_dir: str = "runs"
    checkpoint: Optional[str] = None
    checkpoint_b: Optional[str] = None
    collapsed: Optional[str] = None


class Config(_Strict):
    task: Literal[TASKS]
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    ign: IGNConfig = Field(default_factory=IGNConfig)
    interp: InterpConfig = Field(default_factory=InterpConfig)
    verify: VerifyConfig = Field(default_factory=VerifyConfig)
    paths: PathConfig = Field(default_factory=PathConfig)

    def train_steps(self) -> int:
        if self.train.steps is not None:
            return self.train.steps
        return DEFAULT_STEPS.get(self.task, 0)

    def snapshot(self) -> dict:
        """Everything that determines results; file locations are left out."""
        d = self.model_dump(mode="json", exclude={"paths"})
        d["train"]["steps"] = self.train_steps()
        return d


def _format_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "invalid config: " + "; ".join(lines)


def parse_config(raw: dict) -> Config:
    try:
        cfg = Config.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from None
    if cfg.data.dataset not in DATASETS:
        raise ConfigError(f"invalid config: data.dataset: unknown dataset {cfg.data.dataset!r}")
    return cfg


def load_config_file(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return raw


def set_path(raw: dict, dotted: str, value) -> None:
    """Set ``raw["a"]["b"] = value`` for ``dotted = "a.b"``, creating sections."""
    *parents, leaf = dotted.split(".")
    node = raw
    for p in parents:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"invalid config: {p} must be an object")
    node[leaf] = value
