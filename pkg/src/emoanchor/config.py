"""Run configuration: one schema shared by config files, CLI, and service.

Configs load from JSON or TOML; unknown keys are rejected so typos fail
loudly. CLI flags override file values. Dataset-derived quantities (class
count, feature dims, speaker count) and the anchor dimension of a provided
anchor file are never configured by hand.
"""

from __future__ import annotations

import json
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .anchors import AnchorSet
from .dataio import Dataset
from .errors import ConfigError
from .model import ModelConfig
from .objective import AblationSpec, LossWeights


class ModelSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    d: int = 1280
    k: int = 1
    heads: int = 8
    transformer_layers: int = 1
    dropout: float = 0.5
    max_positions: int = 512
    use_positional: bool = True
    use_speaker: bool = True
    use_intra: bool = True
    use_inter: bool = True
    modalities: list[str] = Field(default_factory=lambda: ["T", "A", "V"])
    d_anc: int = 768  # used only when no anchor file supplies the dimension
    proj_dropout: float = 0.4
    proj_hidden: int | None = None
    per_modality_projection: bool = False
    per_modality_gate: bool = False


class LossSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    cls_fuse: float = 0.5
    cls_uni: float = 0.5
    anc_fuse: float = 0.6
    anc_uni: float = 0.6
    anc_dist: float = 0.6
    dist: float = 0.9


class OptimizerSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = 3e-4
    weight_decay: float = 0.7
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class TrainingSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = 30
    batch_size: int = 15
    patience: int = 10
    q: float = 0.2  # probability of sampling a random instance anchor
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    split_seed: int = 0


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    data: str | None = None  # dataset manifest path
    anchors: str | None = None  # anchor file path
    out_dir: str = "runs"
    seeds: list[int] = Field(default_factory=lambda: [0])
    ablation: str = "full"
    model: ModelSettings = Field(default_factory=ModelSettings)
    loss: LossSettings = Field(default_factory=LossSettings)
    optimizer: OptimizerSettings = Field(default_factory=OptimizerSettings)
    training: TrainingSettings = Field(default_factory=TrainingSettings)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # stdlib from 3.11; tomli backports it
                import tomli as tomllib

            doc = tomllib.loads(path.read_text(encoding="utf-8"))
        else:
            doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, ValueError) as exc:
        raise ConfigError(f"{path}: cannot parse config ({exc})") from exc
    return validate_config(doc, source=str(path))


def validate_config(doc: dict, source: str = "config") -> RunConfig:
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        issues = "; ".join(f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors())
        raise ConfigError(f"{source}: {issues}") from exc


def model_config_from(
    cfg: RunConfig,
    dataset: Dataset,
    anchor_set: AnchorSet | None,
    spec: AblationSpec,
) -> ModelConfig:
    """Concrete model config: file settings + dataset facts + mode overrides."""
    m = cfg.model
    fields = dict(
        num_classes=dataset.num_classes,
        feature_dims=dataset.feature_dims(),
        d=m.d,
        k=m.k,
        heads=m.heads,
        transformer_layers=m.transformer_layers,
        dropout=m.dropout,
        max_positions=m.max_positions,
        num_speakers=dataset.num_speakers,
        use_positional=m.use_positional,
        use_speaker=m.use_speaker,
        use_intra=m.use_intra,
        use_inter=m.use_inter,
        modalities=tuple(m.modalities),
        d_anc=anchor_set.dim if anchor_set is not None else m.d_anc,
        proj_dropout=m.proj_dropout,
        proj_hidden=m.proj_hidden,
        per_modality_projection=m.per_modality_projection,
        per_modality_gate=m.per_modality_gate,
    )
    fields.update(spec.model_overrides)
    missing = [mod for mod in fields["modalities"] if mod not in fields["feature_dims"]]
    if missing:
        raise ConfigError(f"dataset lacks modalities required by config: {missing}")
    try:
        return ModelConfig(**fields)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def weights_from(cfg: RunConfig) -> LossWeights:
    ls = cfg.loss
    return LossWeights(
        cls_fuse=ls.cls_fuse,
        cls_uni=ls.cls_uni,
        anc_fuse=ls.anc_fuse,
        anc_uni=ls.anc_uni,
        anc_dist=ls.anc_dist,
        dist=ls.dist,
    )
