"""Experiment configuration: JSON in, validated dataclasses out."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .data import IdentitySpec
from .nn import ACTIVATIONS

__all__ = ["ConfigError", "DatasetConfig", "ScheduleConfig", "ModelConfig", "TrainingConfig", "PsiConfig",
           "VaeSettings", "EvalConfig", "ExperimentConfig", "load_config", "stream"]


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass
class IdentityEntry:
    identity: str
    count: int
    spread: float | None = None
    data_center: list[float] | None = None
    condition_center: list[float] | None = None


def _default_identities() -> list[IdentityEntry]:
    return [IdentityEntry("A", 30), IdentityEntry("B", 2)]


@dataclass
class DatasetConfig:
    identities: list[IdentityEntry] = field(default_factory=_default_identities)
    data_dim: int = 2
    cond_dim: int = 4
    spread: float = 0.3
    center_scale: float = 2.0
    seed: int | None = None

    def specs(self) -> list[IdentitySpec]:
        return [IdentitySpec(e.identity, e.count, self.spread if e.spread is None else e.spread,
                             None if e.data_center is None else tuple(e.data_center),
                             None if e.condition_center is None else tuple(e.condition_center))
                for e in self.identities]


@dataclass
class ScheduleConfig:
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class ModelConfig:
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    activation: str = "tanh"


@dataclass
class TrainingConfig:
    steps: int = 3000
    batch_size: int = 32
    lr: float = 2e-3
    optimizer: str = "adam"
    stop_grad_neighbor: bool = False
    psi_override: float | None = None


@dataclass
class PsiConfig:
    k: int = 5
    a1: float = 1.0
    a2: float = 1.0
    # None = (2π)^(cond_dim/2), cancelling the Gaussian normaliser inside the ELBO
    a3: float | None = None
    psi_max: float = 100.0

    def resolved_a3(self, cond_dim: int) -> float:
        return (2.0 * math.pi) ** (cond_dim / 2.0) if self.a3 is None else self.a3


@dataclass
class VaeSettings:
    latent_dim: int = 2
    hidden: int = 32
    epochs: int = 1500
    lr: float = 5e-3


@dataclass
class EvalConfig:
    samples_per_identity: int = 20
    ddim_steps: int = 50
    threshold: float = 0.7
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    reference_per_identity: int = 100
    few_shot_max: int = 5


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    psi: PsiConfig = field(default_factory=PsiConfig)
    vae: VaeSettings = field(default_factory=VaeSettings)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """SHA-256 over the canonical JSON, seeds list excluded (runs differ only by seed)."""
        d = self.to_dict()
        d["eval"].pop("seeds")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def validate(self) -> ExperimentConfig:
        ds, sc, mo, tr, ps, va, ev = (self.dataset, self.schedule, self.model, self.training, self.psi,
                                      self.vae, self.eval)
        _require(len(ds.identities) >= 1, "dataset.identities must be non-empty")
        names = [e.identity for e in ds.identities]
        _require(len(set(names)) == len(names), "dataset.identities has duplicate ids")
        for e in ds.identities:
            _require(e.count >= 2, f"identity {e.identity!r}: count must be >= 2")
            _require(e.spread is None or e.spread > 0, f"identity {e.identity!r}: spread must be > 0")
            _require(e.data_center is None or len(e.data_center) == ds.data_dim,
                     f"identity {e.identity!r}: data_center must have {ds.data_dim} entries")
            _require(e.condition_center is None or len(e.condition_center) == ds.cond_dim,
                     f"identity {e.identity!r}: condition_center must have {ds.cond_dim} entries")
        _require(ds.data_dim >= 1 and ds.cond_dim >= 1, "dataset dims must be >= 1")
        _require(ds.spread > 0 and ds.center_scale > 0, "dataset.spread and center_scale must be > 0")
        _require(sc.T >= 1, "schedule.T must be >= 1")
        _require(0 < sc.beta_start <= sc.beta_end < 1, "need 0 < beta_start <= beta_end < 1")
        _require(len(mo.hidden) >= 1 and all(h >= 1 for h in mo.hidden), "model.hidden must list positive widths")
        _require(mo.activation in ACTIVATIONS, f"model.activation must be one of {ACTIVATIONS}")
        _require(tr.steps >= 1 and tr.batch_size >= 1 and tr.lr > 0, "training steps/batch/lr must be positive")
        _require(tr.optimizer in ("sgd", "adam"), "training.optimizer must be sgd or adam")
        _require(tr.psi_override is None or tr.psi_override >= 0, "training.psi_override must be >= 0")
        n = sum(e.count for e in ds.identities)
        _require(1 <= ps.k < n, f"psi.k must satisfy 1 <= k < {n}")
        _require(ps.a1 > 0 and ps.a2 > 0 and (ps.a3 is None or ps.a3 > 0), "psi.a1/a2/a3 must be > 0")
        _require(ps.psi_max > 0, "psi.psi_max must be > 0")
        _require(va.latent_dim >= 1 and va.hidden >= 1 and va.epochs >= 1 and va.lr > 0, "invalid vae settings")
        _require(ev.samples_per_identity >= 1, "eval.samples_per_identity must be >= 1")
        _require(1 <= ev.ddim_steps <= sc.T, "eval.ddim_steps must lie in [1, T]")
        _require(0 < ev.threshold < 1, "eval.threshold must lie in (0, 1)")
        _require(len(ev.seeds) >= 1, "eval.seeds must be non-empty")
        _require(ev.reference_per_identity > ds.data_dim, "eval.reference_per_identity must exceed data_dim")
        _require(ev.few_shot_max >= 1, "eval.few_shot_max must be >= 1")
        return self


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


_SECTIONS = {
    "dataset": DatasetConfig, "schedule": ScheduleConfig, "model": ModelConfig, "training": TrainingConfig,
    "psi": PsiConfig, "vae": VaeSettings, "eval": EvalConfig,
}


def _build(cls, raw: Any, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**raw)


def from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    sections = {}
    for name, cls in _SECTIONS.items():
        sub = dict(raw.get(name, {}))
        if name == "dataset" and "identities" in sub:
            sub["identities"] = [_build(IdentityEntry, e, f"dataset.identities[{i}]")
                                 for i, e in enumerate(sub["identities"])]
        try:
            sections[name] = _build(cls, sub, name)
        except TypeError as exc:
            raise ConfigError(f"{name}: {exc}") from None
    return ExperimentConfig(**sections).validate()


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig().validate()
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(raw)


STAGES = {"data": 0, "init": 1, "vae": 2, "batch": 3, "neighbor": 4, "sample": 5, "reference": 6}


def stream(master_seed: int, stage: str) -> np.random.Generator:
    """Independent generator for one pipeline stage, derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), STAGES[stage]]))
